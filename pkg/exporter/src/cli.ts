/** Exporter command line.
 *
 *   node dist/cli.js make-toys --out out --seed 7
 *   node dist/cli.js export --checkpoint ckpt/model.json --template mlp \
 *        --name my_mlp --out out
 *
 * `export` converts a saved tf.LayersModel checkpoint; the
 * tiny_transformer_encoder template takes its JSON weight-dict checkpoint
 * instead (see encoder.ts).  Every export writes fixtures alongside.
 */
import * as tf from '@tensorflow/tfjs';

import { encoderPredict, exportEncoder, loadEncoderCheckpoint } from './encoder.js';
import { Fixtures, selfCheck, writeModelFiles } from './format.js';
import { loadCheckpoint } from './io.js';
import { Rng } from './rng.js';
import { defaultLayerMap, ExportRecipe, exportLayersModel, TemplateName } from './tfjs_export.js';
import { writeToys } from './toys.js';

function parseArgs(argv: string[]): { command: string; flags: Record<string, string> } {
    const [command, ...rest] = argv;
    const flags: Record<string, string> = {};
    for (let i = 0; i < rest.length; i += 2) {
        if (!rest[i].startsWith('--') || rest[i + 1] === undefined) {
            throw new Error(`bad flag pair near ${rest[i]}`);
        }
        flags[rest[i].slice(2)] = rest[i + 1];
    }
    return { command, flags };
}

async function exportCheckpoint(flags: Record<string, string>): Promise<string[]> {
    const template = (flags.template ?? 'mlp') as TemplateName;
    const name = flags.name ?? template;
    const outDir = flags.out ?? 'out';
    const seed = Number(flags.seed ?? 7);
    if (!flags.checkpoint) throw new Error('--checkpoint is required');

    if (template === 'tiny_transformer_encoder') {
        const checkpoint = loadEncoderCheckpoint(flags.checkpoint);
        const model = exportEncoder(checkpoint);
        const rng = new Rng(seed);
        const fixtures: Fixtures = {
            model: name,
            seed,
            input_kind: 'token_id',
            samples: Array.from({ length: 8 }, () => {
                const tokens = Array.from(
                    { length: checkpoint.config.seqLen },
                    () => rng.int(0, checkpoint.config.vocab),
                );
                return {
                    shape: [checkpoint.config.seqLen],
                    input: tokens,
                    prediction: Array.from(encoderPredict(checkpoint, tokens)),
                };
            }),
        };
        selfCheck(model);
        return writeModelFiles(outDir, name, model, fixtures);
    }

    const layersModel = await loadCheckpoint(flags.checkpoint);
    const recipe: ExportRecipe = {
        framework: 'tfjs',
        template,
        layerMap: defaultLayerMap(layersModel),
        name,
        outDir,
    };
    const model = exportLayersModel(layersModel, recipe);
    const inputShape = (layersModel.layers[0].batchInputShape ?? []).slice(1) as number[];
    const size = inputShape.reduce((a, b) => a * b, 1);
    const tokenInput = model.nodes[0].attrs?.dtype === 'token_id';
    const rng = new Rng(seed);
    const fixtures: Fixtures = {
        model: name,
        seed,
        input_kind: tokenInput ? 'token_id' : 'f32',
        samples: Array.from({ length: 8 }, () => {
            const input = tokenInput
                ? Array.from({ length: size }, () => rng.int(0, 8))
                : Array.from(rng.uniformArray(size, -2, 2));
            const prediction = tf.tidy(() => {
                const x = tf.tensor(input, [1, ...inputShape], tokenInput ? 'int32' : 'float32');
                return Array.from((layersModel.predict(x) as tf.Tensor).dataSync());
            });
            return { shape: inputShape, input, prediction };
        }),
    };
    selfCheck(model);
    return writeModelFiles(outDir, name, model, fixtures);
}

export async function main(argv: string[]): Promise<number> {
    const { command, flags } = parseArgs(argv);
    if (command === 'make-toys') {
        const paths = await writeToys(flags.out ?? 'out', Number(flags.seed ?? 7));
        for (const p of paths) console.log(p);
        return 0;
    }
    if (command === 'export') {
        for (const p of await exportCheckpoint(flags)) console.log(p);
        return 0;
    }
    console.error(`unknown command ${command}; expected make-toys or export`);
    return 2;
}

const isMain = process.argv[1]?.endsWith('cli.js') || process.argv[1]?.endsWith('cli.ts');
if (isMain) {
    main(process.argv.slice(2)).then(
        (code) => process.exit(code),
        (error) => {
            console.error(error instanceof Error ? error.message : error);
            process.exit(1);
        },
    );
}
