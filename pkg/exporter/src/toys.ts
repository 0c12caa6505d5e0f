/** Deterministic toy checkpoints for the acceptance suite.
 *
 * Everything is a pure function of the seed: explicit layer names, seeded
 * initializers, fixed synthetic data order and no shuffling, so the same
 * seed always exports byte-identical files.  Only the CNN is trained (its
 * blob task must separate); the other templates are seeded checkpoints.
 */
import * as tf from '@tensorflow/tfjs';

import {
    ENCODER_CONFIG,
    EncoderCheckpoint,
    encoderPredict,
    exportEncoder,
    makeEncoderCheckpoint,
} from './encoder.js';
import { BuiltModel, Fixtures, selfCheck, writeModelFiles } from './format.js';
import { Rng } from './rng.js';
import { ExportRecipe, exportLayersModel } from './tfjs_export.js';

export interface ToyExport {
    name: string;
    model: BuiltModel;
    fixtures: Fixtures;
}

/** 8x8 single-channel images: bright 2x2 patch centered (class 1) or in a
 * corner (class 0), over low uniform noise. */
export function blobBatch(count: number, rng: Rng): { images: number[][]; labels: number[] } {
    const corners = [[0, 0], [0, 6], [6, 0], [6, 6]];
    const images: number[][] = [];
    const labels: number[] = [];
    for (let i = 0; i < count; i++) {
        const pixels = Array.from({ length: 64 }, () => rng.uniform(0, 0.05));
        const label = i % 2;
        const [r, c] = label === 1 ? [3, 3] : corners[rng.int(0, 4)];
        const intensity = rng.uniform(0.8, 1.2);
        for (let dr = 0; dr < 2; dr++) {
            for (let dc = 0; dc < 2; dc++) {
                pixels[(r + dr) * 8 + (c + dc)] += intensity;
            }
        }
        images.push(pixels);
        labels.push(label);
    }
    return { images, labels };
}

function predictFlat(model: tf.LayersModel, input: number[], shape: number[], dtype: 'float32' | 'int32'): number[] {
    return tf.tidy(() => {
        const x = tf.tensor(input, [1, ...shape], dtype);
        const y = model.predict(x) as tf.Tensor;
        return Array.from(y.dataSync());
    });
}

function layersFixtures(
    name: string,
    seed: number,
    model: tf.LayersModel,
    inputs: number[][],
    shape: number[],
    inputKind: 'f32' | 'token_id',
): Fixtures {
    return {
        model: name,
        seed,
        input_kind: inputKind,
        samples: inputs.map((input) => ({
            shape,
            input,
            prediction: predictFlat(model, input, shape, inputKind === 'token_id' ? 'int32' : 'float32'),
        })),
    };
}

export function buildMlp(seed: number): tf.LayersModel {
    const model = tf.sequential({ name: 'toy_mlp' });
    const sizes: [number, string][] = [[16, 'relu'], [12, 'relu'], [8, 'relu'], [2, 'linear']];
    sizes.forEach(([units, activation], i) => {
        model.add(tf.layers.dense({
            name: `fc${i + 1}`,
            units,
            activation: activation as 'relu' | 'linear',
            inputShape: i === 0 ? [8] : undefined,
            kernelInitializer: tf.initializers.glorotUniform({ seed: seed + i }),
            biasInitializer: tf.initializers.randomUniform({ minval: -0.1, maxval: 0.1, seed: seed + 100 + i }),
        }));
    });
    return model;
}

export async function buildTrainedCnn(seed: number): Promise<tf.LayersModel> {
    const model = tf.sequential({ name: 'toy_cnn' });
    model.add(tf.layers.conv2d({
        name: 'conv1',
        filters: 6,
        kernelSize: 3,
        activation: 'relu',
        padding: 'valid',
        inputShape: [8, 8, 1],
        kernelInitializer: tf.initializers.glorotUniform({ seed }),
        biasInitializer: 'zeros',
    }));
    model.add(tf.layers.maxPooling2d({ name: 'pool1', poolSize: 2, strides: 2, padding: 'valid' }));
    model.add(tf.layers.flatten({ name: 'flat' }));
    model.add(tf.layers.dense({
        name: 'logits',
        units: 2,
        activation: 'softmax',
        kernelInitializer: tf.initializers.glorotUniform({ seed: seed + 7 }),
        biasInitializer: 'zeros',
    }));
    model.compile({ optimizer: tf.train.adam(0.01), loss: 'categoricalCrossentropy', metrics: ['accuracy'] });

    const rng = new Rng(seed ^ 0xb10b);
    const { images, labels } = blobBatch(240, rng);
    const xs = tf.tensor(images.flat(), [images.length, 8, 8, 1]);
    const ys = tf.oneHot(tf.tensor1d(labels, 'int32'), 2);
    await model.fit(xs, ys, { epochs: 12, batchSize: 32, shuffle: false, verbose: 0 });
    xs.dispose();
    ys.dispose();
    return model;
}

export function cnnAccuracy(model: tf.LayersModel, seed: number, count = 80): number {
    const { images, labels } = blobBatch(count, new Rng(seed ^ 0xacc));
    return tf.tidy(() => {
        const xs = tf.tensor(images.flat(), [count, 8, 8, 1]);
        const predictions = (model.predict(xs) as tf.Tensor).argMax(-1).dataSync();
        let hits = 0;
        for (let i = 0; i < count; i++) if (predictions[i] === labels[i]) hits++;
        return hits / count;
    });
}

export function buildTokenLookup(seed: number): tf.LayersModel {
    const model = tf.sequential({ name: 'toy_lookup' });
    model.add(tf.layers.embedding({
        name: 'embed',
        inputDim: 8,
        outputDim: 4,
        inputLength: 6,
        embeddingsInitializer: tf.initializers.randomUniform({ minval: -1, maxval: 1, seed: seed + 11 }),
    }));
    model.add(tf.layers.flatten({ name: 'flat' }));
    model.add(tf.layers.dense({
        name: 'head',
        units: 2,
        activation: 'linear',
        kernelInitializer: tf.initializers.glorotUniform({ seed: seed + 13 }),
        biasInitializer: 'zeros',
    }));
    // the head reads position 0 only; later positions carry zero weight
    const [kernel, bias] = model.getLayer('head').getWeights();
    const masked = tf.tidy(() => {
        const mask = tf.concat([tf.ones([4, 2]), tf.zeros([20, 2])], 0);
        return kernel.mul(mask);
    });
    model.getLayer('head').setWeights([masked, bias]);
    return model;
}

export async function makeToyModels(seed: number): Promise<ToyExport[]> {
    const out: ToyExport[] = [];
    const rng = new Rng(seed ^ 0xf1c5);

    const mlp = buildMlp(seed);
    const mlpRecipe: ExportRecipe = {
        framework: 'tfjs',
        template: 'mlp',
        layerMap: { fc1: 'dense', fc2: 'dense', fc3: 'dense', fc4: 'dense' },
        name: 'tfjs_mlp',
        outDir: '',
    };
    const mlpInputs = Array.from({ length: 8 }, () => Array.from(rng.uniformArray(8, -2, 2)));
    out.push({
        name: 'tfjs_mlp',
        model: exportLayersModel(mlp, mlpRecipe),
        fixtures: layersFixtures('tfjs_mlp', seed, mlp, mlpInputs, [8], 'f32'),
    });

    const cnn = await buildTrainedCnn(seed);
    const cnnRecipe: ExportRecipe = {
        framework: 'tfjs',
        template: 'small_cnn',
        layerMap: { conv1: 'conv2d', pool1: 'maxpool2d', flat: 'flatten', logits: 'dense' },
        name: 'tfjs_cnn',
        outDir: '',
    };
    const cnnInputs = blobBatch(8, new Rng(seed ^ 0x0f1b)).images;
    out.push({
        name: 'tfjs_cnn',
        model: exportLayersModel(cnn, cnnRecipe),
        fixtures: layersFixtures('tfjs_cnn', seed, cnn, cnnInputs, [8, 8, 1], 'f32'),
    });

    const lookup = buildTokenLookup(seed);
    const lookupRecipe: ExportRecipe = {
        framework: 'tfjs',
        template: 'token_lookup',
        layerMap: { embed: 'embedding', flat: 'flatten', head: 'dense' },
        name: 'tfjs_lookup',
        outDir: '',
    };
    const lookupInputs = Array.from({ length: 8 }, () =>
        Array.from({ length: 6 }, () => rng.int(1, 8)),
    );
    out.push({
        name: 'tfjs_lookup',
        model: exportLayersModel(lookup, lookupRecipe),
        fixtures: layersFixtures('tfjs_lookup', seed, lookup, lookupInputs, [6], 'token_id'),
    });

    const encoder: EncoderCheckpoint = makeEncoderCheckpoint(seed);
    const encoderInputs = Array.from({ length: 8 }, () =>
        Array.from({ length: ENCODER_CONFIG.seqLen }, () => rng.int(0, ENCODER_CONFIG.vocab)),
    );
    out.push({
        name: 'tfjs_encoder',
        model: exportEncoder(encoder),
        fixtures: {
            model: 'tfjs_encoder',
            seed,
            input_kind: 'token_id',
            samples: encoderInputs.map((tokens) => ({
                shape: [ENCODER_CONFIG.seqLen],
                input: tokens,
                prediction: Array.from(encoderPredict(encoder, tokens)),
            })),
        },
    });
    return out;
}

export async function writeToys(outDir: string, seed: number): Promise<string[]> {
    const paths: string[] = [];
    for (const toy of await makeToyModels(seed)) {
        selfCheck(toy.model);
        paths.push(...writeModelFiles(outDir, toy.name, toy.model, toy.fixtures));
    }
    return paths;
}
