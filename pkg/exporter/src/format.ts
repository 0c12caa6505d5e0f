/** Writers for the portable model format consumed by the backtrace engine.
 *
 * Two files per model: a strict JSON manifest and a raw weights blob of
 * little-endian float32 values with every parameter starting on a 64-byte
 * boundary.  See ../../docs/model_format.md for the full schema; this
 * module intentionally implements only what an exporter needs.
 */
import * as fs from 'node:fs';
import * as path from 'node:path';

export const ALIGNMENT = 64;

/** Canonical parameter order per kind; must match the engine's save order. */
export const PARAM_ORDER: Record<string, string[]> = {
    input: [],
    dense: ['W', 'b'],
    conv2d: ['W', 'b'],
    maxpool2d: [],
    avgpool2d: [],
    flatten: [],
    add: [],
    concat: [],
    embedding: ['table'],
    layernorm: ['gamma', 'beta'],
    softmax: [],
    mha: ['W_Q', 'b_Q', 'W_K', 'b_K', 'W_V', 'b_V', 'W_O', 'b_O'],
    activation: [],
};

export interface ActivationJson {
    name: string;
    monotonic?: boolean;
    lower_sat?: number | null;
    upper_sat?: number | null;
}

export interface Param {
    shape: number[];
    data: Float32Array;
}

export interface BuiltNode {
    id: string;
    kind: string;
    params?: Record<string, Param>;
    attrs?: Record<string, unknown>;
    activation?: ActivationJson | null;
}

export interface BuiltModel {
    nodes: BuiltNode[];
    edges: [string, string, number][];
    inputIds: string[];
    outputId: string;
}

export interface FixtureSample {
    shape: number[];
    input: number[];
    prediction: number[];
}

export interface Fixtures {
    model: string;
    seed: number;
    input_kind: 'f32' | 'token_id';
    samples: FixtureSample[];
}

function checkParam(node: BuiltNode, name: string, param: Param): void {
    const count = param.shape.reduce((a, b) => a * b, 1);
    if (count !== param.data.length) {
        throw new Error(
            `${node.id}.${name}: shape [${param.shape}] does not match ${param.data.length} values`,
        );
    }
}

/** Serialize a built model to manifest JSON text plus the weights blob. */
export function buildModelFiles(model: BuiltModel): { manifest: string; weights: Uint8Array } {
    const chunks: Uint8Array[] = [];
    let offset = 0;
    const nodes = model.nodes.map((node) => {
        const entry: Record<string, unknown> = { id: node.id, kind: node.kind };
        const order = PARAM_ORDER[node.kind];
        if (order === undefined) throw new Error(`unknown node kind ${node.kind}`);
        if (node.params && Object.keys(node.params).length > 0) {
            const refs: Record<string, unknown> = {};
            for (const name of order) {
                const param = node.params[name];
                if (!param) throw new Error(`${node.id}: missing param ${name}`);
                checkParam(node, name, param);
                if (offset % ALIGNMENT !== 0) {
                    const pad = ALIGNMENT - (offset % ALIGNMENT);
                    chunks.push(new Uint8Array(pad));
                    offset += pad;
                }
                const bytes = new Uint8Array(param.data.length * 4);
                const view = new DataView(bytes.buffer);
                for (let i = 0; i < param.data.length; i++) {
                    view.setFloat32(i * 4, param.data[i], true);
                }
                refs[name] = {
                    dtype: 'f32',
                    shape: param.shape,
                    offset,
                    length: bytes.length,
                };
                chunks.push(bytes);
                offset += bytes.length;
            }
            entry.params = refs;
        }
        if (node.attrs && Object.keys(node.attrs).length > 0) entry.attrs = node.attrs;
        if (node.activation) {
            entry.activation = {
                name: node.activation.name,
                monotonic: node.activation.monotonic ?? null,
                lower_sat: node.activation.lower_sat ?? null,
                upper_sat: node.activation.upper_sat ?? null,
            };
            // engine defaults apply when omitted; only send what we set
            const act = entry.activation as Record<string, unknown>;
            if (act.monotonic === null) delete act.monotonic;
            if (act.lower_sat === null && node.activation.lower_sat === undefined) delete act.lower_sat;
            if (act.upper_sat === null && node.activation.upper_sat === undefined) delete act.upper_sat;
        }
        return entry;
    });

    const manifest = {
        format_version: 1,
        nodes,
        edges: model.edges,
        input_ids: model.inputIds,
        output_id: model.outputId,
    };
    const weights = new Uint8Array(offset);
    let cursor = 0;
    for (const chunk of chunks) {
        weights.set(chunk, cursor);
        cursor += chunk.length;
    }
    return { manifest: JSON.stringify(manifest, null, 2) + '\n', weights };
}

/** Write <name>.manifest.json / <name>.weights.bin / <name>.fixtures.json. */
export function writeModelFiles(
    outDir: string,
    name: string,
    model: BuiltModel,
    fixtures: Fixtures,
): string[] {
    if (fixtures.samples.length < 8) {
        throw new Error(`${name}: fixtures are mandatory (need >= 8 samples, got ${fixtures.samples.length})`);
    }
    fs.mkdirSync(outDir, { recursive: true });
    const { manifest, weights } = buildModelFiles(model);
    const paths = [
        path.join(outDir, `${name}.manifest.json`),
        path.join(outDir, `${name}.weights.bin`),
        path.join(outDir, `${name}.fixtures.json`),
    ];
    fs.writeFileSync(paths[0], manifest);
    fs.writeFileSync(paths[1], weights);
    fs.writeFileSync(paths[2], JSON.stringify(fixtures, null, 2) + '\n');
    return paths;
}

/** Structural self-check an export must pass before it leaves this package.
 *
 * Not a replacement for engine-side validation; catches exporter bugs early
 * (dangling edges, missing params, misaligned refs).
 */
export function selfCheck(model: BuiltModel): void {
    const ids = new Set<string>();
    for (const node of model.nodes) {
        if (ids.has(node.id)) throw new Error(`duplicate node id ${node.id}`);
        ids.add(node.id);
        const order = PARAM_ORDER[node.kind];
        if (order === undefined) throw new Error(`unknown kind ${node.kind}`);
        for (const name of order) {
            if (!node.params?.[name]) throw new Error(`${node.id}: missing param ${name}`);
        }
    }
    for (const [producer, consumer] of model.edges) {
        if (!ids.has(producer) || !ids.has(consumer)) {
            throw new Error(`edge ${producer}->${consumer} references a missing node`);
        }
    }
    if (!ids.has(model.outputId)) throw new Error(`missing output node ${model.outputId}`);
    for (const leaf of model.inputIds) {
        if (!ids.has(leaf)) throw new Error(`missing input node ${leaf}`);
    }
    const { manifest } = buildModelFiles(model);
    const doc = JSON.parse(manifest);
    for (const node of doc.nodes) {
        for (const ref of Object.values(node.params ?? {}) as { offset: number; length: number; shape: number[] }[]) {
            if (ref.offset % ALIGNMENT !== 0) throw new Error(`${node.id}: misaligned param`);
            const count = ref.shape.reduce((a: number, b: number) => a * b, 1);
            if (ref.length !== 4 * count) throw new Error(`${node.id}: bad param length`);
        }
    }
}
