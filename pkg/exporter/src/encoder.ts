/** Tiny two-block attention encoder built from TensorFlow.js core ops.
 *
 * The layers API has no multi-head attention layer, so this template keeps
 * its checkpoint as a named weight dictionary (JSON) and runs its forward
 * pass with tf core kernels; those predictions are the parity reference
 * for the exported graph.  Weight matrices use the tfjs (in, out)
 * convention and are transposed on export.
 */
import * as fs from 'node:fs';
import * as tf from '@tensorflow/tfjs';

import { BuiltModel, Param } from './format.js';
import { Rng } from './rng.js';

export interface EncoderConfig {
    vocab: number;
    dModel: number;
    seqLen: number;
    headCount: number;
    classes: number;
    epsilon: number;
}

export const ENCODER_CONFIG: EncoderConfig = {
    vocab: 16,
    dModel: 8,
    seqLen: 4,
    headCount: 2,
    classes: 2,
    epsilon: 1e-5,
};

export interface EncoderCheckpoint {
    config: EncoderConfig;
    /** name -> {shape, values}; names follow block/tensor convention */
    weights: Record<string, { shape: number[]; values: number[] }>;
}

const ATTN_TENSORS = ['Wq', 'bq', 'Wk', 'bk', 'Wv', 'bv', 'Wo', 'bo'] as const;

export function makeEncoderCheckpoint(seed: number, config = ENCODER_CONFIG): EncoderCheckpoint {
    const rng = new Rng(seed ^ 0x5e17);
    const { vocab, dModel, classes, seqLen } = config;
    const weights: EncoderCheckpoint['weights'] = {};
    const put = (name: string, shape: number[], scale: number, shift = 0) => {
        const n = shape.reduce((a, b) => a * b, 1);
        const values = new Array<number>(n);
        for (let i = 0; i < n; i++) values[i] = shift + scale * (rng.next() * 2 - 1);
        weights[name] = { shape, values };
    };
    put('embed/table', [vocab, dModel], 0.6);
    for (const block of [1, 2]) {
        put(`ln${block}/gamma`, [dModel], 0.1, 1.0);
        put(`ln${block}/beta`, [dModel], 0.05);
        for (const t of ['Wq', 'Wk', 'Wv', 'Wo']) put(`attn${block}/${t}`, [dModel, dModel], 0.4);
        for (const t of ['bq', 'bk', 'bv', 'bo']) put(`attn${block}/${t}`, [dModel], 0.05);
    }
    put('head/kernel', [seqLen * dModel, classes], 0.3);
    put('head/bias', [classes], 0.1);
    return { config, weights };
}

export function saveEncoderCheckpoint(checkpoint: EncoderCheckpoint, path: string): void {
    fs.writeFileSync(path, JSON.stringify(checkpoint));
}

export function loadEncoderCheckpoint(path: string): EncoderCheckpoint {
    return JSON.parse(fs.readFileSync(path, 'utf-8')) as EncoderCheckpoint;
}

function tensorOf(checkpoint: EncoderCheckpoint, name: string): tf.Tensor {
    const entry = checkpoint.weights[name];
    return tf.tensor(entry.values, entry.shape, 'float32');
}

function layerNorm(x: tf.Tensor2D, gamma: tf.Tensor, beta: tf.Tensor, epsilon: number): tf.Tensor2D {
    const mean = x.mean(-1, true);
    const variance = x.sub(mean).square().mean(-1, true);
    return x.sub(mean).div(variance.add(epsilon).sqrt()).mul(gamma).add(beta) as tf.Tensor2D;
}

function attention(
    x: tf.Tensor2D,
    w: Record<(typeof ATTN_TENSORS)[number], tf.Tensor>,
    headCount: number,
): tf.Tensor2D {
    const [seqLen, dModel] = x.shape;
    const dk = dModel / headCount;
    const q = x.matMul(w.Wq as tf.Tensor2D).add(w.bq);
    const k = x.matMul(w.Wk as tf.Tensor2D).add(w.bk);
    const v = x.matMul(w.Wv as tf.Tensor2D).add(w.bv);
    // heads are contiguous feature blocks: (T, H, dk) -> (H, T, dk)
    const split = (t: tf.Tensor) =>
        t.reshape([seqLen, headCount, dk]).transpose([1, 0, 2]) as tf.Tensor3D;
    const qh = split(q);
    const kh = split(k);
    const vh = split(v);
    const scores = tf.matMul(qh, kh, false, true).div(Math.sqrt(dk));
    const attn = tf.softmax(scores, -1);
    const mixed = tf.matMul(attn, vh); // (H, T, dk)
    const merged = mixed.transpose([1, 0, 2]).reshape([seqLen, dModel]) as tf.Tensor2D;
    return merged.matMul(w.Wo as tf.Tensor2D).add(w.bo) as tf.Tensor2D;
}

/** Source-framework forward pass: token ids -> class probabilities. */
export function encoderPredict(checkpoint: EncoderCheckpoint, tokens: number[]): Float32Array {
    const { config } = checkpoint;
    return tf.tidy(() => {
        const table = tensorOf(checkpoint, 'embed/table') as tf.Tensor2D;
        let x = tf.gather(table, tf.tensor1d(tokens, 'int32')) as tf.Tensor2D;
        for (const block of [1, 2]) {
            const normed = layerNorm(
                x,
                tensorOf(checkpoint, `ln${block}/gamma`),
                tensorOf(checkpoint, `ln${block}/beta`),
                config.epsilon,
            );
            const w = Object.fromEntries(
                ATTN_TENSORS.map((t) => [t, tensorOf(checkpoint, `attn${block}/${t}`)]),
            ) as Record<(typeof ATTN_TENSORS)[number], tf.Tensor>;
            const attended = attention(normed, w, config.headCount);
            x = attended.add(normed) as tf.Tensor2D;
        }
        const flat = x.reshape([1, config.seqLen * config.dModel]);
        const logits = flat
            .matMul(tensorOf(checkpoint, 'head/kernel') as tf.Tensor2D)
            .add(tensorOf(checkpoint, 'head/bias'));
        return tf.softmax(logits, -1).dataSync() as Float32Array;
    });
}

function param(checkpoint: EncoderCheckpoint, name: string, transpose = false): Param {
    const entry = checkpoint.weights[name];
    if (transpose) {
        const t = tf.transpose(tf.tensor(entry.values, entry.shape, 'float32'));
        const out = { shape: t.shape.slice(), data: t.dataSync() as Float32Array };
        t.dispose();
        return out;
    }
    return { shape: entry.shape.slice(), data: Float32Array.from(entry.values) };
}

/** Map the checkpoint onto the portable graph (same dataflow as the forward). */
export function exportEncoder(checkpoint: EncoderCheckpoint): BuiltModel {
    const { config } = checkpoint;
    const nodes: BuiltModel['nodes'] = [
        { id: 'tokens', kind: 'input', attrs: { shape: [config.seqLen], dtype: 'token_id' } },
        { id: 'embed', kind: 'embedding', params: { table: param(checkpoint, 'embed/table') } },
    ];
    const edges: [string, string, number][] = [['tokens', 'embed', 0]];
    let previous = 'embed';
    for (const block of [1, 2]) {
        const ln = `ln${block}`;
        const attn = `attn${block}`;
        nodes.push({
            id: ln,
            kind: 'layernorm',
            params: { gamma: param(checkpoint, `${ln}/gamma`), beta: param(checkpoint, `${ln}/beta`) },
            attrs: { epsilon: config.epsilon },
        });
        nodes.push({
            id: attn,
            kind: 'mha',
            params: {
                W_Q: param(checkpoint, `${attn}/Wq`, true),
                b_Q: param(checkpoint, `${attn}/bq`),
                W_K: param(checkpoint, `${attn}/Wk`, true),
                b_K: param(checkpoint, `${attn}/bk`),
                W_V: param(checkpoint, `${attn}/Wv`, true),
                b_V: param(checkpoint, `${attn}/bv`),
                W_O: param(checkpoint, `${attn}/Wo`, true),
                b_O: param(checkpoint, `${attn}/bo`),
            },
            attrs: { head_count: config.headCount },
        });
        nodes.push({ id: `res${block}`, kind: 'add' });
        edges.push([previous, ln, 0]);
        edges.push([ln, attn, 0]);
        edges.push([attn, `res${block}`, 0]);
        edges.push([ln, `res${block}`, 1]);
        previous = `res${block}`;
    }
    nodes.push({ id: 'flat', kind: 'flatten' });
    nodes.push({
        id: 'head',
        kind: 'dense',
        params: { W: param(checkpoint, 'head/kernel', true), b: param(checkpoint, 'head/bias') },
    });
    nodes.push({ id: 'probs', kind: 'softmax', attrs: { axis: -1 } });
    edges.push([previous, 'flat', 0], ['flat', 'head', 0], ['head', 'probs', 0]);
    return { nodes, edges, inputIds: ['tokens'], outputId: 'probs' };
}
