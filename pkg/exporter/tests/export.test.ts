import * as tf from '@tensorflow/tfjs';
import { describe, expect, it } from 'vitest';

import { encoderPredict, exportEncoder, makeEncoderCheckpoint } from '../src/encoder.js';
import { buildModelFiles } from '../src/format.js';
import {
    defaultLayerMap,
    ExportRecipe,
    exportLayersModel,
    ShapeDrift,
    UnsupportedLayer,
} from '../src/tfjs_export.js';
import { buildMlp } from '../src/toys.js';

function recipeFor(model: tf.LayersModel, name = 'm'): ExportRecipe {
    return { framework: 'tfjs', template: 'mlp', layerMap: defaultLayerMap(model), name, outDir: '' };
}

describe('exportLayersModel', () => {
    it('maps a 4-layer MLP to four dense nodes fc1..fc4', () => {
        const model = buildMlp(7);
        const built = exportLayersModel(model, recipeFor(model));
        const denses = built.nodes.filter((n) => n.kind === 'dense').map((n) => n.id);
        expect(denses).toEqual(['fc1', 'fc2', 'fc3', 'fc4']);
        expect(built.outputId).toBe('fc4');
    });

    it('transposes dense kernels to (out, in)', () => {
        const model = tf.sequential();
        model.add(tf.layers.dense({ name: 'd', units: 2, inputShape: [3], activation: 'linear' }));
        model.getLayer('d').setWeights([
            tf.tensor2d([[1, 4], [2, 5], [3, 6]]),  // tfjs kernel is (in, out)
            tf.tensor1d([0.5, -0.5]),
        ]);
        const built = exportLayersModel(model, recipeFor(model));
        const dense = built.nodes.find((n) => n.id === 'd')!;
        expect(dense.params!.W.shape).toEqual([2, 3]);
        expect(Array.from(dense.params!.W.data)).toEqual([1, 2, 3, 4, 5, 6]);
    });

    it('splits a softmax activation into its own node', () => {
        const model = tf.sequential();
        model.add(tf.layers.dense({ name: 'out', units: 2, inputShape: [3], activation: 'softmax' }));
        const built = exportLayersModel(model, recipeFor(model));
        expect(built.nodes.map((n) => n.kind)).toEqual(['input', 'dense', 'softmax']);
        expect(built.outputId).toBe('out_softmax');
    });

    it('aborts on a layer missing from the recipe map', () => {
        const model = buildMlp(7);
        const recipe = recipeFor(model);
        delete recipe.layerMap.fc3;
        expect(() => exportLayersModel(model, recipe)).toThrow(UnsupportedLayer);
        expect(() => exportLayersModel(model, recipe)).toThrow(/fc3/);
    });

    it('aborts on an unsupported layer class', () => {
        const model = tf.sequential();
        model.add(tf.layers.dense({ name: 'd', units: 4, inputShape: [3] }));
        model.add(tf.layers.dropout({ name: 'drop', rate: 0.5 }));
        expect(() => defaultLayerMap(model)).toThrow(UnsupportedLayer);
    });

    it('detects shape drift against declared shapes', () => {
        const model = buildMlp(7);
        const recipe = recipeFor(model);
        recipe.declaredShapes = { fc1: [[8, 99], [16]] };
        expect(() => exportLayersModel(model, recipe)).toThrow(ShapeDrift);
    });

    it('marks embedding-fed inputs as token ids', () => {
        const model = tf.sequential();
        model.add(tf.layers.embedding({ name: 'e', inputDim: 8, outputDim: 4, inputLength: 6 }));
        model.add(tf.layers.flatten({ name: 'f' }));
        const built = exportLayersModel(model, recipeFor(model));
        expect(built.nodes[0].attrs).toMatchObject({ dtype: 'token_id', shape: [6] });
    });
});

describe('exportEncoder', () => {
    it('produces the expected node kinds and eight attention params', () => {
        const checkpoint = makeEncoderCheckpoint(7);
        const built = exportEncoder(checkpoint);
        const kinds = built.nodes.map((n) => n.kind);
        expect(kinds).toEqual([
            'input', 'embedding', 'layernorm', 'mha', 'add',
            'layernorm', 'mha', 'add', 'flatten', 'dense', 'softmax',
        ]);
        const attn = built.nodes.find((n) => n.id === 'attn1')!;
        expect(Object.keys(attn.params!).sort()).toEqual(
            ['W_K', 'W_O', 'W_Q', 'W_V', 'b_K', 'b_O', 'b_Q', 'b_V'],
        );
    });

    it('predicts normalized probabilities', () => {
        const checkpoint = makeEncoderCheckpoint(7);
        const probs = encoderPredict(checkpoint, [3, 5, 1, 9]);
        expect(probs.length).toBe(2);
        const total = probs[0] + probs[1];
        expect(total).toBeCloseTo(1.0, 5);
    });

    it('is deterministic for a fixed seed', () => {
        const a = buildModelFiles(exportEncoder(makeEncoderCheckpoint(7)));
        const b = buildModelFiles(exportEncoder(makeEncoderCheckpoint(7)));
        expect(a.manifest).toBe(b.manifest);
        expect(Buffer.compare(Buffer.from(a.weights), Buffer.from(b.weights))).toBe(0);
    });
});
