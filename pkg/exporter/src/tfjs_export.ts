/** Convert a tf.LayersModel into the portable graph format.
 *
 * Layer kinds are mapped one-to-one onto graph nodes; anything outside the
 * supported set aborts the export.  Fused activations on Dense/Conv2D stay
 * fused (relu/sigmoid/tanh/linear); a softmax activation becomes its own
 * node since the engine treats softmax as a separate unit.  Dense kernels
 * transpose from tfjs (in, out) to the format's (out, in).
 */
import * as tf from '@tensorflow/tfjs';

import { BuiltModel, BuiltNode, Param } from './format.js';

export class UnsupportedLayer extends Error {}
export class ShapeDrift extends Error {}

export type TemplateName = 'mlp' | 'small_cnn' | 'tiny_transformer_encoder' | 'token_lookup';

export interface ExportRecipe {
    framework: 'tfjs';
    template: TemplateName;
    /** source layer name -> node kind; layers not listed abort the export */
    layerMap: Record<string, string>;
    name: string;
    outDir: string;
    /** optional per-layer expected weight shapes; mismatches abort */
    declaredShapes?: Record<string, number[][]>;
}

const FUSABLE = new Set(['linear', 'relu', 'sigmoid', 'tanh']);

function toParam(tensor: tf.Tensor): Param {
    return { shape: tensor.shape.slice(), data: tensor.dataSync() as Float32Array };
}

function checkDeclaredShapes(recipe: ExportRecipe, layer: tf.layers.Layer): void {
    const declared = recipe.declaredShapes?.[layer.name];
    if (!declared) return;
    const actual = layer.getWeights().map((w) => w.shape);
    const same =
        declared.length === actual.length &&
        declared.every((shape, i) => shape.length === actual[i].length &&
            shape.every((d, j) => d === actual[i][j]));
    if (!same) {
        throw new ShapeDrift(
            `${layer.name}: declared ${JSON.stringify(declared)} vs actual ${JSON.stringify(actual)}`,
        );
    }
}

/** Map several common layer configs onto graph nodes. Returns the new node
 * ids in execution order (an activation split yields two nodes). */
function convertLayer(layer: tf.layers.Layer, kind: string, recipe: ExportRecipe): BuiltNode[] {
    const config = layer.getConfig() as Record<string, unknown>;
    checkDeclaredShapes(recipe, layer);
    if (kind === 'dense') {
        const [kernel, bias] = layer.getWeights();
        if (!kernel || !bias) throw new ShapeDrift(`${layer.name}: dense needs kernel+bias`);
        const activation = String(config.activation ?? 'linear');
        const node: BuiltNode = {
            id: layer.name,
            kind: 'dense',
            params: { W: toParam(tf.transpose(kernel)), b: toParam(bias) },
        };
        if (FUSABLE.has(activation)) {
            if (activation !== 'linear') node.activation = { name: activation };
            return [node];
        }
        if (activation === 'softmax') {
            return [node, { id: `${layer.name}_softmax`, kind: 'softmax', attrs: { axis: -1 } }];
        }
        throw new UnsupportedLayer(`${layer.name}: activation ${activation}`);
    }
    if (kind === 'conv2d') {
        const [kernel, bias] = layer.getWeights();
        if (!kernel || !bias) throw new ShapeDrift(`${layer.name}: conv2d needs kernel+bias`);
        const activation = String(config.activation ?? 'linear');
        if (!FUSABLE.has(activation)) {
            throw new UnsupportedLayer(`${layer.name}: activation ${activation}`);
        }
        if (config.padding !== 'valid' && config.padding !== 'same') {
            throw new UnsupportedLayer(`${layer.name}: padding ${config.padding}`);
        }
        const strides = config.strides as number[] | number;
        const node: BuiltNode = {
            id: layer.name,
            kind: 'conv2d',
            params: { W: toParam(kernel), b: toParam(bias) },
            attrs: {
                stride: Array.isArray(strides) ? strides : [strides, strides],
                padding: config.padding,
            },
        };
        if (activation !== 'linear') node.activation = { name: activation };
        return [node];
    }
    if (kind === 'maxpool2d' || kind === 'avgpool2d') {
        const pool = config.poolSize as number[] | number;
        const strides = (config.strides ?? pool) as number[] | number;
        if (config.padding !== 'valid') {
            throw new UnsupportedLayer(`${layer.name}: pooling padding ${config.padding}`);
        }
        return [{
            id: layer.name,
            kind,
            attrs: {
                window: Array.isArray(pool) ? pool : [pool, pool],
                stride: Array.isArray(strides) ? strides : [strides, strides],
            },
        }];
    }
    if (kind === 'flatten') {
        return [{ id: layer.name, kind: 'flatten' }];
    }
    if (kind === 'embedding') {
        const [table] = layer.getWeights();
        return [{ id: layer.name, kind: 'embedding', params: { table: toParam(table) } }];
    }
    if (kind === 'softmax') {
        return [{ id: layer.name, kind: 'softmax', attrs: { axis: -1 } }];
    }
    throw new UnsupportedLayer(`${layer.name}: no conversion for kind ${kind}`);
}

/** Export a sequential LayersModel using the recipe's layer-name mapping. */
export function exportLayersModel(model: tf.LayersModel, recipe: ExportRecipe): BuiltModel {
    const nodes: BuiltNode[] = [];
    const edges: [string, string, number][] = [];
    const inputShape = (model.layers[0].batchInputShape ?? []).slice(1);
    if (inputShape.some((d) => d === null)) {
        throw new ShapeDrift(`${recipe.name}: dynamic input dimensions are not exportable`);
    }
    const firstKind = recipe.layerMap[model.layers[0].name];
    const tokenInput = firstKind === 'embedding';
    nodes.push({
        id: 'input',
        kind: 'input',
        attrs: { shape: inputShape as number[], dtype: tokenInput ? 'token_id' : 'f32' },
    });
    let previous = 'input';
    for (const layer of model.layers) {
        const kind = recipe.layerMap[layer.name];
        if (kind === undefined) {
            throw new UnsupportedLayer(
                `${layer.name} (${layer.getClassName()}) is not in the recipe's layer map`,
            );
        }
        for (const node of convertLayer(layer, kind, recipe)) {
            nodes.push(node);
            edges.push([previous, node.id, 0]);
            previous = node.id;
        }
    }
    return { nodes, edges, inputIds: ['input'], outputId: previous };
}

/** Default layer-name mapping: every layer keeps its class's natural kind. */
export function defaultLayerMap(model: tf.LayersModel): Record<string, string> {
    const byClass: Record<string, string> = {
        Dense: 'dense',
        Conv2D: 'conv2d',
        MaxPooling2D: 'maxpool2d',
        AveragePooling2D: 'avgpool2d',
        Flatten: 'flatten',
        Embedding: 'embedding',
        Softmax: 'softmax',
    };
    const map: Record<string, string> = {};
    for (const layer of model.layers) {
        const kind = byClass[layer.getClassName()];
        if (kind === undefined) {
            throw new UnsupportedLayer(`${layer.name}: layer class ${layer.getClassName()}`);
        }
        map[layer.name] = kind;
    }
    return map;
}
