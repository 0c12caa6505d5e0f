/** Minimal file-system save/load handlers for tf.LayersModel checkpoints.
 *
 * The browser build of TensorFlow.js ships no file:// IO handler, so saving
 * and loading checkpoints in node goes through these.  A checkpoint is the
 * usual pair: model.json (topology + weights manifest) and model.weights.bin.
 */
import * as fs from 'node:fs';
import * as path from 'node:path';
import * as tf from '@tensorflow/tfjs';

export function fileSaveHandler(dir: string): tf.io.IOHandler {
    return {
        async save(artifacts: tf.io.ModelArtifacts): Promise<tf.io.SaveResult> {
            fs.mkdirSync(dir, { recursive: true });
            const weightData = artifacts.weightData as ArrayBuffer;
            const modelJson = {
                modelTopology: artifacts.modelTopology,
                format: artifacts.format,
                generatedBy: artifacts.generatedBy,
                convertedBy: artifacts.convertedBy ?? null,
                weightsManifest: [
                    { paths: ['model.weights.bin'], weights: artifacts.weightSpecs },
                ],
            };
            fs.writeFileSync(path.join(dir, 'model.json'), JSON.stringify(modelJson));
            fs.writeFileSync(path.join(dir, 'model.weights.bin'), Buffer.from(weightData));
            return {
                modelArtifactsInfo: {
                    dateSaved: new Date(),
                    modelTopologyType: 'JSON',
                },
            };
        },
    };
}

export function fileLoadHandler(modelJsonPath: string): tf.io.IOHandler {
    return {
        async load(): Promise<tf.io.ModelArtifacts> {
            const dir = path.dirname(modelJsonPath);
            const doc = JSON.parse(fs.readFileSync(modelJsonPath, 'utf-8'));
            const manifest = doc.weightsManifest ?? [];
            const weightSpecs: tf.io.WeightsManifestEntry[] = [];
            const buffers: Buffer[] = [];
            for (const group of manifest) {
                weightSpecs.push(...group.weights);
                for (const rel of group.paths) {
                    buffers.push(fs.readFileSync(path.join(dir, rel)));
                }
            }
            const combined = Buffer.concat(buffers);
            return {
                modelTopology: doc.modelTopology,
                format: doc.format,
                generatedBy: doc.generatedBy,
                weightSpecs,
                weightData: combined.buffer.slice(
                    combined.byteOffset,
                    combined.byteOffset + combined.byteLength,
                ),
            };
        },
    };
}

export async function saveCheckpoint(model: tf.LayersModel, dir: string): Promise<void> {
    await model.save(fileSaveHandler(dir));
}

export async function loadCheckpoint(modelJsonPath: string): Promise<tf.LayersModel> {
    return tf.loadLayersModel(fileLoadHandler(modelJsonPath));
}
