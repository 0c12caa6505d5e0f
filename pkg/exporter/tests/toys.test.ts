import * as fs from 'node:fs';
import * as os from 'node:os';
import * as path from 'node:path';

import { describe, expect, it } from 'vitest';

import { buildModelFiles } from '../src/format.js';
import { loadCheckpoint, saveCheckpoint } from '../src/io.js';
import { blobBatch, buildTrainedCnn, cnnAccuracy, makeToyModels, writeToys } from '../src/toys.js';
import { Rng } from '../src/rng.js';

describe('toy generation', () => {
    it('same seed, byte-identical files', { timeout: 120_000 }, async () => {
        const first = await makeToyModels(7);
        const second = await makeToyModels(7);
        expect(first.map((t) => t.name)).toEqual(second.map((t) => t.name));
        for (let i = 0; i < first.length; i++) {
            const a = buildModelFiles(first[i].model);
            const b = buildModelFiles(second[i].model);
            expect(a.manifest).toBe(b.manifest);
            expect(Buffer.compare(Buffer.from(a.weights), Buffer.from(b.weights))).toBe(0);
            expect(JSON.stringify(first[i].fixtures)).toBe(JSON.stringify(second[i].fixtures));
        }
    });

    it('every toy ships at least 8 prediction fixtures', { timeout: 60_000 }, async () => {
        for (const toy of await makeToyModels(7)) {
            expect(toy.fixtures.samples.length).toBeGreaterThanOrEqual(8);
            for (const sample of toy.fixtures.samples) {
                expect(sample.prediction.every(Number.isFinite)).toBe(true);
            }
        }
    });

    it('trained CNN separates the blob classes', { timeout: 60_000 }, async () => {
        const model = await buildTrainedCnn(7);
        expect(cnnAccuracy(model, 7)).toBeGreaterThan(0.9);
    });

    it('blob batches are deterministic', () => {
        const a = blobBatch(16, new Rng(5));
        const b = blobBatch(16, new Rng(5));
        expect(a.labels).toEqual(b.labels);
        expect(a.images).toEqual(b.images);
    });

    it('writeToys emits three files per model', { timeout: 60_000 }, async () => {
        const dir = fs.mkdtempSync(path.join(os.tmpdir(), 'toys-'));
        const paths = await writeToys(dir, 7);
        expect(paths.length).toBe(4 * 3);
        for (const p of paths) expect(fs.existsSync(p)).toBe(true);
        fs.rmSync(dir, { recursive: true, force: true });
    });
});

describe('checkpoint round trip', () => {
    it('saved LayersModel reloads with identical predictions', { timeout: 60_000 }, async () => {
        const { buildMlp } = await import('../src/toys.js');
        const tf = await import('@tensorflow/tfjs');
        const model = buildMlp(7);
        const dir = fs.mkdtempSync(path.join(os.tmpdir(), 'ckpt-'));
        await saveCheckpoint(model, dir);
        const again = await loadCheckpoint(path.join(dir, 'model.json'));
        const x = tf.tensor(Array.from({ length: 8 }, (_, i) => 0.25 * (i - 4)), [1, 8]);
        const a = (model.predict(x) as InstanceType<typeof tf.Tensor>).dataSync();
        const b = (again.predict(x) as InstanceType<typeof tf.Tensor>).dataSync();
        expect(Array.from(a)).toEqual(Array.from(b));
        fs.rmSync(dir, { recursive: true, force: true });
    });
});
