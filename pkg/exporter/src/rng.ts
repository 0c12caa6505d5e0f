/** Small deterministic PRNG for fixture inputs and synthetic data.
 *
 * splitmix32: good enough statistical quality for toy data, trivially
 * portable, and byte-for-byte reproducible across platforms.
 */
export class Rng {
    private state: number;

    constructor(seed: number) {
        this.state = seed >>> 0;
    }

    /** uniform in [0, 1) */
    next(): number {
        this.state = (this.state + 0x9e3779b9) >>> 0;
        let z = this.state;
        z ^= z >>> 16;
        z = Math.imul(z, 0x21f0aaad);
        z ^= z >>> 15;
        z = Math.imul(z, 0x735a2d97);
        z ^= z >>> 15;
        return (z >>> 0) / 4294967296;
    }

    uniform(low: number, high: number): number {
        return low + (high - low) * this.next();
    }

    int(lowInclusive: number, highExclusive: number): number {
        return lowInclusive + Math.floor(this.next() * (highExclusive - lowInclusive));
    }

    uniformArray(n: number, low: number, high: number): Float32Array {
        const out = new Float32Array(n);
        for (let i = 0; i < n; i++) out[i] = this.uniform(low, high);
        return out;
    }
}
