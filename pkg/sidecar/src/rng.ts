/**
 * Deterministic PRNG for reproducible weight initialization.
 *
 * splitmix64 state progression with Box-Muller normals; identical streams for
 * identical (seed, tag) across runs and platforms.
 */

export class Rng {
  private state: bigint

  constructor(seed: number | bigint, tag = '') {
    let s = (typeof seed === 'number' ? BigInt(Math.floor(seed)) : seed) & 0xffffffffffffffffn
    for (const ch of tag) s = (s * 31n + BigInt(ch.charCodeAt(0))) & 0xffffffffffffffffn
    this.state = s
  }

  private next64(): bigint {
    this.state = (this.state + 0x9e3779b97f4a7c15n) & 0xffffffffffffffffn
    let z = this.state
    z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & 0xffffffffffffffffn
    z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & 0xffffffffffffffffn
    return z ^ (z >> 31n)
  }

  /** Uniform in [0, 1). */
  uniform(): number {
    return Number(this.next64() >> 11n) / 9007199254740992
  }

  /** Standard normal via Box-Muller. */
  normal(): number {
    let u = 0
    while (u === 0) u = this.uniform()
    const v = this.uniform()
    return Math.sqrt(-2.0 * Math.log(u)) * Math.cos(2.0 * Math.PI * v)
  }

  normals(n: number, scale = 1.0): Float32Array {
    const out = new Float32Array(n)
    for (let i = 0; i < n; i++) out[i] = this.normal() * scale
    return out
  }
}
