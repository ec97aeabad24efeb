/**
 * Wide residual backbone, truncated after stage 3.
 *
 * Mirrors the torch-style wide resnet-50 stem and bottleneck stages:
 *
 *   conv 7x7 /2 -> relu -> maxpool 3x3 /2
 *   stage 1: 3 bottlenecks, stride 1   (layer_1, 56x56 at 224 input)
 *   stage 2: 4 bottlenecks, stride 2   (layer_2, 28x28)
 *   stage 3: 6 bottlenecks, stride 2   (layer_3, 14x14)
 *
 * layer_3's spatial dims are exactly half of layer_2's by construction. The
 * network runs frozen (inference only, no gradients). Weights initialize from
 * a seeded deterministic stream; a weights directory of FTNS tensors (one per
 * parameter name) overrides any parameter present, which is how actual
 * pretrained weights plug in when available offline.
 *
 * Presets: "wrn50" is the full 512/1024-channel geometry; "wrn50-lite" keeps
 * the identical stage layout at 1/8 width so pure-JS inference stays fast.
 */
import * as fs from 'fs'
import * as path from 'path'
import * as tf from '@tensorflow/tfjs'

import { readFtns } from './ftns'
import { Rng } from './rng'

export interface BackbonePreset {
  name: string
  stemChannels: number
  /** [mid, out] channel pairs per stage */
  stages: Array<{ mid: number; out: number; blocks: number; stride: number }>
}

export const PRESETS: Record<string, BackbonePreset> = {
  wrn50: {
    name: 'wrn50',
    stemChannels: 64,
    stages: [
      { mid: 128, out: 256, blocks: 3, stride: 1 },
      { mid: 256, out: 512, blocks: 4, stride: 2 },
      { mid: 512, out: 1024, blocks: 6, stride: 2 },
    ],
  },
  'wrn50-lite': {
    name: 'wrn50-lite',
    stemChannels: 8,
    stages: [
      { mid: 16, out: 32, blocks: 3, stride: 1 },
      { mid: 32, out: 64, blocks: 4, stride: 2 },
      { mid: 64, out: 128, blocks: 6, stride: 2 },
    ],
  },
}

type Weights = Map<string, tf.Tensor4D>

export class Backbone {
  readonly preset: BackbonePreset
  private weights: Weights = new Map()

  constructor(presetName: string, seed: number, weightsDir?: string) {
    const preset = PRESETS[presetName]
    if (!preset) throw new Error(`unknown backbone preset '${presetName}'; known: ${Object.keys(PRESETS).join(', ')}`)
    this.preset = preset
    this.build(seed, weightsDir)
  }

  private addConv(name: string, kh: number, kw: number, cin: number, cout: number, rng: Rng, weightsDir?: string) {
    let data: Float32Array | null = null
    if (weightsDir) {
      const file = path.join(weightsDir, `${name}.ftns`)
      if (fs.existsSync(file)) {
        const t = readFtns(file)
        if (t.shape.join(',') !== [kh, kw, cin, cout].join(',')) {
          throw new Error(`${file}: expected shape [${kh},${kw},${cin},${cout}], got [${t.shape.join(',')}]`)
        }
        data = Float32Array.from(t.data as Float32Array)
      }
    }
    if (!data) {
      // He-style fan-in scaling keeps activations O(1) through the stack
      const scale = Math.sqrt(2.0 / (kh * kw * cin))
      data = new Rng(Math.floor(rng.uniform() * 2 ** 52), name).normals(kh * kw * cin * cout, scale)
    }
    this.weights.set(name, tf.tensor4d(data, [kh, kw, cin, cout]))
  }

  private build(seed: number, weightsDir?: string) {
    const rng = new Rng(seed, this.preset.name)
    const p = this.preset
    this.addConv('stem.conv', 7, 7, 3, p.stemChannels, rng, weightsDir)
    let cin = p.stemChannels
    p.stages.forEach((stage, si) => {
      for (let b = 0; b < stage.blocks; b++) {
        const prefix = `stage${si + 1}.block${b}`
        this.addConv(`${prefix}.conv1`, 1, 1, cin, stage.mid, rng, weightsDir)
        this.addConv(`${prefix}.conv2`, 3, 3, stage.mid, stage.mid, rng, weightsDir)
        this.addConv(`${prefix}.conv3`, 1, 1, stage.mid, stage.out, rng, weightsDir)
        if (b === 0) this.addConv(`${prefix}.down`, 1, 1, cin, stage.out, rng, weightsDir)
        cin = stage.out
      }
    })
  }

  private conv(x: tf.Tensor4D, name: string, stride: number): tf.Tensor4D {
    return tf.conv2d(x, this.weights.get(name)!, stride, 'same')
  }

  private bottleneck(x: tf.Tensor4D, prefix: string, stride: number, hasDown: boolean): tf.Tensor4D {
    const identity = hasDown ? this.conv(x, `${prefix}.down`, stride) : x
    let out = tf.relu(this.conv(x, `${prefix}.conv1`, 1)) as tf.Tensor4D
    out = tf.relu(this.conv(out, `${prefix}.conv2`, stride)) as tf.Tensor4D
    out = this.conv(out, `${prefix}.conv3`, 1)
    // variance-preserving residual merge: stands in for the frozen batch norm
    // of the pretrained network, keeping activations O(1) through the depth
    return tf.relu(tf.mul(tf.add(out, identity), Math.SQRT1_2)) as tf.Tensor4D
  }

  /**
   * Run the frozen network on an NHWC batch in [0, 1] (already normalized).
   * Returns the named intermediate feature maps.
   */
  features(batch: tf.Tensor4D, layers: string[]): Record<string, tf.Tensor4D> {
    const wanted = new Set(layers)
    const out: Record<string, tf.Tensor4D> = {}
    tf.tidy(() => {
      let x = tf.relu(this.conv(batch, 'stem.conv', 2)) as tf.Tensor4D
      x = tf.maxPool(x, 3, 2, 'same')
      this.preset.stages.forEach((stage, si) => {
        for (let b = 0; b < stage.blocks; b++) {
          x = this.bottleneck(x, `stage${si + 1}.block${b}`, b === 0 ? stage.stride : 1, b === 0)
        }
        const name = `layer_${si + 1}`
        if (wanted.has(name)) {
          out[name] = tf.keep(x.clone())
        }
      })
    })
    for (const name of layers) {
      if (!(name in out)) throw new Error(`layer '${name}' not produced; available: layer_1..layer_${this.preset.stages.length}`)
    }
    return out
  }

  dispose(): void {
    for (const t of this.weights.values()) t.dispose()
    this.weights.clear()
  }
}
