/**
 * Extraction job: images -> per-layer FTNS feature maps + manifest.json.
 *
 * Every PNG in the image directory is resized to the target size (bilinear),
 * grayscale replicated to three channels, normalized with the ImageNet
 * channel statistics, and pushed through the frozen backbone in batches. Each
 * requested layer's map is written as [H_l][W_l][C_l] float32 FTNS. A mask
 * sitting next to an image (`<stem>__mask.png`, with a trailing `__anom`
 * stripped from the stem) is referenced in the manifest and flips the record
 * label to 1. Unreadable images are skipped with a log line and excluded from
 * the manifest.
 */
import * as fs from 'fs'
import * as path from 'path'
import * as tf from '@tensorflow/tfjs'

import { Backbone } from './backbone'
import { writeFtns } from './ftns'
import { decodePng } from './png'

export interface ExtractionJob {
  imagesDir: string
  outDir: string
  layers: string[]
  batchSize: number
  resize: number // target side length, e.g. 224
  backbone: string
  seed: number
  weightsDir?: string
  split: string
}

export const IMAGENET_MEAN = [0.485, 0.456, 0.406]
export const IMAGENET_STD = [0.229, 0.224, 0.225]

interface ManifestRecord {
  id: string
  image: string
  features: Record<string, string>
  label: number
  mask?: string
  source?: string
}

export interface ExtractionResult {
  manifestPath: string
  records: ManifestRecord[]
  skipped: string[]
}

function listImages(dir: string): string[] {
  return fs
    .readdirSync(dir)
    .filter((f) => f.toLowerCase().endsWith('.png') && !f.endsWith('__mask.png'))
    .sort()
}

function maskFor(dir: string, imageFile: string): string | null {
  const stem = path.basename(imageFile, '.png').replace(/__anom$/, '')
  const candidate = path.join(dir, `${stem}__mask.png`)
  return fs.existsSync(candidate) ? candidate : null
}

/** Decode + resize + normalize one image into an NHWC float tensor. */
export function prepareImage(filePath: string, resize: number): tf.Tensor4D {
  const decoded = decodePng(fs.readFileSync(filePath))
  return tf.tidy(() => {
    let img = tf.tensor3d(decoded.data, [decoded.height, decoded.width, decoded.channels])
    if (decoded.channels === 1) img = tf.concat([img, img, img], -1)
    let batch = img.expandDims(0) as tf.Tensor4D
    if (decoded.height !== resize || decoded.width !== resize) {
      batch = tf.image.resizeBilinear(batch, [resize, resize])
    }
    const mean = tf.tensor1d(IMAGENET_MEAN)
    const std = tf.tensor1d(IMAGENET_STD)
    return batch.sub(mean).div(std)
  }) as tf.Tensor4D
}

export async function extract(job: ExtractionJob): Promise<ExtractionResult> {
  await tf.setBackend('cpu')
  await tf.ready()
  fs.mkdirSync(job.outDir, { recursive: true })
  const files = listImages(job.imagesDir)
  const backbone = new Backbone(job.backbone, job.seed, job.weightsDir)
  const records: ManifestRecord[] = []
  const skipped: string[] = []

  for (let lo = 0; lo < files.length; lo += job.batchSize) {
    const chunkFiles = files.slice(lo, lo + job.batchSize)
    const tensors: tf.Tensor4D[] = []
    const okFiles: string[] = []
    for (const f of chunkFiles) {
      const full = path.join(job.imagesDir, f)
      try {
        tensors.push(prepareImage(full, job.resize))
        okFiles.push(f)
      } catch (err) {
        console.error(`skipping unreadable image ${full}: ${(err as Error).message}`)
        skipped.push(f)
      }
    }
    if (okFiles.length === 0) continue
    const batch = tf.concat(tensors, 0) as tf.Tensor4D
    tensors.forEach((t) => t.dispose())
    const maps = backbone.features(batch, job.layers)
    batch.dispose()
    for (let i = 0; i < okFiles.length; i++) {
      const stem = path.basename(okFiles[i], '.png')
      const features: Record<string, string> = {}
      for (const layer of job.layers) {
        const full = maps[layer]
        const [, h, w, c] = full.shape
        const one = tf.tidy(() => full.slice([i, 0, 0, 0], [1, h, w, c]).squeeze([0]))
        const data = one.dataSync() as Float32Array
        one.dispose()
        const rel = path.join('features', `${stem}__${layer}.ftns`)
        writeFtns(path.join(job.outDir, rel), { dtype: 'f32', shape: [h, w, c], data })
        features[layer] = rel
      }
      const record: ManifestRecord = {
        id: stem,
        image: path.relative(job.outDir, path.join(job.imagesDir, okFiles[i])),
        features,
        label: 0,
        source: stem.replace(/__anom$/, ''),
      }
      const mask = maskFor(job.imagesDir, okFiles[i])
      if (mask) {
        record.mask = path.relative(job.outDir, mask)
        record.label = 1
      }
      records.push(record)
    }
    for (const layer of job.layers) maps[layer].dispose()
  }
  backbone.dispose()

  const manifestPath = path.join(job.outDir, 'manifest.json')
  const payload = { splits: { [job.split]: records } }
  const tmp = manifestPath + '.tmp'
  fs.writeFileSync(tmp, JSON.stringify(payload, null, 2))
  fs.renameSync(tmp, manifestPath)
  return { manifestPath, records, skipped }
}
