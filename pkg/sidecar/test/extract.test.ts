import * as fs from 'fs'
import * as os from 'os'
import * as path from 'path'
import { afterAll, beforeAll, describe, expect, it } from 'vitest'

import { Rng } from '../src/rng'
import { encodePng } from '../src/png'
import { readFtns } from '../src/ftns'
import { extract } from '../src/extract'

const tmp = fs.mkdtempSync(path.join(os.tmpdir(), 'extract-'))
const imagesDir = path.join(tmp, 'images')
afterAll(() => fs.rmSync(tmp, { recursive: true, force: true }))

beforeAll(() => {
  fs.mkdirSync(imagesDir, { recursive: true })
  const rng = new Rng(11, 'fixtures')
  for (let i = 0; i < 2; i++) {
    const data = new Float32Array(96 * 96)
    for (let j = 0; j < data.length; j++) data[j] = 0.5 + 0.3 * Math.sin(j / 37 + i) + 0.05 * rng.normal()
    fs.writeFileSync(path.join(imagesDir, `img_${i}.png`), encodePng(96, 96, 1, data))
  }
  // a mask companion for img_0 so the manifest picks up label/mask wiring
  const mask = new Float32Array(96 * 96)
  for (let y = 20; y < 50; y++) for (let x = 30; x < 70; x++) mask[y * 96 + x] = 1
  fs.writeFileSync(path.join(imagesDir, 'img_0__mask.png'), encodePng(96, 96, 1, mask))
})

function job(outDir: string, overrides: Record<string, unknown> = {}) {
  return {
    imagesDir,
    outDir,
    layers: ['layer_2', 'layer_3'],
    batchSize: 2,
    resize: 224,
    backbone: 'wrn50-lite',
    seed: 3,
    split: 'test',
    ...overrides,
  } as Parameters<typeof extract>[0]
}

describe('extraction job', () => {
  it('layer_3 spatial dims are exactly half of layer_2 per axis', async () => {
    const out = path.join(tmp, 'shapes')
    const result = await extract(job(out))
    expect(result.records.length).toBe(2)
    for (const rec of result.records) {
      const l2 = readFtns(path.join(out, rec.features.layer_2))
      const l3 = readFtns(path.join(out, rec.features.layer_3))
      expect(l2.shape.length).toBe(3)
      expect(l3.shape[0] * 2).toBe(l2.shape[0])
      expect(l3.shape[1] * 2).toBe(l2.shape[1])
    }
  })

  it('repeated extraction of the same image is bit-identical', async () => {
    const a = path.join(tmp, 'rep_a')
    const b = path.join(tmp, 'rep_b')
    await extract(job(a))
    await extract(job(b))
    for (const rel of ['features/img_0__layer_2.ftns', 'features/img_0__layer_3.ftns']) {
      const bytesA = fs.readFileSync(path.join(a, rel))
      const bytesB = fs.readFileSync(path.join(b, rel))
      expect(bytesA.equals(bytesB)).toBe(true)
    }
  })

  it('different seeds give different frozen weights', async () => {
    const a = path.join(tmp, 'seed_a')
    const b = path.join(tmp, 'seed_b')
    await extract(job(a, { seed: 1 }))
    await extract(job(b, { seed: 2 }))
    const fa = readFtns(path.join(a, 'features/img_0__layer_2.ftns'))
    const fb = readFtns(path.join(b, 'features/img_0__layer_2.ftns'))
    let differs = false
    for (let i = 0; i < fa.data.length; i++) {
      if (fa.data[i] !== fb.data[i]) {
        differs = true
        break
      }
    }
    expect(differs).toBe(true)
  })

  it('manifest wires masks and labels, and the split name', async () => {
    const out = path.join(tmp, 'manifest')
    const result = await extract(job(out, { split: 'train' }))
    const manifest = JSON.parse(fs.readFileSync(result.manifestPath, 'utf-8'))
    expect(Object.keys(manifest.splits)).toEqual(['train'])
    const byId = new Map(manifest.splits.train.map((r: any) => [r.id, r]))
    expect((byId.get('img_0') as any).label).toBe(1)
    expect((byId.get('img_0') as any).mask).toMatch(/img_0__mask\.png$/)
    expect((byId.get('img_1') as any).label).toBe(0)
    expect((byId.get('img_1') as any).mask).toBeUndefined()
  })

  it('empty image directory yields an empty manifest without failing', async () => {
    const emptyDir = path.join(tmp, 'no_images')
    fs.mkdirSync(emptyDir, { recursive: true })
    const out = path.join(tmp, 'empty_out')
    const result = await extract(job(out, { imagesDir: emptyDir }))
    expect(result.records).toEqual([])
    const manifest = JSON.parse(fs.readFileSync(result.manifestPath, 'utf-8'))
    expect(manifest.splits.test).toEqual([])
  })

  it('skips unreadable images and excludes them from the manifest', async () => {
    const mixedDir = path.join(tmp, 'mixed')
    fs.mkdirSync(mixedDir, { recursive: true })
    fs.copyFileSync(path.join(imagesDir, 'img_1.png'), path.join(mixedDir, 'ok.png'))
    fs.writeFileSync(path.join(mixedDir, 'broken.png'), Buffer.from('this is not a png'))
    const out = path.join(tmp, 'mixed_out')
    const result = await extract(job(out, { imagesDir: mixedDir }))
    expect(result.skipped).toEqual(['broken.png'])
    expect(result.records.map((r) => r.id)).toEqual(['ok'])
  })
})
