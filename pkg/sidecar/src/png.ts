/**
 * Minimal PNG decode/encode for the pipeline's image interchange.
 *
 * Reads non-interlaced grayscale and RGB PNGs at bit depth 8 or 16 (all five
 * scanline filters), returning floats in [0, 1]. The encoder writes 8-bit
 * grayscale or RGB with filter 0, which is all the tests need.
 */
import * as zlib from 'zlib'

export interface DecodedImage {
  width: number
  height: number
  channels: number // 1 or 3
  data: Float32Array // H * W * C, row-major, values in [0, 1]
}

const SIGNATURE = Buffer.from([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a])

export function decodePng(buf: Buffer): DecodedImage {
  if (!buf.subarray(0, 8).equals(SIGNATURE)) throw new Error('not a PNG file')
  let pos = 8
  let width = 0
  let height = 0
  let bitDepth = 0
  let colorType = 0
  const idat: Buffer[] = []
  while (pos < buf.length) {
    const len = buf.readUInt32BE(pos)
    const type = buf.toString('ascii', pos + 4, pos + 8)
    const body = buf.subarray(pos + 8, pos + 8 + len)
    if (type === 'IHDR') {
      width = body.readUInt32BE(0)
      height = body.readUInt32BE(4)
      bitDepth = body.readUInt8(8)
      colorType = body.readUInt8(9)
      if (body.readUInt8(12) !== 0) throw new Error('interlaced PNG not supported')
      if (colorType !== 0 && colorType !== 2) throw new Error(`unsupported PNG color type ${colorType}`)
      if (bitDepth !== 8 && bitDepth !== 16) throw new Error(`unsupported PNG bit depth ${bitDepth}`)
    } else if (type === 'IDAT') {
      idat.push(body)
    } else if (type === 'IEND') {
      break
    }
    pos += 12 + len
  }
  const channels = colorType === 2 ? 3 : 1
  const bytesPerSample = bitDepth / 8
  const bpp = channels * bytesPerSample
  const stride = width * bpp
  const raw = zlib.inflateSync(Buffer.concat(idat))
  if (raw.length < height * (stride + 1)) throw new Error('truncated PNG payload')

  const out = new Float32Array(width * height * channels)
  const prev = Buffer.alloc(stride)
  const cur = Buffer.alloc(stride)
  const maxVal = bitDepth === 8 ? 255 : 65535
  for (let y = 0; y < height; y++) {
    const filter = raw.readUInt8(y * (stride + 1))
    raw.copy(cur, 0, y * (stride + 1) + 1, (y + 1) * (stride + 1))
    unfilterRow(cur, prev, filter, bpp)
    for (let x = 0; x < width; x++) {
      for (let ch = 0; ch < channels; ch++) {
        const off = x * bpp + ch * bytesPerSample
        const v = bitDepth === 8 ? cur.readUInt8(off) : cur.readUInt16BE(off)
        out[(y * width + x) * channels + ch] = v / maxVal
      }
    }
    cur.copy(prev)
  }
  return { width, height, channels, data: out }
}

function unfilterRow(cur: Buffer, prev: Buffer, filter: number, bpp: number): void {
  const n = cur.length
  switch (filter) {
    case 0:
      return
    case 1: // Sub
      for (let i = bpp; i < n; i++) cur[i] = (cur[i] + cur[i - bpp]) & 0xff
      return
    case 2: // Up
      for (let i = 0; i < n; i++) cur[i] = (cur[i] + prev[i]) & 0xff
      return
    case 3: // Average
      for (let i = 0; i < n; i++) {
        const left = i >= bpp ? cur[i - bpp] : 0
        cur[i] = (cur[i] + ((left + prev[i]) >> 1)) & 0xff
      }
      return
    case 4: // Paeth
      for (let i = 0; i < n; i++) {
        const a = i >= bpp ? cur[i - bpp] : 0
        const b = prev[i]
        const c = i >= bpp ? prev[i - bpp] : 0
        const p = a + b - c
        const pa = Math.abs(p - a)
        const pb = Math.abs(p - b)
        const pc = Math.abs(p - c)
        cur[i] = (cur[i] + (pa <= pb && pa <= pc ? a : pb <= pc ? b : c)) & 0xff
      }
      return
    default:
      throw new Error(`unknown PNG filter ${filter}`)
  }
}

const CRC_TABLE = (() => {
  const table = new Uint32Array(256)
  for (let i = 0; i < 256; i++) {
    let c = i
    for (let k = 0; k < 8; k++) c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1
    table[i] = c >>> 0
  }
  return table
})()

function crc32(buf: Buffer): number {
  let c = 0xffffffff
  for (let i = 0; i < buf.length; i++) c = CRC_TABLE[(c ^ buf[i]) & 0xff] ^ (c >>> 8)
  return (c ^ 0xffffffff) >>> 0
}

function chunk(type: string, body: Buffer): Buffer {
  const head = Buffer.alloc(8)
  head.writeUInt32BE(body.length, 0)
  head.write(type, 4, 'ascii')
  const crc = Buffer.alloc(4)
  crc.writeUInt32BE(crc32(Buffer.concat([Buffer.from(type, 'ascii'), body])), 0)
  return Buffer.concat([head, body, crc])
}

/** Encode 8-bit grayscale (channels=1) or RGB (channels=3) from floats in [0,1]. */
export function encodePng(width: number, height: number, channels: number, data: Float32Array): Buffer {
  if (channels !== 1 && channels !== 3) throw new Error('encodePng supports 1 or 3 channels')
  const ihdr = Buffer.alloc(13)
  ihdr.writeUInt32BE(width, 0)
  ihdr.writeUInt32BE(height, 4)
  ihdr.writeUInt8(8, 8)
  ihdr.writeUInt8(channels === 3 ? 2 : 0, 9)
  const stride = width * channels
  const raw = Buffer.alloc(height * (stride + 1))
  for (let y = 0; y < height; y++) {
    raw.writeUInt8(0, y * (stride + 1))
    for (let i = 0; i < stride; i++) {
      const v = Math.max(0, Math.min(1, data[y * stride + i]))
      raw.writeUInt8(Math.round(v * 255), y * (stride + 1) + 1 + i)
    }
  }
  return Buffer.concat([
    SIGNATURE,
    chunk('IHDR', ihdr),
    chunk('IDAT', zlib.deflateSync(raw)),
    chunk('IEND', Buffer.alloc(0)),
  ])
}
