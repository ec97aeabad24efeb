/**
 * FTNS binary tensor files, shared with the main pipeline.
 *
 * Layout (little-endian): magic "FTNS", version u32, dtype u8
 * (1 = f32, 2 = f64, 3 = u8), ndim u8, dims as u64 each, then the raw
 * row-major payload.
 */
import * as fs from 'fs'
import * as path from 'path'

export const FTNS_MAGIC = 'FTNS'
export const FTNS_VERSION = 1

export type FtnsDtype = 'f32' | 'f64' | 'u8'

const DTYPE_CODES: Record<FtnsDtype, number> = { f32: 1, f64: 2, u8: 3 }
const DTYPE_SIZES: Record<FtnsDtype, number> = { f32: 4, f64: 8, u8: 1 }

export interface FtnsTensor {
  dtype: FtnsDtype
  shape: number[]
  data: Float32Array | Float64Array | Uint8Array
}

export function encodeFtns(tensor: FtnsTensor): Buffer {
  const { dtype, shape, data } = tensor
  const count = shape.reduce((a, b) => a * b, 1)
  if (data.length !== count) {
    throw new Error(`payload length ${data.length} does not match shape [${shape.join(', ')}]`)
  }
  const header = Buffer.alloc(4 + 4 + 1 + 1 + 8 * shape.length)
  header.write(FTNS_MAGIC, 0, 'ascii')
  header.writeUInt32LE(FTNS_VERSION, 4)
  header.writeUInt8(DTYPE_CODES[dtype], 8)
  header.writeUInt8(shape.length, 9)
  shape.forEach((d, i) => header.writeBigUInt64LE(BigInt(d), 10 + 8 * i))
  const payload = Buffer.from(data.buffer, data.byteOffset, count * DTYPE_SIZES[dtype])
  return Buffer.concat([header, payload])
}

export function writeFtns(filePath: string, tensor: FtnsTensor): void {
  fs.mkdirSync(path.dirname(filePath), { recursive: true })
  const tmp = filePath + '.tmp'
  fs.writeFileSync(tmp, encodeFtns(tensor))
  fs.renameSync(tmp, filePath)
}

export function readFtns(filePath: string): FtnsTensor {
  const raw = fs.readFileSync(filePath)
  if (raw.length < 10 || raw.toString('ascii', 0, 4) !== FTNS_MAGIC) {
    throw new Error(`${filePath}: bad magic, not an FTNS file`)
  }
  const version = raw.readUInt32LE(4)
  if (version !== FTNS_VERSION) throw new Error(`${filePath}: unsupported FTNS version ${version}`)
  const code = raw.readUInt8(8)
  const ndim = raw.readUInt8(9)
  const dtype = (Object.keys(DTYPE_CODES) as FtnsDtype[]).find((k) => DTYPE_CODES[k] === code)
  if (!dtype) throw new Error(`${filePath}: unknown dtype code ${code}`)
  const shape: number[] = []
  for (let i = 0; i < ndim; i++) shape.push(Number(raw.readBigUInt64LE(10 + 8 * i)))
  const count = shape.reduce((a, b) => a * b, 1)
  const offset = 10 + 8 * ndim
  if (raw.length - offset !== count * DTYPE_SIZES[dtype]) {
    throw new Error(`${filePath}: payload size mismatch`)
  }
  const body = raw.subarray(offset)
  const copy = Buffer.from(body) // detach from the file buffer for alignment safety
  const ab = copy.buffer.slice(copy.byteOffset, copy.byteOffset + copy.byteLength)
  const data = dtype === 'f32' ? new Float32Array(ab) : dtype === 'f64' ? new Float64Array(ab) : new Uint8Array(ab)
  return { dtype, shape, data }
}
