import { readFileSync } from 'node:fs'
import { join } from 'node:path'

export function fixture(name: string): Buffer {
  return readFileSync(join(__dirname, 'fixtures', name))
}

export function fixtureJson<T>(name: string): T {
  return JSON.parse(fixture(name).toString('utf8')) as T
}

export function fixtureArrayBuffer(name: string): ArrayBuffer {
  const buf = fixture(name)
  return buf.buffer.slice(buf.byteOffset, buf.byteOffset + buf.byteLength)
}

export interface Ppm {
  width: number
  height: number
  data: Uint8Array // H*W*3
}

/** Minimal binary P6 reader for the golden images. */
export function readPpm(name: string): Ppm {
  const raw = fixture(name)
  if (raw[0] !== 0x50 || raw[1] !== 0x36) throw new Error('not a P6 ppm')
  let pos = 2
  const fields: number[] = []
  while (fields.length < 3) {
    while (pos < raw.length && /\s/.test(String.fromCharCode(raw[pos]))) pos++
    let start = pos
    while (pos < raw.length && !/\s/.test(String.fromCharCode(raw[pos]))) pos++
    fields.push(Number(raw.subarray(start, pos).toString('ascii')))
  }
  pos++ // single whitespace after maxval
  const [width, height] = fields
  return { width, height, data: new Uint8Array(raw.subarray(pos, pos + width * height * 3)) }
}

/** Quantize a float raster exactly like the server's PPM writer. */
export function quantize(pixels: Float64Array): Uint8Array {
  const out = new Uint8Array(pixels.length)
  for (let i = 0; i < pixels.length; i++) {
    const v = Math.min(1, Math.max(0, pixels[i]))
    out[i] = Math.floor(v * 255 + 0.5)
  }
  return out
}

export function meanAbsDiff(a: Uint8Array, b: Uint8Array): number {
  if (a.length !== b.length) throw new Error('size mismatch')
  let total = 0
  for (let i = 0; i < a.length; i++) total += Math.abs(a[i] - b[i])
  return total / a.length / 255
}
