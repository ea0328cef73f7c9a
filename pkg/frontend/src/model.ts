/**
 * Parser for the binary eigenmodel payload served at /model.
 *
 * Layout (little-endian): magic "GEM1", u32 version, u32 texWidth,
 * u32 texHeight, u32 T, mask bits (ceil(W*H/8) bytes, row-major, LSB first),
 * then per modality in fixed order (position, rotation, scale, opacity):
 * u32 dim, u32 M, f32 mean[dim*T], f32 stddev[M], f32 basis[M][dim*T],
 * and finally f32 color[T][3].
 */

export const MODALITIES = ['position', 'rotation', 'scale', 'opacity'] as const
export type Modality = (typeof MODALITIES)[number]

export const MODALITY_DIMS: Record<Modality, number> = {
  position: 3,
  rotation: 4,
  scale: 3,
  opacity: 1,
}

export interface EigenBasis {
  dim: number
  components: number
  mean: Float32Array // dim * T
  stddev: Float32Array // components
  basis: Float32Array // components * dim * T, row-major
}

export interface GemModel {
  texWidth: number
  texHeight: number
  texelCount: number
  mask: Uint8Array // W*H booleans, row-major
  bases: Record<Modality, EigenBasis>
  color: Float32Array // T * 3
}

export class ModelParseError extends Error {}

export function parseModel(buffer: ArrayBuffer): GemModel {
  const view = new DataView(buffer)
  let pos = 0
  const need = (n: number, what: string) => {
    if (pos + n > buffer.byteLength) {
      throw new ModelParseError(`model payload truncated in ${what}`)
    }
  }
  need(4, 'magic')
  const magic = String.fromCharCode(
    view.getUint8(0), view.getUint8(1), view.getUint8(2), view.getUint8(3))
  if (magic !== 'GEM1') {
    throw new ModelParseError(`bad magic ${JSON.stringify(magic)}`)
  }
  pos = 4
  const u32 = (what: string) => {
    need(4, what)
    const v = view.getUint32(pos, true)
    pos += 4
    return v
  }
  const f32 = (count: number, what: string) => {
    need(4 * count, what)
    const arr = new Float32Array(buffer.slice(pos, pos + 4 * count))
    pos += 4 * count
    return arr
  }

  const version = u32('version')
  if (version !== 1) {
    throw new ModelParseError(`unsupported model version ${version}`)
  }
  const texWidth = u32('texWidth')
  const texHeight = u32('texHeight')
  const texelCount = u32('T')
  const maskBytes = Math.ceil((texWidth * texHeight) / 8)
  need(maskBytes, 'mask')
  const packed = new Uint8Array(buffer, pos, maskBytes)
  pos += maskBytes
  const mask = new Uint8Array(texWidth * texHeight)
  let popcount = 0
  for (let i = 0; i < mask.length; i++) {
    const bit = (packed[i >> 3] >> (i & 7)) & 1
    mask[i] = bit
    popcount += bit
  }
  if (popcount !== texelCount) {
    throw new ModelParseError(`mask popcount ${popcount} != recorded T ${texelCount}`)
  }

  const bases = {} as Record<Modality, EigenBasis>
  for (const mod of MODALITIES) {
    const dim = u32(`${mod} dim`)
    if (dim !== MODALITY_DIMS[mod]) {
      throw new ModelParseError(`${mod} dim ${dim} != ${MODALITY_DIMS[mod]}`)
    }
    const components = u32(`${mod} M`)
    const mean = f32(dim * texelCount, `${mod} mean`)
    const stddev = f32(components, `${mod} stddev`)
    const basis = f32(components * dim * texelCount, `${mod} basis`)
    bases[mod] = { dim, components, mean, stddev, basis }
  }
  const color = f32(3 * texelCount, 'color')
  return { texWidth, texHeight, texelCount, mask, bases, color }
}

/** Metadata as served at /meta. */
export interface ModelMeta {
  texWidth: number
  texHeight: number
  T: number
  M: Record<Modality, number>
  stddevs: Record<Modality, number[]>
}
