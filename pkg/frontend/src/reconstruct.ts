/**
 * Coefficient vector -> splat attributes: mean plus the weighted basis rows
 * per modality, quaternions renormalized, activations (exp on scales,
 * sigmoid on opacity) applied. Mirrors the server's evaluation exactly.
 */

import { GemModel, MODALITIES, Modality } from './model.js'

export type Coefficients = Record<Modality, Float64Array>

export interface SplatCloud {
  count: number
  positions: Float64Array // T*3
  rotations: Float64Array // T*4 unit (w,x,y,z)
  scales: Float64Array // T*3, activated (exp)
  opacities: Float64Array // T, activated (sigmoid)
  colors: Float32Array // T*3
}

export function zeroCoefficients(model: GemModel): Coefficients {
  const out = {} as Coefficients
  for (const mod of MODALITIES) {
    out[mod] = new Float64Array(model.bases[mod].components)
  }
  return out
}

function combine(model: GemModel, mod: Modality, k: Float64Array): Float64Array {
  const basis = model.bases[mod]
  if (k.length !== basis.components) {
    throw new Error(`${mod} expects ${basis.components} coefficients, got ${k.length}`)
  }
  const d = basis.mean.length
  const out = new Float64Array(d)
  out.set(basis.mean)
  for (let j = 0; j < basis.components; j++) {
    const kj = k[j]
    if (kj === 0) continue
    const row = j * d
    for (let i = 0; i < d; i++) {
      out[i] += kj * basis.basis[row + i]
    }
  }
  return out
}

export function reconstruct(model: GemModel, k: Coefficients): SplatCloud {
  const t = model.texelCount
  const positions = combine(model, 'position', k.position)
  const rotations = combine(model, 'rotation', k.rotation)
  const logScales = combine(model, 'scale', k.scale)
  const logits = combine(model, 'opacity', k.opacity)

  for (let i = 0; i < t; i++) {
    const o = 4 * i
    const n = Math.hypot(rotations[o], rotations[o + 1], rotations[o + 2], rotations[o + 3])
    rotations[o] /= n
    rotations[o + 1] /= n
    rotations[o + 2] /= n
    rotations[o + 3] /= n
  }
  const scales = new Float64Array(3 * t)
  for (let i = 0; i < 3 * t; i++) scales[i] = Math.exp(logScales[i])
  const opacities = new Float64Array(t)
  for (let i = 0; i < t; i++) {
    const x = logits[i]
    opacities[i] = x >= 0 ? 1 / (1 + Math.exp(-x)) : Math.exp(x) / (1 + Math.exp(x))
  }
  return { count: t, positions, rotations, scales, opacities, colors: model.color }
}
