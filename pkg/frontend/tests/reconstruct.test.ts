import { describe, expect, it } from 'vitest'

import { MODALITIES, parseModel } from '../src/model'
import { reconstruct, zeroCoefficients } from '../src/reconstruct'
import { fixtureArrayBuffer } from './helpers'

describe('reconstruct', () => {
  const model = parseModel(fixtureArrayBuffer('model.gem'))

  it('zero coefficients reproduce the means', () => {
    const cloud = reconstruct(model, zeroCoefficients(model))
    const mean = model.bases.position.mean
    for (let i = 0; i < cloud.positions.length; i++) {
      expect(cloud.positions[i]).toBe(mean[i])
    }
    for (let i = 0; i < cloud.scales.length; i++) {
      expect(cloud.scales[i]).toBeCloseTo(Math.exp(model.bases.scale.mean[i]), 12)
    }
  })

  it('quaternions come out unit-norm', () => {
    const k = zeroCoefficients(model)
    if (k.rotation.length > 0) k.rotation[0] = 2.5 * model.bases.rotation.stddev[0]
    const cloud = reconstruct(model, k)
    for (let i = 0; i < cloud.count; i++) {
      const o = 4 * i
      const n = Math.hypot(cloud.rotations[o], cloud.rotations[o + 1],
        cloud.rotations[o + 2], cloud.rotations[o + 3])
      expect(n).toBeCloseTo(1.0, 12)
    }
  })

  it('opacities are activated into (0, 1)', () => {
    const cloud = reconstruct(model, zeroCoefficients(model))
    cloud.opacities.forEach((a) => {
      expect(a).toBeGreaterThan(0)
      expect(a).toBeLessThan(1)
    })
  })

  it('coefficients move the cloud along the basis row', () => {
    const k = zeroCoefficients(model)
    const sigma = model.bases.position.stddev[0]
    k.position[0] = 3 * sigma
    const moved = reconstruct(model, k)
    const base = reconstruct(model, zeroCoefficients(model))
    let dot = 0
    let normD = 0
    let normRow = 0
    const row = model.bases.position.basis
    for (let i = 0; i < moved.positions.length; i++) {
      const d = moved.positions[i] - base.positions[i]
      dot += d * row[i]
      normD += d * d
      normRow += row[i] * row[i]
    }
    const cos = dot / Math.sqrt(normD * normRow)
    expect(Math.abs(cos)).toBeCloseTo(1.0, 6)
    expect(Math.sqrt(normD)).toBeCloseTo(3 * sigma, 4)
  })

  it('rejects mismatched coefficient lengths', () => {
    const k = zeroCoefficients(model)
    k.position = new Float64Array(k.position.length + 1)
    expect(() => reconstruct(model, k)).toThrow(/coefficients/)
  })

  it('every modality participates', () => {
    for (const mod of MODALITIES) {
      expect(model.bases[mod].components).toBeGreaterThan(0)
    }
  })
})
