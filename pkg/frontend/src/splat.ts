/**
 * CPU splatter: project each Gaussian to a 2D splat (local affine
 * approximation), depth-sort with index tie-breaks, and alpha-composite
 * front to back into a float raster. Same math as the server renderer:
 * 0.3 px^2 low-pass floor, 3-sigma integer bbox support, 0.999 alpha clamp,
 * 1e-4 transmittance early-out.
 */

import { Camera } from './camera.js'
import { SplatCloud } from './reconstruct.js'

const NEAR = 0.01
const LOWPASS = 0.3
const ALPHA_CLAMP = 0.999
const T_MIN = 1e-4
const CUTOFF = 3.0

const TILE = 16

export interface Raster {
  width: number
  height: number
  pixels: Float64Array // H*W*3
}

export function drawSplats(cloud: SplatCloud, cam: Camera,
                           background: [number, number, number] = [0, 0, 0]): Raster {
  const { width, height } = cam
  const r = cam.rotation
  const t = cam.translation

  // structure-of-arrays splat store, filled during projection
  const cap = cloud.count
  const depth = new Float64Array(cap)
  const ucx = new Float64Array(cap)
  const ucy = new Float64Array(cap)
  const ci0 = new Float64Array(cap)
  const ci1 = new Float64Array(cap)
  const ci2 = new Float64Array(cap)
  const bc0 = new Int32Array(cap)
  const bc1 = new Int32Array(cap)
  const br0 = new Int32Array(cap)
  const br1 = new Int32Array(cap)
  const alpha0 = new Float64Array(cap)
  const colR = new Float64Array(cap)
  const colG = new Float64Array(cap)
  const colB = new Float64Array(cap)
  let count = 0

  for (let i = 0; i < cloud.count; i++) {
    const px = cloud.positions[3 * i]
    const py = cloud.positions[3 * i + 1]
    const pz = cloud.positions[3 * i + 2]
    const x = r[0] * px + r[1] * py + r[2] * pz + t[0]
    const y = r[3] * px + r[4] * py + r[5] * pz + t[1]
    const z = r[6] * px + r[7] * py + r[8] * pz + t[2]
    if (z <= NEAR) continue

    // covariance R(q) diag(s^2) R(q)^T, all in scalars (no per-splat allocs)
    const w = cloud.rotations[4 * i]
    const qx = cloud.rotations[4 * i + 1]
    const qy = cloud.rotations[4 * i + 2]
    const qz = cloud.rotations[4 * i + 3]
    const r00 = 1 - 2 * (qy * qy + qz * qz)
    const r01 = 2 * (qx * qy - qz * w)
    const r02 = 2 * (qx * qz + qy * w)
    const r10 = 2 * (qx * qy + qz * w)
    const r11 = 1 - 2 * (qx * qx + qz * qz)
    const r12 = 2 * (qy * qz - qx * w)
    const r20 = 2 * (qx * qz - qy * w)
    const r21 = 2 * (qy * qz + qx * w)
    const r22 = 1 - 2 * (qx * qx + qy * qy)
    const s0 = cloud.scales[3 * i]
    const s1 = cloud.scales[3 * i + 1]
    const s2 = cloud.scales[3 * i + 2]
    const m00 = r00 * s0
    const m01 = r01 * s1
    const m02 = r02 * s2
    const m10 = r10 * s0
    const m11 = r11 * s1
    const m12 = r12 * s2
    const m20 = r20 * s0
    const m21 = r21 * s1
    const m22 = r22 * s2
    const v00 = m00 * m00 + m01 * m01 + m02 * m02
    const v01 = m00 * m10 + m01 * m11 + m02 * m12
    const v02 = m00 * m20 + m01 * m21 + m02 * m22
    const v11 = m10 * m10 + m11 * m11 + m12 * m12
    const v12 = m10 * m20 + m11 * m21 + m12 * m22
    const v22 = m20 * m20 + m21 * m21 + m22 * m22
    const invZ = 1 / z
    const j00 = cam.fx * invZ
    const j11 = cam.fy * invZ
    const j02 = -cam.fx * x * invZ * invZ
    const j12 = -cam.fy * y * invZ * invZ
    // m2 = [J * Rcam] rows
    const a0 = j00 * r[0] + j02 * r[6]
    const a1 = j00 * r[1] + j02 * r[7]
    const a2 = j00 * r[2] + j02 * r[8]
    const b0 = j11 * r[3] + j12 * r[6]
    const b1 = j11 * r[4] + j12 * r[7]
    const b2 = j11 * r[5] + j12 * r[8]
    // cov3 * m2 rows
    const p0 = v00 * a0 + v01 * a1 + v02 * a2
    const p1 = v01 * a0 + v11 * a1 + v12 * a2
    const p2 = v02 * a0 + v12 * a1 + v22 * a2
    const q0 = v00 * b0 + v01 * b1 + v02 * b2
    const q1 = v01 * b0 + v11 * b1 + v12 * b2
    const q2 = v02 * b0 + v12 * b1 + v22 * b2
    const a = a0 * p0 + a1 * p1 + a2 * p2 + LOWPASS
    const b = a0 * q0 + a1 * q1 + a2 * q2
    const c = b0 * q0 + b1 * q1 + b2 * q2 + LOWPASS
    const det = a * c - b * b
    if (det <= 1e-12) continue

    const ux = cam.fx * x * invZ + cam.cx
    const uy = cam.fy * y * invZ + cam.cy
    const rx = CUTOFF * Math.sqrt(a)
    const ry = CUTOFF * Math.sqrt(c)
    const cc0 = Math.max(0, Math.ceil(ux - rx - 0.5))
    const cc1 = Math.min(width - 1, Math.floor(ux + rx - 0.5))
    const rr0 = Math.max(0, Math.ceil(uy - ry - 0.5))
    const rr1 = Math.min(height - 1, Math.floor(uy + ry - 0.5))
    if (cc0 > cc1 || rr0 > rr1) continue

    depth[count] = z
    ucx[count] = ux
    ucy[count] = uy
    ci0[count] = c / det
    ci1[count] = -b / det
    ci2[count] = a / det
    bc0[count] = cc0
    bc1[count] = cc1
    br0[count] = rr0
    br1[count] = rr1
    alpha0[count] = cloud.opacities[i]
    colR[count] = cloud.colors[3 * i]
    colG[count] = cloud.colors[3 * i + 1]
    colB[count] = cloud.colors[3 * i + 2]
    count++
  }

  // depth order; Array.prototype.sort is stable, so ties keep index order
  const order = Array.from({ length: count }, (_, i) => i)
  order.sort((p, q) => depth[p] - depth[q])

  // bin to 16x16 tiles; lists inherit depth order from the fill pass
  const nTx = Math.ceil(width / TILE)
  const nTy = Math.ceil(height / TILE)
  const counts = new Int32Array(nTx * nTy)
  for (let oi = 0; oi < count; oi++) {
    const s = order[oi]
    const tx0 = (bc0[s] / TILE) | 0
    const tx1 = (bc1[s] / TILE) | 0
    const ty0 = (br0[s] / TILE) | 0
    const ty1 = (br1[s] / TILE) | 0
    for (let ty = ty0; ty <= ty1; ty++) {
      for (let tx = tx0; tx <= tx1; tx++) counts[ty * nTx + tx]++
    }
  }
  const offsets = new Int32Array(nTx * nTy + 1)
  for (let i = 0; i < counts.length; i++) offsets[i + 1] = offsets[i] + counts[i]
  const list = new Int32Array(offsets[counts.length])
  const cursor = offsets.slice(0, counts.length)
  for (let oi = 0; oi < count; oi++) {
    const s = order[oi]
    const tx0 = (bc0[s] / TILE) | 0
    const tx1 = (bc1[s] / TILE) | 0
    const ty0 = (br0[s] / TILE) | 0
    const ty1 = (br1[s] / TILE) | 0
    for (let ty = ty0; ty <= ty1; ty++) {
      for (let tx = tx0; tx <= tx1; tx++) {
        const tIdx = ty * nTx + tx
        list[cursor[tIdx]++] = s
      }
    }
  }

  const pixels = new Float64Array(width * height * 3)
  for (let ty = 0; ty < nTy; ty++) {
    for (let tx = 0; tx < nTx; tx++) {
      const s0 = offsets[ty * nTx + tx]
      const s1 = offsets[ty * nTx + tx + 1]
      const rowEnd = Math.min(height, (ty + 1) * TILE)
      const colEnd = Math.min(width, (tx + 1) * TILE)
      for (let row = ty * TILE; row < rowEnd; row++) {
        const py = row + 0.5
        for (let col = tx * TILE; col < colEnd; col++) {
          const px = col + 0.5
          let tr = 1.0
          let accR = 0.0
          let accG = 0.0
          let accB = 0.0
          for (let si = s0; si < s1; si++) {
            const s = list[si]
            if (col < bc0[s] || col > bc1[s] || row < br0[s] || row > br1[s]) continue
            const dx = px - ucx[s]
            const dy = py - ucy[s]
            const maha = ci0[s] * dx * dx + 2 * ci1[s] * dx * dy + ci2[s] * dy * dy
            let alpha = alpha0[s] * Math.exp(-0.5 * maha)
            if (alpha > ALPHA_CLAMP) alpha = ALPHA_CLAMP
            const weight = alpha * tr
            accR += weight * colR[s]
            accG += weight * colG[s]
            accB += weight * colB[s]
            tr *= 1 - alpha
            if (tr < T_MIN) break
          }
          const p = row * width + col
          pixels[3 * p] = accR + tr * background[0]
          pixels[3 * p + 1] = accG + tr * background[1]
          pixels[3 * p + 2] = accB + tr * background[2]
        }
      }
    }
  }
  return { width, height, pixels }
}

/** 8-bit conversion matching the server's PPM quantization. */
export function toRGBA(raster: Raster): Uint8ClampedArray<ArrayBuffer> {
  const out = new Uint8ClampedArray(raster.width * raster.height * 4)
  for (let p = 0; p < raster.width * raster.height; p++) {
    for (let ch = 0; ch < 3; ch++) {
      const v = Math.min(1, Math.max(0, raster.pixels[3 * p + ch]))
      out[4 * p + ch] = Math.floor(v * 255 + 0.5)
    }
    out[4 * p + 3] = 255
  }
  return out
}
