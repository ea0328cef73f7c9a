/**
 * Viewer state: one slider per principal component, clamped to +-3 sigma
 * exactly (the regressor's output range), plus the orbit camera. The whole
 * state serializes into the URL hash so poses are shareable.
 */

import { OrbitState } from './camera.js'
import { MODALITIES, Modality, ModelMeta } from './model.js'
import { Coefficients } from './reconstruct.js'

export interface ViewerState {
  sliders: Coefficients
  orbit: OrbitState
  serverRender: boolean
}

export function initialState(meta: ModelMeta): ViewerState {
  const sliders = {} as Coefficients
  for (const mod of MODALITIES) {
    sliders[mod] = new Float64Array(meta.M[mod])
  }
  return {
    sliders,
    orbit: { azimuth: 0.0, elevation: 0.15, distance: 4.0, fovDeg: 45 },
    serverRender: false,
  }
}

/** Clamp a slider value to its exact +-3 sigma bound. */
export function clampSlider(meta: ModelMeta, mod: Modality, index: number,
                            value: number): number {
  const bound = 3 * meta.stddevs[mod][index]
  if (value > bound) return bound
  if (value < -bound) return -bound
  return value
}

export function setSlider(state: ViewerState, meta: ModelMeta, mod: Modality,
                          index: number, value: number): void {
  state.sliders[mod][index] = clampSlider(meta, mod, index, value)
}

export function encodeHash(state: ViewerState): string {
  const k = MODALITIES
    .map((mod) => Array.from(state.sliders[mod]).map((v) => String(v)).join(','))
    .join(';')
  const o = state.orbit
  return `#o=${o.azimuth},${o.elevation},${o.distance},${o.fovDeg}&k=${k}`
}

export function decodeHash(hash: string, meta: ModelMeta): ViewerState | null {
  if (!hash.startsWith('#')) return null
  const params = new URLSearchParams(hash.slice(1))
  const state = initialState(meta)
  const o = params.get('o')
  if (o) {
    const [az, el, dist, fov] = o.split(',').map(Number)
    if ([az, el, dist, fov].some((v) => !Number.isFinite(v))) return null
    state.orbit = { azimuth: az, elevation: el, distance: dist, fovDeg: fov }
  }
  const k = params.get('k')
  if (k) {
    const blocks = k.split(';')
    if (blocks.length !== MODALITIES.length) return null
    MODALITIES.forEach((mod, bi) => {
      const values = blocks[bi] === '' ? [] : blocks[bi].split(',').map(Number)
      values.forEach((v, i) => {
        if (i < state.sliders[mod].length && Number.isFinite(v)) {
          setSlider(state, meta, mod, i, v)
        }
      })
    })
  }
  return state
}
