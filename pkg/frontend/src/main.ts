/**
 * Coefficient explorer: drag per-component sliders (clamped to +-3 sigma),
 * orbit the camera, and watch the reconstructed cloud re-splat live. Local
 * CPU splatting is the default; the server-render toggle fetches the same
 * pose from /render as a thin-client fallback and correctness oracle.
 */

import { orbitCamera } from './camera.js'
import { GemModel, MODALITIES, Modality, ModelMeta, parseModel } from './model.js'
import { reconstruct } from './reconstruct.js'
import { drawSplats, toRGBA } from './splat.js'
import { ViewerState, decodeHash, encodeHash, initialState, setSlider } from './state.js'

const CANVAS_SIZE = 320

let model: GemModel
let meta: ModelMeta
let state: ViewerState
let canvas: HTMLCanvasElement
let statusLine: HTMLElement
let renderPending = false
let lastRenderMs = 0

async function boot(): Promise<void> {
  statusLine = document.getElementById('status')!
  try {
    const [metaResp, modelResp] = await Promise.all([fetch('/meta'), fetch('/model')])
    if (!metaResp.ok || !modelResp.ok) {
      throw new Error(`server said ${metaResp.status}/${modelResp.status}`)
    }
    meta = await metaResp.json()
    model = parseModel(await modelResp.arrayBuffer())
  } catch (err) {
    statusLine.textContent = `failed to load model: ${err}`
    return
  }
  state = decodeHash(location.hash, meta) ?? initialState(meta)
  buildUi()
  scheduleRender()
}

function buildUi(): void {
  const panel = document.getElementById('sliders')!
  panel.replaceChildren()
  for (const mod of MODALITIES) {
    const group = document.createElement('details')
    group.open = mod === 'position'
    const summary = document.createElement('summary')
    summary.textContent = `${mod} (${meta.M[mod]})`
    group.appendChild(summary)
    for (let i = 0; i < meta.M[mod]; i++) {
      group.appendChild(sliderRow(mod, i))
    }
    panel.appendChild(group)
  }

  canvas = document.getElementById('view') as HTMLCanvasElement
  canvas.width = CANVAS_SIZE
  canvas.height = CANVAS_SIZE
  hookOrbit()

  const serverToggle = document.getElementById('server-render') as HTMLInputElement
  serverToggle.checked = state.serverRender
  serverToggle.addEventListener('change', () => {
    state.serverRender = serverToggle.checked
    scheduleRender()
  })
  const reset = document.getElementById('reset')!
  reset.addEventListener('click', () => {
    state = initialState(meta)
    buildUi()
    scheduleRender()
  })
}

function sliderRow(mod: Modality, index: number): HTMLElement {
  const row = document.createElement('label')
  row.className = 'slider-row'
  const bound = 3 * meta.stddevs[mod][index]
  const input = document.createElement('input')
  input.type = 'range'
  input.min = String(-bound)
  input.max = String(bound)
  input.step = String(bound / 100 || 1)
  input.value = String(state.sliders[mod][index])
  input.disabled = bound === 0
  const label = document.createElement('span')
  const readout = document.createElement('code')
  label.textContent = `${mod[0]}${index}`
  readout.textContent = Number(input.value).toFixed(3)
  input.addEventListener('input', () => {
    setSlider(state, meta, mod, index, Number(input.value))
    readout.textContent = state.sliders[mod][index].toFixed(3)
    scheduleRender()
  })
  row.append(label, input, readout)
  return row
}

function hookOrbit(): void {
  let dragging = false
  let lastX = 0
  let lastY = 0
  canvas.addEventListener('pointerdown', (ev) => {
    dragging = true
    lastX = ev.clientX
    lastY = ev.clientY
    canvas.setPointerCapture(ev.pointerId)
  })
  canvas.addEventListener('pointermove', (ev) => {
    if (!dragging) return
    state.orbit.azimuth -= (ev.clientX - lastX) * 0.01
    state.orbit.elevation = Math.max(-1.4, Math.min(1.4,
      state.orbit.elevation + (ev.clientY - lastY) * 0.01))
    lastX = ev.clientX
    lastY = ev.clientY
    scheduleRender()
  })
  canvas.addEventListener('pointerup', () => { dragging = false })
  canvas.addEventListener('wheel', (ev) => {
    ev.preventDefault()
    state.orbit.distance = Math.max(0.5, Math.min(20,
      state.orbit.distance * (ev.deltaY > 0 ? 1.1 : 0.9)))
    scheduleRender()
  }, { passive: false })
}

function scheduleRender(): void {
  if (renderPending) return
  renderPending = true
  requestAnimationFrame(() => {
    renderPending = false
    renderFrame()
  })
}

function renderFrame(): void {
  history.replaceState(null, '', encodeHash(state))
  if (state.serverRender) {
    renderViaServer()
    return
  }
  const start = performance.now()
  const cloud = reconstruct(model, state.sliders)
  const raster = drawSplats(cloud,
    orbitCamera(canvas.width, canvas.height, state.orbit))
  const ctx = canvas.getContext('2d')!
  ctx.putImageData(new ImageData(toRGBA(raster), raster.width, raster.height), 0, 0)
  lastRenderMs = performance.now() - start
  statusLine.textContent =
    `${model.texelCount} splats, local render ${lastRenderMs.toFixed(1)} ms`
}

function renderViaServer(): void {
  const o = state.orbit
  const k = MODALITIES.flatMap((mod) => Array.from(state.sliders[mod]))
  const kParam = k.every((v) => v === 0) ? '0' : k.join(',')
  const url = `/render?k=${kParam}&az=${o.azimuth}&el=${o.elevation}`
    + `&dist=${o.distance}&fov=${o.fovDeg}&size=${canvas.width}&format=png`
  const img = new Image()
  img.onload = () => {
    const ctx = canvas.getContext('2d')!
    ctx.drawImage(img, 0, 0, canvas.width, canvas.height)
    statusLine.textContent = `${model.texelCount} splats, server render`
  }
  img.onerror = () => { statusLine.textContent = 'server render failed' }
  img.src = url
}

boot()
