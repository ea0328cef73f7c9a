/**
 * Orbit camera with the exact convention of the server renderer: world up +y,
 * camera space x right / y down / z forward, pixel (r, c) sampled at
 * (c + 0.5, r + 0.5). Poses addressed by (azimuth, elevation, distance) match
 * the /render?az=&el=&dist= endpoint bit for bit.
 */

export interface Camera {
  width: number
  height: number
  fx: number
  fy: number
  cx: number
  cy: number
  /** rotation rows concatenated (9) followed by translation (3) */
  rotation: Float64Array
  translation: Float64Array
}

export interface OrbitState {
  azimuth: number
  elevation: number
  distance: number
  fovDeg: number
}

function cross(a: number[], b: number[]): number[] {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ]
}

function normalize(v: number[]): number[] {
  const n = Math.hypot(v[0], v[1], v[2])
  return [v[0] / n, v[1] / n, v[2] / n]
}

export function lookAtCamera(
  width: number, height: number, fovDeg: number,
  position: number[], target: number[] = [0, 0, 0],
): Camera {
  const fwd = normalize([
    target[0] - position[0], target[1] - position[1], target[2] - position[2],
  ])
  let up = [0, 1, 0]
  let right = cross(fwd, up)
  if (Math.hypot(right[0], right[1], right[2]) < 1e-12) {
    up = [0, 0, 1]
    right = cross(fwd, up)
  }
  right = normalize(right)
  const down = cross(fwd, right)
  const rotation = new Float64Array([...right, ...down, ...fwd])
  const translation = new Float64Array(3)
  for (let r = 0; r < 3; r++) {
    translation[r] = -(rotation[3 * r] * position[0]
      + rotation[3 * r + 1] * position[1]
      + rotation[3 * r + 2] * position[2])
  }
  const fx = 0.5 * width / Math.tan((fovDeg * Math.PI) / 360.0)
  return { width, height, fx, fy: fx, cx: width * 0.5, cy: height * 0.5, rotation, translation }
}

export function orbitCamera(width: number, height: number, orbit: OrbitState,
                            target: number[] = [0, 0, 0]): Camera {
  const ce = Math.cos(orbit.elevation)
  const pos = [
    target[0] + orbit.distance * ce * Math.sin(orbit.azimuth),
    target[1] + orbit.distance * Math.sin(orbit.elevation),
    target[2] + orbit.distance * ce * Math.cos(orbit.azimuth),
  ]
  return lookAtCamera(width, height, orbit.fovDeg, pos, target)
}
