/**
 * Orbit camera: azimuth/elevation/distance around a target point, plus
 * the view/projection matrices the service expects (row-major 4x4,
 * OpenGL clip conventions, z-up world).
 */

export interface OrbitState {
  azimuth: number;   // radians around the z axis
  elevation: number; // radians above the horizon, clamped
  distance: number;
  target: [number, number, number];
}

const ELEVATION_LIMIT = 1.45;

export function orbitEye(s: OrbitState): [number, number, number] {
  const ce = Math.cos(s.elevation);
  return [
    s.target[0] + s.distance * ce * Math.sin(s.azimuth),
    s.target[1] - s.distance * ce * Math.cos(s.azimuth),
    s.target[2] + s.distance * Math.sin(s.elevation),
  ];
}

/** drag deltas in pixels -> angle deltas; wheel -> multiplicative zoom */
export function applyDrag(s: OrbitState, dxPixels: number, dyPixels: number,
                          radiansPerPixel = 0.01): OrbitState {
  const elevation = Math.min(ELEVATION_LIMIT,
    Math.max(-ELEVATION_LIMIT, s.elevation + dyPixels * radiansPerPixel));
  return { ...s, azimuth: s.azimuth + dxPixels * radiansPerPixel, elevation };
}

export function applyZoom(s: OrbitState, wheelDelta: number,
                          minDist: number, maxDist: number): OrbitState {
  const distance = Math.min(maxDist,
    Math.max(minDist, s.distance * Math.exp(wheelDelta * 0.001)));
  return { ...s, distance };
}

function sub(a: number[], b: number[]): number[] {
  return [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
}

function cross(a: number[], b: number[]): number[] {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

function normalize(a: number[]): number[] {
  const n = Math.hypot(a[0], a[1], a[2]);
  return [a[0] / n, a[1] / n, a[2] / n];
}

/** Row-major rigid view matrix looking from eye toward target. */
export function lookAt(eye: number[], target: number[],
                       up: number[] = [0, 0, 1]): Float64Array {
  const fwd = normalize(sub(target, eye));
  const right = normalize(cross(fwd, up));
  const up2 = cross(right, fwd);
  const m = new Float64Array(16);
  m.set([right[0], right[1], right[2], 0], 0);
  m.set([up2[0], up2[1], up2[2], 0], 4);
  m.set([-fwd[0], -fwd[1], -fwd[2], 0], 8);
  m[15] = 1;
  m[3] = -(right[0] * eye[0] + right[1] * eye[1] + right[2] * eye[2]);
  m[7] = -(up2[0] * eye[0] + up2[1] * eye[1] + up2[2] * eye[2]);
  m[11] = fwd[0] * eye[0] + fwd[1] * eye[1] + fwd[2] * eye[2];
  return m;
}

/** Row-major OpenGL-style perspective projection. */
export function perspective(fovYDegrees: number, aspect: number,
                            near: number, far: number): Float64Array {
  const f = 1.0 / Math.tan((fovYDegrees * Math.PI) / 360.0);
  const m = new Float64Array(16);
  m[0] = f / aspect;
  m[5] = f;
  m[10] = (far + near) / (near - far);
  m[11] = (2 * far * near) / (near - far);
  m[14] = -1;
  return m;
}

export function viewMatrix(s: OrbitState): Float64Array {
  return lookAt(orbitEye(s), [...s.target]);
}

/** 3x3 rotation block orthonormality defect (tests and sanity checks). */
export function rotationDefect(view: Float64Array): number {
  let worst = 0;
  for (let i = 0; i < 3; i++) {
    for (let j = 0; j < 3; j++) {
      let dot = 0;
      for (let k = 0; k < 3; k++) {
        dot += view[i * 4 + k] * view[j * 4 + k];
      }
      worst = Math.max(worst, Math.abs(dot - (i === j ? 1 : 0)));
    }
  }
  return worst;
}
