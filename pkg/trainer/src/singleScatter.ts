/** Differentiable analytic single scattering for finite flake layer stacks.
 *
 * This mirrors the reference library's closed form. For one layer with
 * optical depth T the depth integral collapses to
 *
 *     reflection:    G_R = (1 - exp(-T (Li + Lo))) / (Li + Lo)
 *     transmission:  G_T = (exp(T Lo) - exp(-T Li)) / (Li + Lo)
 *                    -> T exp(T Lo) (1 - u/2 + u^2/6) below |Li + Lo| = 1e-6
 *
 * with Li = sigma(wi)/cos wi > 0 and Lo signed. The BSDF value per layer is
 * reduced_phase * G / (|cos wi| |cos wo|); stacked layers weight each term
 * by the transmittance of the layers crossed on the way in and out, and
 * incidence from below evaluates the z-mirrored stack in the flipped frame.
 *
 * Directions and half vectors are constants of the evaluation; the layer
 * parameters (alpha, gamma, thickness, f0) and lobe weights are autodiff
 * tensors, so every value is differentiable in the continuous parameters.
 * Flake-normal densities use the closed eigenvalue forms of the alignment
 * matrix (axes (1, 1, a^2) for fibers, (a^2, a^2, 1) for surface flakes):
 *
 *     sigma^2(w) = a^2 + (1 - a^2) (w.p)^2          (surface)
 *     sigma^2(w) = 1 - (1 - a^2) (w.p)^2            (fiber)
 *     D(h) = 1 / (pi sqrt(det S) (h' S^-1 h)^2), det = a^4 | a^2
 *
 * Dead lanes of the reflection/transmission split are fed safe placeholder
 * inputs before exp/div so masked selection never propagates NaN backward.
 */

import { NumericError } from "./errors.js";
import type { Layer, LayerKind } from "./material.js";
import { Tape, Tensor, scalarOf, tensorOf } from "./tape.js";

export const GRAZING_COS_EPS = 1e-7;
const SERIES_EPS = 1e-6;
const DEGENERATE_H = 1e-9;

/** One layer's continuous parameters as autodiff scalars; kind and
 *  orientation stay fixed (the lobe proxy never remaps them). */
export interface LayerParamsT {
  kind: LayerKind;
  orientation: [number, number, number];
  alpha: Tensor;
  gamma: [Tensor, Tensor, Tensor];
  thickness: Tensor;
  f0: [Tensor, Tensor, Tensor];
}

export function layerParamsFromNumbers(layer: Layer): LayerParamsT {
  return {
    kind: layer.kind,
    orientation: [...layer.orientation],
    alpha: scalarOf(layer.roughness),
    gamma: [scalarOf(layer.albedo[0]), scalarOf(layer.albedo[1]), scalarOf(layer.albedo[2])],
    thickness: scalarOf(layer.thickness),
    f0: [scalarOf(layer.f0[0]), scalarOf(layer.f0[1]), scalarOf(layer.f0[2])],
  };
}

/** Direction-pair constants for one canonical-frame evaluation group
 *  (every wi above the horizon). */
export interface PairGeom {
  n: number;
  ci: Float64Array;
  coAbs: Float64Array;
  coSign: Float64Array;
  ciCo: Float64Array;
  refl: Uint8Array;
  /** 1/pi on reflection-side pairs, 0 on transmission-side. */
  lambert: Float64Array;
  /** Schlick constant (1 - clamp(|wi.h|, 0, 1))^5 with the raw (unnormalized)
   *  half vector when wi + wo degenerates. */
  k5: Float64Array;
  perLayer: {
    dotI2: Float64Array;
    dotO2: Float64Array;
    h2: Float64Array; // (h.p)^2 with the perpendicular-approach h when degenerate
    oneMinusH2: Float64Array;
  }[];
}

function clampedCos(z: number): number {
  return z >= 0 ? Math.max(z, GRAZING_COS_EPS) : Math.min(z, -GRAZING_COS_EPS);
}

/** Unit vector orthogonal to w via the axis least aligned with it. */
function anyPerpendicular(wx: number, wy: number, wz: number): [number, number, number] {
  let px: number;
  let py: number;
  let pz: number;
  if (Math.abs(wz) < 0.9) {
    // cross(w, z-axis) = (wy, -wx, 0)
    px = wy;
    py = -wx;
    pz = 0;
  } else {
    // cross(w, x-axis) = (0, wz, -wy)
    px = 0;
    py = wz;
    pz = -wy;
  }
  const norm = Math.sqrt(px * px + py * py + pz * pz);
  return [px / norm, py / norm, pz / norm];
}

/** Build the constants for pairwise evaluation; wi and wo are flattened
 *  (n * 3) with every wi.z >= 0 (canonical frame). */
export function buildPairGeom(
  orientations: [number, number, number][],
  wi: Float64Array,
  wo: Float64Array,
): PairGeom {
  const n = wi.length / 3;
  if (wo.length !== wi.length) {
    throw new NumericError("direction arrays must have matching length");
  }
  const ci = new Float64Array(n);
  const coAbs = new Float64Array(n);
  const coSign = new Float64Array(n);
  const ciCo = new Float64Array(n);
  const refl = new Uint8Array(n);
  const lambert = new Float64Array(n);
  const k5 = new Float64Array(n);
  const hx = new Float64Array(n);
  const hy = new Float64Array(n);
  const hz = new Float64Array(n);
  for (let p = 0; p < n; p++) {
    const ix = wi[p * 3];
    const iy = wi[p * 3 + 1];
    const iz = wi[p * 3 + 2];
    const ox = wo[p * 3];
    const oy = wo[p * 3 + 1];
    const oz = wo[p * 3 + 2];
    ci[p] = clampedCos(iz);
    const cs = clampedCos(oz);
    coSign[p] = cs;
    coAbs[p] = Math.abs(cs);
    ciCo[p] = ci[p] * coAbs[p];
    refl[p] = oz >= 0 ? 1 : 0;
    lambert[p] = oz >= 0 ? 1 / Math.PI : 0;
    let vx = ix + ox;
    let vy = iy + oy;
    let vz = iz + oz;
    const norm = Math.sqrt(vx * vx + vy * vy + vz * vz);
    // The Schlick cosine uses the raw half vector when it degenerates
    // (|wi.hv| -> 0), while the flake density takes the fixed-approach limit
    // along a perpendicular axis.
    const cRaw = Math.abs(ix * (norm < DEGENERATE_H ? vx : vx / norm)
      + iy * (norm < DEGENERATE_H ? vy : vy / norm)
      + iz * (norm < DEGENERATE_H ? vz : vz / norm));
    const c = Math.min(Math.max(cRaw, 0), 1);
    k5[p] = Math.pow(1 - c, 5);
    if (norm < DEGENERATE_H) {
      const [px, py, pz] = anyPerpendicular(ix, iy, iz);
      vx = px;
      vy = py;
      vz = pz;
    } else {
      vx /= norm;
      vy /= norm;
      vz /= norm;
    }
    hx[p] = vx;
    hy[p] = vy;
    hz[p] = vz;
  }
  const perLayer = orientations.map(([ax, ay, az]) => {
    const dotI2 = new Float64Array(n);
    const dotO2 = new Float64Array(n);
    const h2 = new Float64Array(n);
    const oneMinusH2 = new Float64Array(n);
    for (let p = 0; p < n; p++) {
      const di = wi[p * 3] * ax + wi[p * 3 + 1] * ay + wi[p * 3 + 2] * az;
      const dOut = wo[p * 3] * ax + wo[p * 3 + 1] * ay + wo[p * 3 + 2] * az;
      const dh = hx[p] * ax + hy[p] * ay + hz[p] * az;
      dotI2[p] = di * di;
      dotO2[p] = dOut * dOut;
      h2[p] = dh * dh;
      oneMinusH2[p] = 1 - dh * dh;
    }
    return { dotI2, dotO2, h2, oneMinusH2 };
  });
  return { n, ci, coAbs, coSign, ciCo, refl, lambert, k5, perLayer };
}

/** sigma^2 along a stored direction-dot table. */
function sigma2(tape: Tape, kind: LayerKind, oneMinusA2: Tensor, a2: Tensor, dot2: Float64Array): Tensor {
  const scaled = tape.mul(oneMinusA2, tensorOf(dot2));
  if (kind === "surface") {
    return tape.add(a2, scaled);
  }
  return tape.linear(scaled, -1, 1);
}

/** Evaluate the stack in the canonical frame over one geometry group;
 *  returns the three channel vectors (length geom.n). */
export function evalCanonicalTape(
  tape: Tape,
  layers: LayerParamsT[],
  geom: PairGeom,
): [Tensor, Tensor, Tensor] {
  const n = geom.n;
  const L = layers.length;
  const notRefl = new Uint8Array(n);
  for (let p = 0; p < n; p++) notRefl[p] = geom.refl[p] ? 0 : 1;
  const ciT = tensorOf(geom.ci);
  const coAbsT = tensorOf(geom.coAbs);
  const coSignT = tensorOf(geom.coSign);
  const ciCoT = tensorOf(geom.ciCo);
  const negOne = scalarOf(-1);
  const one = scalarOf(1);

  // Per-layer directional quantities.
  const lamI: Tensor[] = [];
  const lamOUp: Tensor[] = [];
  const lamOSigned: Tensor[] = [];
  const d4: Tensor[] = []; // D(h)/4
  const depthI: Tensor[] = []; // thickness * lamI
  const depthOAbs: Tensor[] = [];
  for (let k = 0; k < L; k++) {
    const layer = layers[k];
    const g = geom.perLayer[k];
    const a2 = tape.mul(layer.alpha, layer.alpha);
    const oneMinusA2 = tape.linear(a2, -1, 1);
    const sigI = tape.sqrt(sigma2(tape, layer.kind, oneMinusA2, a2, g.dotI2));
    const sigO = tape.sqrt(sigma2(tape, layer.kind, oneMinusA2, a2, g.dotO2));
    const invA2 = tape.rdivc(1, a2);
    let q: Tensor;
    let sqrtDet: Tensor;
    if (layer.kind === "surface") {
      q = tape.add(tape.mul(invA2, tensorOf(g.oneMinusH2)), tensorOf(g.h2));
      sqrtDet = a2;
    } else {
      q = tape.add(tensorOf(g.oneMinusH2), tape.mul(invA2, tensorOf(g.h2)));
      sqrtDet = layer.alpha;
    }
    const den = tape.mul(tape.mul(q, q), sqrtDet);
    d4.push(tape.rdivc(1 / (4 * Math.PI), den));
    const li = tape.div(sigI, ciT);
    const loUp = tape.div(sigO, coAbsT);
    lamI.push(li);
    lamOUp.push(loUp);
    lamOSigned.push(tape.div(sigO, coSignT));
    depthI.push(tape.mul(layer.thickness, li));
    depthOAbs.push(tape.mul(layer.thickness, loUp));
  }

  // Exclusive prefix sums of optical depth from the top (wi, wo upward) and
  // suffix sums from the bottom (wo downward); null means zero depth.
  const preI: (Tensor | null)[] = [null];
  const preO: (Tensor | null)[] = [null];
  for (let k = 0; k < L; k++) {
    preI.push(preI[k] === null ? depthI[k] : tape.add(preI[k]!, depthI[k]));
    preO.push(preO[k] === null ? depthOAbs[k] : tape.add(preO[k]!, depthOAbs[k]));
  }
  const sufO: (Tensor | null)[] = new Array(L + 1).fill(null);
  for (let k = L - 1; k >= 0; k--) {
    sufO[k] = sufO[k + 1] === null ? depthOAbs[k] : tape.add(sufO[k + 1]!, depthOAbs[k]);
  }
  const att = (depth: Tensor | null): Tensor | null =>
    depth === null ? null : tape.exp(tape.linear(depth, -1, 0));

  let outR: Tensor | null = null;
  let outG: Tensor | null = null;
  let outB: Tensor | null = null;
  for (let k = 0; k < L; k++) {
    const layer = layers[k];
    const t = layer.thickness;

    // Reflection branch.
    const xR = tape.add(lamI[k], lamOUp[k]);
    const gR = tape.div(tape.linear(tape.exp(tape.linear(tape.mul(t, xR), -1, 0)), -1, 1), xR);

    // Transmission branch, with safe placeholders on reflection lanes so
    // masked-out values stay finite through exp and div.
    const lamOT = tape.where(notRefl, lamOSigned[k], negOne);
    const xT = tape.add(lamI[k], lamOT);
    const big = new Uint8Array(n);
    for (let p = 0; p < n; p++) {
      big[p] = notRefl[p] && Math.abs(xT.data[p]) >= SERIES_EPS ? 1 : 0;
    }
    const xTsafe = tape.where(big, xT, one);
    const eO = tape.exp(tape.mul(t, lamOT));
    const eI = tape.exp(tape.linear(tape.mul(t, lamI[k]), -1, 0));
    const gTbig = tape.div(tape.sub(eO, eI), xTsafe);
    const u = tape.mul(t, xT);
    const poly = tape.add(tape.linear(u, -0.5, 1), tape.linear(tape.mul(u, u), 1 / 6, 0));
    const gTseries = tape.mul(tape.mul(t, eO), poly);
    const gT = tape.where(big, gTbig, gTseries);

    const wIn = att(preI[k]);
    const wOutR = att(preO[k]);
    const wOutT = att(sufO[k + 1]);
    const withAtt = (gTerm: Tensor, out: Tensor | null): Tensor => {
      let v = gTerm;
      if (wIn !== null) v = tape.mul(v, wIn);
      if (out !== null) v = tape.mul(v, out);
      return v;
    };
    const geomK = tape.div(
      tape.where(geom.refl, withAtt(gR, wOutR), withAtt(gT, wOutT)),
      ciCoT,
    );
    const baseK = tape.mul(d4[k], geomK);

    const k5T = tensorOf(geom.k5);
    const channels: Tensor[] = [];
    for (let c = 0; c < 3; c++) {
      const f0c = layer.f0[c];
      const sch = tape.add(f0c, tape.mul(tape.linear(f0c, -1, 1), k5T));
      const fres = tape.mul(layer.gamma[c], sch);
      channels.push(tape.mul(fres, baseK));
    }
    outR = outR === null ? channels[0] : tape.add(outR, channels[0]);
    outG = outG === null ? channels[1] : tape.add(outG, channels[1]);
    outB = outB === null ? channels[2] : tape.add(outB, channels[2]);
  }
  return [outR!, outG!, outB!];
}

/** Mirror transform for incidence from below: reversed layer order with
 *  z-flipped orientations (parameter tensors are shared, so gradients land
 *  on the right slots). */
function mirroredLayers(layers: LayerParamsT[]): LayerParamsT[] {
  return [...layers].reverse().map((lp) => ({
    ...lp,
    orientation: [lp.orientation[0], lp.orientation[1], -lp.orientation[2]] as [number, number, number],
  }));
}

function flipZ(dirs: Float64Array, idx: number[]): Float64Array {
  const out = new Float64Array(idx.length * 3);
  for (let i = 0; i < idx.length; i++) {
    out[i * 3] = dirs[idx[i] * 3];
    out[i * 3 + 1] = dirs[idx[i] * 3 + 1];
    out[i * 3 + 2] = -dirs[idx[i] * 3 + 2];
  }
  return out;
}

function gather(dirs: Float64Array, idx: number[]): Float64Array {
  const out = new Float64Array(idx.length * 3);
  for (let i = 0; i < idx.length; i++) {
    out[i * 3] = dirs[idx[i] * 3];
    out[i * 3 + 1] = dirs[idx[i] * 3 + 1];
    out[i * 3 + 2] = dirs[idx[i] * 3 + 2];
  }
  return out;
}

/** Analytic single-scattering values for n arbitrary direction pairs,
 *  (n * 3) interleaved RGB. No gradients are kept. */
export function evalPairs(layers: LayerParamsT[], wi: Float64Array, wo: Float64Array): Float64Array {
  const n = wi.length / 3;
  const out = new Float64Array(n * 3);
  const up: number[] = [];
  const down: number[] = [];
  for (let p = 0; p < n; p++) {
    (wi[p * 3 + 2] < 0 ? down : up).push(p);
  }
  const tape = new Tape();
  if (up.length > 0) {
    const geom = buildPairGeom(layers.map((l) => l.orientation), gather(wi, up), gather(wo, up));
    const [r, g, b] = evalCanonicalTape(tape, layers, geom);
    for (let i = 0; i < up.length; i++) {
      out[up[i] * 3] = r.data[i];
      out[up[i] * 3 + 1] = g.data[i];
      out[up[i] * 3 + 2] = b.data[i];
    }
  }
  if (down.length > 0) {
    const mirrored = mirroredLayers(layers);
    const geom = buildPairGeom(mirrored.map((l) => l.orientation), flipZ(wi, down), flipZ(wo, down));
    const [r, g, b] = evalCanonicalTape(tape, mirrored, geom);
    for (let i = 0; i < down.length; i++) {
      out[down[i] * 3] = r.data[i];
      out[down[i] * 3 + 1] = g.data[i];
      out[down[i] * 3 + 2] = b.data[i];
    }
  }
  return out;
}

/** Taped scalar functional sum(weights . values) over arbitrary pairs —
 *  the handle gradient checks differentiate through. weights is (n * 3),
 *  interleaved like the output of evalPairs. */
export function evalPairsFunctionalTape(
  tape: Tape,
  layers: LayerParamsT[],
  wi: Float64Array,
  wo: Float64Array,
  weights: Float64Array,
): Tensor {
  const n = wi.length / 3;
  const up: number[] = [];
  const down: number[] = [];
  for (let p = 0; p < n; p++) {
    (wi[p * 3 + 2] < 0 ? down : up).push(p);
  }
  let total: Tensor | null = null;
  const addGroup = (idx: number[], groupLayers: LayerParamsT[], flip: boolean) => {
    if (idx.length === 0) return;
    const wiG = flip ? flipZ(wi, idx) : gather(wi, idx);
    const woG = flip ? flipZ(wo, idx) : gather(wo, idx);
    const geom = buildPairGeom(groupLayers.map((l) => l.orientation), wiG, woG);
    const chans = evalCanonicalTape(tape, groupLayers, geom);
    for (let c = 0; c < 3; c++) {
      const w = new Float64Array(idx.length);
      for (let i = 0; i < idx.length; i++) w[i] = weights[idx[i] * 3 + c];
      const term = tape.wsum(chans[c], w);
      total = total === null ? term : tape.add(total, term);
    }
  };
  addGroup(up, layers, false);
  addGroup(down, mirroredLayers(layers), true);
  if (total === null) {
    throw new NumericError("no direction pairs given");
  }
  return total;
}

/** Expand a wi-row subset against every outgoing bin into flat pair arrays. */
export function gridPairDirs(
  wiDirs: Float64Array,
  woDirs: Float64Array,
  rows: number[],
): { wi: Float64Array; wo: Float64Array } {
  const nWo = woDirs.length / 3;
  const wi = new Float64Array(rows.length * nWo * 3);
  const wo = new Float64Array(rows.length * nWo * 3);
  for (let r = 0; r < rows.length; r++) {
    const src = rows[r] * 3;
    for (let c = 0; c < nWo; c++) {
      const dst = (r * nWo + c) * 3;
      wi[dst] = wiDirs[src];
      wi[dst + 1] = wiDirs[src + 1];
      wi[dst + 2] = wiDirs[src + 2];
      wo[dst] = woDirs[c * 3];
      wo[dst + 1] = woDirs[c * 3 + 1];
      wo[dst + 2] = woDirs[c * 3 + 2];
    }
  }
  return { wi, wo };
}

/** Predicted multiple-scatter table over one geometry group:
 *  w1 * single(proxy) + w2 * lambert, per channel. */
export function predictedTableTape(
  tape: Tape,
  layers: LayerParamsT[],
  w1: Tensor,
  w2: Tensor,
  geom: PairGeom,
): [Tensor, Tensor, Tensor] {
  const [r, g, b] = evalCanonicalTape(tape, layers, geom);
  const lamT = tensorOf(geom.lambert);
  const lambertLobe = tape.mul(w2, lamT);
  return [
    tape.add(tape.mul(w1, r), lambertLobe),
    tape.add(tape.mul(w1, g), lambertLobe),
    tape.add(tape.mul(w1, b), lambertLobe),
  ];
}
