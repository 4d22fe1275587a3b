/** The parameter-mapping network: feature layout, forward pass and range
 * maps, in both plain-number form (inference) and taped form (training).
 *
 * Input features, 12 per layer, layers concatenated top to bottom:
 *
 *     [alpha, gamma.r, gamma.g, gamma.b, thickness, f0.r, f0.g, f0.b,
 *      kind (0 fiber / 1 surface), axis.x, axis.y, axis.z]
 *
 * Output: 8 remapped parameters per layer (alpha, gamma rgb, thickness,
 * f0 rgb) followed by the two lobe weights w1, w2. Hidden layers use relu;
 * each output slot is squashed by its recorded range map — sigmoid for
 * alpha/gamma/f0, softplus for thickness and the lobe weights.
 */

import { DomainError } from "./errors.js";
import type { Stack } from "./material.js";
import { Rng } from "./rng.js";
import { ACT_RELU, MlpWeights, RANGE_SIGMOID, RANGE_SOFTPLUS } from "./spck.js";
import { Tape, Tensor } from "./tape.js";

export const FEATURES_PER_LAYER = 12;
export const PARAMS_PER_LAYER = 8;

export function stackFeatures(stack: Stack): Float64Array {
  const out = new Float64Array(stack.layers.length * FEATURES_PER_LAYER);
  let i = 0;
  for (const layer of stack.layers) {
    if (!Number.isFinite(layer.thickness)) {
      throw new DomainError("semi-infinite layers are outside the lobe network domain");
    }
    out[i++] = layer.roughness;
    out[i++] = layer.albedo[0];
    out[i++] = layer.albedo[1];
    out[i++] = layer.albedo[2];
    out[i++] = layer.thickness;
    out[i++] = layer.f0[0];
    out[i++] = layer.f0[1];
    out[i++] = layer.f0[2];
    out[i++] = layer.kind === "fiber" ? 0 : 1;
    out[i++] = layer.orientation[0];
    out[i++] = layer.orientation[1];
    out[i++] = layer.orientation[2];
  }
  return out;
}

/** sigmoid for alpha/gamma/f0 slots, softplus for thickness and w1/w2. */
export function defaultRangeTags(nLayers: number): Uint8Array {
  const per = [
    RANGE_SIGMOID,
    RANGE_SIGMOID,
    RANGE_SIGMOID,
    RANGE_SIGMOID,
    RANGE_SOFTPLUS,
    RANGE_SIGMOID,
    RANGE_SIGMOID,
    RANGE_SIGMOID,
  ];
  const out = new Uint8Array(nLayers * PARAMS_PER_LAYER + 2);
  for (let l = 0; l < nLayers; l++) {
    out.set(per, l * PARAMS_PER_LAYER);
  }
  out[out.length - 2] = RANGE_SOFTPLUS;
  out[out.length - 1] = RANGE_SOFTPLUS;
  return out;
}

function sigmoid(x: number): number {
  if (x >= 0) return 1 / (1 + Math.exp(-x));
  const e = Math.exp(x);
  return e / (1 + e);
}

function softplus(x: number): number {
  return Math.log1p(Math.exp(-Math.abs(x))) + Math.max(x, 0);
}

/** Plain forward pass: raw (pre-range-map) outputs. */
export function mappedRaw(mlp: MlpWeights, x: Float64Array): Float64Array {
  if (x.length !== mlp.layers[0].rows) {
    throw new DomainError(
      `network expects ${mlp.layers[0].rows} features, got ${x.length}`,
    );
  }
  let h = x;
  for (let l = 0; l < mlp.layers.length; l++) {
    const { rows, cols, w, b } = mlp.layers[l];
    const next = new Float64Array(cols);
    for (let c = 0; c < cols; c++) {
      let s = b[c];
      for (let r = 0; r < rows; r++) s += h[r] * w[r * cols + c];
      next[c] = s;
    }
    if (l + 1 < mlp.layers.length) {
      for (let c = 0; c < cols; c++) if (next[c] < 0) next[c] = 0;
    }
    h = next;
  }
  return h;
}

export function applyRangeMaps(raw: Float64Array, tags: Uint8Array): Float64Array {
  const out = new Float64Array(raw.length);
  for (let i = 0; i < raw.length; i++) {
    out[i] = tags[i] === RANGE_SIGMOID ? sigmoid(raw[i]) : softplus(raw[i]);
  }
  return out;
}

/** The squashed output vector (per-layer params then w1, w2). */
export function mappedOutputs(mlp: MlpWeights, stack: Stack): Float64Array {
  return applyRangeMaps(mappedRaw(mlp, stackFeatures(stack)), mlp.rangeTags);
}

/** Trainable network: float64 parameter tensors plus the shape/tag metadata
 * needed to round-trip through the weight file format. */
export class TrainableMlp {
  readonly ws: Tensor[] = [];
  readonly bs: Tensor[] = [];
  readonly shapes: { rows: number; cols: number }[] = [];

  constructor(
    readonly dims: number[],
    readonly rangeTags: Uint8Array,
    rng: Rng,
  ) {
    if (dims.length < 2) {
      throw new DomainError("network needs at least one dense layer");
    }
    if (rangeTags.length !== dims[dims.length - 1]) {
      throw new DomainError("one range tag per output slot required");
    }
    for (let l = 0; l + 1 < dims.length; l++) {
      const rows = dims[l];
      const cols = dims[l + 1];
      const limit = Math.sqrt(6 / (rows + cols));
      const w = new Float64Array(rows * cols);
      for (let i = 0; i < w.length; i++) w[i] = rng.uniform(-limit, limit);
      this.ws.push(new Tensor(w));
      this.bs.push(new Tensor(new Float64Array(cols)));
      this.shapes.push({ rows, cols });
    }
  }

  get parameters(): Tensor[] {
    return [...this.ws, ...this.bs];
  }

  zeroGrads(): void {
    for (const p of this.parameters) {
      p.ensureGrad();
      p.zeroGrad();
    }
  }

  /** Taped forward pass ending in the squashed output vector. */
  forward(tape: Tape, x: Tensor): Tensor {
    let h = x;
    for (let l = 0; l < this.ws.length; l++) {
      const { rows, cols } = this.shapes[l];
      h = tape.affine(h, this.ws[l], this.bs[l], rows, cols);
      if (l + 1 < this.ws.length) {
        h = tape.relu(h);
      }
    }
    const sigMask = new Uint8Array(h.n);
    for (let i = 0; i < h.n; i++) sigMask[i] = this.rangeTags[i] === RANGE_SIGMOID ? 1 : 0;
    return tape.where(sigMask, tape.sigmoid(h), tape.softplus(h));
  }

  /** Snapshot as file-format weights (still float64; the writer narrows). */
  toWeights(): MlpWeights {
    return {
      layers: this.shapes.map((s, l) => ({
        rows: s.rows,
        cols: s.cols,
        w: Float64Array.from(this.ws[l].data),
        b: Float64Array.from(this.bs[l].data),
      })),
      rangeTags: Uint8Array.from(this.rangeTags),
      activation: ACT_RELU,
    };
  }

  /** Load numbers back from file-format weights (shapes must match). */
  loadWeights(mlp: MlpWeights): void {
    if (mlp.layers.length !== this.shapes.length) {
      throw new DomainError("dense layer count mismatch");
    }
    for (let l = 0; l < mlp.layers.length; l++) {
      const { rows, cols } = this.shapes[l];
      if (mlp.layers[l].rows !== rows || mlp.layers[l].cols !== cols) {
        throw new DomainError("dense layer shape mismatch");
      }
      this.ws[l].data.set(mlp.layers[l].w);
      this.bs[l].data.set(mlp.layers[l].b);
    }
  }
}
