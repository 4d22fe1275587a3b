/** Reverse-mode automatic differentiation over flat float64 arrays.
 *
 * Tensors are 1-D (a scalar is length 1); elementwise ops broadcast a
 * length-1 operand against any length. Every op computed through a Tape
 * records a closure; `backward` replays them in reverse, accumulating
 * into `grad`. Gradients materialize lazily, so branches that never reach
 * the loss cost nothing on the way back.
 *
 * A typical use builds one short tape per training example whose nodes are
 * vectors over all table bins, so the graph stays small while the arrays
 * carry the bulk of the arithmetic.
 */

import { NumericError } from "./errors.js";

export class Tensor {
  grad: Float64Array | null = null;

  constructor(public readonly data: Float64Array) {}

  get n(): number {
    return this.data.length;
  }

  ensureGrad(): Float64Array {
    if (this.grad === null) {
      this.grad = new Float64Array(this.data.length);
    }
    return this.grad;
  }

  zeroGrad(): void {
    if (this.grad !== null) {
      this.grad.fill(0);
    }
  }
}

export function tensorOf(values: ArrayLike<number>): Tensor {
  return new Tensor(Float64Array.from(values));
}

export function scalarOf(x: number): Tensor {
  return new Tensor(Float64Array.of(x));
}

/** Broadcast stride: 0 for a length-1 operand, 1 otherwise. */
function strides(a: Tensor, b: Tensor): [number, number, number] {
  const na = a.n;
  const nb = b.n;
  if (na === nb) return [na, 1, 1];
  if (na === 1) return [nb, 0, 1];
  if (nb === 1) return [na, 1, 0];
  throw new NumericError(`cannot broadcast lengths ${na} and ${nb}`);
}

type BackFn = () => void;

export class Tape {
  private back: BackFn[] = [];

  private record(fn: BackFn): void {
    this.back.push(fn);
  }

  /** Run the reverse sweep from `loss` (length 1) with the given seed. */
  backward(loss: Tensor, seed = 1.0): void {
    if (loss.n !== 1) {
      throw new NumericError(`backward needs a scalar loss, got length ${loss.n}`);
    }
    loss.ensureGrad()[0] += seed;
    for (let i = this.back.length - 1; i >= 0; i--) {
      this.back[i]();
    }
  }

  add(a: Tensor, b: Tensor): Tensor {
    const [n, sa, sb] = strides(a, b);
    const out = new Tensor(new Float64Array(n));
    const o = out.data;
    for (let i = 0; i < n; i++) o[i] = a.data[i * sa] + b.data[i * sb];
    this.record(() => {
      if (out.grad === null) return;
      const g = out.grad;
      const ga = a.ensureGrad();
      const gb = b.ensureGrad();
      for (let i = 0; i < n; i++) {
        ga[i * sa] += g[i];
        gb[i * sb] += g[i];
      }
    });
    return out;
  }

  sub(a: Tensor, b: Tensor): Tensor {
    const [n, sa, sb] = strides(a, b);
    const out = new Tensor(new Float64Array(n));
    const o = out.data;
    for (let i = 0; i < n; i++) o[i] = a.data[i * sa] - b.data[i * sb];
    this.record(() => {
      if (out.grad === null) return;
      const g = out.grad;
      const ga = a.ensureGrad();
      const gb = b.ensureGrad();
      for (let i = 0; i < n; i++) {
        ga[i * sa] += g[i];
        gb[i * sb] -= g[i];
      }
    });
    return out;
  }

  mul(a: Tensor, b: Tensor): Tensor {
    const [n, sa, sb] = strides(a, b);
    const out = new Tensor(new Float64Array(n));
    const o = out.data;
    for (let i = 0; i < n; i++) o[i] = a.data[i * sa] * b.data[i * sb];
    this.record(() => {
      if (out.grad === null) return;
      const g = out.grad;
      const ga = a.ensureGrad();
      const gb = b.ensureGrad();
      for (let i = 0; i < n; i++) {
        ga[i * sa] += g[i] * b.data[i * sb];
        gb[i * sb] += g[i] * a.data[i * sa];
      }
    });
    return out;
  }

  div(a: Tensor, b: Tensor): Tensor {
    const [n, sa, sb] = strides(a, b);
    const out = new Tensor(new Float64Array(n));
    const o = out.data;
    for (let i = 0; i < n; i++) o[i] = a.data[i * sa] / b.data[i * sb];
    this.record(() => {
      if (out.grad === null) return;
      const g = out.grad;
      const ga = a.ensureGrad();
      const gb = b.ensureGrad();
      for (let i = 0; i < n; i++) {
        const bi = b.data[i * sb];
        ga[i * sa] += g[i] / bi;
        gb[i * sb] -= (g[i] * o[i]) / bi;
      }
    });
    return out;
  }

  /** k * a + c with plain-number coefficients. */
  linear(a: Tensor, k: number, c: number): Tensor {
    const n = a.n;
    const out = new Tensor(new Float64Array(n));
    for (let i = 0; i < n; i++) out.data[i] = k * a.data[i] + c;
    this.record(() => {
      if (out.grad === null) return;
      const g = out.grad;
      const ga = a.ensureGrad();
      for (let i = 0; i < n; i++) ga[i] += k * g[i];
    });
    return out;
  }

  /** k / a with a plain-number numerator. */
  rdivc(k: number, a: Tensor): Tensor {
    const n = a.n;
    const out = new Tensor(new Float64Array(n));
    for (let i = 0; i < n; i++) out.data[i] = k / a.data[i];
    this.record(() => {
      if (out.grad === null) return;
      const g = out.grad;
      const ga = a.ensureGrad();
      for (let i = 0; i < n; i++) ga[i] -= (g[i] * out.data[i]) / a.data[i];
    });
    return out;
  }

  exp(a: Tensor): Tensor {
    const n = a.n;
    const out = new Tensor(new Float64Array(n));
    for (let i = 0; i < n; i++) out.data[i] = Math.exp(a.data[i]);
    this.record(() => {
      if (out.grad === null) return;
      const g = out.grad;
      const ga = a.ensureGrad();
      for (let i = 0; i < n; i++) ga[i] += g[i] * out.data[i];
    });
    return out;
  }

  sqrt(a: Tensor): Tensor {
    const n = a.n;
    const out = new Tensor(new Float64Array(n));
    for (let i = 0; i < n; i++) out.data[i] = Math.sqrt(a.data[i]);
    this.record(() => {
      if (out.grad === null) return;
      const g = out.grad;
      const ga = a.ensureGrad();
      for (let i = 0; i < n; i++) ga[i] += (0.5 * g[i]) / out.data[i];
    });
    return out;
  }

  abs(a: Tensor): Tensor {
    const n = a.n;
    const out = new Tensor(new Float64Array(n));
    for (let i = 0; i < n; i++) out.data[i] = Math.abs(a.data[i]);
    this.record(() => {
      if (out.grad === null) return;
      const g = out.grad;
      const ga = a.ensureGrad();
      for (let i = 0; i < n; i++) ga[i] += a.data[i] < 0 ? -g[i] : g[i];
    });
    return out;
  }

  relu(a: Tensor): Tensor {
    const n = a.n;
    const out = new Tensor(new Float64Array(n));
    for (let i = 0; i < n; i++) out.data[i] = a.data[i] > 0 ? a.data[i] : 0;
    this.record(() => {
      if (out.grad === null) return;
      const g = out.grad;
      const ga = a.ensureGrad();
      for (let i = 0; i < n; i++) if (a.data[i] > 0) ga[i] += g[i];
    });
    return out;
  }

  /** Numerically stable logistic, matching the reference implementation:
   *  x >= 0 -> 1/(1+e^-x), else e^x/(1+e^x). */
  sigmoid(a: Tensor): Tensor {
    const n = a.n;
    const out = new Tensor(new Float64Array(n));
    for (let i = 0; i < n; i++) {
      const x = a.data[i];
      if (x >= 0) {
        out.data[i] = 1 / (1 + Math.exp(-x));
      } else {
        const e = Math.exp(x);
        out.data[i] = e / (1 + e);
      }
    }
    this.record(() => {
      if (out.grad === null) return;
      const g = out.grad;
      const ga = a.ensureGrad();
      for (let i = 0; i < n; i++) {
        const s = out.data[i];
        ga[i] += g[i] * s * (1 - s);
      }
    });
    return out;
  }

  /** log(1 + e^x) in the overflow-free form log1p(e^-|x|) + max(x, 0). */
  softplus(a: Tensor): Tensor {
    const n = a.n;
    const out = new Tensor(new Float64Array(n));
    for (let i = 0; i < n; i++) {
      const x = a.data[i];
      out.data[i] = Math.log1p(Math.exp(-Math.abs(x))) + Math.max(x, 0);
    }
    this.record(() => {
      if (out.grad === null) return;
      const g = out.grad;
      const ga = a.ensureGrad();
      for (let i = 0; i < n; i++) {
        const x = a.data[i];
        const s = x >= 0 ? 1 / (1 + Math.exp(-x)) : Math.exp(x) / (1 + Math.exp(x));
        ga[i] += g[i] * s;
      }
    });
    return out;
  }

  /** max(a, lo): gradient passes only where a > lo (zero subgradient at the clamp). */
  clampMin(a: Tensor, lo: number): Tensor {
    const n = a.n;
    const out = new Tensor(new Float64Array(n));
    for (let i = 0; i < n; i++) out.data[i] = a.data[i] > lo ? a.data[i] : lo;
    this.record(() => {
      if (out.grad === null) return;
      const g = out.grad;
      const ga = a.ensureGrad();
      for (let i = 0; i < n; i++) if (a.data[i] > lo) ga[i] += g[i];
    });
    return out;
  }

  clampMax(a: Tensor, hi: number): Tensor {
    const n = a.n;
    const out = new Tensor(new Float64Array(n));
    for (let i = 0; i < n; i++) out.data[i] = a.data[i] < hi ? a.data[i] : hi;
    this.record(() => {
      if (out.grad === null) return;
      const g = out.grad;
      const ga = a.ensureGrad();
      for (let i = 0; i < n; i++) if (a.data[i] < hi) ga[i] += g[i];
    });
    return out;
  }

  /** Elementwise select: mask[i] ? a : b. The mask is data, not a node, so
   *  the gradient flows only into the chosen branch — the standard way to
   *  keep poisoned values (overflow, 0/0) in dead lanes out of the sweep,
   *  provided the dead lanes were fed safe placeholder inputs upstream. */
  where(mask: Uint8Array, a: Tensor, b: Tensor): Tensor {
    const [n, sa, sb] = strides(a, b);
    if (mask.length !== n) {
      throw new NumericError(`mask length ${mask.length} does not match ${n}`);
    }
    const out = new Tensor(new Float64Array(n));
    for (let i = 0; i < n; i++) out.data[i] = mask[i] ? a.data[i * sa] : b.data[i * sb];
    this.record(() => {
      if (out.grad === null) return;
      const g = out.grad;
      const ga = a.ensureGrad();
      const gb = b.ensureGrad();
      for (let i = 0; i < n; i++) {
        if (mask[i]) ga[i * sa] += g[i];
        else gb[i * sb] += g[i];
      }
    });
    return out;
  }

  sum(a: Tensor): Tensor {
    let s = 0;
    for (let i = 0; i < a.n; i++) s += a.data[i];
    const out = new Tensor(Float64Array.of(s));
    this.record(() => {
      if (out.grad === null) return;
      const g = out.grad[0];
      const ga = a.ensureGrad();
      for (let i = 0; i < a.n; i++) ga[i] += g;
    });
    return out;
  }

  /** Weighted sum with constant weights. */
  wsum(a: Tensor, w: Float64Array): Tensor {
    if (w.length !== a.n) {
      throw new NumericError(`weight length ${w.length} does not match ${a.n}`);
    }
    let s = 0;
    for (let i = 0; i < a.n; i++) s += a.data[i] * w[i];
    const out = new Tensor(Float64Array.of(s));
    this.record(() => {
      if (out.grad === null) return;
      const g = out.grad[0];
      const ga = a.ensureGrad();
      for (let i = 0; i < a.n; i++) ga[i] += g * w[i];
    });
    return out;
  }

  /** One element as a scalar tensor. */
  pick(a: Tensor, i: number): Tensor {
    if (i < 0 || i >= a.n) {
      throw new NumericError(`pick index ${i} out of range for length ${a.n}`);
    }
    const out = new Tensor(Float64Array.of(a.data[i]));
    this.record(() => {
      if (out.grad === null) return;
      a.ensureGrad()[i] += out.grad[0];
    });
    return out;
  }

  /** Dense layer x @ W + b with W stored row-major as (rows=in, cols=out). */
  affine(x: Tensor, w: Tensor, b: Tensor, rows: number, cols: number): Tensor {
    if (x.n !== rows || w.n !== rows * cols || b.n !== cols) {
      throw new NumericError(
        `affine shape mismatch: x=${x.n} w=${w.n} b=${b.n} for ${rows}x${cols}`,
      );
    }
    const out = new Tensor(new Float64Array(cols));
    for (let c = 0; c < cols; c++) {
      let s = b.data[c];
      for (let r = 0; r < rows; r++) s += x.data[r] * w.data[r * cols + c];
      out.data[c] = s;
    }
    this.record(() => {
      if (out.grad === null) return;
      const g = out.grad;
      const gx = x.ensureGrad();
      const gw = w.ensureGrad();
      const gb = b.ensureGrad();
      for (let c = 0; c < cols; c++) {
        const gc = g[c];
        if (gc === 0) continue;
        gb[c] += gc;
        for (let r = 0; r < rows; r++) {
          gx[r] += gc * w.data[r * cols + c];
          gw[r * cols + c] += gc * x.data[r];
        }
      }
    });
    return out;
  }
}
