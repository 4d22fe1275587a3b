/** Codec for the shared network-weight file format (.spck).
 *
 * Layout (little-endian): magic "SPCK", u32 version = 1, u32 dense-layer
 * count; per dense layer u32 rows, u32 cols, f32 weights row-major
 * (rows = in, cols = out), f32 biases (cols); then u8 activation tag
 * (0 = relu on hidden layers) and one u8 range-map tag per final output
 * slot (0 = sigmoid, 1 = softplus). Weights are stored as f32; readers
 * compute in f64 from the stored values, so a write/read round trip is the
 * canonical way to agree bit-for-bit across implementations.
 */

import * as fs from "node:fs";

import { FormatError } from "./errors.js";

export const WEIGHTS_VERSION = 1;
export const ACT_RELU = 0;
export const RANGE_SIGMOID = 0;
export const RANGE_SOFTPLUS = 1;

export interface DenseLayer {
  rows: number;
  cols: number;
  /** Row-major (rows * cols). */
  w: Float64Array;
  /** (cols). */
  b: Float64Array;
}

export interface MlpWeights {
  layers: DenseLayer[];
  rangeTags: Uint8Array;
  activation: number;
}

export function validateWeights(mlp: MlpWeights): void {
  if (mlp.layers.length === 0) {
    throw new FormatError("network needs at least one dense layer");
  }
  for (const layer of mlp.layers) {
    if (layer.w.length !== layer.rows * layer.cols || layer.b.length !== layer.cols) {
      throw new FormatError("dense layer shape mismatch");
    }
  }
  for (let i = 1; i < mlp.layers.length; i++) {
    if (mlp.layers[i - 1].cols !== mlp.layers[i].rows) {
      throw new FormatError("dense layer chain mismatch");
    }
  }
  const outDim = mlp.layers[mlp.layers.length - 1].cols;
  if (mlp.rangeTags.length !== outDim) {
    throw new FormatError("one range tag per output slot required");
  }
  for (const t of mlp.rangeTags) {
    if (t !== RANGE_SIGMOID && t !== RANGE_SOFTPLUS) {
      throw new FormatError(`unknown range map tag ${t}`);
    }
  }
  if (mlp.activation !== ACT_RELU) {
    throw new FormatError(`unknown activation tag ${mlp.activation}`);
  }
}

export function writeWeights(filePath: string, mlp: MlpWeights): void {
  validateWeights(mlp);
  let size = 4 + 8; // magic + version + layer count
  for (const layer of mlp.layers) {
    size += 8 + 4 * (layer.w.length + layer.b.length);
  }
  size += 1 + mlp.rangeTags.length;
  const buf = Buffer.alloc(size);
  buf.write("SPCK", 0, "latin1");
  let off = 4;
  off = buf.writeUInt32LE(WEIGHTS_VERSION, off);
  off = buf.writeUInt32LE(mlp.layers.length, off);
  for (const layer of mlp.layers) {
    off = buf.writeUInt32LE(layer.rows, off);
    off = buf.writeUInt32LE(layer.cols, off);
    for (let i = 0; i < layer.w.length; i++) {
      off = buf.writeFloatLE(Math.fround(layer.w[i]), off);
    }
    for (let i = 0; i < layer.b.length; i++) {
      off = buf.writeFloatLE(Math.fround(layer.b[i]), off);
    }
  }
  off = buf.writeUInt8(mlp.activation, off);
  for (const t of mlp.rangeTags) {
    off = buf.writeUInt8(t, off);
  }
  fs.writeFileSync(filePath, buf);
}

export function readWeights(filePath: string): MlpWeights {
  const buf = fs.readFileSync(filePath);
  if (buf.length < 4 || buf.toString("latin1", 0, 4) !== "SPCK") {
    throw new FormatError(`${filePath}: not a weights file (bad magic)`);
  }
  let off = 4;
  const need = (bytes: number) => {
    if (off + bytes > buf.length) {
      throw new FormatError(`${filePath}: truncated weights file`);
    }
  };
  need(8);
  const version = buf.readUInt32LE(off);
  off += 4;
  const nDense = buf.readUInt32LE(off);
  off += 4;
  if (version !== WEIGHTS_VERSION) {
    throw new FormatError(`${filePath}: unsupported weights version ${version}`);
  }
  if (nDense < 1 || nDense > 64) {
    throw new FormatError(`${filePath}: implausible dense layer count ${nDense}`);
  }
  const layers: DenseLayer[] = [];
  for (let l = 0; l < nDense; l++) {
    need(8);
    const rows = buf.readUInt32LE(off);
    off += 4;
    const cols = buf.readUInt32LE(off);
    off += 4;
    if (rows === 0 || cols === 0 || rows * cols > 16_000_000) {
      throw new FormatError(`${filePath}: implausible dense layer shape`);
    }
    const n = rows * cols;
    need(4 * (n + cols));
    const w = new Float64Array(n);
    for (let i = 0; i < n; i++) {
      w[i] = buf.readFloatLE(off);
      off += 4;
    }
    const b = new Float64Array(cols);
    for (let i = 0; i < cols; i++) {
      b[i] = buf.readFloatLE(off);
      off += 4;
    }
    layers.push({ rows, cols, w, b });
  }
  need(1);
  const activation = buf.readUInt8(off);
  off += 1;
  const outDim = layers[layers.length - 1].cols;
  need(outDim);
  const rangeTags = new Uint8Array(outDim);
  for (let i = 0; i < outDim; i++) {
    rangeTags[i] = buf.readUInt8(off);
    off += 1;
  }
  if (off !== buf.length) {
    throw new FormatError(`${filePath}: trailing bytes in weights file`);
  }
  for (const layer of layers) {
    for (let i = 0; i < layer.w.length; i++) {
      if (!Number.isFinite(layer.w[i])) throw new FormatError(`${filePath}: non-finite weights`);
    }
    for (let i = 0; i < layer.b.length; i++) {
      if (!Number.isFinite(layer.b[i])) throw new FormatError(`${filePath}: non-finite weights`);
    }
  }
  const mlp: MlpWeights = { layers, rangeTags, activation };
  validateWeights(mlp);
  return mlp;
}
