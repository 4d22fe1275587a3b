/** Reader for tabulated BSDF files (.sptb) and dataset manifests.
 *
 * Layout (little-endian): magic "SPTB", u32 version, u8 mode, u32 cos bins,
 * u32 phi bins, u8 parameterization tag, u64 walks per incident bin, u32
 * material-text length, the UTF-8 material text, then f32 values with shape
 * [n_wi][n_wo][3] where n_wi = cos*phi covers the upper hemisphere and
 * n_wo = 2*n_wi covers both (upper block first, |cos| ascending, index =
 * cos_bin * res_phi + phi_bin).
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { FormatError } from "./errors.js";

export const TABLE_MODES = ["single", "multiple", "full", "full+delta"] as const;
export type TableMode = (typeof TABLE_MODES)[number];

export const GRAZING_COS = 0.02;

export interface BsdfTable {
  mode: TableMode;
  resCos: number;
  resPhi: number;
  samplesPerWi: number;
  materialText: string;
  /** Flattened (nWi * nWo * 3), float64 copies of the stored f32 values. */
  values: Float64Array;
  nWi: number;
  nWo: number;
}

export function readTable(filePath: string): BsdfTable {
  const buf = fs.readFileSync(filePath);
  if (buf.length < 4 || buf.toString("latin1", 0, 4) !== "SPTB") {
    throw new FormatError(`${filePath}: bad magic`);
  }
  const headerSize = 4 + 1 + 4 + 4 + 1 + 8 + 4; // after the magic
  if (buf.length < 4 + headerSize) {
    throw new FormatError(`${filePath}: truncated header`);
  }
  let off = 4;
  const version = buf.readUInt32LE(off);
  off += 4;
  const modeIdx = buf.readUInt8(off);
  off += 1;
  const resCos = buf.readUInt32LE(off);
  off += 4;
  const resPhi = buf.readUInt32LE(off);
  off += 4;
  const paramTag = buf.readUInt8(off);
  off += 1;
  const samplesBig = buf.readBigUInt64LE(off);
  off += 8;
  const textLen = buf.readUInt32LE(off);
  off += 4;
  if (version !== 1) {
    throw new FormatError(`${filePath}: unsupported version ${version}`);
  }
  if (modeIdx >= TABLE_MODES.length) {
    throw new FormatError(`${filePath}: unknown mode tag ${modeIdx}`);
  }
  if (paramTag !== 0) {
    throw new FormatError(`${filePath}: unknown parameterization tag ${paramTag}`);
  }
  if (samplesBig > BigInt(Number.MAX_SAFE_INTEGER)) {
    throw new FormatError(`${filePath}: implausible sample count`);
  }
  if (buf.length < off + textLen) {
    throw new FormatError(`${filePath}: truncated material text`);
  }
  const materialText = buf.toString("utf-8", off, off + textLen);
  off += textLen;
  const nWi = resCos * resPhi;
  const nWo = 2 * nWi;
  const expect = nWi * nWo * 3 * 4;
  if (buf.length - off !== expect) {
    throw new FormatError(`${filePath}: payload is ${buf.length - off} bytes, expected ${expect}`);
  }
  // Copy to an aligned buffer before the f32 view; the text length makes the
  // payload offset arbitrary.
  const bytes = new Uint8Array(expect);
  bytes.set(buf.subarray(off, off + expect));
  const f32 = new Float32Array(bytes.buffer);
  const values = new Float64Array(f32.length);
  for (let i = 0; i < f32.length; i++) {
    const v = f32[i];
    if (!Number.isFinite(v)) {
      throw new FormatError(`${filePath}: payload contains non-finite values`);
    }
    values[i] = v;
  }
  return {
    mode: TABLE_MODES[modeIdx],
    resCos,
    resPhi,
    samplesPerWi: Number(samplesBig),
    materialText,
    values,
    nWi,
    nWo,
  };
}

export interface ManifestEntry {
  file: string;
  seed: number;
  material: string;
}

export interface Manifest {
  version: number;
  mode: string;
  resCos: number;
  resPhi: number;
  samplesPerWi: number;
  nLayers: number;
  seed: number;
  entries: ManifestEntry[];
  dir: string;
}

export function readManifest(dir: string): Manifest {
  const file = path.join(dir, "manifest.json");
  let raw: string;
  try {
    raw = fs.readFileSync(file, "utf-8");
  } catch (e) {
    throw new FormatError(`cannot read dataset manifest ${file}: ${(e as Error).message}`);
  }
  let doc: unknown;
  try {
    doc = JSON.parse(raw);
  } catch (e) {
    throw new FormatError(`${file}: invalid JSON: ${(e as Error).message}`);
  }
  const m = doc as Record<string, unknown>;
  const entries = m["entries"];
  if (
    typeof m["version"] !== "number" ||
    typeof m["mode"] !== "string" ||
    typeof m["res_cos"] !== "number" ||
    typeof m["res_phi"] !== "number" ||
    typeof m["n_layers"] !== "number" ||
    !Array.isArray(entries)
  ) {
    throw new FormatError(`${file}: missing or malformed manifest fields`);
  }
  if (m["version"] !== 1) {
    throw new FormatError(`${file}: unsupported manifest version ${m["version"]}`);
  }
  if (entries.length === 0) {
    throw new FormatError(`${file}: dataset is empty`);
  }
  return {
    version: m["version"] as number,
    mode: m["mode"] as string,
    resCos: m["res_cos"] as number,
    resPhi: m["res_phi"] as number,
    samplesPerWi: (m["samples_per_wi"] as number) ?? 0,
    nLayers: m["n_layers"] as number,
    seed: (m["seed"] as number) ?? 0,
    entries: entries.map((e) => {
      const r = e as Record<string, unknown>;
      if (typeof r["file"] !== "string" || typeof r["material"] !== "string") {
        throw new FormatError(`${file}: malformed manifest entry`);
      }
      return { file: r["file"], seed: (r["seed"] as number) ?? 0, material: r["material"] };
    }),
    dir,
  };
}

/** Upper-hemisphere bin-center directions, flattened (n, 3):
 *  cos = (j + 0.5)/resCos ascending, phi = (k + 0.5) * 2pi/resPhi,
 *  index = j * resPhi + k. */
export function binCentersUpper(resCos: number, resPhi: number): Float64Array {
  const n = resCos * resPhi;
  const out = new Float64Array(n * 3);
  for (let j = 0; j < resCos; j++) {
    const c = (j + 0.5) / resCos;
    const s = Math.sqrt(Math.max(1 - c * c, 0));
    for (let k = 0; k < resPhi; k++) {
      const phi = ((k + 0.5) * 2 * Math.PI) / resPhi;
      const idx = (j * resPhi + k) * 3;
      out[idx] = s * Math.cos(phi);
      out[idx + 1] = s * Math.sin(phi);
      out[idx + 2] = c;
    }
  }
  return out;
}

/** Outgoing bin centers over both hemispheres: the upper block followed by
 *  its z-mirrored copy. */
export function woBinCenters(resCos: number, resPhi: number): Float64Array {
  const upper = binCentersUpper(resCos, resPhi);
  const n = upper.length / 3;
  const out = new Float64Array(2 * upper.length);
  out.set(upper, 0);
  for (let i = 0; i < n; i++) {
    out[(n + i) * 3] = upper[i * 3];
    out[(n + i) * 3 + 1] = upper[i * 3 + 1];
    out[(n + i) * 3 + 2] = -upper[i * 3 + 2];
  }
  return out;
}

/** True for outgoing bins whose |cos| range dips below GRAZING_COS — the
 *  documented high-variance band consumers down-weight. */
export function grazingWoMask(resCos: number, resPhi: number): Uint8Array {
  const n = resCos * resPhi;
  const mask = new Uint8Array(2 * n);
  for (let i = 0; i < 2 * n; i++) {
    const j = Math.floor((i % n) / resPhi);
    mask[i] = j / resCos < GRAZING_COS ? 1 : 0;
  }
  return mask;
}

/** Same band test for incident rows (upper hemisphere only). */
export function grazingWiMask(resCos: number, resPhi: number): Uint8Array {
  const n = resCos * resPhi;
  const mask = new Uint8Array(n);
  for (let i = 0; i < n; i++) {
    const j = Math.floor(i / resPhi);
    mask[i] = j / resCos < GRAZING_COS ? 1 : 0;
  }
  return mask;
}
