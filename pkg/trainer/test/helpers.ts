/** Shared test utilities: reference-CLI invocation, cached dataset
 *  fixtures, and direction sampling. */

import { execFileSync } from "node:child_process";
import * as crypto from "node:crypto";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";
import { fileURLToPath } from "node:url";

import { Rng } from "../src/rng.js";

export const TRAINER_ROOT = path.resolve(path.dirname(fileURLToPath(import.meta.url)), "..");
export const CACHE_DIR = path.join(TRAINER_ROOT, ".cache");

/** Run the reference command-line tool, returning stdout. */
export function refCli(args: string[], opts: { allowFail?: boolean } = {}): string {
  try {
    return execFileSync("flakestack", args, { encoding: "utf8", maxBuffer: 64 * 1024 * 1024 });
  } catch (err) {
    if (opts.allowFail) throw err;
    const e = err as { stderr?: string; status?: number };
    throw new Error(
      `flakestack ${args.join(" ")} failed (exit ${e.status}): ${e.stderr ?? ""}`,
    );
  }
}

export interface DatasetSpec {
  count: number;
  layers: number;
  resCos: number;
  resPhi: number;
  spp: number;
  seed: number;
}

/** Generate (once) and cache a reference dataset; returns its directory. */
export function cachedDataset(spec: DatasetSpec): string {
  const key = `ds-c${spec.count}-l${spec.layers}-r${spec.resCos}x${spec.resPhi}-s${spec.spp}-seed${spec.seed}`;
  const dir = path.join(CACHE_DIR, key);
  if (!fs.existsSync(path.join(dir, "manifest.json"))) {
    fs.mkdirSync(dir, { recursive: true });
    refCli([
      "dataset",
      "--out", dir,
      "--count", String(spec.count),
      "--layers", String(spec.layers),
      "--res-cos", String(spec.resCos),
      "--res-phi", String(spec.resPhi),
      "--spp", String(spec.spp),
      "--mode", "multiple",
      "--seed", String(spec.seed),
    ]);
  }
  return dir;
}

/** Small shared fixture: quick to generate, enough bins to be interesting. */
export function smallDataset(): string {
  return cachedDataset({ count: 12, layers: 1, resCos: 8, resPhi: 8, spp: 800, seed: 3 });
}

export function tempDir(prefix: string): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), prefix));
}

export function sha256(filePath: string): string {
  return crypto.createHash("sha256").update(fs.readFileSync(filePath)).digest("hex");
}

export function datasetFileHashes(dir: string): Map<string, string> {
  const out = new Map<string, string>();
  for (const name of fs.readdirSync(dir).sort()) {
    const p = path.join(dir, name);
    if (fs.statSync(p).isFile()) out.set(name, sha256(p));
  }
  return out;
}

/** Random unit direction with |z| bounded away from the horizon. */
export function randomDir(rng: Rng, allowBelow: boolean, minAbsZ = 0.01): [number, number, number] {
  for (;;) {
    const x = rng.uniform(-1, 1);
    const y = rng.uniform(-1, 1);
    const z = allowBelow ? rng.uniform(-1, 1) : rng.uniform(minAbsZ, 1);
    const n = Math.hypot(x, y, z);
    if (n > 1e-6 && n < 1 && Math.abs(z) / n > minAbsZ) {
      return [x / n, y / n, z / n];
    }
  }
}

export function maxAbsDiff(a: ArrayLike<number>, b: ArrayLike<number>): number {
  let worst = 0;
  for (let i = 0; i < a.length; i++) worst = Math.max(worst, Math.abs(a[i] - b[i]));
  return worst;
}

export function relDiff(got: number, ref: number, floor = 1e-12): number {
  return Math.abs(got - ref) / Math.max(Math.abs(ref), floor);
}
