/** Training: fit the parameter-mapping network against a dataset of
 * tabulated multiple-scatter references.
 *
 * The predicted table for a stack is w1 * single(proxy stack) + w2 * lambert
 * where the proxy reuses the stack's layer kinds and orientations with the
 * network's remapped (alpha, gamma, thickness, f0). The loss is mean
 * absolute error on raw BSDF values (no cosine weighting); bins in the
 * documented high-variance grazing band — the lowest-|cos| ring on either
 * the incident or the outgoing side — are down-weighted by 0.25. Each step
 * evaluates a random subset of incident rows per config (the validation
 * metric always uses the full grid). Everything random derives from the one
 * run seed, so a fixed seed reproduces the run exactly.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { NumericError, UsageError } from "./errors.js";
import { parseMaterial, Stack } from "./material.js";
import { defaultRangeTags, FEATURES_PER_LAYER, PARAMS_PER_LAYER, stackFeatures, TrainableMlp } from "./mlp.js";
import { Rng } from "./rng.js";
import {
  binCentersUpper,
  grazingWiMask,
  grazingWoMask,
  Manifest,
  readManifest,
  readTable,
  woBinCenters,
} from "./sptb.js";
import { writeWeights } from "./spck.js";
import {
  buildPairGeom,
  gridPairDirs,
  LayerParamsT,
  predictedTableTape,
} from "./singleScatter.js";
import { Tape, Tensor, tensorOf } from "./tape.js";

export const ADAM_BETA1 = 0.9;
export const ADAM_BETA2 = 0.999;
export const ADAM_EPS = 1e-8;
export const GRAZING_WEIGHT = 0.25;

export interface TrainingConfig {
  datasetDir: string;
  layerCount: number;
  epochs: number;
  batchSize: number;
  learningRate: number;
  valFraction: number;
  seed: number;
  /** Incident rows sampled per config per step; the full grid if larger. */
  wiRows: number;
  /** Loss down-weight for grazing-band bins (1 disables the down-weighting,
   *  as the full-sample-count recipe does). */
  grazingWeight: number;
  hidden: number[];
  outWeights: string;
  outMetrics: string;
}

export function makeConfig(partial: Partial<TrainingConfig> & { datasetDir: string; outWeights: string; outMetrics: string }): TrainingConfig {
  const cfg: TrainingConfig = {
    layerCount: 1,
    epochs: 50,
    batchSize: 32,
    learningRate: 0.001,
    valFraction: 0.1,
    seed: 0,
    wiRows: 16,
    grazingWeight: GRAZING_WEIGHT,
    hidden: [128, 128, 128],
    ...partial,
  };
  if (!Number.isInteger(cfg.batchSize) || cfg.batchSize < 1) {
    throw new UsageError(`batch size must be a positive integer, got ${cfg.batchSize}`);
  }
  if (!(cfg.learningRate > 0)) {
    throw new UsageError(`learning rate must be positive, got ${cfg.learningRate}`);
  }
  if (!(cfg.valFraction > 0 && cfg.valFraction < 1)) {
    throw new UsageError(`validation fraction must be in (0, 1), got ${cfg.valFraction}`);
  }
  if (!Number.isInteger(cfg.epochs) || cfg.epochs < 1) {
    throw new UsageError(`epochs must be a positive integer, got ${cfg.epochs}`);
  }
  if (!Number.isInteger(cfg.layerCount) || cfg.layerCount < 1) {
    throw new UsageError(`layer count must be a positive integer, got ${cfg.layerCount}`);
  }
  if (!Number.isInteger(cfg.wiRows) || cfg.wiRows < 1) {
    throw new UsageError(`wi row count must be a positive integer, got ${cfg.wiRows}`);
  }
  if (!(cfg.grazingWeight > 0 && cfg.grazingWeight <= 1)) {
    throw new UsageError(`grazing weight must be in (0, 1], got ${cfg.grazingWeight}`);
  }
  return cfg;
}

export interface LoadedConfigData {
  file: string;
  stack: Stack;
  features: Float64Array;
  /** Flattened (nWi * nWo * 3) reference values. */
  values: Float64Array;
}

export interface Dataset {
  manifest: Manifest;
  configs: LoadedConfigData[];
  resCos: number;
  resPhi: number;
  nWi: number;
  nWo: number;
  wiDirs: Float64Array;
  woDirs: Float64Array;
  /** Per incident row / outgoing bin: in the high-variance grazing band. */
  wiGrazing: Uint8Array;
  woGrazing: Uint8Array;
}

export function loadDataset(dir: string, layerCount: number): Dataset {
  const manifest = readManifest(dir);
  if (manifest.mode !== "multiple") {
    throw new UsageError(
      `training target must be 'multiple' mode tables, dataset is '${manifest.mode}'`,
    );
  }
  if (manifest.nLayers !== layerCount) {
    throw new UsageError(
      `dataset has ${manifest.nLayers}-layer stacks, config asks for ${layerCount}`,
    );
  }
  const configs: LoadedConfigData[] = manifest.entries.map((entry) => {
    const table = readTable(path.join(dir, entry.file));
    if (table.mode !== manifest.mode || table.resCos !== manifest.resCos || table.resPhi !== manifest.resPhi) {
      throw new UsageError(`${entry.file}: table header disagrees with the manifest`);
    }
    const stack = parseMaterial(table.materialText);
    if (stack.layers.length !== layerCount) {
      throw new UsageError(`${entry.file}: expected ${layerCount} layers, got ${stack.layers.length}`);
    }
    return {
      file: entry.file,
      stack,
      features: stackFeatures(stack),
      values: table.values,
    };
  });
  const resCos = manifest.resCos;
  const resPhi = manifest.resPhi;
  return {
    manifest,
    configs,
    resCos,
    resPhi,
    nWi: resCos * resPhi,
    nWo: 2 * resCos * resPhi,
    wiDirs: binCentersUpper(resCos, resPhi),
    woDirs: woBinCenters(resCos, resPhi),
    wiGrazing: grazingWiMask(resCos, resPhi),
    woGrazing: grazingWoMask(resCos, resPhi),
  };
}

/** Slice the squashed network output into proxy-layer parameters and lobe
 *  weights, applying the same clips the reference library applies when it
 *  materializes a proxy stack: alpha to [1e-3, 1], gamma and f0 to [0, 1],
 *  thickness to [1e-4, 1e4]. */
export function mapParamsTape(
  tape: Tape,
  stack: Stack,
  mapped: Tensor,
): { layers: LayerParamsT[]; w1: Tensor; w2: Tensor } {
  const L = stack.layers.length;
  if (mapped.n !== L * PARAMS_PER_LAYER + 2) {
    throw new NumericError(
      `network emits ${mapped.n} outputs, stack needs ${L * PARAMS_PER_LAYER + 2}`,
    );
  }
  const clamp01 = (t: Tensor) => tape.clampMax(tape.clampMin(t, 0), 1);
  const layers: LayerParamsT[] = stack.layers.map((layer, i) => {
    const base = i * PARAMS_PER_LAYER;
    return {
      kind: layer.kind,
      orientation: [...layer.orientation] as [number, number, number],
      alpha: tape.clampMax(tape.clampMin(tape.pick(mapped, base), 1e-3), 1),
      gamma: [
        clamp01(tape.pick(mapped, base + 1)),
        clamp01(tape.pick(mapped, base + 2)),
        clamp01(tape.pick(mapped, base + 3)),
      ],
      thickness: tape.clampMax(tape.clampMin(tape.pick(mapped, base + 4), 1e-4), 1e4),
      f0: [
        clamp01(tape.pick(mapped, base + 5)),
        clamp01(tape.pick(mapped, base + 6)),
        clamp01(tape.pick(mapped, base + 7)),
      ],
    };
  });
  return {
    layers,
    w1: tape.pick(mapped, L * PARAMS_PER_LAYER),
    w2: tape.pick(mapped, L * PARAMS_PER_LAYER + 1),
  };
}

/** Loss weights for a row subset: 1 per bin, down-weighted where the pair
 *  touches the grazing band on either side. */
export function lossWeights(ds: Dataset, rows: number[], grazingWeight = GRAZING_WEIGHT): Float64Array {
  const w = new Float64Array(rows.length * ds.nWo);
  for (let r = 0; r < rows.length; r++) {
    const wiG = ds.wiGrazing[rows[r]];
    for (let c = 0; c < ds.nWo; c++) {
      w[r * ds.nWo + c] = wiG || ds.woGrazing[c] ? grazingWeight : 1;
    }
  }
  return w;
}

/** Reference-table channel slices for a row subset. */
export function targetChannels(ds: Dataset, cfg: LoadedConfigData, rows: number[]): [Float64Array, Float64Array, Float64Array] {
  const out: [Float64Array, Float64Array, Float64Array] = [
    new Float64Array(rows.length * ds.nWo),
    new Float64Array(rows.length * ds.nWo),
    new Float64Array(rows.length * ds.nWo),
  ];
  for (let r = 0; r < rows.length; r++) {
    const rowBase = rows[r] * ds.nWo;
    for (let c = 0; c < ds.nWo; c++) {
      const src = (rowBase + c) * 3;
      out[0][r * ds.nWo + c] = cfg.values[src];
      out[1][r * ds.nWo + c] = cfg.values[src + 1];
      out[2][r * ds.nWo + c] = cfg.values[src + 2];
    }
  }
  return out;
}

/** Weighted MAE of the predicted table for one config over a row subset.
 *  Returns the scalar loss tensor (still attached to the tape). */
export function configLossTape(
  tape: Tape,
  model: TrainableMlp,
  ds: Dataset,
  cfg: LoadedConfigData,
  rows: number[],
  weights: Float64Array,
): Tensor {
  const x = tensorOf(cfg.features);
  const mapped = model.forward(tape, x);
  const { layers, w1, w2 } = mapParamsTape(tape, cfg.stack, mapped);
  const { wi, wo } = gridPairDirs(ds.wiDirs, ds.woDirs, rows);
  const geom = buildPairGeom(layers.map((l) => l.orientation), wi, wo);
  const pred = predictedTableTape(tape, layers, w1, w2, geom);
  const targets = targetChannels(ds, cfg, rows);
  let acc: Tensor | null = null;
  for (let c = 0; c < 3; c++) {
    const diff = tape.abs(tape.sub(pred[c], tensorOf(targets[c])));
    const term = tape.wsum(diff, weights);
    acc = acc === null ? term : tape.add(acc, term);
  }
  let totalW = 0;
  for (let i = 0; i < weights.length; i++) totalW += weights[i];
  return tape.linear(acc!, 1 / (3 * totalW), 0);
}

const ALL_ROWS_CACHE = new Map<number, number[]>();

function allRows(nWi: number): number[] {
  let rows = ALL_ROWS_CACHE.get(nWi);
  if (rows === undefined) {
    rows = Array.from({ length: nWi }, (_, i) => i);
    ALL_ROWS_CACHE.set(nWi, rows);
  }
  return rows;
}

/** Full-grid MAE of the network's prediction for one config; `weighted`
 *  applies the training down-weight, otherwise every bin counts equally
 *  (the same plain metric per-config fitting reports). */
export function configMae(
  model: TrainableMlp,
  ds: Dataset,
  cfg: LoadedConfigData,
  weighted: boolean,
  grazingWeight = GRAZING_WEIGHT,
): number {
  const rows = allRows(ds.nWi);
  const tape = new Tape();
  const weights = weighted
    ? lossWeights(ds, rows, grazingWeight)
    : new Float64Array(rows.length * ds.nWo).fill(1);
  const loss = configLossTape(tape, model, ds, cfg, rows, weights);
  return loss.data[0];
}

export interface MetricsRow {
  epoch: number;
  trainMae: number;
  valMae: number;
}

export interface TrainResult {
  config: TrainingConfig;
  rows: MetricsRow[];
  epoch0ValMae: number;
  finalValMae: number;
  finalTrainMae: number;
  trainIndices: number[];
  valIndices: number[];
  model: TrainableMlp;
  dataset: Dataset;
}

/** Abort guard for the per-config training loss: numerics must never leak
 *  a NaN/Infinity into the optimizer silently. */
export function checkLossFinite(value: number, epoch: number, file: string): void {
  if (!Number.isFinite(value)) {
    throw new NumericError(
      `non-finite loss (${value}) at epoch ${epoch} on ${file}; ` +
        "inspect the dataset for corrupt tables or lower the learning rate",
    );
  }
}

class Adam {
  private m: Float64Array[];
  private v: Float64Array[];
  private t = 0;

  constructor(
    private params: Tensor[],
    private lr: number,
  ) {
    this.m = params.map((p) => new Float64Array(p.n));
    this.v = params.map((p) => new Float64Array(p.n));
  }

  step(): void {
    this.t += 1;
    const c1 = 1 - Math.pow(ADAM_BETA1, this.t);
    const c2 = 1 - Math.pow(ADAM_BETA2, this.t);
    for (let k = 0; k < this.params.length; k++) {
      const p = this.params[k];
      const g = p.ensureGrad();
      const m = this.m[k];
      const v = this.v[k];
      for (let i = 0; i < p.n; i++) {
        m[i] = ADAM_BETA1 * m[i] + (1 - ADAM_BETA1) * g[i];
        v[i] = ADAM_BETA2 * v[i] + (1 - ADAM_BETA2) * g[i] * g[i];
        p.data[i] -= (this.lr * (m[i] / c1)) / (Math.sqrt(v[i] / c2) + ADAM_EPS);
      }
    }
  }
}

function meanMae(model: TrainableMlp, ds: Dataset, indices: number[], grazingWeight: number): number {
  let s = 0;
  for (const i of indices) s += configMae(model, ds, ds.configs[i], true, grazingWeight);
  return s / indices.length;
}

function writeMetrics(file: string, cfg: TrainingConfig, ds: Dataset, split: { train: number[]; val: number[] }, rows: MetricsRow[]): void {
  const lines = [
    "# flakestack-trainer metrics v1",
    `# optimizer=adam beta1=${ADAM_BETA1} beta2=${ADAM_BETA2} eps=${ADAM_EPS} lr=${cfg.learningRate}`,
    `# batch=${cfg.batchSize} epochs=${cfg.epochs} val_fraction=${cfg.valFraction} seed=${cfg.seed} wi_rows=${cfg.wiRows}`,
    `# dataset=${cfg.datasetDir} grid=${ds.resCos}x${ds.resPhi} configs=${ds.configs.length} train=${split.train.length} val=${split.val.length}`,
    `# mae: weighted mean absolute bin error (grazing band x${cfg.grazingWeight}); epoch 0 is pre-training, full grid;`,
    "# later train_mae averages the sampled rows seen during the epoch, val_mae is always full grid",
    "epoch,train_mae,val_mae",
    ...rows.map((r) => `${r.epoch},${r.trainMae},${r.valMae}`),
  ];
  fs.writeFileSync(file, lines.join("\n") + "\n");
}

export function train(cfg: TrainingConfig, onEpoch?: (row: MetricsRow) => void): TrainResult {
  const ds = loadDataset(cfg.datasetDir, cfg.layerCount);
  const L = cfg.layerCount;
  const dims = [FEATURES_PER_LAYER * L, ...cfg.hidden, PARAMS_PER_LAYER * L + 2];
  const rng = new Rng(cfg.seed, 0);
  const model = new TrainableMlp(dims, defaultRangeTags(L), new Rng(cfg.seed, 1));

  const order = Array.from({ length: ds.configs.length }, (_, i) => i);
  rng.shuffle(order);
  const valCount = Math.max(1, Math.round(cfg.valFraction * order.length));
  if (order.length - valCount < 1) {
    throw new UsageError(
      `dataset of ${order.length} configs leaves no training data at validation fraction ${cfg.valFraction}`,
    );
  }
  const valIndices = order.slice(0, valCount);
  const trainIndices = order.slice(valCount);

  const wiRows = Math.min(cfg.wiRows, ds.nWi);
  const adam = new Adam(model.parameters, cfg.learningRate);
  const rows: MetricsRow[] = [];
  const epoch0: MetricsRow = {
    epoch: 0,
    trainMae: meanMae(model, ds, trainIndices, cfg.grazingWeight),
    valMae: meanMae(model, ds, valIndices, cfg.grazingWeight),
  };
  rows.push(epoch0);
  onEpoch?.(epoch0);

  const epochOrder = [...trainIndices];
  for (let epoch = 1; epoch <= cfg.epochs; epoch++) {
    rng.shuffle(epochOrder);
    let lossSum = 0;
    let lossCount = 0;
    for (let start = 0; start < epochOrder.length; start += cfg.batchSize) {
      const batch = epochOrder.slice(start, start + cfg.batchSize);
      model.zeroGrads();
      for (const idx of batch) {
        const tape = new Tape();
        const rowsSel = rng.choose(ds.nWi, wiRows);
        const weights = lossWeights(ds, rowsSel, cfg.grazingWeight);
        const loss = configLossTape(tape, model, ds, ds.configs[idx], rowsSel, weights);
        const value = loss.data[0];
        checkLossFinite(value, epoch, ds.configs[idx].file);
        lossSum += value;
        lossCount += 1;
        tape.backward(loss, 1 / batch.length);
      }
      adam.step();
    }
    const row: MetricsRow = {
      epoch,
      trainMae: lossSum / lossCount,
      valMae: meanMae(model, ds, valIndices, cfg.grazingWeight),
    };
    rows.push(row);
    onEpoch?.(row);
  }

  writeWeights(cfg.outWeights, model.toWeights());
  writeMetrics(cfg.outMetrics, cfg, ds, { train: trainIndices, val: valIndices }, rows);
  return {
    config: cfg,
    rows,
    epoch0ValMae: rows[0].valMae,
    finalValMae: rows[rows.length - 1].valMae,
    finalTrainMae: rows[rows.length - 1].trainMae,
    trainIndices,
    valIndices,
    model,
    dataset: ds,
  };
}
