#!/usr/bin/env node
/** Command-line interface: `train` fits the parameter-mapping network on a
 *  tabulated dataset and exports portable weights; `infer` loads exported
 *  weights and prints the mapped parameters for a material, for
 *  cross-checking against the reference library. */

import * as fs from "node:fs";
import { parseArgs } from "node:util";

import { DomainError, FormatError, NumericError, UsageError } from "./errors.js";
import { parseMaterial } from "./material.js";
import { mappedOutputs, PARAMS_PER_LAYER, stackFeatures } from "./mlp.js";
import { readWeights } from "./spck.js";
import { makeConfig, train } from "./train.js";

const USAGE = `usage: flakestack-trainer <command> [options]

commands:
  train   fit the parameter-mapping network on a tabulated dataset
  infer   print the mapped parameters for a material under exported weights

train options:
  --data DIR            dataset directory (manifest.json + tables)   [required]
  --out FILE            output weights file                          [required]
  --metrics FILE        output CSV metrics log                       [required]
  --layers N            stack layer count (default 1)
  --epochs N            training epochs (default 50; 200 at paper scale)
  --batch N             batch size (default 32)
  --lr X                Adam learning rate (default 0.001)
  --val-fraction X      held-out fraction in (0,1) (default 0.1)
  --seed N              run seed (default 0)
  --wi-rows N           incident rows sampled per config per step
                        (default 16; full grid at paper scale)
  --grazing-weight X    loss weight for grazing-band bins
                        (default 0.25; 1 at paper scale)
  --hidden A,B,C        hidden layer widths (default 128,128,128)
  --paper-scale         full-recipe defaults for a paper-scale dataset
  --quiet               suppress per-epoch progress lines

infer options:
  --weights FILE        exported weights file                        [required]
  --material FILE       material description file                    [required]
`;

function intOpt(raw: string | undefined, name: string, fallback: number): number {
  if (raw === undefined) return fallback;
  const v = Number(raw);
  if (!Number.isInteger(v)) throw new UsageError(`--${name} expects an integer, got '${raw}'`);
  return v;
}

function floatOpt(raw: string | undefined, name: string, fallback: number): number {
  if (raw === undefined) return fallback;
  const v = Number(raw);
  if (!Number.isFinite(v)) throw new UsageError(`--${name} expects a number, got '${raw}'`);
  return v;
}

function requireOpt(raw: string | undefined, name: string): string {
  if (raw === undefined) throw new UsageError(`--${name} is required`);
  return raw;
}

type ParseOptions = NonNullable<NonNullable<Parameters<typeof parseArgs>[0]>["options"]>;

function parse(args: string[], options: ParseOptions) {
  try {
    return parseArgs({ args, options, allowPositionals: false });
  } catch (err) {
    throw new UsageError((err as Error).message);
  }
}

function cmdTrain(args: string[]): number {
  const { values } = parse(args, {
    data: { type: "string" },
    out: { type: "string" },
    metrics: { type: "string" },
    layers: { type: "string" },
    epochs: { type: "string" },
    batch: { type: "string" },
    lr: { type: "string" },
    "val-fraction": { type: "string" },
    seed: { type: "string" },
    "wi-rows": { type: "string" },
    "grazing-weight": { type: "string" },
    hidden: { type: "string" },
    "paper-scale": { type: "boolean" },
    quiet: { type: "boolean" },
  });
  const paperScale = values["paper-scale"] === true;
  const hidden = ((values.hidden as string | undefined) ?? "128,128,128")
    .split(",")
    .map((part) => {
      const v = Number(part);
      if (!Number.isInteger(v) || v < 1) {
        throw new UsageError(`--hidden expects positive integers, got '${part}'`);
      }
      return v;
    });
  const cfg = makeConfig({
    datasetDir: requireOpt(values.data as string | undefined, "data"),
    outWeights: requireOpt(values.out as string | undefined, "out"),
    outMetrics: requireOpt(values.metrics as string | undefined, "metrics"),
    layerCount: intOpt(values.layers as string | undefined, "layers", 1),
    epochs: intOpt(values.epochs as string | undefined, "epochs", paperScale ? 200 : 50),
    batchSize: intOpt(values.batch as string | undefined, "batch", 32),
    learningRate: floatOpt(values.lr as string | undefined, "lr", 0.001),
    valFraction: floatOpt(values["val-fraction"] as string | undefined, "val-fraction", 0.1),
    seed: intOpt(values.seed as string | undefined, "seed", 0),
    wiRows: intOpt(
      values["wi-rows"] as string | undefined,
      "wi-rows",
      paperScale ? Number.MAX_SAFE_INTEGER : 16,
    ),
    grazingWeight: floatOpt(
      values["grazing-weight"] as string | undefined,
      "grazing-weight",
      paperScale ? 1 : 0.25,
    ),
    hidden,
  });
  const quiet = values.quiet === true;
  const result = train(cfg, (row) => {
    if (!quiet) {
      process.stderr.write(
        `epoch ${row.epoch}/${cfg.epochs} train ${row.trainMae.toExponential(6)} val ${row.valMae.toExponential(6)}\n`,
      );
    }
  });
  process.stdout.write(
    JSON.stringify(
      {
        epochs: cfg.epochs,
        epoch0_val_mae: result.epoch0ValMae,
        final_train_mae: result.finalTrainMae,
        final_val_mae: result.finalValMae,
        weights: cfg.outWeights,
        metrics: cfg.outMetrics,
      },
      null,
      2,
    ) + "\n",
  );
  return 0;
}

function cmdInfer(args: string[]): number {
  const { values } = parse(args, {
    weights: { type: "string" },
    material: { type: "string" },
  });
  const weightsPath = requireOpt(values.weights as string | undefined, "weights");
  const materialPath = requireOpt(values.material as string | undefined, "material");
  const mlp = readWeights(weightsPath);
  const stack = parseMaterial(fs.readFileSync(materialPath, "utf8"));
  const features = stackFeatures(stack);
  if (features.length !== mlp.layers[0].rows) {
    throw new UsageError(
      `weights expect ${mlp.layers[0].rows} input features, material provides ${features.length}`,
    );
  }
  const mapped = mappedOutputs(mlp, stack);
  const clip = (v: number, lo: number, hi: number) => Math.min(hi, Math.max(lo, v));
  const layers = stack.layers.map((layer, i) => {
    const base = i * PARAMS_PER_LAYER;
    return {
      kind: layer.kind,
      alpha: clip(mapped[base], 1e-3, 1),
      gamma: [1, 2, 3].map((o) => clip(mapped[base + o], 0, 1)),
      thickness: clip(mapped[base + 4], 1e-4, 1e4),
      f0: [5, 6, 7].map((o) => clip(mapped[base + o], 0, 1)),
      orientation: layer.orientation,
    };
  });
  process.stdout.write(
    JSON.stringify(
      {
        mapped_params: Array.from(mapped),
        layers,
        w1: mapped[mapped.length - 2],
        w2: mapped[mapped.length - 1],
      },
      null,
      2,
    ) + "\n",
  );
  return 0;
}

function run(argv: string[]): number {
  const cmd = argv[0];
  if (cmd === undefined || cmd === "--help" || cmd === "-h") {
    process.stdout.write(USAGE);
    return cmd === undefined ? 2 : 0;
  }
  if (cmd === "train") return cmdTrain(argv.slice(1));
  if (cmd === "infer") return cmdInfer(argv.slice(1));
  throw new UsageError(`unknown command '${cmd}'`);
}

try {
  process.exitCode = run(process.argv.slice(2));
} catch (err) {
  if (err instanceof UsageError || err instanceof DomainError) {
    process.stderr.write(`error: ${err.message}\n`);
    process.exitCode = 2;
  } else if (err instanceof FormatError || (err instanceof Error && "code" in err && typeof (err as NodeJS.ErrnoException).code === "string")) {
    process.stderr.write(`error: ${(err as Error).message}\n`);
    process.exitCode = 3;
  } else if (err instanceof NumericError) {
    process.stderr.write(`error: ${err.message}\n`);
    process.exitCode = 4;
  } else {
    throw err;
  }
}
