"""Command-line surface: point evaluation, lobe images, furnace sweeps,
dataset generation, direct fitting, sampler validation, and the fixed
direct-lighting comparison render.

Exit codes: 0 success, 2 usage or parameter/parse problems, 3 I/O or file
format problems, 4 numerical check failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from .diagnostics import check_stack_sampling
from .errors import (
    FileFormatError,
    MaterialParseError,
    NumericalError,
    ParameterError,
    StreamExhausted,
)
from .geometry import sphere_quadrature, spherical_direction
from .layers import parse_material, serialize_material
from .multiscatter import (
    ThreeLobeParams,
    eval_full,
    fit_direct,
    mapped_outputs,
    mlp_infer,
    read_weights,
)
from .oracle import furnace_albedo, tabulate
from .datasets import generate_dataset
from .images import write_pfm, write_png_preview
from .render import STRATEGIES, render
from .sampling import pdf_stack
from .single_scatter import delta_transmittance, eval_stack_single, eval_stack_single_grid
from .tables import bin_centers_upper, read_table, wo_bin_centers

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


def _vec(text: str) -> np.ndarray:
    try:
        parts = [float(p) for p in text.split(",")]
    except ValueError as exc:
        raise ParameterError(f"direction {text!r} is not x,y,z floats") from exc
    if len(parts) != 3:
        raise ParameterError(f"direction {text!r} must have exactly three components")
    v = np.array(parts)
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise ParameterError("direction must be nonzero")
    return v / n


def _load_material(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_material(fh.read())


def _fmt(vals) -> str:
    return " ".join(f"{float(v):.6f}" for v in np.atleast_1d(vals))


def _lobes_for(args, stack) -> ThreeLobeParams:
    if not args.weights:
        raise ParameterError("--full needs --weights (a parameter-network file)")
    return mlp_infer(read_weights(args.weights), stack, bottom_only=args.bottom_only)


def cmd_eval(args) -> int:
    stack = _load_material(args.material)
    if args.batch:
        with open(args.batch, "r", encoding="utf-8") as fh:
            spec = json.load(fh)
        pairs = spec["pairs"] if isinstance(spec, dict) else spec
        lobes = _lobes_for(args, stack) if args.full else None
        rows = []
        for pair in pairs:
            wi = _vec(",".join(str(c) for c in pair["wi"]))
            wo = _vec(",".join(str(c) for c in pair["wo"]))
            row = {"wi": list(wi), "wo": list(wo), "single": list(eval_stack_single(stack, wi, wo))}
            if lobes is not None:
                row["full"] = list(eval_full(stack, wi, wo, lobes))
            rows.append(row)
        json.dump(rows, sys.stdout, indent=2)
        sys.stdout.write("\n")
        return EXIT_OK

    if not args.wi or not args.wo:
        raise ParameterError("eval needs --wi and --wo (or --batch)")
    wi, wo = _vec(args.wi), _vec(args.wo)
    single = eval_stack_single(stack, wi, wo)
    out = {"wi": list(wi), "wo": list(wo), "single": list(single)}
    out["pdf"] = pdf_stack(stack, wi, wo)
    if stack.include_delta and stack.substrate is None:
        out["delta_throughput"] = list(delta_transmittance(stack, wi))
    if args.full:
        lobes = _lobes_for(args, stack)
        lobe1 = lobes.w1 * eval_stack_single(lobes.stack, wi, wo)
        same_side = np.sign(wi[2]) * wo[2] > 0.0
        lam = lobes.w2 / math.pi if (same_side or lobes.lambert_transmission) else 0.0
        lambert = np.full(3, lam)
        full = single + lobe1 + lambert
        out["full"] = list(full)
        out["lobe1"] = list(lobe1)
        out["lambert"] = list(lambert)
        out["w1"] = lobes.w1
        out["w2"] = lobes.w2
        out["mapped_params"] = [float(v) for v in mapped_outputs(read_weights(args.weights), stack)]
    if args.json:
        json.dump(out, sys.stdout, indent=2)
        sys.stdout.write("\n")
    else:
        print(f"single: {_fmt(single)}")
        if "delta_throughput" in out:
            print(f"delta: {_fmt(out['delta_throughput'])}")
        if args.full:
            print(f"lobe1: {_fmt(out['lobe1'])}")
            print(f"lambert: {_fmt(out['lambert'])}")
            print(f"full: {_fmt(out['full'])}")
    return EXIT_OK


def _fixed_layout_dirs(res_cos: int, res_phi: int) -> np.ndarray:
    """(2*res_cos, res_phi, 3) outgoing directions, rows from +z to -z,
    matching the table's uniform |cos| binning."""
    mu = (np.arange(res_cos) + 0.5) / res_cos
    phi = (np.arange(res_phi) + 0.5) * (2.0 * np.pi / res_phi)
    rows = []
    for j in range(res_cos - 1, -1, -1):  # upper hemisphere, cos descending
        rows.append(spherical_direction(np.full(res_phi, mu[j]), phi))
    for j in range(res_cos):  # lower hemisphere, |cos| ascending
        d = spherical_direction(np.full(res_phi, mu[j]), phi)
        d[:, 2] = -d[:, 2]
        rows.append(d)
    return np.stack(rows)


def _fixed_rows_from_table(values_wi: np.ndarray, res_cos: int, res_phi: int) -> np.ndarray:
    """Reorder one table row (n_wo, 3) into the fixed-incidence image."""
    n = res_cos * res_phi
    img = np.empty((2 * res_cos, res_phi, 3), dtype=values_wi.dtype)
    for r in range(res_cos):
        j = res_cos - 1 - r
        img[r] = values_wi[j * res_phi : (j + 1) * res_phi]
    for r in range(res_cos):
        img[res_cos + r] = values_wi[n + r * res_phi : n + (r + 1) * res_phi]
    return img


def cmd_lobe(args) -> int:
    stack = _load_material(args.material)
    res_cos, res_phi = args.res_cos, args.res_phi
    if args.layout == "fixed":
        wi = np.array([math.sin(args.theta), 0.0, math.cos(args.theta)])
        if args.mode == "analytic":
            wo = _fixed_layout_dirs(res_cos, res_phi).reshape(-1, 3)
            vals = eval_stack_single_grid(stack, wi[None, :], wo)[0]
            img = vals.reshape(2 * res_cos, res_phi, 3).astype(np.float32)
        else:
            table = tabulate(
                stack, res_cos, res_phi, args.spp, mode="single", seed=args.seed, workers=args.threads
            )
            centers = bin_centers_upper(res_cos, res_phi)
            b = int(np.argmax(centers @ wi))  # nearest incoming bin
            img = _fixed_rows_from_table(table.values[b], res_cos, res_phi)
    else:  # matrix: all incoming bins as rows, all outgoing bins as columns
        if args.mode == "analytic":
            vals = eval_stack_single_grid(
                stack, bin_centers_upper(res_cos, res_phi), wo_bin_centers(res_cos, res_phi)
            )
            img = vals.astype(np.float32)
        else:
            table = tabulate(
                stack, res_cos, res_phi, args.spp, mode="single", seed=args.seed, workers=args.threads
            )
            img = table.values
    if not np.isfinite(img).all():
        raise NumericalError("lobe image contains non-finite pixels")
    write_pfm(args.out, img)
    if args.png:
        write_png_preview(args.png, img)
    print(f"wrote {args.out} ({img.shape[1]}x{img.shape[0]})")
    return EXIT_OK


def cmd_furnace(args) -> int:
    stack = _load_material(args.material)
    thetas = (np.arange(args.angles) + 0.5) / args.angles * (math.pi / 2.0)
    rows = []
    if args.mode == "analytic":
        wi = np.stack([np.sin(thetas), np.zeros_like(thetas), np.cos(thetas)], axis=-1)
        dirs, wq = sphere_quadrature(128, 256, hemisphere="both")
        vals = eval_stack_single_grid(stack, wi, dirs)
        albedo = np.einsum("nmc,m->nc", vals, wq * np.abs(dirs[:, 2]))
        if stack.include_delta and stack.substrate is None:
            albedo += np.stack([delta_transmittance(stack, w) for w in wi])
    else:
        albedo = np.stack(
            [furnace_albedo(stack, spherical_direction(math.cos(t), 0.0), args.samples, seed=args.seed) for t in thetas]
        )
    for t, a in zip(thetas, albedo):
        rows.append({"theta_deg": math.degrees(t), "albedo": list(map(float, a))})
    if args.json:
        json.dump(rows, sys.stdout, indent=2)
        sys.stdout.write("\n")
    else:
        for r in rows:
            print(f"{r['theta_deg']:7.2f}  {_fmt(r['albedo'])}")
    if not np.isfinite(albedo).all():
        raise NumericalError("non-finite albedo")
    return EXIT_OK


def cmd_dataset(args) -> int:
    manifest = generate_dataset(
        args.out,
        count=args.count,
        n_layers=args.layers,
        res_cos=args.res_cos,
        res_phi=args.res_phi,
        samples_per_wi=args.spp,
        mode=args.mode,
        seed=args.seed,
        workers=args.threads,
        max_depth=args.max_depth,
    )
    print(f"wrote {len(manifest['entries'])} tables to {args.out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    table = read_table(args.table)
    stack = _load_material(args.material) if args.material else parse_material(table.material_text)
    lobes, stats = fit_direct(
        stack, table, wi_subsample=args.wi_subsample, seed=args.seed, maxiter=args.maxiter
    )
    result = {
        "material": serialize_material(lobes.stack),
        "w1": lobes.w1,
        "w2": lobes.w2,
        **stats,
    }
    text = json.dumps(result, indent=2) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    sys.stdout.write(text)
    if not math.isfinite(stats["mae"]):
        raise NumericalError("fit produced a non-finite error")
    return EXIT_OK


def cmd_sample_test(args) -> int:
    stack = _load_material(args.material)
    wi = _vec(args.wi)
    check = check_stack_sampling(stack, wi, args.samples, seed=args.seed)
    ok = check.chi.p_value >= args.alpha and check.albedo_rel_err <= args.albedo_tol
    print(
        f"chi2={check.chi.statistic:.2f} dof={check.chi.dof} p={check.chi.p_value:.4f} "
        f"albedo_err={check.albedo_rel_err:.4%} -> {'PASS' if ok else 'FAIL'}"
    )
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_render(args) -> int:
    stack = _load_material(args.material)
    img = render(stack, args.strategy, width=args.width, height=args.height, spp=args.spp, seed=args.seed)
    write_pfm(args.out, img.astype(np.float32))
    if args.png:
        write_png_preview(args.png, img)
    print(f"wrote {args.out} ({args.width}x{args.height}, {args.spp} spp, {args.strategy})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flakestack", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="deterministic stream seed")
    common.add_argument("--threads", type=int, default=1, help="worker processes where supported")
    common.add_argument("--weights", default=None, help="parameter-network .spck file")

    p = sub.add_parser("eval", parents=[common], help="evaluate the BSDF at a direction pair")
    p.add_argument("--material", required=True)
    p.add_argument("--wi", default=None, help="incoming direction x,y,z")
    p.add_argument("--wo", default=None, help="outgoing direction x,y,z")
    p.add_argument("--full", action="store_true", help="add the lobe closure (needs --weights)")
    p.add_argument("--bottom-only", action="store_true", help="network edits only the bottom layer")
    p.add_argument("--json", action="store_true")
    p.add_argument("--batch", default=None, help="JSON file with a list of {wi, wo} pairs")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("lobe", parents=[common], help="write a lobe image (PFM + optional PNG)")
    p.add_argument("--material", required=True)
    p.add_argument("--mode", choices=("analytic", "oracle"), default="analytic")
    p.add_argument("--layout", choices=("fixed", "matrix"), default="fixed")
    p.add_argument("--theta", type=float, default=0.5, help="incidence angle in radians (fixed layout)")
    p.add_argument("--res-cos", type=int, default=16)
    p.add_argument("--res-phi", type=int, default=16)
    p.add_argument("--spp", type=int, default=20_000, help="walks per incoming bin (oracle mode)")
    p.add_argument("--out", required=True, help="output .pfm path")
    p.add_argument("--png", default=None, help="optional tonemapped preview path")
    p.set_defaults(fn=cmd_lobe)

    p = sub.add_parser("furnace", parents=[common], help="directional albedo vs incidence angle")
    p.add_argument("--material", required=True)
    p.add_argument("--mode", choices=("analytic", "mc"), default="analytic")
    p.add_argument("--angles", type=int, default=10)
    p.add_argument("--samples", type=int, default=200_000, help="walks per angle (mc mode)")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_furnace)

    p = sub.add_parser("dataset", parents=[common], help="generate tabulated training stacks")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--res-cos", type=int, default=16)
    p.add_argument("--res-phi", type=int, default=16)
    p.add_argument("--spp", type=int, default=10_000)
    p.add_argument("--mode", choices=("single", "multiple", "full", "full+delta"), default="multiple")
    p.add_argument("--max-depth", type=int, default=20)
    p.set_defaults(fn=cmd_dataset)

    p = sub.add_parser("fit", parents=[common], help="fit lobe parameters to a reference table")
    p.add_argument("--table", required=True, help="reference .sptb (multiple mode)")
    p.add_argument("--material", default=None, help="start point (default: the table's own material)")
    p.add_argument("--maxiter", type=int, default=40)
    p.add_argument("--wi-subsample", type=int, default=16)
    p.add_argument("--out", default=None, help="write the fit result JSON here too")
    p.set_defaults(fn=cmd_fit)

    p = sub.add_parser("sample-test", parents=[common], help="chi-square + estimator check of the sampler")
    p.add_argument("--material", required=True)
    p.add_argument("--wi", default="0.35,0.2,0.92")
    p.add_argument("--samples", type=int, default=200_000)
    p.add_argument("--alpha", type=float, default=0.01, help="chi-square significance level")
    p.add_argument("--albedo-tol", type=float, default=0.01)
    p.set_defaults(fn=cmd_sample_test)

    p = sub.add_parser("render", parents=[common], help="render the fixed comparison scene")
    p.add_argument("--material", required=True)
    p.add_argument("--strategy", choices=STRATEGIES, required=True)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--spp", type=int, default=64)
    p.add_argument("--out", required=True, help="output .pfm path")
    p.add_argument("--png", default=None)
    p.set_defaults(fn=cmd_render)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except MaterialParseError as exc:
        print(f"error: material parse: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileFormatError as exc:
        print(f"error: file format: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: i/o: {exc}", file=sys.stderr)
        return EXIT_IO
    except (StreamExhausted, NumericalError) as exc:
        print(f"error: numerical: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
