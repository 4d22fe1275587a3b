"""Training-set generation: random flake stacks tabulated by the walker.

Configurations are drawn uniformly over the documented ranges (alpha in
[0.05, 1], albedo in [0, 1]^3, optical thickness log-uniform in [0.1, 8],
f0 in [0, 1]^3, orientation uniform over the upper hemisphere, kind by fair
coin). All randomness — the configurations and every table's walk stream —
derives from the one dataset seed, so a manifest and its tables are bitwise
reproducible regardless of worker count.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .errors import ParameterError
from .layers import LayerSpec, LayerStack, parse_material, serialize_material
from .oracle import tabulate
from .tables import write_table

ALPHA_RANGE = (0.05, 1.0)
THICKNESS_RANGE = (0.1, 8.0)


def random_stack(rng: np.random.Generator, n_layers: int) -> LayerStack:
    layers = []
    for _ in range(n_layers):
        kind = "fiber" if rng.random() < 0.5 else "surface"
        alpha = rng.uniform(*ALPHA_RANGE)
        albedo = rng.random(3)
        thickness = float(np.exp(rng.uniform(*np.log(THICKNESS_RANGE))))
        f0 = rng.random(3)
        z = rng.random()
        phi = rng.uniform(0.0, 2.0 * np.pi)
        s = np.sqrt(max(1.0 - z * z, 0.0))
        orientation = np.array([s * np.cos(phi), s * np.sin(phi), z])
        layers.append(
            LayerSpec(
                kind=kind,
                albedo=albedo,
                roughness=float(alpha),
                f0=f0,
                thickness=thickness,
                orientation=orientation,
            )
        )
    return LayerStack(layers=tuple(layers))


def _build_one(args) -> str:
    material_text, path, res_cos, res_phi, spp, mode, seed, max_depth = args
    stack = parse_material(material_text)
    table = tabulate(stack, res_cos, res_phi, spp, mode=mode, seed=seed, max_depth=max_depth)
    write_table(path, table)
    return os.path.basename(path)


def generate_dataset(
    out_dir,
    count: int,
    n_layers: int,
    res_cos: int = 16,
    res_phi: int = 16,
    samples_per_wi: int = 10_000,
    mode: str = "multiple",
    seed: int = 0,
    workers: int = 1,
    max_depth: int = 20,
) -> dict:
    """Write `count` tabulated stacks plus manifest.json; returns the manifest."""
    if count < 1 or n_layers < 1:
        raise ParameterError("count and layer count must be positive")
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    entries = []
    jobs = []
    for i in range(count):
        stack = random_stack(rng, n_layers)
        table_seed = int(rng.integers(0, 2**63 - 1))
        name = f"{i:05d}.sptb"
        text = serialize_material(stack)
        entries.append({"file": name, "seed": table_seed, "material": text})
        jobs.append(
            (text, os.path.join(out_dir, name), res_cos, res_phi, samples_per_wi, mode, table_seed, max_depth)
        )
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            list(pool.map(_build_one, jobs))
    else:
        for job in jobs:
            _build_one(job)
    manifest = {
        "version": 1,
        "mode": mode,
        "res_cos": res_cos,
        "res_phi": res_phi,
        "samples_per_wi": samples_per_wi,
        "n_layers": n_layers,
        "seed": seed,
        "entries": entries,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
