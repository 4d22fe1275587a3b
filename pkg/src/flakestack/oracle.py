"""Random-walk Monte Carlo reference for layer stacks.

Walks track a photon through the stacked media with regular tracking: a
target optical depth -log(1-u) is marched through the piecewise-constant,
direction-dependent extinction sigma_k(d) until it is spent (collision) or
the stack is exited. Scatter events sample the layer's phase function exactly
and multiply throughput by the reflectance factor (albedo * schlick for
flakes, albedo for hg); substrate hits bounce cosine-distributed with the
substrate albedo. Exits with 0 bounces out the bottom are the unscattered
delta path.

This module is the ground truth the analytic single scattering and the lobe
approximation are validated against; it shares only the phase-function
primitives with them — every depth integral here is done by sampling.

Per-walk uniform consumption: one variate per free flight, then (u1, u2) per
scatter or substrate event, in that order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .geometry import cosine_sample_hemisphere
from .layers import HG, LayerStack, layer_sigma, mirror_stack, reduced_phase_eval, serialize_material
from .microflake import clamped_cos, schlick
from .sampling import sample_flake_normal, sample_hg_phase
from .tables import BsdfTable, bin_centers_upper, bin_solid_angle, wo_bin_index

WALK_MODES = ("single", "multiple", "full", "full+delta")

_SIDE_ACTIVE, _SIDE_TOP, _SIDE_BOTTOM, _SIDE_CAPPED = 0, 1, 2, 3


@dataclass(frozen=True)
class WalkOutcome:
    exit_direction: np.ndarray | None  # None when the walk was capped
    throughput: np.ndarray
    bounces: int
    exit_side: str  # 'top' | 'bottom' | 'capped'


def _layer_edges(stack: LayerStack) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum([l.thickness for l in stack.layers])])


def random_walk(stack: LayerStack, wi: np.ndarray, source, max_depth: int = 20, mode: str = "full") -> WalkOutcome:
    """Trace one walk entering along -wi from the top. `mode` only alters the
    walk for 'single' (a second collision caps it); the other modes filter at
    tally time and walk identically."""
    if mode not in WALK_MODES:
        raise ParameterError(f"unknown walk mode {mode!r}")
    wi = np.asarray(wi, dtype=np.float64)
    if wi[2] <= 0.0:
        raise ParameterError("random_walk requires wi above the horizon")
    edges = _layer_edges(stack)
    nl = len(stack.layers)
    d = -wi
    z, k = 0.0, 0
    thr = np.ones(3)
    bounces = 0
    while True:
        tau = -math.log1p(-source.uniform())
        event = None
        while True:  # regular tracking across layer boundaries
            sigma = float(layer_sigma(stack.layers[k], d))
            down = d[2] < 0.0
            rate = abs(d[2])
            if rate < 1e-300:
                t_bound = math.inf
            else:
                t_bound = ((edges[k + 1] - z) if down else (z - edges[k])) / rate
            if tau <= sigma * t_bound:
                z += (tau / sigma) * rate * (1.0 if down else -1.0)
                event = "scatter"
                break
            tau -= sigma * t_bound
            if down:
                z = edges[k + 1]
                k += 1
                if k == nl:
                    if stack.substrate is None:
                        return WalkOutcome(d, thr, bounces, "bottom")
                    event = "substrate"
                    k = nl - 1
                    break
            else:
                z = edges[k]
                k -= 1
                if k < 0:
                    return WalkOutcome(d, thr, bounces, "top")

        bounces += 1
        if bounces > max_depth or (mode == "single" and bounces >= 2):
            return WalkOutcome(None, thr, bounces, "capped")
        u1, u2 = source.uniform(), source.uniform()
        if event == "substrate":
            thr = thr * stack.substrate.albedo
            d = cosine_sample_hemisphere(u1, u2)
        else:
            layer = stack.layers[k]
            wi_vtx = -d
            if layer.kind == HG:
                thr = thr * layer.albedo
                d = sample_hg_phase(layer.roughness, wi_vtx, u1, u2)[0]
            else:
                m = sample_flake_normal(layer.sggx, wi_vtx[None, :], u1, u2)[0]
                thr = thr * layer.albedo * schlick(layer.f0, abs(float(np.dot(wi_vtx, m))))
                d = 2.0 * float(np.dot(wi_vtx, m)) * m - wi_vtx


def _walk_batch(stack: LayerStack, d0: np.ndarray, rng: np.random.Generator, max_depth: int, single_only: bool):
    """Vectorized walks; d0 (n, 3) initial propagation (pointing down).
    Returns (exit_dir (n,3), throughput (n,3), bounces (n,), side (n,))."""
    n = d0.shape[0]
    edges = _layer_edges(stack)
    nl = len(stack.layers)
    z = np.zeros(n)
    k = np.zeros(n, dtype=np.int64)
    d = np.array(d0, dtype=np.float64)
    thr = np.ones((n, 3))
    bounces = np.zeros(n, dtype=np.int64)
    side = np.full(n, _SIDE_ACTIVE, dtype=np.int8)

    while True:
        active = np.flatnonzero(side == _SIDE_ACTIVE)
        if active.size == 0:
            break
        tau = -np.log1p(-rng.random(active.size))
        fly = active
        colliders = []
        substrate_hits = []
        while fly.size:
            kk = k[fly]
            dd = d[fly]
            sigma = np.empty(fly.size)
            for li, layer in enumerate(stack.layers):
                sel = kk == li
                if sel.any():
                    sigma[sel] = layer_sigma(layer, dd[sel])
            down = dd[:, 2] < 0.0
            rate = np.abs(dd[:, 2])
            span = np.where(down, edges[kk + 1] - z[fly], z[fly] - edges[kk])
            with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
                t_bound = np.where(rate < 1e-300, np.inf, span / rate)
                dtau = sigma * t_bound
            hit = tau <= dtau
            ci = fly[hit]
            if ci.size:
                z[ci] += (tau[hit] / sigma[hit]) * rate[hit] * np.where(down[hit], 1.0, -1.0)
                colliders.append(ci)
            tau = tau[~hit] - dtau[~hit]
            fly = fly[~hit]
            down = down[~hit]
            resolved = np.zeros(fly.size, dtype=bool)
            pd = np.flatnonzero(down)
            if pd.size:
                dn = fly[pd]
                k[dn] += 1
                z[dn] = edges[k[dn]]
                out = pd[k[dn] == nl]
                if out.size:
                    o = fly[out]
                    if stack.substrate is None:
                        side[o] = _SIDE_BOTTOM
                    else:
                        substrate_hits.append(o)
                    k[o] = nl - 1
                    resolved[out] = True
            pu = np.flatnonzero(~down)
            if pu.size:
                up = fly[pu]
                z[up] = edges[k[up]]
                k[up] -= 1
                out = pu[k[up] < 0]
                if out.size:
                    o = fly[out]
                    side[o] = _SIDE_TOP
                    k[o] = 0
                    resolved[out] = True
            tau = tau[~resolved]
            fly = fly[~resolved]

        scatter_idx = np.sort(np.concatenate(colliders)) if colliders else np.empty(0, dtype=np.int64)
        sub_idx = np.sort(np.concatenate(substrate_hits)) if substrate_hits else np.empty(0, dtype=np.int64)
        events = np.sort(np.concatenate([scatter_idx, sub_idx]))
        if events.size == 0:
            continue
        bounces[events] += 1
        over = events[(bounces[events] > max_depth) | (single_only & (bounces[events] >= 2))]
        side[over] = _SIDE_CAPPED
        scatter_idx = scatter_idx[side[scatter_idx] == _SIDE_ACTIVE]
        sub_idx = sub_idx[side[sub_idx] == _SIDE_ACTIVE]

        # one aligned pair of variates per event, sliced by position in `events`
        u1 = rng.random(events.size)
        u2 = rng.random(events.size)
        if scatter_idx.size:
            p = np.searchsorted(events, scatter_idx)
            su1, su2 = u1[p], u2[p]
            kk = k[scatter_idx]
            for li, layer in enumerate(stack.layers):
                sel = kk == li
                if not sel.any():
                    continue
                idx = scatter_idx[sel]
                wi_vtx = -d[idx]
                if layer.kind == HG:
                    thr[idx] *= layer.albedo
                    d[idx] = sample_hg_phase(layer.roughness, wi_vtx, su1[sel], su2[sel])
                else:
                    m = sample_flake_normal(layer.sggx, wi_vtx, su1[sel], su2[sel])
                    dot = np.sum(wi_vtx * m, axis=-1)
                    thr[idx] *= layer.albedo * schlick(layer.f0, np.abs(dot))
                    d[idx] = 2.0 * dot[:, None] * m - wi_vtx
        if sub_idx.size:
            p = np.searchsorted(events, sub_idx)
            thr[sub_idx] *= stack.substrate.albedo
            d[sub_idx] = cosine_sample_hemisphere(u1[p], u2[p])
            z[sub_idx] = edges[nl]

    return d, thr, bounces, side


def _bounce_filter(mode: str, bounces: np.ndarray) -> np.ndarray:
    if mode == "single":
        return bounces == 1
    if mode == "multiple":
        return bounces >= 2
    if mode == "full":
        return bounces >= 1
    if mode == "full+delta":
        return bounces >= 0
    raise ParameterError(f"unknown walk mode {mode!r}")


_BATCH = 200_000


def furnace_albedo(
    stack: LayerStack, wi: np.ndarray, samples: int, seed: int = 0, max_depth: int = 64
) -> np.ndarray:
    """Mean total exit throughput (delta path included) over `samples` walks;
    equals 1 per channel for a lossless closed stack."""
    wi = np.asarray(wi, dtype=np.float64)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    total = np.zeros(3)
    done = 0
    while done < samples:
        m = min(_BATCH, samples - done)
        d0 = np.tile(-wi, (m, 1))
        _, thr, _, side = _walk_batch(stack, d0, rng, max_depth, single_only=False)
        exited = (side == _SIDE_TOP) | (side == _SIDE_BOTTOM)
        total += thr[exited].sum(axis=0)
        done += m
    return total / samples


def _tabulate_rows(stack: LayerStack, res_cos, res_phi, samples_per_wi, mode, seed, max_depth, lo, hi):
    """Raw throughput sums for incoming bins [lo, hi); each bin consumes its
    own child stream so results do not depend on which worker ran it."""
    dirs_in = bin_centers_upper(res_cos, res_phi)
    n_wo = 2 * dirs_in.shape[0]
    children = np.random.SeedSequence(seed).spawn(dirs_in.shape[0])
    values = np.zeros((hi - lo, n_wo, 3))
    single_only = mode == "single"
    for b in range(lo, hi):
        rng = np.random.Generator(np.random.Philox(children[b]))
        done = 0
        while done < samples_per_wi:
            m = min(_BATCH, samples_per_wi - done)
            d0 = np.tile(-dirs_in[b], (m, 1))
            d, thr, bounces, side = _walk_batch(stack, d0, rng, max_depth, single_only)
            keep = ((side == _SIDE_TOP) | (side == _SIDE_BOTTOM)) & _bounce_filter(mode, bounces)
            if keep.any():
                bins = wo_bin_index(res_cos, res_phi, d[keep])
                np.add.at(values[b - lo], bins, thr[keep])
            done += m
    return values


def _tabulate_rows_job(args):
    from .layers import parse_material

    text, res_cos, res_phi, spp, mode, seed, max_depth, lo, hi = args
    return _tabulate_rows(parse_material(text), res_cos, res_phi, spp, mode, seed, max_depth, lo, hi)


def tabulate(
    stack: LayerStack,
    res_cos: int,
    res_phi: int,
    samples_per_wi: int,
    mode: str = "full",
    seed: int = 0,
    max_depth: int = 20,
    workers: int = 1,
) -> BsdfTable:
    """Estimate the cosine-folded scattering distribution on the table grid.

    Each incoming bin gets its own counter-based child stream, so tables are
    bitwise reproducible for a given seed regardless of evaluation order or
    worker count. The bin estimate is
    sum(throughput) / (N * bin_solid_angle * |cos_center|), an average of
    f(wi -> wo)|cos wo| over the outgoing bin.
    """
    if mode not in WALK_MODES:
        raise ParameterError(f"unknown walk mode {mode!r}")
    n_wi = res_cos * res_phi
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        text = serialize_material(stack)
        bounds = np.linspace(0, n_wi, min(workers, n_wi) + 1).astype(int)
        jobs = [
            (text, res_cos, res_phi, samples_per_wi, mode, seed, max_depth, int(a), int(b))
            for a, b in zip(bounds[:-1], bounds[1:])
            if b > a
        ]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            values = np.concatenate(list(pool.map(_tabulate_rows_job, jobs)), axis=0)
    else:
        values = _tabulate_rows(stack, res_cos, res_phi, samples_per_wi, mode, seed, max_depth, 0, n_wi)
    cos_center = np.concatenate([(np.arange(n_wi) // res_phi + 0.5) / res_cos] * 2)
    values /= samples_per_wi * bin_solid_angle(res_cos, res_phi) * cos_center[None, :, None]
    return BsdfTable(
        mode=mode,
        res_cos=res_cos,
        res_phi=res_phi,
        samples_per_wi=samples_per_wi,
        material_text=serialize_material(stack),
        values=values.astype(np.float32),
    )


def estimate_single_pair(
    stack: LayerStack, wi: np.ndarray, wo: np.ndarray, samples: int, rng: np.random.Generator
) -> np.ndarray:
    """Unbiased estimate of the single-scatter bsdf value for one (wi, wo)
    pair: sample the first collision depth along wi exactly, then connect to
    wo deterministically. Volumetric paths only (no substrate term)."""
    wi = np.asarray(wi, dtype=np.float64)
    wo = np.asarray(wo, dtype=np.float64)
    if wi[2] < 0.0:
        wi, wo = wi * np.array([1.0, 1.0, -1.0]), wo * np.array([1.0, 1.0, -1.0])
        stack = mirror_stack(stack)
    ci = float(clamped_cos(wi)[()])
    co = float(wo[2])
    co_abs = max(abs(co), 1e-7)
    edges = _layer_edges(stack)
    nl = len(stack.layers)
    sig_i = np.array([float(layer_sigma(l, wi)[()]) for l in stack.layers])
    sig_o = np.array([float(layer_sigma(l, wo)[()]) for l in stack.layers])
    thick = np.array([l.thickness for l in stack.layers])
    cum = np.concatenate([[0.0], np.cumsum(thick * sig_i / ci)])
    # attenuation along wo accumulated outside the collision layer
    rate_o = sig_o / co_abs
    above = np.concatenate([[0.0], np.cumsum(thick[:-1] * rate_o[:-1])])
    below_rev = np.cumsum((thick * rate_o)[::-1])[::-1]
    below = np.concatenate([below_rev[1:], [0.0]])
    # per-layer vertex factor gamma F(h) fp(wi->wo), constant given the pair
    vertex = np.stack(
        [np.asarray(reduced_phase_eval(l, wi, wo), dtype=np.float64) / s for l, s in zip(stack.layers, sig_i)]
    )

    tau = -np.log1p(-rng.random(samples))
    j = np.searchsorted(cum[1:], tau, side="right")
    hit = j < nl
    out = np.zeros((samples, 3))
    if hit.any():
        jj = j[hit]
        z = edges[jj] + (tau[hit] - cum[jj]) * ci / sig_i[jj]
        if co > 0.0:
            tau_o = (z - edges[jj]) * rate_o[jj] + above[jj]
        else:
            with np.errstate(invalid="ignore"):
                tau_o = (edges[jj + 1] - z) * rate_o[jj] + below[jj]
            tau_o = np.where(np.isnan(tau_o), np.inf, tau_o)
        out[hit] = vertex[jj] * (np.exp(-tau_o) / co_abs)[:, None]
    return out.mean(axis=0)
