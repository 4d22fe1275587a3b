"""Statistical agreement checks between samplers and their densities.

The chi-square test bins the sphere uniformly in (cos theta, phi), computes
per-bin expected masses by Gauss-Legendre quadrature of the claimed density
over each bin (center-point evaluation would mis-state peaked lobes), pools
bins below a minimum expected count into one cell, and reports the p-value.
Stack-level tests carry the discrete delta event as its own cell, so the
delta mass is tested alongside the continuous lobe shape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.stats import chi2

from .errors import ParameterError
from .geometry import sphere_quadrature, spherical_direction
from .layers import LayerStack
from .sampling import EVENT_DELTA, layer_probabilities, pdf_stack_many, sample_stack_many
from .single_scatter import eval_stack_single_grid


def sphere_bin_index(dirs: np.ndarray, res_cos: int, res_phi: int) -> np.ndarray:
    """Full-sphere bin: cos theta uniform in [-1, 1], phi uniform in [0, 2pi)."""
    dirs = np.atleast_2d(dirs)
    jc = np.clip(((dirs[:, 2] + 1.0) * 0.5 * res_cos).astype(np.int64), 0, res_cos - 1)
    phi = np.arctan2(dirs[:, 1], dirs[:, 0]) % (2.0 * np.pi)
    jp = np.clip((phi / (2.0 * np.pi) * res_phi).astype(np.int64), 0, res_phi - 1)
    return jc * res_phi + jp


def bin_masses(pdf_many, res_cos: int, res_phi: int, nodes: int = 4) -> np.ndarray:
    """Integral of a directional density over every full-sphere bin."""
    xg, wg = leggauss(nodes)
    cos_lo = -1.0 + 2.0 * np.arange(res_cos) / res_cos
    half_c = 1.0 / res_cos
    cos_nodes = cos_lo[:, None] + half_c * (xg[None, :] + 1.0)  # (res_cos, nodes)
    cos_w = wg * half_c
    phi_lo = 2.0 * np.pi * np.arange(res_phi) / res_phi
    half_p = np.pi / res_phi
    phi_nodes = phi_lo[:, None] + half_p * (xg[None, :] + 1.0)
    phi_w = wg * half_p
    shape = (res_cos, res_phi, nodes, nodes)
    c = np.broadcast_to(cos_nodes[:, None, :, None], shape)
    p = np.broadcast_to(phi_nodes[None, :, None, :], shape)
    dirs = spherical_direction(c.ravel(), p.ravel())
    vals = pdf_many(dirs).reshape(res_cos, res_phi, nodes, nodes)
    w2d = cos_w[:, None] * phi_w[None, :]
    return np.einsum("bpcf,cf->bp", vals, w2d).ravel()


@dataclass(frozen=True)
class ChiSquareResult:
    statistic: float
    dof: int
    p_value: float
    n_samples: int
    n_cells: int


def _chi_square(observed: np.ndarray, expected: np.ndarray, min_expected: float) -> ChiSquareResult:
    total = observed.sum()
    # pool sparse cells so the asymptotic chi-square distribution applies
    big = expected >= min_expected
    obs = np.concatenate([observed[big], [observed[~big].sum()]])
    exp = np.concatenate([expected[big], [expected[~big].sum()]])
    keep = exp > 0
    obs, exp = obs[keep], exp[keep]
    if obs.size < 2:
        raise ParameterError("too few populated cells for a chi-square test")
    stat = float(np.sum((obs - exp) ** 2 / exp))
    dof = obs.size - 1
    return ChiSquareResult(stat, dof, float(chi2.sf(stat, dof)), int(total), obs.size)


def chi_square_directions(
    sample_many,
    pdf_many,
    n_samples: int,
    rng: np.random.Generator,
    res_cos: int = 16,
    res_phi: int = 16,
    min_expected: float = 5.0,
    chunk: int = 200_000,
) -> ChiSquareResult:
    """Test directions drawn by sample_many(n, rng) against density pdf_many."""
    counts = np.zeros(res_cos * res_phi, dtype=np.int64)
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        np.add.at(counts, sphere_bin_index(sample_many(m, rng), res_cos, res_phi), 1)
        done += m
    expected = n_samples * bin_masses(pdf_many, res_cos, res_phi)
    return _chi_square(counts, expected, min_expected)


@dataclass(frozen=True)
class StackSampleCheck:
    chi: ChiSquareResult
    albedo_sampled: np.ndarray
    albedo_quadrature: np.ndarray

    @property
    def albedo_rel_err(self) -> float:
        ref = np.maximum(np.abs(self.albedo_quadrature), 1e-12)
        return float(np.max(np.abs(self.albedo_sampled - self.albedo_quadrature) / ref))


def check_stack_sampling(
    stack: LayerStack,
    wi: np.ndarray,
    n_samples: int,
    seed: int = 0,
    res_cos: int = 16,
    res_phi: int = 16,
    min_expected: float = 5.0,
    quad_res: int = 128,
) -> StackSampleCheck:
    """Chi-square of sample_stack directions against pdf_stack (delta mass as
    its own cell) plus the single-sample reflectance estimator against
    quadrature of eval * |cos|."""
    wi = np.asarray(wi, dtype=np.float64)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    n_bins = res_cos * res_phi
    counts = np.zeros(n_bins + 1, dtype=np.int64)
    albedo_acc = np.zeros(3)
    done = 0
    while done < n_samples:
        m = min(200_000, n_samples - done)
        wo, weight, _pdf, event = sample_stack_many(stack, np.tile(wi, (m, 1)), rng)
        cont = event != EVENT_DELTA
        np.add.at(counts[:n_bins], sphere_bin_index(wo[cont], res_cos, res_phi), 1)
        counts[n_bins] += int((~cont).sum())
        albedo_acc += (weight[cont] * np.abs(wo[cont, 2:3])).sum(axis=0)
        done += m

    wi_rows = np.tile(wi, (1, 1))

    def pdf_fn(dirs):
        return pdf_stack_many(stack, np.broadcast_to(wi, dirs.shape), dirs)

    expected = np.empty(n_bins + 1)
    expected[:n_bins] = n_samples * bin_masses(pdf_fn, res_cos, res_phi)
    expected[n_bins] = n_samples * layer_probabilities(stack, wi).delta
    chi = _chi_square(counts, expected, min_expected)

    dirs, wq = sphere_quadrature(quad_res, quad_res, hemisphere="both")
    vals = eval_stack_single_grid(stack, wi_rows, dirs)[0]
    albedo_quad = np.sum(vals * (wq * np.abs(dirs[:, 2]))[:, None], axis=0)
    return StackSampleCheck(
        chi=chi, albedo_sampled=albedo_acc / n_samples, albedo_quadrature=albedo_quad
    )
