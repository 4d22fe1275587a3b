"""Closed-form single scattering for layer stacks.

For one layer of optical depth T the depth integral of attenuated in-scatter
collapses to an analytic factor G multiplying the reduced phase function:

    reflection:    G_R = (1 - exp(-T (Li + Lo))) / (Li + Lo)
    transmission:  G_T = (1 - exp(-T (Li + Lo))) / (Li + Lo) * exp(T Lo)

with Li = Lambda(wi) > 0 and Lo = Lambda(wo) (negative below the horizon for
transmission). The BSDF value is reduced_phase * G / (|cos wi| |cos wo|).
G_T is evaluated in the cancellation-free form (exp(T Lo) - exp(-T Li)) / x
and switches to a second-order series below |Li + Lo| = 1e-6, where the limit
is T exp(T Lo).

Stacked layers add up with inter-layer attenuation: a layer's contribution is
weighted by the transmittance of the layers a direction crosses on its way in
and out (layers above for upward directions, below for downward ones). A
Lambertian substrate contributes albedo/pi attenuated through the whole stack
both ways.
"""

from __future__ import annotations

import warnings

import numpy as np

from .errors import ParameterError
from .layers import HG, LayerSpec, LayerStack, layer_sigma, mirror_stack, reduced_phase_eval
from .microflake import GRAZING_COS_EPS, clamped_cos

_SERIES_EPS = 1e-6


def _g_reflect(t: float, lam_i: np.ndarray, lam_o: np.ndarray) -> np.ndarray:
    # both lambdas positive, so x is bounded away from 0; t = inf gives 1/x
    x = lam_i + lam_o
    return (1.0 - np.exp(-t * x)) / x


def _g_transmit(t: float, lam_i: np.ndarray, lam_o: np.ndarray) -> np.ndarray:
    # lam_o < 0 < lam_i: both exponents are negative, nothing can overflow
    x = np.asarray(lam_i + lam_o, dtype=np.float64)
    out = np.empty_like(x)
    small = np.abs(x) < _SERIES_EPS
    big = ~small
    out[big] = (np.exp(t * np.asarray(lam_o)[big]) - np.exp(-t * np.asarray(lam_i)[big])) / x[big]
    if small.any():
        u = t * x[small]
        out[small] = t * np.exp(t * np.asarray(lam_o)[small]) * (1.0 - u / 2.0 + u * u / 6.0)
    return out


def eval_layer_reflect(layer: LayerSpec, wi: np.ndarray, wo: np.ndarray) -> np.ndarray:
    """Single-scattering BRDF of one layer alone; wi and wo above the horizon."""
    wi = np.asarray(wi, dtype=np.float64)
    wo = np.asarray(wo, dtype=np.float64)
    if np.any(wi[..., 2] < 0.0) or np.any(wo[..., 2] < 0.0):
        raise ParameterError("eval_layer_reflect requires both directions above the horizon")
    ci = clamped_cos(wi)
    co = clamped_cos(wo)
    sig_i = layer_sigma(layer, wi)
    sig_o = layer_sigma(layer, wo)
    g = _g_reflect(layer.thickness, sig_i / ci, sig_o / co)
    return reduced_phase_eval(layer, wi, wo) * (g / (ci * co))[..., None]


def eval_layer_transmit(layer: LayerSpec, wi: np.ndarray, wo: np.ndarray) -> np.ndarray:
    """Single-scattering BTDF of one layer alone; wi above, wo below."""
    wi = np.asarray(wi, dtype=np.float64)
    wo = np.asarray(wo, dtype=np.float64)
    if np.any(wi[..., 2] < 0.0) or np.any(wo[..., 2] > 0.0):
        raise ParameterError("eval_layer_transmit requires wi above and wo below the horizon")
    if layer.semi_infinite:
        return np.zeros(np.broadcast_shapes(wi.shape, wo.shape))
    ci = clamped_cos(wi)
    co = clamped_cos(wo)  # negative
    sig_i = layer_sigma(layer, wi)
    sig_o = layer_sigma(layer, wo)
    g = _g_transmit(layer.thickness, sig_i / ci, sig_o / co)
    return reduced_phase_eval(layer, wi, wo) * (g / (ci * np.abs(co)))[..., None]


def _layer_depths(stack: LayerStack, w: np.ndarray) -> np.ndarray:
    """Optical depth T_k sigma_k(w) / |cos w| per layer; shape (L, ...)."""
    w = np.asarray(w, dtype=np.float64)
    c = np.abs(clamped_cos(w))
    return np.stack([layer.thickness * layer_sigma(layer, w) / c for layer in stack.layers])


def attenuation(stack: LayerStack, k: int, w: np.ndarray) -> np.ndarray:
    """Transmittance along w of the layers crossed before reaching layer k:
    the layers above k when w points up, the layers below when it points
    down. Equals 1 for the first layer each way."""
    if not 0 <= k < len(stack.layers):
        raise ParameterError(f"layer index {k} out of range")
    w = np.asarray(w, dtype=np.float64)
    depths = _layer_depths(stack, w)
    up = w[..., 2] >= 0.0
    above = depths[:k].sum(axis=0) if k > 0 else np.zeros(w.shape[:-1])
    below = depths[k + 1 :].sum(axis=0) if k + 1 < len(stack.layers) else np.zeros(w.shape[:-1])
    return np.exp(-np.where(up, above, below))


def delta_transmittance(stack: LayerStack, wi: np.ndarray) -> np.ndarray:
    """Unscattered transmittance through every layer along wi (achromatic).
    Purely the optical product; whether the delta path exists (flag on, no
    substrate in the way) is the caller's concern."""
    total = _layer_depths(stack, wi).sum(axis=0)
    t = np.exp(-total)
    return np.broadcast_to(t[..., None], t.shape + (3,)).copy()


def _eval_canonical(stack: LayerStack, wi: np.ndarray, wo: np.ndarray) -> np.ndarray:
    """Pairwise evaluation with every wi already above the horizon."""
    n = wi.shape[0]
    out = np.zeros((n, 3))
    ci = clamped_cos(wi)  # > 0
    co_signed = clamped_cos(wo)
    refl = wo[:, 2] >= 0.0
    co = np.abs(co_signed)

    nl = len(stack.layers)
    sig_i = np.empty((nl, n))
    sig_o = np.empty((nl, n))
    for k, layer in enumerate(stack.layers):
        sig_i[k] = layer_sigma(layer, wi)
        sig_o[k] = layer_sigma(layer, wo)
    thick = np.array([layer.thickness for layer in stack.layers])
    di = thick[:, None] * sig_i / ci  # optical depth along wi per layer
    do = thick[:, None] * sig_o / co
    # exclusive prefix (crossed from the top) and suffix (from the bottom)
    pre_i = np.vstack([np.zeros((1, n)), np.cumsum(di, axis=0)])
    pre_o = np.vstack([np.zeros((1, n)), np.cumsum(do, axis=0)])
    suf_o = np.vstack([np.cumsum(do[::-1], axis=0)[::-1], np.zeros((1, n))])

    t_mask = ~refl
    for k, layer in enumerate(stack.layers):
        fp_hat = reduced_phase_eval(layer, wi, wo)
        lam_i = sig_i[k] / ci
        if refl.any():
            g = _g_reflect(layer.thickness, lam_i[refl], sig_o[k][refl] / co[refl])
            w_in = np.exp(-pre_i[k][refl])
            w_out = np.exp(-pre_o[k][refl])
            out[refl] += fp_hat[refl] * (g * w_in * w_out / (ci[refl] * co[refl]))[:, None]
        if t_mask.any() and stack.substrate is None and not layer.semi_infinite:
            g = _g_transmit(layer.thickness, lam_i[t_mask], sig_o[k][t_mask] / co_signed[t_mask])
            w_in = np.exp(-pre_i[k][t_mask])
            w_out = np.exp(-suf_o[k + 1][t_mask])
            out[t_mask] += fp_hat[t_mask] * (g * w_in * w_out / (ci[t_mask] * co[t_mask]))[:, None]

    if stack.substrate is not None and refl.any():
        through = np.exp(-pre_i[nl][refl]) * np.exp(-pre_o[nl][refl])
        out[refl] += (stack.substrate.albedo / np.pi) * through[:, None]
    return out


def eval_stack_single_many(stack: LayerStack, wi: np.ndarray, wo: np.ndarray) -> np.ndarray:
    """Analytic single-scattering BSDF for n direction pairs; (n, 3) result.
    The delta component is never part of this value."""
    wi = np.atleast_2d(np.asarray(wi, dtype=np.float64))
    wo = np.atleast_2d(np.asarray(wo, dtype=np.float64))
    if wi.shape != wo.shape or wi.shape[-1] != 3:
        raise ParameterError(f"direction arrays must match with shape (n, 3), got {wi.shape} / {wo.shape}")
    out = np.zeros_like(wi)
    below = wi[:, 2] < 0.0
    if below.any():
        # seen from below: mirror the frame and the stack
        m = mirror_stack(stack)
        fwi, fwo = wi[below].copy(), wo[below].copy()
        fwi[:, 2] = -fwi[:, 2]
        fwo[:, 2] = -fwo[:, 2]
        res = _eval_canonical(m, fwi, fwo)
        if stack.substrate is not None:
            # an opaque substrate blocks transmission from either side; for
            # both-below reflection it has no meaning upside down and is dropped
            trans = fwo[:, 2] < 0.0
            res[trans] = 0.0
            if (~trans).any():
                warnings.warn(
                    "substrate ignored for incidence from below the horizon",
                    RuntimeWarning,
                    stacklevel=2,
                )
        out[below] = res
    above = ~below
    if above.any():
        out[above] = _eval_canonical(stack, wi[above], wo[above])
    return out


def eval_stack_single(stack: LayerStack, wi: np.ndarray, wo: np.ndarray) -> np.ndarray:
    """Analytic single-scattering BSDF value (Spectrum) for one pair."""
    return eval_stack_single_many(stack, np.asarray(wi)[None, :], np.asarray(wo)[None, :])[0]


def eval_stack_single_grid(
    stack: LayerStack, wi_dirs: np.ndarray, wo_dirs: np.ndarray, chunk: int = 1_000_000
) -> np.ndarray:
    """eval_stack_single over the outer product of direction sets, shape
    (n_wi, n_wo, 3); chunked to bound memory."""
    wi_dirs = np.atleast_2d(np.asarray(wi_dirs, dtype=np.float64))
    wo_dirs = np.atleast_2d(np.asarray(wo_dirs, dtype=np.float64))
    n, m = len(wi_dirs), len(wo_dirs)
    out = np.empty((n, m, 3))
    rows = max(1, chunk // m)
    for start in range(0, n, rows):
        stop = min(start + rows, n)
        wi = np.repeat(wi_dirs[start:stop], m, axis=0)
        wo = np.tile(wo_dirs, (stop - start, 1))
        out[start:stop] = eval_stack_single_many(stack, wi, wo).reshape(stop - start, m, 3)
    return out
