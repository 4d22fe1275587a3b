"""Importance sampling of the single-scattering model.

A sample first picks an event from the discrete distribution over
{first interaction in layer k, substrate bounce, delta transmission}: the
probability that a ray along wi first scatters in layer k is

    p_k = exp(-sum_{j<k} T_j sigma_j(wi)/cos) * (1 - exp(-T_k sigma_k(wi)/cos))

and the leftover straight-through mass goes to the substrate when present,
else to the delta component when enabled, else is renormalized away. Scatter
events draw the layer's phase function exactly (visible-normal sampling for
flakes, inverse-CDF for hg), so the per-steradian pdf of the union is

    pdf(wo) = sum_k p_k fp_k(wi -> wo) [+ p_substrate cos(wo)/pi above]

and sample weights are eval_stack_single / pdf (cosine excluded).

Uniform consumption order per sample: one variate for the event choice, then
(u1, u2) for the direction; delta consumes only the event variate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, StreamExhausted
from .geometry import cosine_sample_hemisphere, from_frame, normalize, orthonormal_basis
from .layers import HG, LayerStack, layer_phase, layer_sigma, mirror_stack
from .microflake import SggxMatrix, clamped_cos
from .single_scatter import delta_transmittance, eval_stack_single_many


class UniformSource:
    """Opaque stream of uniforms in [0, 1); deterministic under a fixed seed."""

    def __init__(self, generator: np.random.Generator):
        self._rng = generator

    @classmethod
    def from_seed(cls, seed: int) -> "UniformSource":
        return cls(np.random.Generator(np.random.Philox(seed)))

    def uniform(self) -> float:
        return float(self._rng.random())

    def uniforms(self, n: int) -> np.ndarray:
        return self._rng.random(n)


class SequenceSource:
    """Finite test source; raises StreamExhausted when drained."""

    def __init__(self, values):
        self._values = [float(v) for v in values]
        self._pos = 0

    def uniform(self) -> float:
        if self._pos >= len(self._values):
            raise StreamExhausted("uniform source is exhausted")
        self._pos += 1
        return self._values[self._pos - 1]

    def uniforms(self, n: int) -> np.ndarray:
        return np.array([self.uniform() for _ in range(n)])


@dataclass(frozen=True)
class EventProbabilities:
    scatter: np.ndarray  # (n_layers,)
    substrate: float
    delta: float

    @property
    def total(self) -> float:
        return float(self.scatter.sum() + self.substrate + self.delta)


def _probabilities_many(stack: LayerStack, wi: np.ndarray):
    """Vectorized event probabilities; wi (n, 3), all above the horizon.
    Returns (scatter (L, n), substrate (n,), delta (n,))."""
    ci = clamped_cos(wi)
    depths = np.stack([layer.thickness * layer_sigma(layer, wi) / ci for layer in stack.layers])
    pre = np.vstack([np.zeros((1, len(ci))), np.cumsum(depths, axis=0)])
    outer = np.exp(-pre)  # survival to the top of each layer
    scatter = outer[:-1] - outer[1:]
    residual = outer[-1]
    n = wi.shape[0]
    if stack.substrate is not None:
        return scatter, residual, np.zeros(n)
    if stack.include_delta:
        return scatter, np.zeros(n), residual
    mass = 1.0 - residual
    # all layers optically thin: renormalization degenerates to depth ratios
    tiny = mass < 1e-12
    safe = np.where(tiny, 1.0, mass)
    scatter = scatter / safe
    if tiny.any():
        ratios = depths / depths.sum(axis=0)
        scatter = np.where(tiny, ratios, scatter)
    return scatter, np.zeros(n), np.zeros(n)


def layer_probabilities(stack: LayerStack, wi: np.ndarray) -> EventProbabilities:
    """Discrete event distribution for one incident direction (wi above the
    horizon). Probabilities sum to 1."""
    wi = np.asarray(wi, dtype=np.float64)
    if wi[2] <= 0.0:
        raise ParameterError("layer_probabilities requires wi above the horizon")
    scatter, substrate, delta = _probabilities_many(stack, wi[None, :])
    return EventProbabilities(scatter=scatter[:, 0], substrate=float(substrate[0]), delta=float(delta[0]))


def sample_flake_normal(s: SggxMatrix, wi: np.ndarray, u1, u2) -> np.ndarray:
    """Draw flake normals from the visible-normal density D(m)<wi,m>/sigma(wi).

    Projects S into an orthonormal frame around wi, factors the projected
    quadratic form into a lower-triangular map, pushes a uniform point on the
    upper unit-hemisphere disk through it, and normalizes."""
    wi = np.atleast_2d(np.asarray(wi, dtype=np.float64))
    u1 = np.atleast_1d(np.asarray(u1, dtype=np.float64))
    u2 = np.atleast_1d(np.asarray(u2, dtype=np.float64))
    m_mat = s.s
    for attempt in range(2):
        t, b = orthonormal_basis(wi)
        skk = np.einsum("ni,ij,nj->n", t, m_mat, t)
        skj = np.einsum("ni,ij,nj->n", t, m_mat, b)
        ski = np.einsum("ni,ij,nj->n", t, m_mat, wi)
        sjj = np.einsum("ni,ij,nj->n", b, m_mat, b)
        sji = np.einsum("ni,ij,nj->n", b, m_mat, wi)
        sii = np.einsum("ni,ij,nj->n", wi, m_mat, wi)
        det = (
            skk * sjj * sii
            - skj * skj * sii
            - ski * ski * sjj
            - sji * sji * skk
            + 2.0 * skj * ski * sji
        )
        tmp2 = sjj * sii - sji * sji
        bad = (det <= 1e-12) | (tmp2 <= 1e-12) | (sii <= 1e-12)
        if not bad.any():
            break
        if attempt == 1:
            raise ParameterError("degenerate projected flake matrix")
        # degenerate projection: perturb the frame and retry once
        wi = normalize(wi + np.where(bad[:, None], 1e-6, 0.0) * t)
    tmp = np.sqrt(tmp2)
    inv_ii = 1.0 / np.sqrt(sii)
    r = np.sqrt(u1)
    phi = 2.0 * np.pi * u2
    pu = r * np.cos(phi)
    pv = r * np.sin(phi)
    pw = np.sqrt(np.clip(1.0 - u1, 0.0, 1.0))
    # columns of the lower-triangular factor of the projected form (k, j, i)
    mx = pu * (np.sqrt(det) / tmp) - pv * (inv_ii * (ski * sji - skj * sii) / tmp) + pw * (inv_ii * ski)
    my = pv * (inv_ii * tmp) + pw * (inv_ii * sji)
    mz = pw * (inv_ii * sii)
    local = normalize(np.stack([mx, my, mz], axis=-1))
    return from_frame(t, b, wi, local)


def sample_flake_phase(s: SggxMatrix, wi: np.ndarray, u1, u2) -> np.ndarray:
    """Sample the flake phase function: mirror -wi about a visible normal.
    The resulting pdf is exactly flake_phase_eval(s, wi, wo)."""
    wi = np.atleast_2d(np.asarray(wi, dtype=np.float64))
    m = sample_flake_normal(s, wi, u1, u2)
    dot = np.sum(wi * m, axis=-1, keepdims=True)
    return 2.0 * dot * m - wi


def sample_hg_phase(g: float, wi: np.ndarray, u1, u2) -> np.ndarray:
    """Inverse-CDF sample of the hg phase function around the propagation
    direction -wi; pdf equals hg_phase_eval(g, wi, wo)."""
    wi = np.atleast_2d(np.asarray(wi, dtype=np.float64))
    u1 = np.atleast_1d(np.asarray(u1, dtype=np.float64))
    u2 = np.atleast_1d(np.asarray(u2, dtype=np.float64))
    if abs(g) < 1e-6:
        mu = 1.0 - 2.0 * u1
    else:
        s = (1.0 - g * g) / (1.0 - g + 2.0 * g * u1)
        mu = (1.0 + g * g - s * s) / (2.0 * g)
    mu = np.clip(mu, -1.0, 1.0)
    d = -wi
    t, b = orthonormal_basis(d)
    sin_theta = np.sqrt(np.clip(1.0 - mu * mu, 0.0, 1.0))
    phi = 2.0 * np.pi * u2
    local = np.stack([sin_theta * np.cos(phi), sin_theta * np.sin(phi), mu], axis=-1)
    return from_frame(t, b, d, local)


def _pdf_canonical(stack: LayerStack, wi: np.ndarray, wo: np.ndarray) -> np.ndarray:
    scatter, substrate, _delta = _probabilities_many(stack, wi)
    pdf = np.zeros(wi.shape[0])
    for k, layer in enumerate(stack.layers):
        pdf += scatter[k] * layer_phase(layer, wi, wo)
    if stack.substrate is not None:
        pdf += substrate * np.maximum(wo[:, 2], 0.0) / np.pi
    return pdf


def pdf_stack_many(stack: LayerStack, wi: np.ndarray, wo: np.ndarray) -> np.ndarray:
    """Per-steradian sampling density for n pairs; excludes the delta mass, so
    its sphere integral is 1 - p(delta)."""
    wi = np.atleast_2d(np.asarray(wi, dtype=np.float64))
    wo = np.atleast_2d(np.asarray(wo, dtype=np.float64))
    out = np.zeros(wi.shape[0])
    below = wi[:, 2] < 0.0
    if below.any():
        m = mirror_stack(stack)
        fwi, fwo = wi[below].copy(), wo[below].copy()
        fwi[:, 2] = -fwi[:, 2]
        fwo[:, 2] = -fwo[:, 2]
        out[below] = _pdf_canonical(m, fwi, fwo)
    above = ~below
    if above.any():
        out[above] = _pdf_canonical(stack, wi[above], wo[above])
    return out


def pdf_stack(stack: LayerStack, wi: np.ndarray, wo: np.ndarray):
    """pdf_stack_many for a single wi; wo may be one direction or a batch."""
    wi = np.asarray(wi, dtype=np.float64)
    wo = np.asarray(wo, dtype=np.float64)
    single = wo.ndim == 1
    wo = np.atleast_2d(wo)
    res = pdf_stack_many(stack, np.broadcast_to(wi, wo.shape), wo)
    return float(res[0]) if single else res


@dataclass(frozen=True)
class SampleRecord:
    wo: np.ndarray
    pdf: float  # per-steradian density; for delta events the discrete mass
    weight: np.ndarray  # BSDF / pdf, cosine excluded; delta: throughput / mass
    event: str  # 'scatter' | 'substrate' | 'delta'
    layer: int | None = None


EVENT_SUBSTRATE = -2
EVENT_DELTA = -1


def sample_stack_many(stack: LayerStack, wi: np.ndarray, rng: np.random.Generator, uniforms=None):
    """Vectorized sampling; wi (n, 3) all above the horizon. Returns
    (wo (n,3), weight (n,3), pdf (n,), event (n,) int) with event >= 0 the
    scattering layer index, -1 delta, -2 substrate. `uniforms` may supply the
    (u_event, u1, u2) arrays (e.g. stratified sets); rng fills in otherwise."""
    wi = np.atleast_2d(np.asarray(wi, dtype=np.float64))
    n = wi.shape[0]
    if np.any(wi[:, 2] <= 0.0):
        raise ParameterError("sample_stack_many requires wi above the horizon")
    scatter, substrate, delta = _probabilities_many(stack, wi)
    nl = len(stack.layers)
    cum = np.cumsum(np.vstack([scatter, substrate[None, :], delta[None, :]]), axis=0)
    if uniforms is None:
        u_event, u1, u2 = rng.random(n), rng.random(n), rng.random(n)
    else:
        u_event, u1, u2 = (np.asarray(u, dtype=np.float64) for u in uniforms)
    u_event = u_event * cum[-1]  # scale so roundoff cannot overshoot the table
    choice = np.sum(u_event[None, :] >= cum, axis=0)  # 0..L-1 scatter, L substrate, L+1 delta
    choice = np.minimum(choice, nl + 1)

    wo = np.zeros((n, 3))
    event = np.empty(n, dtype=np.int64)
    for k, layer in enumerate(stack.layers):
        sel = choice == k
        if not sel.any():
            continue
        if layer.kind == HG:
            wo[sel] = sample_hg_phase(layer.roughness, wi[sel], u1[sel], u2[sel])
        else:
            wo[sel] = sample_flake_phase(layer.sggx, wi[sel], u1[sel], u2[sel])
        event[sel] = k
    sub_sel = choice == nl
    if sub_sel.any():
        wo[sub_sel] = cosine_sample_hemisphere(u1[sub_sel], u2[sub_sel])
        event[sub_sel] = EVENT_SUBSTRATE
    delta_sel = choice == nl + 1
    if delta_sel.any():
        wo[delta_sel] = -wi[delta_sel]
        event[delta_sel] = EVENT_DELTA

    weight = np.zeros((n, 3))
    pdf = np.zeros(n)
    cont = event != EVENT_DELTA
    if cont.any():
        pdf[cont] = pdf_stack_many(stack, wi[cont], wo[cont])
        vals = eval_stack_single_many(stack, wi[cont], wo[cont])
        weight[cont] = vals / np.maximum(pdf[cont], 1e-300)[:, None]
    if delta_sel.any():
        pdf[delta_sel] = delta[delta_sel]
        weight[delta_sel] = delta_transmittance(stack, wi[delta_sel]) / np.maximum(
            delta[delta_sel], 1e-300
        )[:, None]
    return wo, weight, pdf, event


def sample_stack(stack: LayerStack, wi: np.ndarray, source) -> SampleRecord:
    """Draw one sample. Consumes one uniform for the event choice, then
    (u1, u2) for the direction (delta events consume only the first)."""
    wi = np.asarray(wi, dtype=np.float64)
    if wi[2] < 0.0:
        flipped = wi.copy()
        flipped[2] = -flipped[2]
        rec = sample_stack(mirror_stack(stack), flipped, source)
        wo = rec.wo.copy()
        wo[2] = -wo[2]
        layer = None if rec.layer is None else len(stack.layers) - 1 - rec.layer
        return SampleRecord(wo=wo, pdf=rec.pdf, weight=rec.weight, event=rec.event, layer=layer)

    probs = layer_probabilities(stack, wi)
    nl = len(stack.layers)
    cum = np.cumsum(np.concatenate([probs.scatter, [probs.substrate, probs.delta]]))
    u = source.uniform() * cum[-1]
    choice = int(np.searchsorted(cum, u, side="right"))
    choice = min(choice, nl + 1)

    if choice == nl + 1:  # delta
        wo = -wi
        weight = delta_transmittance(stack, wi) / max(probs.delta, 1e-300)
        return SampleRecord(wo=wo, pdf=probs.delta, weight=weight, event="delta")

    u1, u2 = source.uniform(), source.uniform()
    if choice == nl:  # substrate
        wo = cosine_sample_hemisphere(u1, u2)
        event, layer_idx = "substrate", None
    else:
        layer = stack.layers[choice]
        if layer.kind == HG:
            wo = sample_hg_phase(layer.roughness, wi, u1, u2)[0]
        else:
            wo = sample_flake_phase(layer.sggx, wi, u1, u2)[0]
        event, layer_idx = "scatter", choice
    pdf = pdf_stack(stack, wi, wo)
    val = eval_stack_single_many(stack, wi[None, :], wo[None, :])[0]
    weight = val / max(pdf, 1e-300)
    return SampleRecord(wo=wo, pdf=pdf, weight=weight, event=event, layer=layer_idx)
