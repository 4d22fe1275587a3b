"""Direct-lighting test renderer for sampler/evaluator consistency.

Fixed scene: a unit sphere at (0, 0, 1) carrying the layer-stack material,
over a lambertian ground plane (albedo 0.45) at z = 0, lit by one downward
rectangular area light (4.8 x 4.8 at z = 3.4 centered over (0.8, -0.4),
white emission 2.5 with a smoothstep falloff to zero over the outer 0.55 of
each edge). The light is large and hangs over the camera-visible side of
the scene — it subtends a steradian or more from the visible shading
points — so BSDF-sampled rays hit it often, and the soft edge makes every
strategy's contribution continuous in sample space, which lets stratified
sampling converge fast; it stays outside the camera frame. The camera sits
at (0, -5.2, 1.9) looking at the sphere center with a 32 degree vertical
field of view.

Three estimators of the same direct-lighting integral are provided: area
sampling of the light, BSDF sampling, and their balance-heuristic
combination. The sphere material is the analytic single-scattering model —
exactly the quantity the stack sampler importance-samples — so all three
must converge to the same image; systematic disagreement indicates an
eval/pdf/sample inconsistency. Delta transmission and transmitted lobes
point into the sphere body and contribute zero identically in every
strategy.

Pixel jitters come from a stream that does not depend on the strategy, so
renders with equal (seed, spp) share primary hit points and geometric edge
noise cancels out of strategy comparisons. When spp is a perfect square the
2D sampling decisions (light point, phase-function uniforms) are
jittered-stratified over the spp iterations, which tightens per-pixel
variance at no cost. The pixel jitter itself stays plain-random: pairing a
stratified pixel position with an equal-index stratified shading decision
samples only the diagonal of the product space and biases pixels whose
footprint couples with the decision domain, while an iid pixel sample keeps
every pairing unbiased.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError
from .geometry import cosine_sample_hemisphere, from_frame, normalize, orthonormal_basis
from .layers import LayerStack
from .sampling import pdf_stack_many, sample_stack_many
from .single_scatter import eval_stack_single_many

SPHERE_CENTER = np.array([0.0, 0.0, 1.0])
SPHERE_RADIUS = 1.0
PLANE_ALBEDO = 0.45
LIGHT_CENTER = np.array([0.8, -0.4, 3.4])
LIGHT_HALF = 2.4
LIGHT_AREA = (2.0 * LIGHT_HALF) ** 2
LIGHT_EMISSION = np.array([2.5, 2.5, 2.5])
LIGHT_EDGE = 0.55  # emission ramps smoothly to zero over this width at each edge
CAMERA_EYE = np.array([0.0, -5.2, 1.9])
CAMERA_TARGET = np.array([0.0, 0.0, 1.0])
CAMERA_FOV_DEG = 32.0

STRATEGIES = ("bsdf", "light", "mis")

_EPS = 1e-4
_HIT_NONE, _HIT_SPHERE, _HIT_PLANE, _HIT_LIGHT = 0, 1, 2, 3


def _sphere_t(o: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Nearest sphere intersection distance > eps, inf when missed."""
    oc = o - SPHERE_CENTER
    b = np.sum(oc * d, axis=-1)
    c = np.sum(oc * oc, axis=-1) - SPHERE_RADIUS**2
    disc = b * b - c
    ok = disc > 0.0
    root = np.sqrt(np.where(ok, disc, 0.0))
    t_near = -b - root
    t_far = -b + root
    t = np.where(t_near > _EPS, t_near, t_far)
    return np.where(ok & (t > _EPS), t, np.inf)


def _plane_t(o: np.ndarray, d: np.ndarray) -> np.ndarray:
    dz = d[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = -o[:, 2] / dz
    return np.where((np.abs(dz) > 1e-12) & (t > _EPS), t, np.inf)


def _light_t(o: np.ndarray, d: np.ndarray) -> np.ndarray:
    dz = d[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (LIGHT_CENTER[2] - o[:, 2]) / dz
    p = o + t[:, None] * d
    inside = (np.abs(p[:, 0] - LIGHT_CENTER[0]) <= LIGHT_HALF) & (
        np.abs(p[:, 1] - LIGHT_CENTER[1]) <= LIGHT_HALF
    )
    return np.where((np.abs(dz) > 1e-12) & (t > _EPS) & inside, t, np.inf)


def _intersect(o: np.ndarray, d: np.ndarray):
    ts = np.stack([_sphere_t(o, d), _plane_t(o, d), _light_t(o, d)], axis=0)
    best = np.argmin(ts, axis=0)
    t = ts[best, np.arange(ts.shape[1])]
    hit = np.where(np.isinf(t), _HIT_NONE, best + 1)
    return t, hit


def _emission(y: np.ndarray) -> np.ndarray:
    """Emitted radiance at points y on the light plane; zero at the rect
    boundary so BSDF-sampled contributions are continuous in sample space."""
    u = (LIGHT_HALF - np.abs(y[:, 0] - LIGHT_CENTER[0])) / LIGHT_EDGE
    v = (LIGHT_HALF - np.abs(y[:, 1] - LIGHT_CENTER[1])) / LIGHT_EDGE
    t = np.clip(u, 0.0, 1.0)
    s = t * t * (3.0 - 2.0 * t)
    t = np.clip(v, 0.0, 1.0)
    s = s * (t * t * (3.0 - 2.0 * t))
    return LIGHT_EMISSION * s[:, None]


def _light_pdf_sw(x: np.ndarray, wo: np.ndarray, t_light: np.ndarray) -> np.ndarray:
    """Solid-angle density of area sampling for the light point at t_light
    along wo; 0 where the ray misses the light."""
    cos_l = wo[:, 2]  # dot(-wo, light normal -z)
    ok = np.isfinite(t_light) & (cos_l > 1e-9)
    pdf = np.zeros(wo.shape[0])
    pdf[ok] = t_light[ok] ** 2 / (cos_l[ok] * LIGHT_AREA)
    return pdf


def _camera_rays(width: int, height: int, jx: np.ndarray, jy: np.ndarray) -> np.ndarray:
    fwd = normalize(CAMERA_TARGET - CAMERA_EYE)
    right = normalize(np.cross(fwd, np.array([0.0, 0.0, 1.0])))
    up = np.cross(right, fwd)
    tan_half = np.tan(np.radians(CAMERA_FOV_DEG) / 2.0)
    aspect = width / height
    px, py = np.meshgrid(np.arange(width), np.arange(height))
    sx = ((px.ravel() + jx) / width * 2.0 - 1.0) * tan_half * aspect
    sy = (1.0 - (py.ravel() + jy) / height * 2.0) * tan_half
    return normalize(fwd + sx[:, None] * right + sy[:, None] * up)


def _visible(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """True when the open segment x -> y clears the sphere (the only
    occluder between shading points and the light)."""
    d = y - x
    dist = np.linalg.norm(d, axis=-1)
    wo = d / dist[:, None]
    t = _sphere_t(x, wo)
    return t >= dist * (1.0 - 1e-6)


def _light_point(u: np.ndarray) -> np.ndarray:
    p = np.empty((u.shape[0], 3))
    p[:, 0] = LIGHT_CENTER[0] + (u[:, 0] * 2.0 - 1.0) * LIGHT_HALF
    p[:, 1] = LIGHT_CENTER[1] + (u[:, 1] * 2.0 - 1.0) * LIGHT_HALF
    p[:, 2] = LIGHT_CENTER[2]
    return p


def _shade(stack, x, n, wi_world, strategy, rng, is_sphere, u_light, u_phase):
    """Direct radiance estimate at points x with shading normals n; u_light
    (m, 2) picks the light point, u_phase (m, 2) feeds the BSDF sampler."""
    m = x.shape[0]
    tang, bitang = orthonormal_basis(n)

    def to_local(w):
        return np.stack(
            [np.sum(w * tang, -1), np.sum(w * bitang, -1), np.sum(w * n, -1)], axis=-1
        )

    wi_local = to_local(wi_world)
    out = np.zeros((m, 3))

    def eval_f(wo_local):
        if is_sphere:
            return eval_stack_single_many(stack, wi_local, wo_local)
        return np.where(wo_local[:, 2:] > 0.0, PLANE_ALBEDO / np.pi, 0.0) * np.ones((1, 3))

    if strategy in ("light", "mis"):
        y = _light_point(u_light)
        seg = y - x
        dist = np.linalg.norm(seg, axis=-1)
        wo_world = seg / dist[:, None]
        wo_local = to_local(wo_world)
        pl = dist**2 / (np.maximum(wo_world[:, 2], 1e-9) * LIGHT_AREA)
        lit = (wo_world[:, 2] > 1e-9) & _visible(x, y)
        f = eval_f(wo_local)
        cos_s = np.abs(wo_local[:, 2])
        mis_w = np.ones(m)
        if strategy == "mis":
            if is_sphere:
                pb = pdf_stack_many(stack, wi_local, wo_local)
            else:
                pb = np.maximum(wo_local[:, 2], 0.0) / np.pi
            mis_w = pl / np.maximum(pl + pb, 1e-300)
        contrib = f * (cos_s * mis_w / pl)[:, None] * _emission(y)
        out += np.where(lit[:, None], contrib, 0.0)

    if strategy in ("bsdf", "mis"):
        if is_sphere:
            uniforms = (rng.random(m), u_phase[:, 0], u_phase[:, 1])
            wo_local, weight, pb, _event = sample_stack_many(stack, wi_local, rng, uniforms)
        else:
            wo_local = cosine_sample_hemisphere(u_phase[:, 0], u_phase[:, 1])
            pb = np.maximum(wo_local[:, 2], 1e-12) / np.pi
            weight = np.full((m, 3), PLANE_ALBEDO / np.pi) / pb[:, None]
        wo_world = from_frame(tang, bitang, n, wo_local)
        t, hit = _intersect(x, wo_world)
        reaches = hit == _HIT_LIGHT
        cos_s = np.abs(wo_local[:, 2])
        mis_w = np.ones(m)
        if strategy == "mis":
            pl_b = _light_pdf_sw(x, wo_world, np.where(reaches, t, np.inf))
            mis_w = pb / np.maximum(pb + pl_b, 1e-300)
        y = x + np.where(np.isfinite(t), t, 0.0)[:, None] * wo_world
        contrib = weight * (cos_s * mis_w)[:, None] * _emission(y)
        out += np.where(reaches[:, None], contrib, 0.0)

    return out


def render(
    stack: LayerStack,
    strategy: str,
    width: int = 64,
    height: int = 64,
    spp: int = 64,
    seed: int = 0,
) -> np.ndarray:
    """Render the fixed scene; returns a (height, width, 3) radiance image."""
    if strategy not in STRATEGIES:
        raise ParameterError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")
    rng_pix = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 9001])))
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 9002])))
    sq = int(np.sqrt(spp) + 0.5)
    sq = sq if sq * sq == spp else 0  # stratify only for perfect-square spp
    n_pix = width * height
    acc = np.zeros((n_pix, 3))
    for s in range(spp):
        if sq:
            cell = np.array([s % sq, s // sq])

            def strat(u2d, cell=cell):
                return (cell + u2d) / sq

        else:

            def strat(u2d):
                return u2d

        jit = rng_pix.random((n_pix, 2))
        d = _camera_rays(width, height, jit[:, 0], jit[:, 1])
        o = np.broadcast_to(CAMERA_EYE, d.shape)
        t, hit = _intersect(o, d)
        sample = np.zeros((n_pix, 3))
        lit = (hit == _HIT_LIGHT) & (d[:, 2] > 0.0)
        if np.any(lit):
            y = o[lit] + t[lit, None] * d[lit]
            sample[lit] = _emission(y)
        u_light = strat(rng.random((n_pix, 2)))
        u_phase = strat(rng.random((n_pix, 2)))
        sph = np.flatnonzero(hit == _HIT_SPHERE)
        if sph.size:
            x = o[sph] + t[sph, None] * d[sph]
            n = normalize(x - SPHERE_CENTER)
            front = np.sum(-d[sph] * n, axis=-1) > 1e-9  # drop tangent grazers
            sph, x, n = sph[front], x[front], n[front]
            if sph.size:
                sample[sph] = _shade(
                    stack, x, n, -d[sph], strategy, rng, True, u_light[sph], u_phase[sph]
                )
        pln = np.flatnonzero(hit == _HIT_PLANE)
        if pln.size:
            x = o[pln] + t[pln, None] * d[pln]
            n = np.broadcast_to(np.array([0.0, 0.0, 1.0]), (pln.size, 3))
            sample[pln] = _shade(
                stack, x, n, -d[pln], strategy, rng, False, u_light[pln], u_phase[pln]
            )
        acc += sample
    return (acc / spp).reshape(height, width, 3)
