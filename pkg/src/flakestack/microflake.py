"""SGGX microflake distribution and phase functions.

The flake distribution is encoded by a symmetric positive-definite 3x3 matrix
S whose eigenvalues are the squared half-axes of an ellipsoid:

    D(w)     = 1 / (pi * sqrt(det S) * (w^T S^-1 w)^2)
    sigma(w) = sqrt(w^T S w)          (projected flake area per unit volume)

sigma doubles as the directional extinction cross-section, so a layer's
optical depth along w over vertical distance dz is sigma(w) * dz / |cos w|.
D is not a unit-mass density (its sphere integral depends on S); the
normalization that transport relies on is the projected-area identity
sigma(w) = integral D(m) <w,m> dm and unit phase-function mass, both of
which hold for this scaling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

# Below this, |cos| in Lambda is clamped (sign kept): grazing directions stay
# finite instead of erroring; the region is documented as high-variance.
GRAZING_COS_EPS = 1e-7

_DET_GUARD = 1e-12

FIBER = "fiber"
SURFACE = "surface"


@dataclass(frozen=True)
class SggxMatrix:
    s: np.ndarray  # (3, 3) symmetric positive-definite
    inv: np.ndarray  # cached S^-1 (adjugate / det)
    sqrt_det: float  # cached sqrt(det S)


def _adjugate_inverse(s: np.ndarray) -> tuple[np.ndarray, float]:
    a, b, c = s[0, 0], s[0, 1], s[0, 2]
    d, e = s[1, 1], s[1, 2]
    f = s[2, 2]
    cof = np.array(
        [
            [d * f - e * e, c * e - b * f, b * e - c * d],
            [c * e - b * f, a * f - c * c, b * c - a * e],
            [b * e - c * d, b * c - a * e, a * d - b * b],
        ]
    )
    det = a * cof[0, 0] + b * cof[0, 1] + c * cof[0, 2]
    if det < _DET_GUARD:
        raise ParameterError(f"flake matrix is degenerate: det = {det:g}")
    return cof / det, float(det)


def sggx_from_matrix(s: np.ndarray) -> SggxMatrix:
    """Wrap a raw matrix; rejects asymmetric or non-positive-definite input."""
    s = np.asarray(s, dtype=np.float64)
    if s.shape != (3, 3):
        raise ParameterError(f"flake matrix must be 3x3, got {s.shape}")
    if not np.all(np.isfinite(s)):
        raise ParameterError("flake matrix has non-finite entries")
    scale = max(np.abs(s).max(), 1.0)
    if np.abs(s - s.T).max() > 1e-9 * scale:
        raise ParameterError("flake matrix is not symmetric")
    s = 0.5 * (s + s.T)
    if np.linalg.eigvalsh(s).min() <= 0.0:
        raise ParameterError("flake matrix is not positive-definite")
    inv, det = _adjugate_inverse(s)
    return SggxMatrix(s=s, inv=inv, sqrt_det=float(np.sqrt(det)))


def sggx_matrix(kind: str, alpha: float, orientation: np.ndarray) -> SggxMatrix:
    """Build S for a fiber (axes 1,1,alpha^2) or surface (alpha^2,alpha^2,1)
    flake aligned with `orientation`. alpha in (0, 1]."""
    if not (0.0 < alpha <= 1.0):
        raise ParameterError(f"roughness must be in (0, 1], got {alpha}")
    w = np.asarray(orientation, dtype=np.float64)
    if abs(np.linalg.norm(w) - 1.0) > 1e-6:
        raise ParameterError(f"orientation must be unit length, got {w}")
    outer = np.outer(w, w)
    if kind == FIBER:
        s = np.eye(3) - (1.0 - alpha**2) * outer
    elif kind == SURFACE:
        s = alpha**2 * np.eye(3) + (1.0 - alpha**2) * outer
    else:
        raise ParameterError(f"unknown flake kind: {kind!r}")
    return sggx_from_matrix(s)


def sggx_ndf(s: SggxMatrix, w: np.ndarray) -> np.ndarray:
    """Flake normal density D(w); supports batched directions (..., 3)."""
    w = np.asarray(w, dtype=np.float64)
    q = np.einsum("...i,ij,...j->...", w, s.inv, w)
    return 1.0 / (np.pi * s.sqrt_det * q * q)


def projected_area(s: SggxMatrix, w: np.ndarray) -> np.ndarray:
    """sigma(w) = sqrt(w^T S w); symmetric in w -> -w."""
    w = np.asarray(w, dtype=np.float64)
    return np.sqrt(np.einsum("...i,ij,...j->...", w, s.s, w))


def clamped_cos(w: np.ndarray) -> np.ndarray:
    """z-component with |cos| clamped away from zero, sign preserved."""
    c = np.asarray(w, dtype=np.float64)[..., 2]
    return np.where(c >= 0.0, np.maximum(c, GRAZING_COS_EPS), np.minimum(c, -GRAZING_COS_EPS))


def lambda_fn(s: SggxMatrix, w: np.ndarray) -> np.ndarray:
    """Lambda(w) = sigma(w) / cos w: optical depth per unit vertical optical
    thickness. Positive above the horizon, negative below."""
    return projected_area(s, w) / clamped_cos(w)


def _any_perpendicular(w: np.ndarray) -> np.ndarray:
    """A unit vector orthogonal to w, chosen via the axis least aligned
    with w so the construction never degenerates."""
    axis = np.where(
        np.abs(w[..., 2:3]) < 0.9, np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0])
    )
    p = np.cross(w, axis)
    return p / np.linalg.norm(p, axis=-1, keepdims=True)


def flake_phase_eval(s: SggxMatrix, wi: np.ndarray, wo: np.ndarray) -> np.ndarray:
    """Specular microflake phase function D(h) / (4 sigma(wi)) with
    h = normalize(wi + wo). Integrates to 1 over outgoing directions.

    At the degenerate configuration wo = -wi the half-vector limit lies in
    the plane orthogonal to wi; the value returned is the limit along a
    fixed axis-aligned approach (exact for isotropic flakes, a convention
    for anisotropic ones, where the limit depends on the approach azimuth)."""
    wi = np.asarray(wi, dtype=np.float64)
    wo = np.asarray(wo, dtype=np.float64)
    hv = wi + wo
    n = np.linalg.norm(hv, axis=-1)
    degenerate = n < 1e-9
    safe = np.where(degenerate[..., None], 1.0, n[..., None])
    h = hv / safe
    if np.any(degenerate):
        perp = _any_perpendicular(np.broadcast_to(wi, h.shape))
        h = np.where(degenerate[..., None], perp, h)
    return sggx_ndf(s, h) / (4.0 * projected_area(s, wi))


def hg_phase_eval(g: float, wi: np.ndarray, wo: np.ndarray) -> np.ndarray:
    """Henyey-Greenstein density of the angle between the propagation
    direction -wi and the scattered direction wo; g in (-1, 1)."""
    wi = np.asarray(wi, dtype=np.float64)
    wo = np.asarray(wo, dtype=np.float64)
    mu = -np.sum(wi * wo, axis=-1)
    denom = 1.0 + g * g - 2.0 * g * mu
    return (1.0 - g * g) / (4.0 * np.pi * np.maximum(denom, 1e-12) ** 1.5)


def schlick(f0: np.ndarray, cos_theta) -> np.ndarray:
    """Fresnel approximation f0 + (1 - f0)(1 - cos)^5, per channel.
    Batched cos_theta broadcasts against the trailing channel axis."""
    f0 = np.asarray(f0, dtype=np.float64)
    c = np.clip(np.asarray(cos_theta, dtype=np.float64), 0.0, 1.0)
    return f0 + (1.0 - f0) * (1.0 - c[..., None]) ** 5
