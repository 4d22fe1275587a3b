"""Small direction/vector helpers. Directions are float64 arrays of shape
(..., 3), unit length, pointing away from the surface; +z is the geometric
normal of the top interface."""

from __future__ import annotations

import numpy as np

from .errors import ParameterError


def normalize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / n


def unit_vector(x, y, z) -> np.ndarray:
    """Validated unit direction; rejects non-finite or zero-length input."""
    v = np.array([x, y, z], dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ParameterError(f"direction has non-finite components: {v}")
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise ParameterError("direction has zero length")
    return v / n


def spectrum(r, g=None, b=None) -> np.ndarray:
    """RGB triple as float64 array; scalar input broadcasts to all channels."""
    if g is None:
        g = b = r
    v = np.array([r, g, b], dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ParameterError(f"spectrum has non-finite components: {v}")
    return v


def spherical_direction(cos_theta, phi) -> np.ndarray:
    cos_theta = np.asarray(cos_theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    sin_theta = np.sqrt(np.clip(1.0 - cos_theta**2, 0.0, 1.0))
    return np.stack(
        [sin_theta * np.cos(phi), sin_theta * np.sin(phi), cos_theta], axis=-1
    )


def orthonormal_basis(w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Branchless tangent frame (t, b) completing w; works on batches."""
    w = np.asarray(w, dtype=np.float64)
    z = w[..., 2]
    sign = np.where(z >= 0.0, 1.0, -1.0)
    a = -1.0 / (sign + z)
    bxy = w[..., 0] * w[..., 1] * a
    t = np.stack(
        [1.0 + sign * w[..., 0] ** 2 * a, sign * bxy, -sign * w[..., 0]], axis=-1
    )
    b = np.stack([bxy, sign + w[..., 1] ** 2 * a, -w[..., 1]], axis=-1)
    return t, b


def from_frame(t, b, n, local: np.ndarray) -> np.ndarray:
    return (
        local[..., 0:1] * t + local[..., 1:2] * b + local[..., 2:3] * n
    )


def flip_z(w: np.ndarray) -> np.ndarray:
    out = np.array(w, dtype=np.float64, copy=True)
    out[..., 2] = -out[..., 2]
    return out


def cosine_sample_hemisphere(u1, u2) -> np.ndarray:
    """Cosine-weighted directions on the +z hemisphere; pdf = cos/pi."""
    u1 = np.asarray(u1, dtype=np.float64)
    r = np.sqrt(u1)
    phi = 2.0 * np.pi * np.asarray(u2, dtype=np.float64)
    z = np.sqrt(np.clip(1.0 - u1, 0.0, 1.0))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def sphere_quadrature(n_cos: int = 128, n_phi: int = 256, hemisphere: str = "both"):
    """Product quadrature over the sphere: Gauss-Legendre in cos(theta) per
    hemisphere x midpoint in phi. Returns (directions (n,3), weights (n,))
    with sum(weights) equal to the covered solid angle."""
    nodes, gl_w = np.polynomial.legendre.leggauss(n_cos)
    phi = (np.arange(n_phi) + 0.5) * (2.0 * np.pi / n_phi)
    w_phi = 2.0 * np.pi / n_phi

    blocks = []
    if hemisphere in ("upper", "both"):
        blocks.append((0.5 * (nodes + 1.0), 0.5 * gl_w))
    if hemisphere in ("lower", "both"):
        blocks.append((0.5 * (nodes + 1.0) - 1.0, 0.5 * gl_w))
    if not blocks:
        raise ValueError(f"unknown hemisphere: {hemisphere!r}")

    dirs, wts = [], []
    for mu, w_mu in blocks:
        c, p = np.meshgrid(mu, phi, indexing="ij")
        dirs.append(spherical_direction(c.ravel(), p.ravel()))
        wts.append(np.repeat(w_mu, n_phi) * w_phi)
    return np.concatenate(dirs), np.concatenate(wts)
