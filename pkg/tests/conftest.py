"""Shared builders for the test suite."""

import numpy as np
import pytest

from flakestack import LayerSpec, LayerStack, SubstrateSpec, sphere_quadrature


def rgb(r, g=None, b=None):
    if g is None:
        g = b = r
    return np.array([r, g, b], dtype=np.float64)


def layer(kind="surface", albedo=1.0, alpha=1.0, f0=1.0, thickness=1.0, orientation=(0, 0, 1)):
    return LayerSpec(
        kind=kind,
        albedo=rgb(albedo) if np.isscalar(albedo) else np.asarray(albedo, dtype=np.float64),
        roughness=alpha,
        f0=rgb(f0) if np.isscalar(f0) else np.asarray(f0, dtype=np.float64),
        thickness=thickness,
        orientation=np.asarray(orientation, dtype=np.float64),
    )


def stack(*layers, include_delta=False, substrate_albedo=None):
    if substrate_albedo is None:
        sub = None
    else:
        a = rgb(substrate_albedo) if np.isscalar(substrate_albedo) else np.asarray(substrate_albedo, dtype=np.float64)
        sub = SubstrateSpec("lambertian", a)
    return LayerStack(tuple(layers), include_delta=include_delta, substrate=sub)


def isotropic_layer(albedo=1.0, f0=1.0, thickness=1.0):
    """Isotropic microflakes: surface form at alpha = 1 gives S = I."""
    return layer("surface", albedo=albedo, alpha=1.0, f0=f0, thickness=thickness)


def chandrasekhar_stack(a=0.8):
    """Semi-infinite isotropic slab with constant vertex weight F = a."""
    return stack(layer("surface", albedo=a, alpha=1.0, f0=1.0, thickness=np.inf))


def random_direction(rng, upper=False):
    z = rng.uniform(0.0, 1.0) if upper else rng.uniform(-1.0, 1.0)
    phi = rng.uniform(0.0, 2.0 * np.pi)
    s = np.sqrt(max(1.0 - z * z, 0.0))
    return np.array([s * np.cos(phi), s * np.sin(phi), z])


def random_directions(rng, n, upper=False):
    z = rng.uniform(0.0 if upper else -1.0, 1.0, n)
    phi = rng.uniform(0.0, 2.0 * np.pi, n)
    s = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=-1)


def random_stack(rng, n_layers=1, include_delta=False, substrate=False, kinds=("fiber", "surface")):
    layers = []
    for _ in range(n_layers):
        layers.append(
            layer(
                kind=kinds[rng.integers(len(kinds))],
                albedo=rng.uniform(0.2, 1.0, 3),
                alpha=rng.uniform(0.1, 1.0),
                f0=rng.uniform(0.02, 1.0, 3),
                thickness=rng.uniform(0.3, 4.0),
                orientation=(lambda v: v / np.linalg.norm(v))(
                    random_direction(rng, upper=True) + np.array([0, 0, 0.1])
                ),
            )
        )
    sub = rng.uniform(0.1, 0.9, 3) if substrate else None
    return stack(*layers, include_delta=include_delta, substrate_albedo=sub)


def sphere_integral(fn, n_cos=256, n_phi=512, hemisphere="both"):
    """Quadrature of fn(dirs (n,3)) -> (n,) or (n,c) over the sphere."""
    dirs, w = sphere_quadrature(n_cos, n_phi, hemisphere)
    vals = np.asarray(fn(dirs))
    if vals.ndim == 1:
        return float(np.sum(vals * w))
    return np.sum(vals * w[:, None], axis=0)


@pytest.fixture
def rng():
    return np.random.default_rng(20260815)
