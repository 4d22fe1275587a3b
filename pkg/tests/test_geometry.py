import numpy as np
import pytest

from flakestack import (
    cosine_sample_hemisphere,
    from_frame,
    normalize,
    orthonormal_basis,
    sphere_quadrature,
    spherical_direction,
    unit_vector,
)

from conftest import random_directions


def test_normalize_unit_length(rng):
    v = rng.normal(size=(50, 3))
    n = normalize(v)
    assert np.allclose(np.linalg.norm(n, axis=-1), 1.0, atol=1e-12)


def test_unit_vector_matches_manual():
    v = unit_vector(3.0, 0.0, 4.0)
    assert np.allclose(v, [0.6, 0.0, 0.8])


def test_spherical_direction_roundtrip(rng):
    cos_t = rng.uniform(-1, 1, 100)
    phi = rng.uniform(0, 2 * np.pi, 100)
    d = spherical_direction(cos_t, phi)
    assert np.allclose(d[:, 2], cos_t, atol=1e-12)
    assert np.allclose(np.linalg.norm(d, axis=-1), 1.0, atol=1e-12)
    assert np.allclose(np.mod(np.arctan2(d[:, 1], d[:, 0]), 2 * np.pi), phi, atol=1e-9)


def test_orthonormal_basis_and_frame_roundtrip(rng):
    n = random_directions(rng, 200)
    t, b = orthonormal_basis(n)
    for a, c in ((t, b), (t, n), (b, n)):
        assert np.abs(np.sum(a * c, axis=-1)).max() < 1e-12
    assert np.allclose(np.linalg.norm(t, axis=-1), 1.0, atol=1e-12)
    assert np.allclose(np.linalg.norm(b, axis=-1), 1.0, atol=1e-12)
    local = random_directions(rng, 200)
    world = from_frame(t, b, n, local)
    # reproject back onto the frame axes
    back = np.stack(
        [np.sum(world * t, -1), np.sum(world * b, -1), np.sum(world * n, -1)], axis=-1
    )
    assert np.allclose(back, local, atol=1e-12)


def test_cosine_sample_hemisphere_moments(rng):
    u1, u2 = rng.random(200_000), rng.random(200_000)
    d = cosine_sample_hemisphere(u1, u2)
    assert (d[:, 2] > 0).all()
    # E[cos] = 2/3 for pdf cos/pi
    assert abs(d[:, 2].mean() - 2.0 / 3.0) < 2e-3
    assert np.abs(d[:, :2].mean(axis=0)).max() < 2e-3


@pytest.mark.parametrize("hemisphere,expected", [("both", 4 * np.pi), ("upper", 2 * np.pi), ("lower", 2 * np.pi)])
def test_sphere_quadrature_measure(hemisphere, expected):
    dirs, w = sphere_quadrature(64, 128, hemisphere)
    assert abs(w.sum() - expected) < 1e-9
    if hemisphere == "upper":
        assert (dirs[:, 2] > 0).all()
        # projected solid angle of the hemisphere
        assert abs(np.sum(w * dirs[:, 2]) - np.pi) < 1e-9
    if hemisphere == "lower":
        assert (dirs[:, 2] < 0).all()
