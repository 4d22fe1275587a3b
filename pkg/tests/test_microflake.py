import numpy as np
import pytest

from flakestack import (
    ParameterError,
    flake_phase_eval,
    hg_phase_eval,
    lambda_fn,
    projected_area,
    schlick,
    sggx_matrix,
    sggx_ndf,
    unit_vector,
)

from conftest import random_direction, sphere_integral

UP = np.array([0.0, 0.0, 1.0])


# --- distribution matrix -----------------------------------------------------


def test_surface_alpha_one_is_identity():
    s = sggx_matrix("surface", 1.0, UP)
    assert np.allclose(s.s, np.eye(3), atol=1e-12)


def test_fiber_matrix_up():
    s = sggx_matrix("fiber", 0.5, UP)
    assert np.allclose(s.s, np.diag([1.0, 1.0, 0.25]), atol=1e-12)


def test_fiber_matrix_rotated_permutes_axes():
    s = sggx_matrix("fiber", 0.5, np.array([1.0, 0.0, 0.0]))
    assert np.allclose(s.s, np.diag([0.25, 1.0, 1.0]), atol=1e-12)


def test_matrix_symmetric_positive_definite(rng):
    for _ in range(20):
        kind = ("fiber", "surface")[rng.integers(2)]
        s = sggx_matrix(kind, rng.uniform(0.05, 1.0), random_direction(rng))
        assert np.allclose(s.s, s.s.T, atol=1e-12)
        assert (np.linalg.eigvalsh(s.s) > 0).all()


# --- NDF values ---------------------------------------------------------------


def test_ndf_identity_is_inv_pi(rng):
    s = sggx_matrix("surface", 1.0, UP)
    d = sggx_ndf(s, random_direction(rng))
    assert abs(d - 1.0 / np.pi) < 1e-12


def test_ndf_surface_pole():
    s = sggx_matrix("surface", 0.1, UP)
    assert abs(sggx_ndf(s, UP) - 1.0 / (np.pi * 0.01)) < 1e-9


def test_ndf_fiber_pole():
    s = sggx_matrix("fiber", 0.5, UP)
    # q = w S^-1 w = 1/alpha^2 = 4; sqrt(det) = 0.5
    assert abs(sggx_ndf(s, UP) - 1.0 / (np.pi * 0.5 * 16.0)) < 1e-9


# --- projected area -----------------------------------------------------------


@pytest.mark.parametrize(
    "w,expected",
    [(UP, 0.5), (np.array([1.0, 0.0, 0.0]), 1.0)],
)
def test_projected_area_fiber(w, expected):
    s = sggx_matrix("fiber", 0.5, UP)
    assert abs(projected_area(s, w) - expected) < 1e-12


def test_projected_area_surface_oblique():
    s = sggx_matrix("surface", 0.3, UP)
    w = unit_vector(1.0, 0.0, 1.0)
    assert abs(projected_area(s, w) - np.sqrt(0.545)) < 1e-9


def test_projected_area_matches_ndf_quadrature(rng):
    """sigma(w) = integral of max(w.m, 0) D(m) over the sphere."""
    for kind, alpha in (("fiber", 0.3), ("surface", 0.6)):
        s = sggx_matrix(kind, alpha, random_direction(rng))
        w = random_direction(rng)
        quad = sphere_integral(
            lambda dirs: np.maximum(dirs @ w, 0.0) * sggx_ndf(s, dirs), 512, 1024
        )
        assert abs(quad - projected_area(s, w)) < 1e-3


# --- Lambda -------------------------------------------------------------------


def test_lambda_identity_values():
    s = sggx_matrix("surface", 1.0, UP)
    assert abs(lambda_fn(s, UP) - 1.0) < 1e-12
    assert abs(lambda_fn(s, unit_vector(np.sqrt(0.75), 0.0, 0.5)) - 2.0) < 1e-12
    assert abs(lambda_fn(s, -UP) - (-1.0)) < 1e-12


# --- flake phase --------------------------------------------------------------


def test_flake_phase_identity(rng):
    s = sggx_matrix("surface", 1.0, UP)
    wi, wo = random_direction(rng), random_direction(rng)
    assert abs(flake_phase_eval(s, wi, wo) - 1.0 / (4 * np.pi)) < 1e-12


def test_flake_phase_fiber_pole():
    s = sggx_matrix("fiber", 0.5, UP)
    assert abs(flake_phase_eval(s, UP, UP) - 0.019894) < 1e-6


def test_flake_phase_antipodal_isotropic_limit():
    """wo = -wi: for isotropic flakes D is constant, so the half-vector limit
    gives exactly 1/(4 pi) regardless of how the singular point is approached."""
    s = sggx_matrix("surface", 1.0, UP)
    wi = unit_vector(0.3, -0.5, 0.81)
    assert abs(flake_phase_eval(s, wi, -wi) - 1.0 / (4.0 * np.pi)) < 1e-12


def test_flake_phase_antipodal_finite_and_reciprocal(rng):
    s = sggx_matrix("fiber", 0.4, UP)
    wi = random_direction(rng)
    v = flake_phase_eval(s, wi, -wi)
    assert np.isfinite(v) and v > 0.0
    # sigma(wi) fp(wi->wo) stays symmetric at the degenerate point
    a = projected_area(s, wi) * flake_phase_eval(s, wi, -wi)
    b = projected_area(s, -wi) * flake_phase_eval(s, -wi, wi)
    assert abs(a - b) < 1e-12


def test_flake_phase_normalization():
    s = sggx_matrix("fiber", 0.3, UP)
    wi = unit_vector(np.sin(np.radians(30)), 0.0, np.cos(np.radians(30)))
    total = sphere_integral(lambda dirs: flake_phase_eval(s, wi, dirs), 1024, 1024)
    assert abs(total - 1.0) < 1e-3


def test_flake_phase_reciprocity_with_sigma(rng):
    """sigma(wi) fp(wi->wo) is symmetric: D(h)/4 does not depend on order."""
    s = sggx_matrix("surface", 0.4, random_direction(rng))
    wi, wo = random_direction(rng), random_direction(rng)
    a = projected_area(s, wi) * flake_phase_eval(s, wi, wo)
    b = projected_area(s, wo) * flake_phase_eval(s, wo, wi)
    assert abs(a - b) < 1e-12 * max(abs(a), 1.0)


# --- HG phase -----------------------------------------------------------------


def test_hg_isotropic(rng):
    wi, wo = random_direction(rng), random_direction(rng)
    assert abs(hg_phase_eval(0.0, wi, wo) - 1.0 / (4 * np.pi)) < 1e-12


def test_hg_forward_value():
    wi = -UP  # propagation +z
    wo = UP
    expected = 0.51 / (4 * np.pi * 0.027)
    assert abs(hg_phase_eval(0.7, wi, wo) - expected) < 1e-5


def test_hg_normalization():
    wi = unit_vector(0.3, -0.2, 0.9)
    total = sphere_integral(lambda dirs: hg_phase_eval(0.7, wi, dirs), 2048, 512)
    assert abs(total - 1.0) < 1e-3


def test_hg_rejects_bad_g():
    from flakestack import LayerSpec

    with pytest.raises(ParameterError):
        LayerSpec(
            kind="hg",
            albedo=np.ones(3),
            roughness=1.0,
            f0=np.ones(3),
            thickness=1.0,
            orientation=UP,
        )


# --- schlick ------------------------------------------------------------------


def test_schlick_values():
    one = np.ones(3)
    assert np.allclose(schlick(one, 0.37), one, atol=1e-12)
    f04 = np.full(3, 0.04)
    assert np.allclose(schlick(f04, 1.0), f04, atol=1e-12)
    assert np.allclose(schlick(f04, 0.0), one, atol=1e-12)
