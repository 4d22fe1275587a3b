import numpy as np
import pytest

from flakestack import (
    attenuation,
    delta_transmittance,
    eval_layer_reflect,
    eval_layer_transmit,
    eval_stack_single,
    eval_stack_single_many,
    spherical_direction,
    unit_vector,
)

from conftest import (
    isotropic_layer,
    layer,
    random_direction,
    random_stack,
    sphere_integral,
    stack,
)

UP = np.array([0.0, 0.0, 1.0])
DOWN = np.array([0.0, 0.0, -1.0])


def direction(cos_theta, phi=0.0):
    return spherical_direction(cos_theta, phi)


# --- single-layer reflection ----------------------------------------------------


def test_semi_infinite_isotropic_closed_form():
    """a / (4 pi (cos_i + cos_o)) for an isotropic semi-infinite slab."""
    ly = isotropic_layer(albedo=(0.8, 0.8, 0.8), f0=(1.0, 1.0, 1.0), thickness=np.inf)
    wi = direction(0.5)
    wo = direction(1.0)
    val = eval_layer_reflect(ly, wi, wo)
    assert np.allclose(val, 0.8 / (4.0 * np.pi * 1.5), rtol=1e-9)
    assert abs(val[0] - 0.042441) < 5e-7


def test_finite_layer_normal_incidence():
    """T rho = 1, cos_i = cos_o = 1: G = (1 - e^-2)/2, f = G / (4 pi)."""
    ly = isotropic_layer(thickness=1.0)
    val = eval_layer_reflect(ly, UP, UP)
    g = (1.0 - np.exp(-2.0)) / 2.0
    assert np.allclose(val, g / (4.0 * np.pi), rtol=1e-9)
    assert abs(val[0] - 0.034406) < 5e-6


def test_reflection_linear_in_small_thickness():
    ly1 = isotropic_layer(thickness=1e-4)
    ly2 = isotropic_layer(thickness=2e-4)
    wi = direction(0.7)
    wo = direction(0.9, 1.3)
    v1 = eval_stack_single(stack(ly1), wi, wo)
    v2 = eval_stack_single(stack(ly2), wi, wo)
    assert np.allclose(v2, 2.0 * v1, rtol=1e-3)


def test_reflection_monotone_in_thickness():
    wi = direction(0.6)
    wo = direction(0.8, 2.0)
    vals = [
        eval_layer_reflect(isotropic_layer(thickness=t), wi, wo)[0]
        for t in (0.1, 0.5, 1.0, 2.0, 5.0, 20.0)
    ]
    assert all(b > a for a, b in zip(vals, vals[1:]))


# --- single-layer transmission ---------------------------------------------------


def test_transmission_singular_limit_value():
    """wo = -wi: G collapses to T rho * exp(T rho lambda_o) = e^-1 at T rho = 1."""
    ly = isotropic_layer(thickness=1.0)
    val = eval_layer_transmit(ly, UP, DOWN)
    assert np.allclose(val, np.exp(-1.0) / (4.0 * np.pi), rtol=1e-9)
    assert abs(val[0] - 0.029279) < 5e-6


def test_transmission_vanishes_with_thickness():
    wi = direction(0.8)
    wo = direction(-0.6, 0.4)
    vals = [
        eval_layer_transmit(isotropic_layer(thickness=t), wi, wo)[0]
        for t in (1e-1, 1e-3, 1e-5)
    ]
    assert vals[0] > vals[1] > vals[2]
    assert vals[2] < 1e-5


def test_transmission_continuous_across_singularity():
    """Sweep lambda_i + lambda_o through zero from both sides; the generic
    branch must approach the singular-limit branch smoothly."""
    ly = isotropic_layer(thickness=1.3)
    cos_i = 0.8  # lambda_i = 1.25, cancelled exactly at cos_o = -0.8
    wi = direction(cos_i)
    limit = eval_layer_transmit(ly, wi, direction(-cos_i, 0.4))[0]
    assert limit > 0.0
    for eps in (1e-3, 1e-4, 1e-5):
        for sign in (1.0, -1.0):
            wo = direction(-cos_i + sign * eps, 0.4)
            val = eval_layer_transmit(ly, wi, wo)[0]
            assert abs(val - limit) / limit < 100 * eps + 1e-6, (eps, sign)


def test_transmission_semi_infinite_is_zero():
    ly = isotropic_layer(thickness=np.inf)
    assert np.all(eval_layer_transmit(ly, UP, DOWN) == 0.0)


# --- attenuation ------------------------------------------------------------------


def test_attenuation_top_layer_unit():
    st = stack(isotropic_layer(thickness=1.0), isotropic_layer(thickness=1.0))
    assert np.allclose(attenuation(st, 0, UP), 1.0)


def test_attenuation_below_one_layer():
    st = stack(isotropic_layer(thickness=1.0), isotropic_layer(thickness=1.0))
    assert np.allclose(attenuation(st, 1, UP), np.exp(-1.0), rtol=1e-12)


def test_attenuation_oblique():
    st = stack(isotropic_layer(thickness=1.0), isotropic_layer(thickness=1.0))
    assert np.allclose(attenuation(st, 1, direction(0.5)), np.exp(-2.0), rtol=1e-12)


def test_attenuation_downward_counts_layers_below():
    st = stack(isotropic_layer(thickness=1.0), isotropic_layer(thickness=2.0))
    # for a downward direction the path to layer 0 crosses layer 1
    assert np.allclose(attenuation(st, 0, DOWN), np.exp(-2.0), rtol=1e-12)
    assert np.allclose(attenuation(st, 1, DOWN), 1.0)


# --- unscattered transmission ------------------------------------------------------


def test_delta_transmittance_single_layer():
    st = stack(isotropic_layer(thickness=1.0), include_delta=True)
    assert np.allclose(delta_transmittance(st, UP), np.exp(-1.0), rtol=1e-12)


def test_delta_transmittance_thin_limit():
    st = stack(isotropic_layer(thickness=1e-9), include_delta=True)
    assert np.allclose(delta_transmittance(st, UP), 1.0, atol=1e-8)


def test_delta_transmittance_fiber_projected_area():
    st = stack(layer("fiber", alpha=0.5, thickness=2.0), include_delta=True)
    # sigma(up) = 0.5 for a vertical fiber with alpha = 0.5
    assert np.allclose(delta_transmittance(st, UP), np.exp(-1.0), rtol=1e-12)


# --- stack summation ---------------------------------------------------------------


def test_one_layer_stack_equals_layer_reflect(rng):
    ly = layer("surface", albedo=(0.9, 0.6, 0.3), alpha=0.4, thickness=1.7)
    st = stack(ly)
    for _ in range(10):
        wi = random_direction(rng, upper=True)
        wo = random_direction(rng, upper=True)
        assert np.allclose(
            eval_stack_single(st, wi, wo), eval_layer_reflect(ly, wi, wo), rtol=1e-12
        )


def test_layer_splitting_identity(rng):
    whole = stack(layer("fiber", albedo=(0.7, 0.7, 0.7), alpha=0.3, thickness=1.0))
    halves = stack(
        layer("fiber", albedo=(0.7, 0.7, 0.7), alpha=0.3, thickness=0.5),
        layer("fiber", albedo=(0.7, 0.7, 0.7), alpha=0.3, thickness=0.5),
    )
    for _ in range(20):
        wi = random_direction(rng)
        wo = random_direction(rng)
        if abs(wi[2]) < 0.05 or abs(wo[2]) < 0.05:
            continue
        a = eval_stack_single(whole, wi, wo)
        b = eval_stack_single(halves, wi, wo)
        assert np.allclose(a, b, rtol=1e-9), (wi, wo)


@pytest.mark.filterwarnings("ignore:substrate ignored")
@pytest.mark.parametrize("n_layers", [1, 2, 3])
def test_reciprocity_random_stacks(rng, n_layers):
    for _ in range(8):
        st = random_stack(rng, n_layers=n_layers, include_delta=False, substrate=True)
        wi = random_direction(rng)
        wo = random_direction(rng)
        if abs(wi[2]) < 0.05 or abs(wo[2]) < 0.05:
            continue
        a = eval_stack_single(st, wi, wo)
        b = eval_stack_single(st, wo, wi)
        assert np.allclose(a, b, rtol=1e-6), (st, wi, wo)


def test_below_horizon_pair_mirrors_stack():
    """Evaluating with both directions below the horizon must match the
    flipped-frame evaluation of the mirrored stack."""
    st = stack(
        layer("fiber", albedo=(0.8, 0.8, 0.8), alpha=0.3, orientation=(0.6, 0.0, 0.8)),
        layer("surface", albedo=(0.5, 0.5, 0.5), alpha=0.6, thickness=2.0),
    )
    from flakestack import flip_z, mirror_stack

    wi = unit_vector(0.3, 0.2, -0.9)
    wo = unit_vector(-0.4, 0.1, -0.8)
    a = eval_stack_single(st, wi, wo)
    b = eval_stack_single(mirror_stack(st), flip_z(wi), flip_z(wo))
    assert np.allclose(a, b, rtol=1e-12)


def test_substrate_contribution_hand_check():
    """gamma = 0 layer: only the substrate term survives, attenuated both ways."""
    ly = isotropic_layer(albedo=(0.0, 0.0, 0.0), thickness=1.0)
    st = stack(ly, substrate_albedo=(0.6, 0.6, 0.6))
    wi = direction(1.0)
    wo = direction(0.5, 0.7)
    expected = (0.6 / np.pi) * np.exp(-1.0) * np.exp(-2.0)
    assert np.allclose(eval_stack_single(st, wi, wo), expected, rtol=1e-9)


def test_substrate_absent_below_horizon():
    ly = isotropic_layer(albedo=(0.0, 0.0, 0.0), thickness=1.0)
    st = stack(ly, substrate_albedo=(0.6, 0.6, 0.6))
    # transmission pair: substrate reflects but never transmits
    assert np.allclose(eval_stack_single(st, UP, DOWN), 0.0)


def test_hg_layer_evaluates_and_reciprocal():
    st = stack(layer("hg", albedo=(0.9, 0.9, 0.9), alpha=0.5, thickness=1.0))
    wi = direction(0.8)
    wo = direction(0.6, 2.1)
    a = eval_stack_single(st, wi, wo)
    b = eval_stack_single(st, wo, wi)
    assert np.all(a > 0.0)
    assert np.allclose(a, b, rtol=1e-6)


# --- energy ------------------------------------------------------------------------


@pytest.mark.parametrize(
    "make",
    [
        lambda: stack(isotropic_layer(thickness=1.0), include_delta=True),
        lambda: stack(
            layer("fiber", albedo=(1.0, 1.0, 1.0), alpha=0.4, thickness=2.0),
            include_delta=True,
        ),
        lambda: stack(
            isotropic_layer(thickness=0.5),
            layer("surface", albedo=(1.0, 1.0, 1.0), alpha=0.7, thickness=1.5),
        ),
    ],
)
def test_single_scatter_energy_conservative(make):
    st = make()
    wi = direction(0.7, 0.3)

    def integrand(wo):
        wi_b = np.broadcast_to(wi, wo.shape)
        return eval_stack_single_many(st, wi_b, wo)[:, 0] * np.abs(wo[:, 2])

    albedo = sphere_integral(integrand, n_cos=128, n_phi=256, hemisphere="both")
    total = albedo + (delta_transmittance(st, wi)[0] if st.include_delta else 0.0)
    assert total <= 1.0 + 1e-3
