import numpy as np
import pytest

from flakestack import (
    BsdfTable,
    FileFormatError,
    bin_centers_upper,
    bin_solid_angle,
    grazing_wo_mask,
    read_table,
    serialize_material,
    wo_bin_centers,
    wo_bin_index,
    write_table,
)

from conftest import isotropic_layer, stack


def small_table(rng, res_cos=3, res_phi=4, mode="full"):
    n_wi = res_cos * res_phi
    vals = rng.random((n_wi, 2 * n_wi, 3)).astype(np.float32)
    return BsdfTable(
        mode=mode,
        res_cos=res_cos,
        res_phi=res_phi,
        samples_per_wi=777,
        material_text=serialize_material(stack(isotropic_layer(thickness=1.0))),
        values=vals,
    )


def test_round_trip_bitwise(tmp_path, rng):
    t = small_table(rng)
    p = str(tmp_path / "t.sptb")
    write_table(p, t)
    r = read_table(p)
    assert r.mode == t.mode
    assert (r.res_cos, r.res_phi) == (t.res_cos, t.res_phi)
    assert r.samples_per_wi == t.samples_per_wi
    assert r.material_text == t.material_text
    assert np.array_equal(r.values, t.values)
    assert r.values.dtype == np.float32


def test_bad_magic_rejected(tmp_path, rng):
    p = str(tmp_path / "t.sptb")
    write_table(p, small_table(rng))
    raw = bytearray(open(p, "rb").read())
    raw[:4] = b"JUNK"
    open(p, "wb").write(bytes(raw))
    with pytest.raises(FileFormatError):
        read_table(p)


def test_truncated_payload_rejected(tmp_path, rng):
    p = str(tmp_path / "t.sptb")
    write_table(p, small_table(rng))
    raw = open(p, "rb").read()
    open(p, "wb").write(raw[:-7])
    with pytest.raises(FileFormatError):
        read_table(p)


def test_unknown_mode_tag_rejected(tmp_path, rng):
    p = str(tmp_path / "t.sptb")
    write_table(p, small_table(rng))
    raw = bytearray(open(p, "rb").read())
    raw[8] = 250  # mode byte sits after magic + version u32
    open(p, "wb").write(bytes(raw))
    with pytest.raises(FileFormatError):
        read_table(p)


def test_non_finite_payload_rejected(tmp_path, rng):
    t = small_table(rng)
    t.values[0, 0, 0] = np.nan
    p = str(tmp_path / "t.sptb")
    write_table(p, t)
    with pytest.raises(FileFormatError):
        read_table(p)


def test_write_rejects_bad_mode(tmp_path, rng):
    t = small_table(rng)
    bad = BsdfTable(
        mode="banana",
        res_cos=t.res_cos,
        res_phi=t.res_phi,
        samples_per_wi=t.samples_per_wi,
        material_text=t.material_text,
        values=t.values,
    )
    with pytest.raises(FileFormatError):
        write_table(str(tmp_path / "b.sptb"), bad)


# --- grid geometry -----------------------------------------------------------


@pytest.mark.parametrize("res_cos,res_phi", [(4, 4), (8, 16), (3, 5)])
def test_bin_centers_index_round_trip(res_cos, res_phi):
    dirs = wo_bin_centers(res_cos, res_phi)
    idx = wo_bin_index(res_cos, res_phi, dirs)
    assert np.array_equal(idx, np.arange(2 * res_cos * res_phi))


@pytest.mark.parametrize("res_cos,res_phi", [(4, 4), (8, 16)])
def test_solid_angles_cover_hemisphere(res_cos, res_phi):
    total = bin_solid_angle(res_cos, res_phi) * res_cos * res_phi
    assert abs(total - 2.0 * np.pi) < 1e-12


def test_upper_centers_in_upper_hemisphere():
    dirs = bin_centers_upper(6, 7)
    assert np.all(dirs[:, 2] > 0.0)
    assert np.allclose(np.linalg.norm(dirs, axis=-1), 1.0, atol=1e-12)


def test_grazing_mask_flags_low_cos_bins():
    res_cos, res_phi = 50, 4
    mask = grazing_wo_mask(res_cos, res_phi)
    assert mask.shape == (2 * res_cos * res_phi,)
    dirs = wo_bin_centers(res_cos, res_phi)
    # bins whose lower cos edge is below the threshold are exactly the first
    # cos row of each hemisphere at this resolution (edge at 0 < 0.02)
    flagged = np.nonzero(mask)[0]
    assert len(flagged) == 2 * res_phi
    assert np.all(np.abs(dirs[flagged, 2]) <= 0.02 + 0.5 / res_cos)


def test_grazing_mask_scales_with_resolution():
    # coarse grid: only the edge-at-zero rows are below the 0.02 threshold
    assert grazing_wo_mask(4, 4).sum() == 2 * 4
    # very fine grid: several rows fall under it
    assert grazing_wo_mask(200, 4).sum() > 2 * 4
