"""Tabulated BSDF values and their binary file format.

Directions are binned uniformly in (cos theta, phi) per hemisphere. Incident
bins cover the upper hemisphere only; outgoing bins cover both, upper block
first. Within a block, index = cos_bin * res_phi + phi_bin with |cos|
ascending; values are plain BSDF values (cosine divided out) per RGB channel.

File layout (little-endian):

    magic   4s   = b"SPTB"
    version u32  = 1
    mode    u8     0 single | 1 multiple | 2 full | 3 full+delta
    res     u32 x2 (cos bins, phi bins per hemisphere)
    param   u8     0 = uniform (cos theta, phi) grid as above
    samples u64    random walks per incident bin
    stack   u32 length + UTF-8 material text (re-parseable echo)
    values  f32 [n_wi][n_wo][3], n_wi = res_cos*res_phi, n_wo = 2*n_wi

Bins whose |cos| range dips below 0.02 are the documented high-variance
grazing region (the lowest cos bin of each block); consumers down-weight them.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FileFormatError
from .geometry import spherical_direction

MAGIC = b"SPTB"
VERSION = 1

MODES = ("single", "multiple", "full", "full+delta")
PARAM_UNIFORM_COS_PHI = 0

GRAZING_COS = 0.02


@dataclass(frozen=True)
class BsdfTable:
    mode: str
    res_cos: int
    res_phi: int
    samples_per_wi: int
    material_text: str
    values: np.ndarray  # (n_wi, n_wo, 3) float32
    param_tag: int = PARAM_UNIFORM_COS_PHI

    @property
    def n_wi(self) -> int:
        return self.res_cos * self.res_phi

    @property
    def n_wo(self) -> int:
        return 2 * self.res_cos * self.res_phi


def bin_centers_upper(res_cos: int, res_phi: int) -> np.ndarray:
    """Direction at the center of each upper-hemisphere bin, (n, 3)."""
    mu = (np.arange(res_cos) + 0.5) / res_cos
    phi = (np.arange(res_phi) + 0.5) * (2.0 * np.pi / res_phi)
    c, p = np.meshgrid(mu, phi, indexing="ij")
    return spherical_direction(c.ravel(), p.ravel())


def wo_bin_centers(res_cos: int, res_phi: int) -> np.ndarray:
    upper = bin_centers_upper(res_cos, res_phi)
    lower = upper.copy()
    lower[:, 2] = -lower[:, 2]
    return np.vstack([upper, lower])


def wo_bin_index(res_cos: int, res_phi: int, dirs: np.ndarray) -> np.ndarray:
    """Outgoing bin index for unit directions (n, 3)."""
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    z = dirs[:, 2]
    hemi = (z < 0.0).astype(np.int64)
    j = np.clip((np.abs(z) * res_cos).astype(np.int64), 0, res_cos - 1)
    phi = np.arctan2(dirs[:, 1], dirs[:, 0]) % (2.0 * np.pi)
    k = np.clip((phi / (2.0 * np.pi) * res_phi).astype(np.int64), 0, res_phi - 1)
    return hemi * (res_cos * res_phi) + j * res_phi + k


def bin_solid_angle(res_cos: int, res_phi: int) -> float:
    return (1.0 / res_cos) * (2.0 * np.pi / res_phi)


def grazing_wo_mask(res_cos: int, res_phi: int) -> np.ndarray:
    """True for outgoing bins whose |cos| range reaches below GRAZING_COS."""
    n = res_cos * res_phi
    j = (np.arange(2 * n) % n) // res_phi
    return (j / res_cos) < GRAZING_COS


def write_table(path: str, table: BsdfTable) -> None:
    if table.mode not in MODES:
        raise FileFormatError(f"unknown table mode {table.mode!r}")
    values = np.ascontiguousarray(table.values, dtype=np.float32)
    if values.shape != (table.n_wi, table.n_wo, 3):
        raise FileFormatError(
            f"table values must have shape {(table.n_wi, table.n_wo, 3)}, got {values.shape}"
        )
    text = table.material_text.encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(
            struct.pack(
                "<IBIIBQI",
                VERSION,
                MODES.index(table.mode),
                table.res_cos,
                table.res_phi,
                table.param_tag,
                table.samples_per_wi,
                len(text),
            )
        )
        f.write(text)
        f.write(values.tobytes())


def read_table(path: str) -> BsdfTable:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise FileFormatError(f"{path}: bad magic {data[:4]!r}")
    header = struct.Struct("<IBIIBQI")
    if len(data) < 4 + header.size:
        raise FileFormatError(f"{path}: truncated header")
    version, mode_idx, res_cos, res_phi, param_tag, samples, text_len = header.unpack_from(data, 4)
    if version != VERSION:
        raise FileFormatError(f"{path}: unsupported version {version}")
    if mode_idx >= len(MODES):
        raise FileFormatError(f"{path}: unknown mode tag {mode_idx}")
    if param_tag != PARAM_UNIFORM_COS_PHI:
        raise FileFormatError(f"{path}: unknown parameterization tag {param_tag}")
    off = 4 + header.size
    if len(data) < off + text_len:
        raise FileFormatError(f"{path}: truncated material text")
    text = data[off : off + text_len].decode("utf-8")
    off += text_len
    n_wi = res_cos * res_phi
    n_wo = 2 * n_wi
    expect = n_wi * n_wo * 3 * 4
    if len(data) - off != expect:
        raise FileFormatError(
            f"{path}: payload is {len(data) - off} bytes, expected {expect}"
        )
    values = np.frombuffer(data[off:], dtype="<f4").reshape(n_wi, n_wo, 3)
    if not np.all(np.isfinite(values)):
        raise FileFormatError(f"{path}: payload contains non-finite values")
    return BsdfTable(
        mode=MODES[mode_idx],
        res_cos=res_cos,
        res_phi=res_phi,
        samples_per_wi=samples,
        material_text=text,
        values=values.copy(),
        param_tag=param_tag,
    )
