"""Layer stack model and its text format.

A material is an ordered stack of homogeneous scattering layers (top first),
an optional Lambertian substrate underneath, and a flag controlling whether
unscattered (delta) transmission is part of the model. Only the per-layer
optical depth T = thickness * density matters, so `thickness` here is that
product directly.

Text format (UTF-8, '#' starts a comment, keys are one-per-line)::

    delta_transmission false     # optional, default false
    substrate {                  # optional
        kind lambertian
        albedo 0.3 0.3 0.3
    }
    layer {                      # one block per layer, top first
        kind fiber               # fiber | surface | hg
        albedo 0.9 0.9 0.7
        roughness 0.1            # flake alpha in (0,1]; hg g in (-1,1)
        f0 1 1 1
        thickness 1.0            # optical depth; "inf" for semi-infinite
        orientation 0 0 1        # unit vector; parsed but unused for hg
    }

All six layer keys are required; unknown or duplicate keys are rejected with
line:column positions. A semi-infinite layer must be the bottom layer, with
no substrate and delta transmission off.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import MaterialParseError, ParameterError
from .microflake import (
    FIBER,
    SURFACE,
    SggxMatrix,
    flake_phase_eval,
    hg_phase_eval,
    projected_area,
    schlick,
    sggx_matrix,
)

HG = "hg"
LAYER_KINDS = (FIBER, SURFACE, HG)


def _check_rgb(name: str, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (3,):
        raise ParameterError(f"{name} must have 3 components, got shape {v.shape}")
    if not np.all(np.isfinite(v)) or np.any(v < 0.0) or np.any(v > 1.0):
        raise ParameterError(f"{name} components must be in [0, 1], got {v}")
    return v


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    albedo: np.ndarray  # single-scattering albedo per channel, [0,1]
    roughness: float  # flake alpha in (0,1], or hg asymmetry g in (-1,1)
    f0: np.ndarray  # Schlick reflectance at normal incidence, [0,1]
    thickness: float  # optical depth T; math.inf for semi-infinite
    orientation: np.ndarray  # flake alignment axis; ignored for hg
    sggx: SggxMatrix | None = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ParameterError(f"kind must be one of {LAYER_KINDS}, got {self.kind!r}")
        object.__setattr__(self, "albedo", _check_rgb("albedo", self.albedo))
        object.__setattr__(self, "f0", _check_rgb("f0", self.f0))
        w = np.asarray(self.orientation, dtype=np.float64)
        if w.shape != (3,) or not np.all(np.isfinite(w)) or abs(np.linalg.norm(w) - 1.0) > 1e-6:
            raise ParameterError(f"orientation must be a unit 3-vector, got {w}")
        object.__setattr__(self, "orientation", w)
        t = float(self.thickness)
        if not (t > 0.0):  # rejects 0, negatives, nan
            raise ParameterError(f"thickness must be positive, got {t}")
        object.__setattr__(self, "thickness", t)
        r = float(self.roughness)
        object.__setattr__(self, "roughness", r)
        if self.kind == HG:
            if not (-1.0 < r < 1.0):
                raise ParameterError(f"roughness (hg asymmetry) must be in (-1, 1), got {r}")
            object.__setattr__(self, "sggx", None)
        else:
            # sggx_matrix re-validates alpha in (0,1]
            object.__setattr__(self, "sggx", sggx_matrix(self.kind, r, w))

    @property
    def semi_infinite(self) -> bool:
        return math.isinf(self.thickness)


@dataclass(frozen=True)
class SubstrateSpec:
    kind: str  # 'lambertian'
    albedo: np.ndarray

    def __post_init__(self):
        if self.kind != "lambertian":
            raise ParameterError(f"substrate kind must be 'lambertian', got {self.kind!r}")
        object.__setattr__(self, "albedo", _check_rgb("substrate albedo", self.albedo))


@dataclass(frozen=True)
class LayerStack:
    layers: tuple[LayerSpec, ...]
    include_delta: bool = False
    substrate: SubstrateSpec | None = None

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers:
            raise ParameterError("stack must contain at least one layer")
        for i, layer in enumerate(layers):
            if layer.semi_infinite and i != len(layers) - 1:
                raise ParameterError(f"layers[{i}]: only the bottom layer may be semi-infinite")
        if layers[-1].semi_infinite:
            if self.substrate is not None:
                raise ParameterError("a semi-infinite stack cannot have a substrate")
            if self.include_delta:
                raise ParameterError("a semi-infinite stack cannot transmit a delta component")


def layer_sigma(layer: LayerSpec, w: np.ndarray) -> np.ndarray:
    """Directional extinction cross-section; isotropic (1) for hg layers."""
    if layer.kind == HG:
        return np.ones(np.shape(w)[:-1])
    return projected_area(layer.sggx, w)


def layer_phase(layer: LayerSpec, wi: np.ndarray, wo: np.ndarray) -> np.ndarray:
    if layer.kind == HG:
        return hg_phase_eval(layer.roughness, wi, wo)
    return flake_phase_eval(layer.sggx, wi, wo)


def reduced_phase_eval(layer: LayerSpec, wi: np.ndarray, wo: np.ndarray) -> np.ndarray:
    """Extinction-and-reflectance weighted phase function

        sigma_t(wi) * F(h) * fp(wi -> wo),   F(h) = albedo * schlick(f0, |wi.h|)

    for flake layers; hg layers have unit extinction and F = albedo. This is
    the quantity that is symmetric under exchanging wi and wo."""
    wi = np.asarray(wi, dtype=np.float64)
    wo = np.asarray(wo, dtype=np.float64)
    if layer.kind == HG:
        return layer.albedo * hg_phase_eval(layer.roughness, wi, wo)[..., None]
    hv = wi + wo
    n = np.linalg.norm(hv, axis=-1, keepdims=True)
    h = hv / np.where(n < 1e-9, 1.0, n)
    cos_ih = np.abs(np.sum(wi * h, axis=-1))
    fresnel = layer.albedo * schlick(layer.f0, cos_ih)
    fp = flake_phase_eval(layer.sggx, wi, wo)
    sigma_i = projected_area(layer.sggx, wi)
    return fresnel * (sigma_i * fp)[..., None]


def mirror_stack(stack: LayerStack) -> LayerStack:
    """The stack as seen from below: reversed layer order, orientations
    z-flipped, substrate dropped (it has no meaning upside down)."""
    flipped = []
    for layer in reversed(stack.layers):
        o = np.array(layer.orientation, copy=True)
        o[2] = -o[2]
        flipped.append(
            LayerSpec(layer.kind, layer.albedo, layer.roughness, layer.f0, layer.thickness, o)
        )
    return LayerStack(tuple(flipped), include_delta=stack.include_delta, substrate=None)


# --- text format ------------------------------------------------------------

_TOKEN = re.compile(r"\S+")

_LAYER_KEYS = ("kind", "albedo", "roughness", "f0", "thickness", "orientation")
_LAYER_ARITY = {"kind": 1, "albedo": 3, "roughness": 1, "f0": 3, "thickness": 1, "orientation": 3}
_SUBSTRATE_KEYS = ("kind", "albedo")
_SUBSTRATE_ARITY = {"kind": 1, "albedo": 3}


def _tokenize(text: str):
    """Yield (line, col, token) with 1-based positions; '#' comments stripped."""
    for ln, raw in enumerate(text.split("\n"), start=1):
        cut = raw.find("#")
        line = raw if cut < 0 else raw[:cut]
        for m in _TOKEN.finditer(line):
            yield ln, m.start() + 1, m.group()


class _Tokens:
    def __init__(self, text: str):
        self._items = list(_tokenize(text))
        self._pos = 0
        self._last = (1, 1)

    def peek(self):
        return self._items[self._pos] if self._pos < len(self._items) else None

    def next(self, expect: str):
        item = self.peek()
        if item is None:
            ln, col = self._last
            raise MaterialParseError(f"unexpected end of input, expected {expect}", ln, col)
        self._pos += 1
        self._last = (item[0], item[1])
        return item


def _parse_float(tokens: _Tokens, key: str) -> float:
    ln, col, tok = tokens.next(f"number for '{key}'")
    if tok == "inf":
        return math.inf
    try:
        return float(tok)
    except ValueError:
        raise MaterialParseError(f"expected a number for '{key}', got {tok!r}", ln, col) from None


def _parse_block(tokens: _Tokens, name: str, keys, arity) -> dict:
    ln, col, tok = tokens.next("'{'")
    if tok != "{":
        raise MaterialParseError(f"expected '{{' after '{name}', got {tok!r}", ln, col)
    values: dict = {}
    while True:
        ln, col, tok = tokens.next(f"a {name} key or '}}'")
        if tok == "}":
            missing = [k for k in keys if k not in values]
            if missing:
                raise MaterialParseError(f"{name} is missing key(s): {', '.join(missing)}", ln, col)
            return values
        if tok not in keys:
            raise MaterialParseError(f"unknown {name} key {tok!r}", ln, col)
        if tok in values:
            raise MaterialParseError(f"duplicate {name} key {tok!r}", ln, col)
        if tok == "kind":
            values[tok] = tokens.next("a kind name")[2]
        else:
            values[tok] = [_parse_float(tokens, tok) for _ in range(arity[tok])]


def parse_material(text: str) -> LayerStack:
    """Parse material text into a validated LayerStack.

    Syntax problems raise MaterialParseError with line:column; domain
    violations raise ParameterError naming the offending field."""
    tokens = _Tokens(text)
    include_delta = None
    substrate = None
    layers: list[dict] = []
    layer_lines: list[int] = []
    while True:
        item = tokens.peek()
        if item is None:
            break
        ln, col, tok = tokens.next("a top-level key")
        if tok == "delta_transmission":
            if include_delta is not None:
                raise MaterialParseError("duplicate key 'delta_transmission'", ln, col)
            vln, vcol, val = tokens.next("true or false")
            if val not in ("true", "false"):
                raise MaterialParseError(f"expected true or false, got {val!r}", vln, vcol)
            include_delta = val == "true"
        elif tok == "substrate":
            if substrate is not None:
                raise MaterialParseError("duplicate 'substrate' block", ln, col)
            substrate = _parse_block(tokens, "substrate", _SUBSTRATE_KEYS, _SUBSTRATE_ARITY)
        elif tok == "layer":
            layers.append(_parse_block(tokens, "layer", _LAYER_KEYS, _LAYER_ARITY))
            layer_lines.append(ln)
        else:
            raise MaterialParseError(f"unknown top-level key {tok!r}", ln, col)

    if not layers:
        raise MaterialParseError("material defines no layers", *tokens._last)

    built = []
    for i, spec in enumerate(layers):
        try:
            built.append(
                LayerSpec(
                    kind=spec["kind"],
                    albedo=np.array(spec["albedo"]),
                    roughness=spec["roughness"][0],
                    f0=np.array(spec["f0"]),
                    thickness=spec["thickness"][0],
                    orientation=np.array(spec["orientation"]),
                )
            )
        except ParameterError as e:
            raise ParameterError(f"layers[{i}]: {e}") from None
    sub = None
    if substrate is not None:
        try:
            sub = SubstrateSpec(kind=substrate["kind"], albedo=np.array(substrate["albedo"]))
        except ParameterError as e:
            raise ParameterError(f"substrate: {e}") from None
    return LayerStack(tuple(built), include_delta=bool(include_delta), substrate=sub)


def _fmt(x: float) -> str:
    if math.isinf(x):
        return "inf"
    return repr(float(x))


def _fmt3(v: np.ndarray) -> str:
    return " ".join(_fmt(c) for c in v)


def serialize_material(stack: LayerStack) -> str:
    """Canonical text for a stack; parse_material round-trips it exactly."""
    lines = [f"delta_transmission {'true' if stack.include_delta else 'false'}"]
    if stack.substrate is not None:
        lines += [
            "substrate {",
            f"    kind {stack.substrate.kind}",
            f"    albedo {_fmt3(stack.substrate.albedo)}",
            "}",
        ]
    for layer in stack.layers:
        lines += [
            "layer {",
            f"    kind {layer.kind}",
            f"    albedo {_fmt3(layer.albedo)}",
            f"    roughness {_fmt(layer.roughness)}",
            f"    f0 {_fmt3(layer.f0)}",
            f"    thickness {_fmt(layer.thickness)}",
            f"    orientation {_fmt3(layer.orientation)}",
            "}",
        ]
    return "\n".join(lines) + "\n"
