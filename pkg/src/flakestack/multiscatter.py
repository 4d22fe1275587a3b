"""Three-lobe closure for multiple scattering.

The full reflectance model is

    f_full = f_single(stack) + w1 * f_single(proxy stack) + w2 * lambert

where the proxy stack reuses the layer kinds and orientations of the input
but with remapped (alpha, gamma, thickness, f0), and the lambert lobe is
w2 / pi on the reflection side. Both extra lobes are non-negative, so f_full
never falls below the exact single-scattering term.

Proxy parameters and lobe weights come either from `fit_direct` (per-stack
optimization against a tabulated multiple-scatter reference) or from a small
dense network (`mlp_infer`) whose weights live in .spck files. The network
consumes raw per-layer features

    [alpha, gamma.rgb, thickness, f0.rgb, kind(0 fiber / 1 surface), axis.xyz]

(12 per layer, layers concatenated top to bottom) and emits 8 remapped
parameters per layer plus the two lobe weights, squashed per output slot by
the range map recorded in the file (0: sigmoid, 1: softplus). hg layers and
semi-infinite layers are outside the network's domain.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import FileFormatError, ParameterError
from .layers import HG, LayerSpec, LayerStack
from .single_scatter import eval_stack_single_grid, eval_stack_single_many
from .tables import BsdfTable, bin_centers_upper, wo_bin_centers

WEIGHTS_MAGIC = b"SPCK"
WEIGHTS_VERSION = 1
ACT_RELU = 0
RANGE_SIGMOID = 0
RANGE_SOFTPLUS = 1

_FEATURES_PER_LAYER = 12
_PARAMS_PER_LAYER = 8  # alpha, gamma rgb, thickness, f0 rgb


@dataclass(frozen=True)
class ThreeLobeParams:
    """Materialized lobe parameters: the proxy stack plus scalar weights.
    The lambert lobe covers only the reflection side unless
    lambert_transmission is set (then w2/pi on both sides)."""

    stack: LayerStack
    w1: float
    w2: float
    lambert_transmission: bool = False


@dataclass(frozen=True)
class MlpWeights:
    weights: tuple  # per dense layer, (rows=in, cols=out) float arrays
    biases: tuple  # per dense layer, (cols,) float arrays
    range_tags: np.ndarray  # (out_dim,) uint8, applied to the final output
    activation: int = ACT_RELU

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ParameterError("weights and biases must pair up")
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ParameterError("dense layer shape mismatch")
        for a, b in zip(self.weights[:-1], self.weights[1:]):
            if a.shape[1] != b.shape[0]:
                raise ParameterError("dense layer chain mismatch")
        if self.range_tags.shape != (self.weights[-1].shape[1],):
            raise ParameterError("one range tag per output slot required")
        if self.activation != ACT_RELU:
            raise ParameterError(f"unknown activation tag {self.activation}")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]


def write_weights(path, mlp: MlpWeights) -> None:
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<II", WEIGHTS_VERSION, len(mlp.weights)))
        for w, b in zip(mlp.weights, mlp.biases):
            fh.write(struct.pack("<II", w.shape[0], w.shape[1]))
            fh.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f4").tobytes())
        fh.write(struct.pack("<B", mlp.activation))
        fh.write(np.ascontiguousarray(mlp.range_tags, dtype=np.uint8).tobytes())


def read_weights(path) -> MlpWeights:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != WEIGHTS_MAGIC:
        raise FileFormatError("not a weights file (bad magic)")
    off = 4

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(raw):
            raise FileFormatError("truncated weights file")
        vals = struct.unpack_from(fmt, raw, off)
        off += size
        return vals

    version, n_dense = take("<II")
    if version != WEIGHTS_VERSION:
        raise FileFormatError(f"unsupported weights version {version}")
    if not 1 <= n_dense <= 64:
        raise FileFormatError(f"implausible dense layer count {n_dense}")
    weights, biases = [], []
    for _ in range(n_dense):
        rows, cols = take("<II")
        if rows == 0 or cols == 0 or rows * cols > 16_000_000:
            raise FileFormatError("implausible dense layer shape")
        n = rows * cols
        if off + 4 * (n + cols) > len(raw):
            raise FileFormatError("truncated weights file")
        w = np.frombuffer(raw, dtype="<f4", count=n, offset=off).reshape(rows, cols)
        off += 4 * n
        b = np.frombuffer(raw, dtype="<f4", count=cols, offset=off)
        off += 4 * cols
        weights.append(w.astype(np.float64))
        biases.append(b.astype(np.float64))
    (activation,) = take("<B")
    out_dim = weights[-1].shape[1]
    if off + out_dim > len(raw):
        raise FileFormatError("truncated weights file")
    tags = np.frombuffer(raw, dtype=np.uint8, count=out_dim, offset=off).copy()
    off += out_dim
    if off != len(raw):
        raise FileFormatError("trailing bytes in weights file")
    if any(not np.isfinite(a).all() for a in weights + biases):
        raise FileFormatError("non-finite weights")
    if not set(np.unique(tags)) <= {RANGE_SIGMOID, RANGE_SOFTPLUS}:
        raise FileFormatError("unknown range map tag")
    try:
        return MlpWeights(tuple(weights), tuple(biases), tags, activation)
    except ParameterError as exc:
        raise FileFormatError(str(exc)) from exc


def _sigmoid(x: np.ndarray) -> np.ndarray:
    pos = x >= 0.0
    out = np.empty_like(x)
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def stack_features(stack: LayerStack) -> np.ndarray:
    """Raw network input for a stack; rejects stacks outside the lobe model's
    trained domain (hg or semi-infinite layers)."""
    feats = []
    for layer in stack.layers:
        if layer.kind == HG:
            raise ParameterError("hg layers are outside the lobe network domain")
        if layer.semi_infinite:
            raise ParameterError("semi-infinite layers are outside the lobe network domain")
        feats.extend(
            [
                layer.roughness,
                *layer.albedo,
                layer.thickness,
                *layer.f0,
                0.0 if layer.kind == "fiber" else 1.0,
                *layer.orientation,
            ]
        )
    return np.array(feats, dtype=np.float64)


def apply_range_maps(raw: np.ndarray, tags: np.ndarray) -> np.ndarray:
    out = np.empty_like(raw)
    sig = tags == RANGE_SIGMOID
    out[sig] = _sigmoid(raw[sig])
    out[~sig] = _softplus(raw[~sig])
    return out


def default_range_tags(n_layers: int) -> np.ndarray:
    """sigmoid for alpha/gamma/f0 slots, softplus for thickness and weights."""
    per = [RANGE_SIGMOID] * 4 + [RANGE_SOFTPLUS] + [RANGE_SIGMOID] * 3
    return np.array(per * n_layers + [RANGE_SOFTPLUS, RANGE_SOFTPLUS], dtype=np.uint8)


def _params_to_lobes(stack: LayerStack, mapped: np.ndarray) -> ThreeLobeParams:
    layers = []
    for i, layer in enumerate(stack.layers):
        a, = mapped[i * _PARAMS_PER_LAYER : i * _PARAMS_PER_LAYER + 1]
        g = mapped[i * _PARAMS_PER_LAYER + 1 : i * _PARAMS_PER_LAYER + 4]
        t = mapped[i * _PARAMS_PER_LAYER + 4]
        f0 = mapped[i * _PARAMS_PER_LAYER + 5 : i * _PARAMS_PER_LAYER + 8]
        layers.append(
            LayerSpec(
                kind=layer.kind,
                albedo=np.clip(g, 0.0, 1.0),
                roughness=float(np.clip(a, 1e-3, 1.0)),
                f0=np.clip(f0, 0.0, 1.0),
                thickness=float(np.clip(t, 1e-4, 1e4)),
                orientation=layer.orientation,
            )
        )
    w1, w2 = float(mapped[-2]), float(mapped[-1])
    proxy = LayerStack(layers=tuple(layers), include_delta=False, substrate=None)
    return ThreeLobeParams(stack=proxy, w1=w1, w2=w2)


def mlp_infer(mlp: MlpWeights, stack: LayerStack, bottom_only: bool = False) -> ThreeLobeParams:
    """Run the dense network on the stack's features and materialize lobes.

    With bottom_only the network emits parameters for the bottom layer only
    (8 + 2 outputs); upper proxy layers copy the input stack unchanged."""
    x = stack_features(stack)
    if x.shape[0] != mlp.in_dim:
        raise ParameterError(
            f"network expects {mlp.in_dim} features ({mlp.in_dim // _FEATURES_PER_LAYER} layers), "
            f"stack has {x.shape[0] // _FEATURES_PER_LAYER}"
        )
    n_out_layers = 1 if bottom_only else len(stack.layers)
    expected_out = _PARAMS_PER_LAYER * n_out_layers + 2
    if mlp.out_dim != expected_out:
        raise ParameterError(f"network emits {mlp.out_dim} outputs, stack needs {expected_out}")
    mapped = apply_range_maps(mapped_raw(mlp, x), mlp.range_tags)
    if bottom_only and len(stack.layers) > 1:
        upper = np.concatenate(
            [
                [l.roughness, *l.albedo, l.thickness, *l.f0]
                for l in stack.layers[:-1]
            ]
        )
        mapped = np.concatenate([upper, mapped])
    return _params_to_lobes(stack, mapped)


def mapped_raw(mlp: MlpWeights, x: np.ndarray) -> np.ndarray:
    h = x
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        h = h @ w + b
        if i + 1 < len(mlp.weights):
            h = np.maximum(h, 0.0)
    return h


def mapped_outputs(mlp: MlpWeights, stack: LayerStack) -> np.ndarray:
    """The squashed output vector itself (per-layer params then w1, w2)."""
    return apply_range_maps(mapped_raw(mlp, stack_features(stack)), mlp.range_tags)


def _lambert_many(wi: np.ndarray, wo: np.ndarray, transmission: bool) -> np.ndarray:
    if transmission:
        return np.full(np.broadcast_shapes(wi[..., 2].shape, wo[..., 2].shape), 1.0 / np.pi)
    same_side = np.sign(wi[..., 2]) * wo[..., 2] > 0.0
    return np.where(same_side, 1.0 / np.pi, 0.0)


def eval_full_many(stack: LayerStack, wi: np.ndarray, wo: np.ndarray, lobes: ThreeLobeParams) -> np.ndarray:
    """Single scattering plus the two closure lobes, (n, 3)."""
    wi = np.atleast_2d(np.asarray(wi, dtype=np.float64))
    wo = np.atleast_2d(np.asarray(wo, dtype=np.float64))
    base = eval_stack_single_many(stack, wi, wo)
    lobe1 = eval_stack_single_many(lobes.stack, wi, wo)
    lam = _lambert_many(wi, wo, lobes.lambert_transmission)
    return base + lobes.w1 * lobe1 + lobes.w2 * lam[..., None]


def eval_full(stack: LayerStack, wi: np.ndarray, wo: np.ndarray, lobes: ThreeLobeParams) -> np.ndarray:
    return eval_full_many(stack, np.asarray(wi)[None, :], np.asarray(wo)[None, :], lobes)[0]


def _lobe_grid(lobes: ThreeLobeParams, wi_dirs: np.ndarray, wo_dirs: np.ndarray) -> np.ndarray:
    pred = lobes.w1 * eval_stack_single_grid(lobes.stack, wi_dirs, wo_dirs)
    lam = _lambert_many(wi_dirs[:, None, :], wo_dirs[None, :, :], lobes.lambert_transmission)
    return pred + lobes.w2 * lam[..., None]


def fit_direct(
    stack: LayerStack,
    table: BsdfTable,
    *,
    wi_subsample: int | None = 16,
    seed: int = 0,
    maxiter: int = 40,
) -> tuple[ThreeLobeParams, dict]:
    """Fit proxy parameters and lobe weights to a tabulated multiple-scatter
    reference by Powell search on the mean absolute bin error.

    The search objective may restrict itself to `wi_subsample` random
    incoming rows for speed; the reported errors are always full-grid. The
    no-lobe baseline (w1 = w2 = 0) has error mean|table|, the yardstick a fit
    has to beat."""
    if table.mode != "multiple":
        raise ParameterError(f"fit target must be a 'multiple' mode table, got {table.mode!r}")
    for layer in stack.layers:
        if layer.kind == HG or layer.semi_infinite:
            raise ParameterError("fit domain is finite flake stacks")
    target = table.values.astype(np.float64)
    wi_dirs = bin_centers_upper(table.res_cos, table.res_phi)
    wo_dirs = wo_bin_centers(table.res_cos, table.res_phi)
    rows = np.arange(table.n_wi)
    if wi_subsample is not None and wi_subsample < table.n_wi:
        rows = np.sort(
            np.random.Generator(np.random.Philox(seed)).choice(table.n_wi, wi_subsample, replace=False)
        )

    def unpack(theta: np.ndarray) -> ThreeLobeParams:
        return _params_to_lobes(stack, np.asarray(theta, dtype=np.float64))

    def mae(lobes: ThreeLobeParams, sel: np.ndarray) -> float:
        pred = _lobe_grid(lobes, wi_dirs[sel], wo_dirs)
        return float(np.mean(np.abs(pred - target[sel])))

    x0, lo, hi = [], [], []
    for layer in stack.layers:
        x0 += [layer.roughness, *layer.albedo, layer.thickness, *layer.f0]
        lo += [0.05, 0.0, 0.0, 0.0, 0.02, 0.0, 0.0, 0.0]
        hi += [1.0, 1.0, 1.0, 1.0, 32.0, 1.0, 1.0, 1.0]
    x0 += [0.5, 0.02]
    lo += [0.0, 0.0]
    hi += [8.0, 4.0]
    x0 = np.clip(np.array(x0, dtype=np.float64), lo, hi)

    baseline = float(np.mean(np.abs(target)))
    res = minimize(
        lambda th: mae(unpack(th), rows),
        x0,
        method="Powell",
        bounds=list(zip(lo, hi)),
        options={"maxiter": maxiter, "xtol": 1e-3, "ftol": 1e-4},
    )
    lobes = unpack(res.x)
    final = mae(lobes, np.arange(table.n_wi))
    return lobes, {
        "baseline_mae": baseline,
        "mae": final,
        "reduction": 1.0 - final / baseline if baseline > 0 else 0.0,
        "nfev": int(res.nfev),
    }
