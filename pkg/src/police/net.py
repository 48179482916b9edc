"""Dense CPA networks, the POLICE constrained forward pass and bias folding."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import core
from .core import Activation, as_activation
from .errors import ContractError, DimensionError, ParseError, ValidationError
from .region import Region

ZERO_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    act: Activation = Activation("identity")

    def __post_init__(self):
        w = np.array(self.weight, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64).reshape(-1)
        if w.ndim != 2:
            raise DimensionError(f"layer weight must be 2-D, got shape {w.shape}")
        if b.size != w.shape[0]:
            raise DimensionError(f"bias length {b.size} does not match {w.shape[0]} weight rows")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)
        object.__setattr__(self, "act", as_activation(self.act))

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass(frozen=True, eq=False)
class Network:
    layers: tuple[Layer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValidationError("a network needs at least one layer")
        for i in range(1, len(layers)):
            if layers[i].in_dim != layers[i - 1].out_dim:
                raise DimensionError(
                    f"layer {i} expects {layers[i].in_dim} inputs but layer {i - 1} produces {layers[i - 1].out_dim}"
                )
        object.__setattr__(self, "layers", layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def dims(self) -> list[int]:
        return [self.input_dim] + [l.out_dim for l in self.layers]

    def params(self) -> list[np.ndarray]:
        """Flat parameter list [W1, b1, W2, b2, ...]."""
        out = []
        for l in self.layers:
            out += [l.weight, l.bias]
        return out

    def with_params(self, params: Sequence[np.ndarray]) -> "Network":
        if len(params) != 2 * len(self.layers):
            raise DimensionError(f"expected {2 * len(self.layers)} parameter arrays, got {len(params)}")
        return Network(
            tuple(
                Layer(np.array(params[2 * i]), np.array(params[2 * i + 1]), l.act)
                for i, l in enumerate(self.layers)
            )
        )

    def with_bias(self, index: int, bias) -> "Network":
        layers = list(self.layers)
        l = layers[index]
        layers[index] = Layer(l.weight, bias, l.act)
        return Network(tuple(layers))


def new_mlp(dims: Sequence[int], activation="relu", seed=None) -> Network:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases, identity output layer."""
    dims = list(dims)
    if len(dims) < 2 or any(int(d) != d or d < 1 for d in dims):
        raise ValidationError(f"dims must list at least two positive integers, got {dims}")
    act = as_activation(activation)
    rng = np.random.default_rng(seed)
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        last = i == len(dims) - 2
        layers.append(Layer(w, np.zeros(fan_out), Activation("identity") if last else act))
    return Network(tuple(layers))


def _layer_params(net: Network, params):
    if params is None:
        return [(l.weight, l.bias) for l in net.layers]
    if len(params) != 2 * len(net.layers):
        raise DimensionError(f"expected {2 * len(net.layers)} parameters, got {len(params)}")
    return [(params[2 * i], params[2 * i + 1]) for i in range(len(net.layers))]


def _check_input(net: Network, X, name="input"):
    vx = core.value(X)
    if vx.ndim != 2 or vx.shape[1] != net.input_dim:
        raise DimensionError(f"{name} has shape {vx.shape}; network expects N x {net.input_dim}")


def forward_standard(net: Network, X, params=None):
    """Plain composition of the layers. ``params`` may hold tape nodes."""
    _check_input(net, X)
    for layer, (w, b) in zip(net.layers, _layer_params(net, params)):
        h = core.add_row_broadcast(core.matmul(X, core.transpose(w)), b)
        X = core.activation(h, layer.act)
    return X


def majority_signs(h: np.ndarray) -> np.ndarray:
    """+1 where at least half of the rows are strictly positive, else -1."""
    h = core.value(h)
    positives = np.count_nonzero(h > 0, axis=0)
    return np.where(2 * positives >= h.shape[0], 1.0, -1.0)


def compute_shift(H):
    """Majority direction ``s`` and the bias shift ``c`` moving every row of H onto side s.

    Works on arrays or tape nodes; ``s`` is always a detached array.
    """
    vh = core.value(H)
    if vh.ndim != 2 or vh.shape[0] < 1:
        raise DimensionError(f"compute_shift needs a P x W matrix with P >= 1, got shape {vh.shape}")
    s = majority_signs(vh)
    violation = core.activation(core.scale_columns(core.neg(H), s), "relu")
    c = core.scale_columns(core.column_max_over_rows(violation), s)
    return s, c


@dataclass
class Shift:
    """Per-layer majority signs and bias shifts (None/zeros for identity layers)."""

    signs: list = field(default_factory=list)
    shifts: list = field(default_factory=list)
    preacts: list = field(default_factory=list)  # vertex pre-activations after the shift

    def margins(self) -> list:
        """Per constrained layer: (H + c) * s for every vertex and unit, or None."""
        return [None if s is None else h * s for s, h in zip(self.signs, self.preacts)]


def forward_police(net: Network, X, region: Region, params=None):
    """Constrained forward pass; returns (batch output, Shift).

    The vertices travel through the network alongside the batch.  Every
    nonlinear layer gets its bias shifted so all vertices share one sign
    pattern, which makes the network affine on the region.  With tape nodes
    in ``params`` gradients flow through the shift; the signs are constants.
    ``X`` may be None to only propagate the vertices.
    """
    if region.n_vertices < 1:
        raise ValidationError("region has no vertices")
    if region.dim != net.input_dim:
        raise DimensionError(f"region dimension {region.dim} does not match network input {net.input_dim}")
    if X is not None:
        _check_input(net, X)
    V = region.vertices
    shift = Shift()
    for layer, (w, b) in zip(net.layers, _layer_params(net, params)):
        wt = core.transpose(w)
        H = core.add_row_broadcast(core.matmul(V, wt), b)
        if layer.act.nonlinear:
            s, c = compute_shift(H)
            bc = core.add(b, c)
            Hs = core.add_row_broadcast(H, c)
        else:
            s, c = None, np.zeros(layer.out_dim)
            bc, Hs = b, H
        shift.signs.append(s)
        shift.shifts.append(np.array(core.value(c)))
        shift.preacts.append(np.array(core.value(Hs)))
        if X is not None:
            X = core.activation(core.add_row_broadcast(core.matmul(X, wt), bc), layer.act)
        V = core.activation(Hs, layer.act)
    return X, shift


def fold_bias(net: Network, region: Region) -> Network:
    """Absorb the POLICE shifts into the biases (one pass, earlier layers already folded)."""
    _, shift = forward_police(net, None, region)
    layers = tuple(Layer(l.weight, l.bias + c, l.act) for l, c in zip(net.layers, shift.shifts))
    return Network(layers)


@dataclass
class AffinePiece:
    slope: np.ndarray  # (K, D)
    offset: np.ndarray  # (K,)
    sign_pattern: list  # per layer: +1/-1 per unit, None for identity layers

    def __call__(self, X):
        return np.asarray(X, dtype=np.float64) @ self.slope.T + self.offset


def _chain(net: Network, branches: list) -> np.ndarray:
    """W_L Q_{L-1} W_{L-1} ... Q_1 W_1 for per-layer diagonal slopes ``branches``."""
    A = None
    for layer, q in zip(net.layers, branches):
        step = layer.weight if q is None else q[:, None] * layer.weight
        A = step if A is None else step @ A
    return A


def extract_affine(net_folded: Network, region: Region) -> AffinePiece:
    """Slope and offset of a network that is affine on ``region``.

    Raises ContractError when two vertices lie strictly on opposite sides of
    some unit's kink.
    """
    if region.dim != net_folded.input_dim:
        raise DimensionError(f"region dimension {region.dim} does not match network input {net_folded.input_dim}")
    V = region.vertices
    branches, pattern = [], []
    for i, layer in enumerate(net_folded.layers):
        H = V @ layer.weight.T + layer.bias
        if not layer.act.nonlinear:
            branches.append(None)
            pattern.append(None)
        else:
            # folding leaves round-off sized values where the shift pinned a vertex at 0
            zero_tol = ZERO_TOL * np.maximum(1.0, np.abs(H).max(axis=0))
            pos, negs = np.any(H > zero_tol, axis=0), np.any(H < -zero_tol, axis=0)
            mixed = np.flatnonzero(pos & negs)
            if mixed.size:
                k = int(mixed[0])
                raise ContractError(
                    f"vertices disagree on the sign of layer {i} unit {k} "
                    f"(pre-activations from {H[:, k].min():.3g} to {H[:, k].max():.3g})"
                )
            side = np.where(pos, 1.0, np.where(negs, -1.0, -1.0))
            neg_slope, pos_slope = layer.act.branch_slopes()
            branches.append(np.where(side > 0, pos_slope, neg_slope))
            pattern.append(side.astype(np.int8))
        V = layer.act.apply(H)
    A = _chain(net_folded, branches)
    # every branch is h -> q*h, so the offset chains like the slope
    b = np.zeros(0)
    for layer, q in zip(net_folded.layers, branches):
        h = layer.bias if b.size == 0 else layer.weight @ b + layer.bias
        b = h if q is None else q * h
    return AffinePiece(A, b, pattern)


def jacobian_at(net: Network, x) -> np.ndarray:
    """K x D Jacobian at ``x``; exact zeros take the positive branch."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    _check_input(net, x)
    branches = []
    for layer in net.layers:
        h = x @ layer.weight.T + layer.bias
        branches.append(layer.act.slope(h[0], "positive") if layer.act.nonlinear else None)
        x = layer.act.apply(h)
    return _chain(net, branches)


# -- serialization ---------------------------------------------------------

def to_dict(net: Network) -> dict:
    return {
        "layers": [
            {"w": l.weight.tolist(), "b": l.bias.tolist(), **l.act.to_dict()} for l in net.layers
        ]
    }


def serialize(net: Network) -> bytes:
    return json.dumps(to_dict(net)).encode()


def _number_list(x, path):
    if not isinstance(x, list):
        raise ParseError("expected an array of numbers", path)
    for i, t in enumerate(x):
        if isinstance(t, bool) or not isinstance(t, (int, float)):
            raise ParseError(f"entry {i} is not a number", path)
    return [float(t) for t in x]


def from_dict(obj) -> Network:
    if not isinstance(obj, dict) or not isinstance(obj.get("layers"), list):
        raise ParseError('expected an object with a "layers" array', "$")
    if not obj["layers"]:
        raise ParseError("needs at least one layer", "$.layers")
    layers = []
    for i, entry in enumerate(obj["layers"]):
        path = f"$.layers[{i}]"
        if not isinstance(entry, dict):
            raise ParseError("expected an object", path)
        for key in ("w", "b", "act"):
            if key not in entry:
                raise ParseError(f'missing "{key}"', path)
        w = entry["w"]
        if not isinstance(w, list) or not w:
            raise ParseError("expected a non-empty array of rows", f"{path}.w")
        rows = [_number_list(r, f"{path}.w[{j}]") for j, r in enumerate(w)]
        for j, r in enumerate(rows):
            if len(r) != len(rows[0]):
                raise ParseError(f"row {j} has {len(r)} entries, row 0 has {len(rows[0])}", f"{path}.w[{j}]")
        b = _number_list(entry["b"], f"{path}.b")
        if len(b) != len(rows):
            raise ParseError(f"bias has {len(b)} entries for {len(rows)} weight rows", f"{path}.b")
        kind = entry["act"]
        if kind not in core.ACTIVATIONS:
            raise ParseError(f"unknown activation {kind!r}", f"{path}.act")
        if kind == "leaky_relu":
            if "alpha" not in entry:
                warnings.warn(f"{path}: leaky_relu without alpha, using {core.DEFAULT_LEAKY_ALPHA}", stacklevel=2)
            alpha = entry.get("alpha", core.DEFAULT_LEAKY_ALPHA)
            try:
                act = Activation(kind, float(alpha))
            except (ValueError, TypeError) as exc:
                raise ParseError(str(exc), f"{path}.alpha") from None
        else:
            act = Activation(kind)
        wa = np.array(rows, dtype=np.float64)
        if not (np.all(np.isfinite(wa)) and np.all(np.isfinite(b))):
            raise ParseError("parameters must be finite", path)
        layers.append(Layer(wa, np.array(b), act))
    for i in range(1, len(layers)):
        if layers[i].in_dim != layers[i - 1].out_dim:
            raise ParseError(
                f"expects {layers[i].in_dim} inputs but the previous layer has {layers[i - 1].out_dim} outputs",
                f"$.layers[{i}].w",
            )
    return Network(tuple(layers))


def deserialize(data) -> Network:
    try:
        obj = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"invalid JSON: {exc}", "$") from None
    return from_dict(obj)


def save_model(net: Network, path) -> None:
    Path(path).write_bytes(serialize(net) + b"\n")


def load_model(path) -> Network:
    try:
        return deserialize(Path(path).read_bytes())
    except ParseError as exc:
        raise ParseError(str(exc), str(path)) from None
