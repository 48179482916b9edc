"""Certificates that a network is affine on a region.

Two evaluation modes are supported:

``policed``
    the function computed by the POLICE forward pass (what training sees);
``plain``
    the stored network as is, e.g. a folded model deployed for inference.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .net import Network, extract_affine, fold_bias, forward_police, forward_standard, majority_signs
from .region import Region, barycentric_weights

MARGIN_TOL = 1e-12
DEFAULT_TOL = 1e-6
MAX_FIT_ATTEMPTS = 5
FIT_COND_LIMIT = 1e8
MODES = ("policed", "plain")


def _evaluator(net: Network, region: Region, mode: str):
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "policed":
        return lambda X: forward_police(net, X, region)[0]
    return lambda X: forward_standard(net, X)


@dataclass
class MarginReport:
    layer_margins: list  # min margin per layer, None for identity layers
    min_margin: float
    violations: list = field(default_factory=list)  # (layer, unit, vertex, margin)

    @property
    def passed(self) -> bool:
        return self.min_margin >= -MARGIN_TOL


def certify_sign_patterns(net: Network, region: Region, mode: str = "policed", max_violations: int = 20) -> MarginReport:
    """Minimum of (pre-activation * majority sign) over vertices, per nonlinear layer."""
    if mode == "policed":
        _, shift = forward_police(net, None, region)
        margins = shift.margins()
    else:
        _evaluator(net, region, mode)
        margins, V = [], region.vertices
        for layer in net.layers:
            H = V @ layer.weight.T + layer.bias
            margins.append(H * majority_signs(H) if layer.act.nonlinear else None)
            V = layer.act.apply(H)
    per_layer, violations = [], []
    for i, m in enumerate(margins):
        if m is None:
            per_layer.append(None)
            continue
        per_layer.append(float(m.min()) if m.size else float("inf"))
        for p, k in np.argwhere(m < -MARGIN_TOL)[:max_violations]:
            violations.append((i, int(k), int(p), float(m[p, k])))
    found = [m for m in per_layer if m is not None]
    return MarginReport(per_layer, min(found) if found else float("inf"), violations)


@dataclass
class FoldReport:
    delta: float
    n_inside: int
    n_outside: int

    @property
    def vacuous(self) -> bool:
        return self.n_inside + self.n_outside == 0


def certify_fold_equivalence(net: Network, region: Region, n_probes: int = 100, seed=0) -> FoldReport:
    """max |forward_police(net) - forward_standard(fold_bias(net))| on probes in and around the region."""
    if n_probes <= 0:
        return FoldReport(0.0, 0, 0)
    rng = np.random.default_rng(seed)
    n_in = (n_probes + 1) // 2
    n_out = n_probes - n_in
    inside = barycentric_weights(region.n_vertices, n_in, rng) @ region.vertices
    scale = 3.0 * (region.diameter() or 1.0)
    outside = region.centroid() + scale * rng.standard_normal((n_out, region.dim))
    X = np.vstack([inside, outside])
    policed, _ = forward_police(net, X, region)
    folded = forward_standard(fold_bias(net, region), X)
    return FoldReport(float(np.abs(policed - folded).max()), n_in, n_out)


@dataclass
class Certificate:
    status: str  # "pass", "fail" or "inconclusive"
    sign_margin: float
    affine_residual: float
    fit_residual: float
    fold_delta: float
    tol: float
    mode: str
    n_samples: int
    layer_margins: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    @property
    def exit_code(self) -> int:
        return {"pass": 0, "fail": 2, "inconclusive": 3}[self.status]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d

    def to_json(self) -> str:
        def clean(x):
            if isinstance(x, float) and not np.isfinite(x):
                return None
            if isinstance(x, list):
                return [clean(t) for t in x]
            return x

        return json.dumps({k: clean(v) for k, v in self.to_dict().items()}, indent=2)


def _fit_residual(f, region: Region, X_fresh, F_fresh, rng):
    """Least-squares affine fit on r+1 generic samples, r = dim of the region's affine hull.

    Returns None when every attempt was too ill-conditioned to trust.
    """
    basis = region.affine_basis()
    r = basis.shape[0]
    origin = region.vertices[0]
    for _ in range(MAX_FIT_ATTEMPTS):
        Xs = barycentric_weights(region.n_vertices, r + 1, rng) @ region.vertices
        design = np.hstack([(Xs - origin) @ basis.T, np.ones((r + 1, 1))])
        if np.linalg.cond(design) > FIT_COND_LIMIT:
            continue
        coef, *_ = np.linalg.lstsq(design, f(Xs), rcond=None)
        fresh = np.hstack([(X_fresh - origin) @ basis.T, np.ones((X_fresh.shape[0], 1))])
        return float(np.abs(fresh @ coef - F_fresh).max())
    return None


def certify_affine(net: Network, region: Region, n_samples: int = 1000, tol: float = DEFAULT_TOL,
                   seed=0, mode: str = "policed", n_probes: int = 100) -> Certificate:
    """Cross-check that the network is affine on ``region``.

    Passes iff the vertex sign margins are non-negative, the convex
    combination identity and an independent affine fit both hold to ``tol``
    on ``n_samples`` random hull points, and folding reproduces the POLICE
    forward pass to ``tol``.
    """
    f = _evaluator(net, region, mode)
    nan = float("nan")
    if n_samples < region.dim + 2:
        return Certificate("inconclusive", nan, nan, nan, nan, tol, mode, n_samples,
                           diagnostics=[f"need at least D+2={region.dim + 2} samples, got {n_samples}"])
    rng = np.random.default_rng(seed)
    margins = certify_sign_patterns(net, region, mode)

    alpha = barycentric_weights(region.n_vertices, n_samples, rng)
    X = alpha @ region.vertices
    F = f(X)
    combo = float(np.abs(F - alpha @ f(region.vertices)).max())
    fit = _fit_residual(f, region, X, F, rng)
    fold = certify_fold_equivalence(net, region, n_probes, seed)

    diagnostics = [
        f"layer {l} unit {k} vertex {p}: margin {m:.3g}" for l, k, p, m in margins.violations
    ]
    if fit is None:
        diagnostics.append("affine fit was rank-deficient in every attempt")
        status = "inconclusive"
    else:
        ok = margins.passed and combo <= tol and fit <= tol and fold.delta <= tol
        status = "pass" if ok else "fail"
        if combo > tol:
            diagnostics.append(f"convex-combination residual {combo:.3g} exceeds {tol:g}")
        if fit > tol:
            diagnostics.append(f"affine-fit residual {fit:.3g} exceeds {tol:g}")
        if fold.delta > tol:
            diagnostics.append(f"fold delta {fold.delta:.3g} exceeds {tol:g}")
    return Certificate(
        status=status,
        sign_margin=margins.min_margin,
        affine_residual=combo,
        fit_residual=nan if fit is None else fit,
        fold_delta=fold.delta,
        tol=tol,
        mode=mode,
        n_samples=n_samples,
        layer_margins=margins.layer_margins,
        diagnostics=diagnostics,
    )


@dataclass
class TargetReport:
    slope_gap: float
    offset_gap: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.slope_gap <= self.tol and self.offset_gap <= self.tol


def certify_jacobian_target(net: Network, region: Region, slope, offset, tol: float = 1e-3,
                            mode: str = "policed") -> TargetReport:
    """Max-abs gaps between the network's affine piece on the region and (slope, offset)."""
    _evaluator(net, region, mode)
    piece = extract_affine(fold_bias(net, region) if mode == "policed" else net, region)
    slope = np.asarray(slope, dtype=np.float64).reshape(piece.slope.shape)
    offset = np.asarray(offset, dtype=np.float64).reshape(piece.offset.shape)
    return TargetReport(
        float(np.abs(piece.slope - slope).max()),
        float(np.abs(piece.offset - offset).max()),
        tol,
    )
