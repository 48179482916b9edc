"""Convex polytopal regions stored by their vertices."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError, UnsupportedError, ValidationError

KINDS = ("simplex", "box", "polygon", "general")
MAX_BOX_DIM = 20
CONTAINS_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Region:
    """Convex hull of the rows of ``vertices`` (P x D)."""

    vertices: np.ndarray
    kind: str = "general"

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValidationError(f"vertices must be a non-empty P x D matrix, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("vertices must be finite")
        if self.kind not in KINDS:
            raise ValidationError(f"unknown region kind {self.kind!r}")
        p, d = v.shape
        if self.kind == "box" and p != 2**d:
            raise ValidationError(f"box region in dimension {d} needs {2**d} vertices, got {p}")
        if self.kind == "simplex" and p != d + 1:
            raise ValidationError(f"simplex region in dimension {d} needs {d + 1} vertices, got {p}")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def diameter(self) -> float:
        if self.kind == "box":
            return float(np.linalg.norm(self.vertices.max(axis=0) - self.vertices.min(axis=0)))
        v = self.vertices - self.centroid()
        sq = (v * v).sum(axis=1)
        d2 = sq[:, None] + sq[None, :] - 2.0 * (v @ v.T)
        return float(np.sqrt(max(d2.max(), 0.0)))

    def affine_basis(self, tol: float = 1e-10) -> np.ndarray:
        """Orthonormal rows spanning the affine hull's direction space (r x D)."""
        v = self.vertices - self.vertices[0]
        if self.n_vertices == 1:
            return np.zeros((0, self.dim))
        _, sv, vt = np.linalg.svd(v, full_matrices=False)
        scale = sv[0] if sv.size and sv[0] > 0 else 1.0
        return vt[sv > tol * scale]

    def to_json(self) -> str:
        return json.dumps({"vertices": self.vertices.tolist(), "kind": self.kind})

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")


def from_vertices(vs) -> Region:
    try:
        rows = [list(map(float, v)) for v in vs]
    except TypeError as exc:
        raise ValidationError(f"vertices must be a list of vectors: {exc}") from None
    if not rows:
        raise ValidationError("at least one vertex is required")
    d = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != d:
            raise ValidationError(f"vertex {i} has dimension {len(r)}, expected {d}")
    v = np.array(rows, dtype=np.float64).reshape(len(rows), d)
    return Region(v, "polygon" if d == 2 else "general")


def simplex(d: int) -> Region:
    if d < 1:
        raise ValidationError(f"simplex dimension must be >= 1, got {d}")
    return Region(np.vstack([np.zeros((1, d)), np.eye(d)]), "simplex")


def box(lo, hi) -> Region:
    lo = np.asarray(lo, dtype=np.float64).reshape(-1)
    hi = np.asarray(hi, dtype=np.float64).reshape(-1)
    if lo.shape != hi.shape or lo.size == 0:
        raise ValidationError(f"box bounds must be equal-length vectors, got {lo.shape} and {hi.shape}")
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ValidationError("box bounds must be finite")
    bad = np.flatnonzero(lo >= hi)
    if bad.size:
        raise ValidationError(f"box needs lo < hi in every coordinate; violated at {bad.tolist()}")
    d = lo.size
    if d > MAX_BOX_DIM:
        raise ValidationError(f"box dimension {d} exceeds {MAX_BOX_DIM} (2^D vertices)")
    bits = (np.arange(2**d)[:, None] >> np.arange(d)[None, :]) & 1
    return Region(np.where(bits == 1, hi, lo), "box")


def barycentric_weights(p: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """n x p flat-Dirichlet weights (normalised exponential variates)."""
    e = rng.standard_exponential((n, p))
    return e / e.sum(axis=1, keepdims=True)


def sample_barycentric(r: Region, n: int, seed=None) -> np.ndarray:
    if n < 1:
        raise ValidationError(f"sample count must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    return barycentric_weights(r.n_vertices, n, rng) @ r.vertices


def contains(r: Region, x) -> bool:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != r.dim:
        raise ValidationError(f"point has dimension {x.size}, region has {r.dim}")
    if r.kind == "box":
        lo, hi = r.vertices.min(axis=0), r.vertices.max(axis=0)
        return bool(np.all(x >= lo - CONTAINS_TOL) and np.all(x <= hi + CONTAINS_TOL))
    if r.kind == "simplex":
        # barycentric coordinates relative to vertex 0
        base = r.vertices[0]
        edges = (r.vertices[1:] - base).T
        lam = np.linalg.solve(edges, x - base)
        alpha = np.concatenate([[1.0 - lam.sum()], lam])
        return bool(np.all(alpha >= -CONTAINS_TOL))
    raise UnsupportedError(f"membership test is not available for {r.kind!r} regions")


def can_test_membership(r: Region) -> bool:
    return r.kind in ("box", "simplex")


def region_from_dict(obj, path="region") -> Region:
    if not isinstance(obj, dict) or "vertices" not in obj:
        raise ParseError('expected an object with a "vertices" array', path)
    vs = obj["vertices"]
    if not isinstance(vs, list) or not vs:
        raise ParseError("must be a non-empty array of vertices", f"{path}.vertices")
    for i, row in enumerate(vs):
        if not isinstance(row, list) or not all(isinstance(t, (int, float)) and not isinstance(t, bool) for t in row):
            raise ParseError("must be an array of numbers", f"{path}.vertices[{i}]")
    try:
        r = from_vertices(vs)
        kind = obj.get("kind")
        if kind is not None:
            r = Region(r.vertices, kind)
    except ValidationError as exc:
        raise ParseError(str(exc), path) from None
    return r


def load_region(path) -> Region:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}", str(path)) from None
    return region_from_dict(obj, str(path))
