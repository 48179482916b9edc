"""Synthetic 2-D demo datasets and the CSV data format (header row, label last)."""
from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from .errors import ParseError

GENERATOR_VERSION = 1
N_CLASSIFICATION = 1000
N_REGRESSION = 2000
DOMAIN = (-3.0, 3.0)


def regression_target(X) -> np.ndarray:
    """sin(3r) * exp(-0.3 r) with r the distance to the origin."""
    r = np.linalg.norm(np.asarray(X, dtype=np.float64).reshape(-1, 2), axis=1)
    return np.sin(3.0 * r) * np.exp(-0.3 * r)


def make_classification(seed=0, n=N_CLASSIFICATION):
    """Two interleaved noisy arcs, n // 2 points each."""
    rng = np.random.default_rng(seed)
    half = n // 2
    t0 = rng.uniform(0.0, np.pi, half)
    t1 = rng.uniform(0.0, np.pi, n - half)
    a = np.column_stack([1.5 * np.cos(t0) - 0.75, 1.5 * np.sin(t0) - 0.4])
    b = np.column_stack([1.5 * np.cos(t1) + 0.75, -1.5 * np.sin(t1) + 0.4])
    X = np.vstack([a, b]) + 0.12 * rng.standard_normal((n, 2))
    y = np.concatenate([np.zeros(half), np.ones(n - half)])
    order = rng.permutation(n)
    return X[order], y[order].reshape(-1, 1)


def make_regression(seed=0, n=N_REGRESSION):
    rng = np.random.default_rng(seed)
    X = rng.uniform(DOMAIN[0], DOMAIN[1], size=(n, 2))
    return X, regression_target(X).reshape(-1, 1)


def demo_dataset(task: str, seed=0):
    if task == "classification":
        return make_classification(seed)
    if task == "regression":
        return make_regression(seed)
    raise ValueError(f"unknown task {task!r}")


def to_csv(X, y) -> str:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(X.shape[0], -1)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{i}" for i in range(X.shape[1])] + (["y"] if y.shape[1] == 1 else [f"y{j}" for j in range(y.shape[1])]))
    for xr, yr in zip(X.tolist(), y.tolist()):
        w.writerow([repr(v) for v in xr + yr])
    return buf.getvalue()


def save_csv(path, X, y) -> None:
    Path(path).write_text(to_csv(X, y))


def load_csv(path, n_targets: int = 1):
    """Read a data CSV; the last ``n_targets`` columns are the labels."""
    text = Path(path).read_text()
    rows = list(csv.reader(io.StringIO(text)))
    if len(rows) < 2:
        raise ParseError("expected a header row and at least one data row", str(path))
    width = len(rows[0])
    if width <= n_targets:
        raise ParseError(f"need more than {n_targets} columns", str(path))
    data = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise ParseError(f"line {i} has {len(row)} fields, header has {width}", str(path))
        try:
            data.append([float(t) for t in row])
        except ValueError:
            raise ParseError(f"line {i} contains a non-numeric field", str(path)) from None
    arr = np.array(data, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ParseError("non-finite value in data", str(path))
    return arr[:, :-n_targets], arr[:, -n_targets:]
