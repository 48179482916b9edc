"""Forward+backward timing of unconstrained vs POLICEd networks."""
from __future__ import annotations

import csv
import gc
import io
import logging
import time
from dataclasses import dataclass

import numpy as np

from . import core
from .errors import ConfigurationError
from .net import Network, forward_police, forward_standard, new_mlp
from .region import Region, box, simplex

log = logging.getLogger(__name__)

# (D, L, width) of the six reference configurations, in the reference column order.
TABLE1_CONFIGS = [(2, 2, 256), (2, 4, 64), (2, 4, 4096), (784, 2, 1024), (784, 8, 1024), (3072, 6, 4096)]

# Reference measurements: (unconstrained mean, std, POLICEd mean, std, slow-down), milliseconds.
REFERENCE_TABLE = {
    (2, 2, 256): (0.9, 0, 4.3, 0, 4.5),
    (2, 4, 64): (1.3, 0, 7.7, 1, 5.7),
    (2, 4, 4096): (27.9, 3, 40.3, 1, 1.4),
    (784, 2, 1024): (0.9, 0, 5.2, 0, 5.5),
    (784, 8, 1024): (3.1, 0, 20.4, 1, 6.6),
    (3072, 6, 4096): (51.9, 5, 202.2, 12, 3.9),
}
REFERENCE_SLOWDOWN_RANGE = (1.4, 6.6)
LARGE_WIDTH = 4096
CSV_COLUMNS = [
    "D", "L", "width",
    "unconstrained_ms_mean", "unconstrained_ms_std",
    "policed_ms_mean", "policed_ms_std", "slowdown",
]


@dataclass
class BenchConfig:
    input_dim: int
    depth: int
    width: int
    batch_size: int = 1024
    repeats: int = 1024
    warmup_iters: int = 5
    region: str = "simplex"
    seed: int = 0
    median_of_means: bool = False
    max_seconds: float = None  # caps repeats (never below 10) by measured warmup cost

    def __post_init__(self):
        for name in ("input_dim", "depth", "width", "batch_size", "warmup_iters"):
            if getattr(self, name) < (0 if name == "warmup_iters" else 1):
                raise ConfigurationError(f"{name} must be positive")
        if self.repeats < 10:
            raise ConfigurationError("repeats must be >= 10")
        if self.region not in ("simplex", "box"):
            raise ConfigurationError(f"unknown bench region {self.region!r}")

    @property
    def dims(self) -> list[int]:
        # every layer has the stated width; the last one is linear
        return [self.input_dim] + [self.width] * self.depth

    def make_region(self) -> Region:
        if self.region == "simplex":
            return simplex(self.input_dim)
        return box(-np.ones(self.input_dim), np.ones(self.input_dim))

    def n_vertices(self) -> int:
        return self.input_dim + 1 if self.region == "simplex" else 2**self.input_dim

    def estimated_bytes(self) -> int:
        n_params = sum(a * b + b for a, b in zip(self.dims[:-1], self.dims[1:]))
        rows = self.batch_size + self.n_vertices()
        activations = rows * (self.input_dim + self.width * self.depth)
        # two variants x (parameters, gradients, buffers) plus ~12 live activation-sized arrays
        return 8 * (6 * n_params + 12 * activations)


@dataclass
class BenchResult:
    config: BenchConfig
    unconstrained: tuple[float, float]
    policed: tuple[float, float]
    repeats: int = 0

    @property
    def slowdown(self) -> float:
        return self.policed[0] / self.unconstrained[0]


def predict(net: Network, X) -> np.ndarray:
    """Inference on a (folded) network: the plain forward pass, nothing else."""
    return forward_standard(net, X)


def _summary(samples: np.ndarray, median_of_means: bool) -> tuple[float, float]:
    if median_of_means:
        groups = np.array_split(samples, max(1, min(10, samples.size // 5)))
        return float(np.median([g.mean() for g in groups])), float(samples.std())
    return float(samples.mean()), float(samples.std())


def _training_step(net: Network, X: np.ndarray, region: Region, policed: bool):
    buffers = [np.zeros_like(p) for p in net.params()]
    params = net.params()

    def once():
        tape = core.Tape()
        nodes = [tape.param(p) for p in params]
        if policed:
            out, _ = forward_police(net, X, region, nodes)
        else:
            out = forward_standard(net, X, nodes)
        grads = tape.backward(core.mean_all(out))
        for buf, n in zip(buffers, nodes):
            buf += grads[n.id]
        tape.clear()

    return once


def run_config(cfg: BenchConfig) -> BenchResult:
    """Mean/std milliseconds of one forward + backward pass, unconstrained and POLICEd.

    Gradients are accumulated into persistent buffers, as a training loop
    with gradient accumulation would.
    """
    rng = np.random.default_rng(cfg.seed)
    net = new_mlp(cfg.dims, "relu", cfg.seed)
    X = rng.standard_normal((cfg.batch_size, cfg.input_dim))
    region = cfg.make_region()
    steps = [_training_step(net, X, region, False), _training_step(net, X, region, True)]
    t0 = time.perf_counter()
    for _ in range(cfg.warmup_iters):
        for step in steps:
            step()
    repeats = cfg.repeats
    if cfg.max_seconds is not None and cfg.warmup_iters:
        per_pair = (time.perf_counter() - t0) / cfg.warmup_iters
        repeats = int(min(repeats, max(10, cfg.max_seconds // max(per_pair, 1e-9))))
    # interleave the variants, swapping which goes first, so drift and cache
    # effects hit both equally; the cyclic gc is paused as timeit does
    samples = np.empty((2, repeats))
    gc_was_enabled = gc.isenabled()
    gc.disable()
    try:
        for i in range(repeats):
            for j in ((0, 1) if i % 2 == 0 else (1, 0)):
                t0 = time.perf_counter()
                steps[j]()
                samples[j, i] = (time.perf_counter() - t0) * 1e3
    finally:
        if gc_was_enabled:
            gc.enable()
    return BenchResult(cfg, _summary(samples[0], cfg.median_of_means), _summary(samples[1], cfg.median_of_means),
                       repeats)


@dataclass
class SuiteRow:
    dims: tuple
    result: BenchResult = None
    skipped: str = ""


@dataclass
class Table:
    rows: list

    def completed(self) -> list:
        return [r for r in self.rows if r.result is not None]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS + ["repeats", "status"])
        for r in self.rows:
            d, l, width = r.dims
            if r.result is None:
                w.writerow([d, l, width, "", "", "", "", "", "", f"skipped: {r.skipped}"])
            else:
                res = r.result
                w.writerow([d, l, width, f"{res.unconstrained[0]:.4f}", f"{res.unconstrained[1]:.4f}",
                            f"{res.policed[0]:.4f}", f"{res.policed[1]:.4f}", f"{res.slowdown:.3f}", res.repeats, "ok"])
        return buf.getvalue()

    def to_text(self, with_reference: bool = True) -> str:
        header = [
            ("input dim. D", [str(r.dims[0]) for r in self.rows]),
            ("depth L", [str(r.dims[1]) for r in self.rows]),
            ("widths", [str(r.dims[2]) for r in self.rows]),
        ]

        def cell(r, which):
            if r.result is None:
                return "skipped"
            if which == "slowdown":
                return f"x{r.result.slowdown:.2f}"
            mean, std = getattr(r.result, which)
            return f"{mean:.2f}+-{std:.2f}"

        body = [
            ("no constr.", [cell(r, "unconstrained") for r in self.rows]),
            ("POLICEd", [cell(r, "policed") for r in self.rows]),
            ("slow-down", [cell(r, "slowdown") for r in self.rows]),
        ]
        lines = _aligned(header + [None] + body)
        if with_reference:
            refs = [REFERENCE_TABLE.get(tuple(r.dims)) for r in self.rows]
            ref = [
                ("ref. no constr.", [f"{x[0]}+-{x[1]}" if x else "-" for x in refs]),
                ("ref. POLICEd", [f"{x[2]}+-{x[3]}" if x else "-" for x in refs]),
                ("ref. slow-down", [f"x{x[4]}" if x else "-" for x in refs]),
            ]
            lo, hi = REFERENCE_SLOWDOWN_RANGE
            lines += ["", "reference (hardware-dependent, for comparison only):"] + _aligned(ref)
            lines.append(f"reference slow-down envelope: x{lo} to x{hi}")
            measured = [r.result.slowdown for r in self.completed()]
            if measured:
                lines.append(f"measured slow-down range: x{min(measured):.2f} to x{max(measured):.2f}")
        return "\n".join(lines)


def _aligned(rows) -> list[str]:
    real = [r for r in rows if r is not None]
    lw = max(len(name) for name, _ in real)
    ncol = len(real[0][1])
    cw = [max(len(cells[i]) for _, cells in real) for i in range(ncol)]
    out = []
    for r in rows:
        if r is None:
            out.append("-" * (lw + sum(w + 3 for w in cw)))
            continue
        name, cells = r
        out.append(name.ljust(lw) + "".join(" | " + c.rjust(w) for c, w in zip(cells, cw)))
    return out


def available_memory() -> int:
    try:
        import psutil

        return int(psutil.virtual_memory().available)
    except ImportError:  # pragma: no cover
        return 8 << 30


def table1_suite(batch_size: int = 1024, repeats: int = 1024, warmup_iters: int = 5, skip_large: bool = False,
                 median_of_means: bool = False, seed: int = 0, memory_limit: int = None, configs=None,
                 max_seconds: float = None) -> Table:
    limit = available_memory() // 2 if memory_limit is None else memory_limit
    rows = []
    for dims in configs or TABLE1_CONFIGS:
        cfg = BenchConfig(*dims, batch_size=batch_size, repeats=repeats, warmup_iters=warmup_iters,
                          seed=seed, median_of_means=median_of_means, max_seconds=max_seconds)
        if skip_large and cfg.width >= LARGE_WIDTH:
            rows.append(SuiteRow(dims, skipped="large (--skip-large)"))
            continue
        need = cfg.estimated_bytes()
        if need > limit:
            rows.append(SuiteRow(dims, skipped=f"needs ~{need / 2**30:.1f} GiB"))
            continue
        try:
            log.info("timing D=%d L=%d width=%d", *dims)
            rows.append(SuiteRow(dims, run_config(cfg)))
        except MemoryError:
            rows.append(SuiteRow(dims, skipped="out of memory"))
    return Table(rows)
