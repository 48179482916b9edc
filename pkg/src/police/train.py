"""Losses, optimizers and the POLICE training loop."""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import core, net as netmod
from .errors import ConfigurationError, DimensionError, NonFiniteLossError, ParseError, ValidationError
from .net import Network, forward_police
from .region import Region, can_test_membership, contains

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "police-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    steps: int = 1000
    batch_size: int = 128
    lr: float = 0.01
    lr_schedule: str = "constant"  # or "cosine": lr * (1 + cos(pi * t / steps)) / 2
    optimizer: str = "sgd"
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 0
    loss: str = "mse"
    checkpoint_steps: list = field(default_factory=lambda: [5, 50])
    certify_samples: int = 1000
    certify_tol: float = 1e-6

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigurationError("steps must be >= 0")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if not self.lr > 0:
            raise ConfigurationError("lr must be > 0")
        if self.weight_decay < 0:
            raise ConfigurationError("weight_decay must be >= 0")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigurationError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        if self.loss not in ("mse", "bce_logits"):
            raise ConfigurationError(f"unknown loss {self.loss!r}")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError("momentum must lie in [0, 1)")
        self.checkpoint_steps = sorted({int(s) for s in self.checkpoint_steps})

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        if not isinstance(obj, dict):
            raise ParseError("expected a JSON object", "$")
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ParseError(f"unknown fields {sorted(unknown)}", "$")
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        try:
            obj = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc}", str(path)) from None
        return cls.from_dict(obj)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AffineTarget:
    """Desired affine map x -> slope @ x + offset on the region, probed at ``anchor``."""

    slope: np.ndarray
    offset: np.ndarray
    anchor: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        self.slope = core.as_matrix(self.slope, "target slope")
        self.offset = core.as_vector(np.ravel(self.offset), "target offset")
        self.anchor = core.as_vector(np.ravel(self.anchor), "target anchor")
        if self.offset.size != self.slope.shape[0] or self.anchor.size != self.slope.shape[1]:
            raise DimensionError(
                f"target slope {self.slope.shape}, offset {self.offset.shape} and anchor {self.anchor.shape} disagree"
            )
        if self.weight < 0:
            raise ValidationError("penalty weight must be >= 0")


def loss(kind: str, predictions, targets):
    p, t = core.value(predictions), np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise DimensionError(f"predictions {p.shape} and targets {t.shape} differ in shape")
    if kind == "mse":
        return core.mean_all(core.square(core.sub(predictions, t)))
    if kind == "bce_logits":
        if not np.all((t == 0) | (t == 1)):
            raise ValidationError("bce_logits targets must be 0 or 1")
        return core.mean_all(core.sub(core.softplus(predictions), core.mul(predictions, t)))
    raise ConfigurationError(f"unknown loss {kind!r}")


class SGD:
    def __init__(self, lr, momentum=0.0, weight_decay=0.0):
        self.lr, self.momentum, self.weight_decay = lr, momentum, weight_decay
        self.buffers = None

    def step(self, params, grads):
        grads = [g + self.weight_decay * p for p, g in zip(params, grads)]
        if self.buffers is None:
            self.buffers = [g.copy() for g in grads]
        else:
            self.buffers = [self.momentum * b + g for b, g in zip(self.buffers, grads)]
        return [p - self.lr * b for p, b in zip(params, self.buffers)]

    def state_dict(self):
        return {"buffers": None if self.buffers is None else [b.tolist() for b in self.buffers]}

    def load_state_dict(self, state, shapes):
        bufs = state.get("buffers")
        self.buffers = None if bufs is None else [np.array(b, dtype=np.float64).reshape(s) for b, s in zip(bufs, shapes)]


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = self.v = None

    def step(self, params, grads):
        grads = [g + self.weight_decay * p for p, g in zip(params, grads)]
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m = [b1 * m + (1 - b1) * g for m, g in zip(self.m, grads)]
        self.v = [b2 * v + (1 - b2) * g * g for v, g in zip(self.v, grads)]
        c1, c2 = 1 - b1**self.t, 1 - b2**self.t
        return [
            p - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps) for p, m, v in zip(params, self.m, self.v)
        ]

    def state_dict(self):
        return {
            "t": self.t,
            "m": None if self.m is None else [a.tolist() for a in self.m],
            "v": None if self.v is None else [a.tolist() for a in self.v],
        }

    def load_state_dict(self, state, shapes):
        self.t = int(state.get("t", 0))
        if state.get("m") is None:
            self.m = self.v = None
        else:
            self.m = [np.array(a, dtype=np.float64).reshape(s) for a, s in zip(state["m"], shapes)]
            self.v = [np.array(a, dtype=np.float64).reshape(s) for a, s in zip(state["v"], shapes)]


def make_optimizer(config: TrainConfig):
    if config.optimizer == "sgd":
        return SGD(config.lr, config.momentum, config.weight_decay)
    return Adam(config.lr, config.beta1, config.beta2, config.adam_eps, config.weight_decay)


def _probe_offsets(region: Region, anchor: np.ndarray, eps: float) -> np.ndarray:
    """Signed step per input direction so that anchor +- eps*e_i stays in the region."""
    d = anchor.size
    steps = np.full(d, eps)
    if not can_test_membership(region):
        return steps
    for i in range(d):
        for _ in range(40):
            e = np.zeros(d)
            e[i] = steps[i]
            if contains(region, anchor + e):
                break
            e[i] = -steps[i]
            if contains(region, anchor + e):
                steps[i] = -steps[i]
                break
            steps[i] /= 2
        else:
            raise ValidationError(f"cannot probe direction {i} inside the region from the anchor")
    return steps


def affine_target_penalty(net: Network, region: Region, target: AffineTarget, params=None, eps=None):
    """weight * (||J f(v) - A*||_F^2 + ||f(v) - (A* v + b*)||^2) under the POLICE forward.

    The Jacobian is taken by forward differences inside the region, where the
    constrained network is exactly affine, so the penalty stays differentiable.
    """
    v = target.anchor
    if v.size != net.input_dim or target.slope.shape[0] != net.output_dim:
        raise DimensionError("affine target does not match the network's input/output dimensions")
    if can_test_membership(region) and not contains(region, v):
        raise ValidationError("penalty anchor lies outside the region")
    if eps is None:
        eps = 1e-4 * max(region.diameter(), 1e-12)
    steps = _probe_offsets(region, v, eps)
    d = v.size
    X = np.vstack([v, v + np.diag(steps)])
    out, _ = forward_police(net, X, region, params)
    # rows: f(v + h_i e_i) - f(v), divided by h_i
    diff = np.hstack([-np.ones((d, 1)), np.eye(d)]) / steps[:, None]
    jac_t = core.matmul(diff, out)  # D x K
    f_v = core.matmul(np.eye(1, d + 1), out)  # 1 x K
    want = (target.slope @ v + target.offset).reshape(1, -1)
    total = core.add(
        core.sum_all(core.square(core.sub(jac_t, target.slope.T))),
        core.sum_all(core.square(core.sub(f_v, want))),
    )
    return core.scale(total, target.weight)


@dataclass
class Checkpoint:
    step: int
    net: Network
    certificate: object = None


@dataclass
class History:
    records: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)

    def losses(self) -> np.ndarray:
        return np.array([r["loss"] for r in self.records])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "loss", "certificate_residual"])
        for r in self.records:
            res = r.get("certificate_residual")
            w.writerow([r["step"], repr(r["loss"]), "" if res is None else repr(res)])
        return buf.getvalue()


class Trainer:
    """Stateful training run: parameters, optimizer state and batch RNG.

    ``step()`` samples a mini-batch, runs the POLICE forward on a fresh tape,
    adds the optional weight decay and affine-target penalty, back-propagates
    and updates.
    """

    def __init__(self, net: Network, data, region: Region, config: TrainConfig, target: Optional[AffineTarget] = None):
        X, Y = data
        self.X = core.as_matrix(X, "inputs")
        self.Y = np.asarray(Y, dtype=np.float64).reshape(self.X.shape[0], -1)
        if self.X.shape[1] != net.input_dim or self.Y.shape[1] != net.output_dim:
            raise DimensionError(
                f"data ({self.X.shape[1]} inputs, {self.Y.shape[1]} targets) does not match "
                f"network ({net.input_dim} -> {net.output_dim})"
            )
        self.template = net
        self.params = [p.copy() for p in net.params()]
        self.region = region
        self.config = config
        self.target = target
        self.optimizer = make_optimizer(config)
        self.rng = np.random.default_rng(config.seed)
        self.step_count = 0

    @property
    def net(self) -> Network:
        return self.template.with_params(self.params)

    def _batch(self):
        n = self.X.shape[0]
        if self.config.batch_size >= n:
            return self.X, self.Y
        idx = self.rng.choice(n, size=self.config.batch_size, replace=False)
        return self.X[idx], self.Y[idx]

    def learning_rate(self) -> float:
        """Learning rate for the next step."""
        cfg = self.config
        if cfg.lr_schedule == "constant" or cfg.steps == 0:
            return cfg.lr
        t = min(self.step_count, cfg.steps)
        return cfg.lr * 0.5 * (1.0 + np.cos(np.pi * t / cfg.steps))

    def step(self) -> float:
        xb, yb = self._batch()
        tape = core.Tape()
        nodes = [tape.param(p) for p in self.params]
        out, _ = forward_police(self.template, xb, self.region, nodes)
        total = loss(self.config.loss, out, yb)
        if self.target is not None and self.target.weight > 0:
            total = core.add(total, affine_target_penalty(self.template, self.region, self.target, nodes))
        value = float(total.value)
        if self.config.weight_decay:
            value += 0.5 * self.config.weight_decay * sum(float((p * p).sum()) for p in self.params)
        self.step_count += 1
        if not np.isfinite(value):
            raise NonFiniteLossError(self.step_count, value)
        grads = tape.backward(total)
        tape.clear()
        self.optimizer.lr = self.learning_rate()
        self.params = self.optimizer.step(self.params, [grads[n.id] for n in nodes])
        return value

    def certify(self, seed=None):
        from .verify import certify_affine

        return certify_affine(
            self.net,
            self.region,
            n_samples=self.config.certify_samples,
            tol=self.config.certify_tol,
            seed=self.config.seed if seed is None else seed,
            mode="policed",
        )

    def run(self, steps: Optional[int] = None, history: Optional[History] = None, certify: bool = True) -> History:
        history = history if history is not None else History()
        steps = self.config.steps if steps is None else steps
        end = self.step_count + steps
        marks = {s for s in self.config.checkpoint_steps if self.step_count <= s <= end} | {end}

        def checkpoint():
            cert = self.certify() if certify else None
            history.checkpoints.append(Checkpoint(self.step_count, self.net, cert))
            return cert

        if self.step_count in marks:
            cert = checkpoint()
            history.records.append(
                {"step": self.step_count, "loss": float("nan"),
                 "certificate_residual": None if cert is None else cert.affine_residual}
            )
        while self.step_count < end:
            value = self.step()
            record = {"step": self.step_count, "loss": value, "certificate_residual": None}
            if self.step_count in marks:
                cert = checkpoint()
                record["certificate_residual"] = None if cert is None else cert.affine_residual
                log.info("step %d loss %.6g certificate %s", self.step_count, value,
                         None if cert is None else cert.status)
            history.records.append(record)
        return history

    # -- checkpoints ------------------------------------------------------

    def save(self, path) -> None:
        state = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "step": self.step_count,
            "config": self.config.to_dict(),
            "model": netmod.to_dict(self.net),
            "optimizer": {"kind": self.config.optimizer, **self.optimizer.state_dict()},
            "rng": self.rng.bit_generator.state,
        }
        Path(path).write_text(json.dumps(state))

    @classmethod
    def load(cls, path, data, region: Region, target: Optional[AffineTarget] = None,
             net: Optional[Network] = None) -> "Trainer":
        """Restore a run. ``net`` (if given) must have the checkpoint's architecture."""
        try:
            state = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc}", str(path)) from None
        if not isinstance(state, dict) or state.get("format") != CHECKPOINT_FORMAT:
            raise ParseError("not a POLICE checkpoint", str(path))
        if state.get("version") != CHECKPOINT_VERSION:
            raise ParseError(f"unsupported checkpoint version {state.get('version')!r}", str(path))
        model = netmod.from_dict(state["model"])
        if net is not None:
            if net.dims != model.dims or [l.act for l in net.layers] != [l.act for l in model.layers]:
                raise ValidationError(f"checkpoint architecture {model.dims} does not match network {net.dims}")
        config = TrainConfig.from_dict(state["config"])
        trainer = cls(model, data, region, config, target)
        shapes = [p.shape for p in trainer.params]
        trainer.optimizer.load_state_dict(state["optimizer"], shapes)
        trainer.rng.bit_generator.state = state["rng"]
        trainer.step_count = int(state["step"])
        return trainer


def train_loop(net: Network, data, region: Region, config: TrainConfig,
               target: Optional[AffineTarget] = None, certify: bool = True):
    """Train with the POLICE forward pass; returns (trained network, history)."""
    trainer = Trainer(net, data, region, config, target)
    history = trainer.run(certify=certify)
    return trainer.net, history


def save_checkpoint(trainer: Trainer, path) -> None:
    trainer.save(path)


def load_checkpoint(path, data, region, target=None, net=None) -> Trainer:
    return Trainer.load(path, data, region, target, net)
