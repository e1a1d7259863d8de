"""Minibatch SGD with K disjoint batches per epoch, learning-rate schedules,
trajectory logging, and the small-step-size bound for logistic regression."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from oddlab import fileio
from oddlab.errors import ConfigError
from oddlab.linalg import spectral_norm
from oddlab.models import checkpoint_text, model_from_dict

LOGISTIC_SMOOTHNESS = 0.25


@dataclass(frozen=True)
class Schedule:
    kind: str = "constant"  # constant | step | cosine
    milestones: tuple = ()
    factor: float = 0.1
    total_epochs: int = 0

    def validate(self):
        if self.kind not in ("constant", "step", "cosine"):
            raise ConfigError(f"schedule.kind: unknown schedule {self.kind!r}")
        if self.kind == "step" and not self.milestones:
            raise ConfigError("schedule.milestones: step schedule needs milestones")
        if self.kind == "cosine" and self.total_epochs < 2:
            raise ConfigError("schedule.total_epochs: cosine schedule needs total_epochs >= 2")

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        if "milestones" in d:
            d["milestones"] = tuple(d["milestones"])
        return cls(**d)


def schedule_value(schedule: Schedule, epoch: int) -> float:
    """Multiplier applied to the base rate during `epoch` (1-based)."""
    schedule.validate()
    if epoch < 1:
        raise ConfigError("epoch must be >= 1")
    if schedule.kind == "constant":
        return 1.0
    if schedule.kind == "step":
        passed = sum(1 for m in schedule.milestones if epoch > m)
        return schedule.factor ** passed
    T = schedule.total_epochs
    e = min(epoch, T)
    return 0.5 * (1.0 + math.cos(math.pi * (e - 1) / (T - 1)))


@dataclass(frozen=True)
class SgdConfig:
    eta: float
    K: int = 1
    epochs: int = 1
    schedule: Schedule = field(default_factory=Schedule)
    seed: int = 0
    checkpoint_every: int = 0  # 0 -> only explicit checkpoints / final
    checkpoint_at: tuple = ()  # explicit iteration numbers
    log_losses: bool = True
    reduction: str = "sum"  # "sum" (analysed update) or "mean"
    ragged: bool = False  # allow N not divisible by K (batches via array_split)

    def validate(self, n=None):
        if not self.eta >= 0 or not math.isfinite(self.eta):
            raise ConfigError(f"eta: must be a finite nonnegative number, got {self.eta}")
        if self.K < 1:
            raise ConfigError(f"K: must be >= 1, got {self.K}")
        if self.epochs < 0:
            raise ConfigError("epochs: must be >= 0")
        if self.reduction not in ("sum", "mean"):
            raise ConfigError(f"reduction: must be 'sum' or 'mean', got {self.reduction!r}")
        self.schedule.validate()
        if n is not None:
            if self.K > n:
                raise ConfigError(f"K: {self.K} batches but only {n} examples")
            if n % self.K and not self.ragged:
                raise ConfigError(f"K: N={n} is not divisible by K={self.K}")

    def to_dict(self):
        d = asdict(self)
        d["checkpoint_at"] = list(self.checkpoint_at)
        d["schedule"]["milestones"] = list(self.schedule.milestones)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["schedule"] = Schedule.from_dict(d.get("schedule"))
        d["checkpoint_at"] = tuple(d.get("checkpoint_at", ()))
        return cls(**d)


@dataclass
class Checkpoint:
    t: int
    epoch: int
    params: np.ndarray
    losses: np.ndarray | None


@dataclass
class TrainingTrajectory:
    checkpoints: list
    config: dict
    model: object  # final model
    t_end: int = 0
    batches: list = field(default_factory=list)  # optional per-epoch batch log

    @property
    def iterations(self):
        return np.array([c.t for c in self.checkpoints], dtype=np.int64)

    def loss_matrix(self):
        return np.stack([c.losses for c in self.checkpoints])

    def params_matrix(self):
        return np.stack([c.params for c in self.checkpoints])


def epoch_batches(n: int, K: int, seed: int, epoch: int) -> list:
    """The K disjoint minibatches of one epoch (seeded by seed and epoch).

    With K = 1 the single batch is every example in index order; a shuffle
    would not change the update.
    """
    if K == 1:
        return [np.arange(n)]
    rng = np.random.default_rng([seed, epoch])
    perm = rng.permutation(n)
    return np.array_split(perm, K)


def log_spaced_iterations(t_min: int, t_max: int, count: int) -> tuple:
    """Distinct integer iterations spread evenly in log t."""
    ts = np.unique(np.round(np.geomspace(t_min, t_max, count)).astype(np.int64))
    return tuple(int(t) for t in ts)


def sgd_train(model, ds, cfg: SgdConfig, first_epoch: int = 1, t_start: int = 0,
              record_batches: bool = False) -> TrainingTrajectory:
    """Run cfg.epochs epochs of w <- w - eta(e) * sum_{i in B(t)} grad l_i.

    Epochs are numbered from first_epoch and iterations from t_start + 1, so a
    second call can continue a schedule without restarting it.
    """
    X, y = ds.features, ds.labels
    n = X.shape[0]
    cfg.validate(n)
    in_dim = model.sizes[0] if hasattr(model, "sizes") else model.w.size
    if X.shape[1] != in_dim:
        raise ConfigError("model input dim does not match dataset")
    marks = set(cfg.checkpoint_at)
    p = model.params
    t = t_start
    cps, batch_log = [], []

    def record(m, epoch):
        losses = m.per_example_losses(X, y) if cfg.log_losses else None
        cps.append(Checkpoint(t, epoch, p.copy(), losses))

    for epoch in range(first_epoch, first_epoch + cfg.epochs):
        lr = cfg.eta * schedule_value(cfg.schedule, epoch)
        batches = epoch_batches(n, cfg.K, cfg.seed, epoch)
        if record_batches:
            batch_log.append(batches)
        for b in batches:
            t += 1
            Xb, yb = (X, y) if len(batches) == 1 else (X[b], y[b])
            _, g = model.with_params(p).loss_grad(Xb, yb, cfg.reduction)
            p = p - lr * g
            if t in marks or (cfg.checkpoint_every and t % cfg.checkpoint_every == 0):
                record(model.with_params(p), epoch)
    final = model.with_params(p)
    return TrainingTrajectory(cps, cfg.to_dict(), final, t, batch_log)


def max_learning_rate_bound(X, K: int, gamma_star: float) -> float:
    """min{1/(2 K beta s^2), g/(2 beta s^3 (K + s/g))} with beta = 1/4, s = ||X||_2."""
    if not gamma_star > 0:
        raise ValueError("gamma_star must be positive")
    s = spectral_norm(X, 1e-8)
    return rate_bound_from_sigma(s, K, gamma_star)


def rate_bound_from_sigma(sigma: float, K: int, gamma_star: float) -> float:
    b = LOGISTIC_SMOOTHNESS
    first = 1.0 / (2.0 * K * b * sigma**2)
    second = gamma_star / (2.0 * b * sigma**3 * (K + sigma / gamma_star))
    return min(first, second)


def theorem1_rate_floor(m: int, n: int, lam: float, K: int) -> float:
    """Guaranteed lower bound of the step-size bound on flip-construction data."""
    N = m + n
    l2 = lam * lam
    b = LOGISTIC_SMOOTHNESS
    inner = (N + l2) * (K * math.sqrt(m * n / l2 + N) + m * n / l2 + N)
    return 1.0 / (256.0 * b * inner)


# ---------------------------------------------------------------- persistence


def save_trajectory(traj: TrainingTrajectory, out_dir) -> None:
    out = Path(out_dir)
    entries = []
    for c in traj.checkpoints:
        loss_name = f"losses_t{c.t:09d}.csv"
        w_name = f"weights_t{c.t:09d}.json"
        if c.losses is not None:
            fileio.write_csv(out / loss_name, ["example_index", "loss"],
                             [(i, v) for i, v in enumerate(c.losses)])
        fileio.atomic_write_text(out / w_name, checkpoint_text(traj.model.with_params(c.params)))
        entries.append({"t": c.t, "epoch": c.epoch,
                        "losses": loss_name if c.losses is not None else None,
                        "weights": w_name})
    manifest = {"schema_version": 1, "config": traj.config, "t_end": traj.t_end,
                "final_model": traj.model.to_dict(), "checkpoints": entries}
    fileio.write_json(out / "manifest.json", manifest)


def load_trajectory(out_dir) -> TrainingTrajectory:
    import json

    out = Path(out_dir)
    manifest = json.loads((out / "manifest.json").read_text())
    final = model_from_dict(manifest["final_model"])
    cps = []
    for e in manifest["checkpoints"]:
        m = json.loads((out / e["weights"]).read_text())
        params = model_from_dict(m["model"]).params
        losses = None
        if e["losses"]:
            arr = np.loadtxt(out / e["losses"], delimiter=",", skiprows=1, ndmin=2)
            losses = arr[:, 1]
        cps.append(Checkpoint(e["t"], e["epoch"], params, losses))
    return TrainingTrajectory(cps, manifest["config"], final, manifest["t_end"])
