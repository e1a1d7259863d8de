"""Two-phase training with counterfactual loss thresholding.

Phase 1 trains on everything for E epochs. The fc head is then fed
standard-normal ReLU features with uniformly random target classes, which
gives the loss distribution a randomly labelled example would have. Examples
whose real loss reaches the p-th percentile of that distribution are dropped
and training continues on the rest with the same (unrestarted) schedule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from oddlab import fileio
from oddlab.datasets import RNG_NAME
from oddlab.errors import ConfigError, DimMismatch, EmptySamples, UnsupportedModel
from oddlab.metrics import DetectionMetrics, accuracy, detection_metrics, histogram
from oddlab.optimizer import SgdConfig, TrainingTrajectory, sgd_train

SHARD = 10_000
HIST_BINS = 100


@dataclass(frozen=True, eq=False)
class CounterfactualLossModel:
    fc_weights: np.ndarray  # (K, h)
    fc_bias: np.ndarray  # (K,)
    snapshot_epoch: int = 0

    def __post_init__(self):
        W = np.array(self.fc_weights, dtype=np.float64)
        b = np.array(self.fc_bias, dtype=np.float64)
        if W.ndim != 2 or b.shape != (W.shape[0],):
            raise DimMismatch(f"fc weights {W.shape} and bias {b.shape} disagree")
        W.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "fc_weights", W)
        object.__setattr__(self, "fc_bias", b)

    @property
    def num_classes(self):
        return self.fc_weights.shape[0]

    @property
    def input_dim(self):
        return self.fc_weights.shape[1]

    @classmethod
    def from_model(cls, model, epoch=0):
        if not hasattr(model, "fc") or model.num_classes < 2:
            raise UnsupportedModel("counterfactual sampling needs a multiclass fc head")
        W, b = model.fc
        return cls(W, b, epoch)


def sample_counterfactual_losses(cf: CounterfactualLossModel, n_mc: int, seed: int) -> np.ndarray:
    """Losses -y_k + logsumexp(y) with y = W relu(x) + b, x ~ N(0, I), k uniform.

    Work is split into shards of 10,000 draws, each with its own generator
    seeded by (seed, shard index), and concatenated in shard order.
    """
    if n_mc < 1000:
        raise ConfigError(f"n_mc: need at least 1000 samples, got {n_mc}")
    K, h = cf.num_classes, cf.input_dim
    out = []
    for shard, start in enumerate(range(0, n_mc, SHARD)):
        size = min(SHARD, n_mc - start)
        rng = np.random.default_rng([seed, shard])
        x = rng.standard_normal((size, h))
        k = rng.integers(0, K, size=size)
        z = np.maximum(x, 0.0) @ cf.fc_weights.T + cf.fc_bias
        loss = logsumexp(z, axis=1) - z[np.arange(size), k]
        out.append(np.maximum(loss, 0.0))
    return np.concatenate(out)


def percentile_threshold(samples, p: float) -> float:
    """Nearest-rank percentile: sorted(samples)[ceil(p/100 * n) - 1]."""
    s = np.sort(np.asarray(samples, dtype=np.float64))
    if s.size == 0:
        raise EmptySamples("no samples to threshold")
    if not 0 < p < 100:
        raise ConfigError(f"p: must lie in (0, 100), got {p}")
    rank = math.ceil(p / 100.0 * s.size)
    return float(s[max(rank, 1) - 1])


@dataclass
class SplitResult:
    threshold: float
    p: float
    kept: np.ndarray
    flagged: np.ndarray
    losses: np.ndarray


def split_dataset(model, ds, threshold: float, p: float = float("nan")) -> SplitResult:
    """Keep examples with loss < threshold, flag the rest."""
    losses = model.per_example_losses(ds.features, ds.labels)
    keep = losses < threshold
    return SplitResult(threshold, p, np.flatnonzero(keep), np.flatnonzero(~keep), losses)


@dataclass(frozen=True)
class OddConfig:
    E: int
    p: float = 10.0
    n_mc: int = 100_000
    sgd: SgdConfig = field(default_factory=lambda: SgdConfig(eta=0.1))
    seed: int = 0

    def validate(self):
        if not 1 <= self.E < self.sgd.epochs:
            raise ConfigError(f"E: need 1 <= E < epochs ({self.sgd.epochs}), got {self.E}")
        if not 0 < self.p < 100:
            raise ConfigError(f"p: must lie in (0, 100), got {self.p}")
        if self.n_mc < 1000:
            raise ConfigError(f"n_mc: need at least 1000, got {self.n_mc}")

    def to_dict(self):
        return {"E": self.E, "p": self.p, "n_mc": self.n_mc, "seed": self.seed,
                "sgd": self.sgd.to_dict()}


@dataclass
class OddRunResult:
    config: OddConfig
    split: SplitResult
    counterfactual: CounterfactualLossModel
    qn_samples: np.ndarray
    phase1: TrainingTrajectory
    phase2: TrainingTrajectory | None
    model: object
    detection: DetectionMetrics | None
    mask: np.ndarray | None
    test_accuracy: float | None = None

    @property
    def flagged_fraction(self):
        return self.split.flagged.size / self.split.losses.size


def _phase2_config(sgd: SgdConfig, n_full: int, n_kept: int, epochs: int) -> SgdConfig:
    # keep the minibatch size of phase 1; the kept set need not divide evenly
    batch = n_full / sgd.K
    K2 = max(1, int(round(n_kept / batch)))
    return replace(sgd, K=min(K2, n_kept), epochs=epochs, ragged=True)


def run_odd(model_init, ds, cfg: OddConfig, test_ds=None, samples=None) -> OddRunResult:
    """Train on D for E epochs, threshold against q_n, continue on the kept set."""
    cfg.validate()
    sgd1 = replace(cfg.sgd, epochs=cfg.E, log_losses=False)
    phase1 = sgd_train(model_init, ds, sgd1)
    model = phase1.model
    cf = CounterfactualLossModel.from_model(model, cfg.E)
    if samples is None:
        samples = sample_counterfactual_losses(cf, cfg.n_mc, cfg.seed)
    T = percentile_threshold(samples, cfg.p)
    split = split_dataset(model, ds, T, cfg.p)
    phase2 = None
    remaining = cfg.sgd.epochs - cfg.E
    if split.kept.size:
        kept = ds.subset(split.kept)
        sgd2 = _phase2_config(sgd1, ds.n, kept.n, remaining)
        phase2 = sgd_train(model, kept, sgd2, first_epoch=cfg.E + 1, t_start=phase1.t_end)
        model = phase2.model
    mask_known = ds.meta.get("mask_known", True)
    det = detection_metrics(split.flagged, ds.noise_mask) if mask_known else None
    acc = accuracy(model, test_ds) if test_ds is not None else None
    return OddRunResult(cfg, split, cf, samples, phase1, phase2, model, det,
                        ds.noise_mask if mask_known else None, acc)


def run_erm(model_init, ds, sgd: SgdConfig):
    """Baseline: plain training on all (possibly noisy) labels."""
    return sgd_train(model_init, ds, replace(sgd, log_losses=False)).model


# ---------------------------------------------------------------- artifacts


def histogram_rows(values, mask=None, bins=HIST_BINS):
    lo, hi, counts = histogram(values, bins)
    if mask is None:
        return ["bin_lo", "bin_hi", "count"], list(zip(lo, hi, counts))
    upper = hi[-1]
    _, _, c_clean = histogram(np.asarray(values)[~mask], bins, upper)
    _, _, c_noisy = histogram(np.asarray(values)[mask], bins, upper)
    return (["bin_lo", "bin_hi", "count", "clean", "noisy"],
            list(zip(lo, hi, counts, c_clean, c_noisy)))


def summary_dict(res: OddRunResult, config_echo=None) -> dict:
    s = res.split
    out = {
        "rng": RNG_NAME,
        "seed": res.config.seed,
        "config": config_echo if config_echo is not None else res.config.to_dict(),
        "threshold": s.threshold,
        "p": s.p,
        "n_examples": int(s.losses.size),
        "n_kept": int(s.kept.size),
        "n_flagged": int(s.flagged.size),
        "flagged_fraction": res.flagged_fraction,
        "snapshot_epoch": res.counterfactual.snapshot_epoch,
        "qn_mean": float(np.mean(res.qn_samples)),
        "metrics": res.detection.to_dict() if res.detection else None,
        "test_accuracy": res.test_accuracy,
    }
    return out


def write_odd_outputs(res: OddRunResult, out_dir, config_echo=None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    s = res.split
    if res.mask is not None:
        rows = [(i, s.losses[i], bool(res.mask[i])) for i in s.flagged]
        fileio.write_csv(out / "flagged.csv", ["index", "loss", "is_noise"], rows)
    else:
        fileio.write_csv(out / "flagged.csv", ["index", "loss"], [(i, s.losses[i]) for i in s.flagged])
    hdr, rows = histogram_rows(res.qn_samples)
    fileio.write_csv(out / "qn_histogram.csv", hdr, rows)
    hdr, rows = histogram_rows(s.losses, res.mask)
    fileio.write_csv(out / f"loss_histogram_epoch{res.config.E}.csv", hdr, rows)
    fileio.write_json(out / "summary.json", summary_dict(res, config_echo))
    return out
