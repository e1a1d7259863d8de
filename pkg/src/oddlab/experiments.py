"""Reusable experiment pipelines shared by the CLI, the demos and the
acceptance checks. Specs are plain dicts so they round-trip through JSON."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from oddlab.datasets import (
    Theorem1Params,
    clean_dataset,
    generate_blobs,
    generate_gaussian,
    generate_theorem1,
    inject_uniform_noise,
    load_csv,
)
from oddlab.errors import ConfigError
from oddlab.metrics import accuracy
from oddlab.models import HomogeneousNet, LinearModel, MlpModel
from oddlab.odd import OddConfig, run_erm, run_odd
from oddlab.optimizer import (
    Schedule,
    SgdConfig,
    log_spaced_iterations,
    max_learning_rate_bound,
    sgd_train,
)
from oddlab.svm import solve_dual

# desk-scale noisy-blobs setup used for the detection experiments
BLOBS_DEFAULTS = {"K": 10, "per_class": 500, "d": 32, "separation": 5.0}
ODD_DEFAULTS = {"hidden": [64], "epochs": 40, "eta": 0.5, "K": 50, "E": 20, "p": 10.0,
                "n_mc": 100_000}


def _require(spec, key, where):
    if key not in spec:
        raise ConfigError(f"{where}.{key}: missing")
    return spec[key]


def dataset_from_spec(spec: dict):
    """Build a dataset from {"kind": ..., params..., "noise": {...}}."""
    kind = _require(spec, "kind", "dataset")
    try:
        if kind == "theorem1":
            ds = generate_theorem1(Theorem1Params(
                int(_require(spec, "N", "dataset")), int(_require(spec, "d", "dataset")),
                float(spec.get("lam", 1.0)), int(_require(spec, "n_flip", "dataset")),
                int(spec.get("seed", 0))))
        elif kind == "blobs":
            ds = generate_blobs(int(spec.get("K", 10)), int(spec.get("per_class", 500)),
                                int(spec.get("d", 32)), float(spec.get("separation", 5.0)),
                                int(spec.get("seed", 0)))
        elif kind == "gaussian":
            ds = generate_gaussian(int(_require(spec, "N", "dataset")),
                                   int(_require(spec, "d", "dataset")),
                                   int(spec.get("seed", 0)), spec.get("labels", "random"))
        elif kind == "csv":
            ds = load_csv(_require(spec, "path", "dataset"), spec.get("num_classes"))
        else:
            raise ConfigError(f"dataset.kind: unknown dataset kind {kind!r}")
    except TypeError as exc:
        raise ConfigError(f"dataset: {exc}") from None
    noise = spec.get("noise")
    if noise:
        ds = inject_uniform_noise(ds, float(noise.get("fraction", 0.0)),
                                  int(noise.get("seed", 0)),
                                  bool(noise.get("exclude_true_class", False)))
    return ds


def model_from_spec(spec: dict, ds):
    kind = spec.get("kind", "linear")
    seed = int(spec.get("seed", 0))
    hidden = list(spec.get("hidden", []))
    sizes = [ds.dim] + hidden + [ds.num_classes]
    if kind == "linear":
        if ds.num_classes != 2:
            raise ConfigError("model.kind: linear model needs binary labels")
        return LinearModel.zeros(ds.dim)
    if kind == "mlp":
        return MlpModel.init(sizes, seed)
    if kind == "homogeneous":
        return HomogeneousNet.init(sizes, seed, float(spec.get("exponent", 1.01)))
    raise ConfigError(f"model.kind: unknown model kind {kind!r}")


def sgd_from_spec(spec: dict, n: int | None = None) -> SgdConfig:
    try:
        cfg = SgdConfig.from_dict(spec)
    except TypeError as exc:
        raise ConfigError(f"sgd: {exc}") from None
    cfg.validate(n)
    return cfg


# ---------------------------------------------------------------- theory runs


@dataclass
class TheoryRun:
    ds: object
    X: np.ndarray  # signed columns
    dual: object
    bound: float
    eta: float
    traj: object


def theory_run(ds, eta_factor: float = 0.9, K: int = 1, t_max: int = 200_000,
               n_checkpoints: int = 40, t_min: int | None = None, seed: int = 0,
               eta: float | None = None) -> TheoryRun:
    """Logistic regression from w_0 = 0 at eta = eta_factor x the step-size bound,
    with log-spaced checkpoints from t_min to t_max."""
    X = ds.signed_columns()
    dual = solve_dual(X)
    bound = max_learning_rate_bound(X, K, dual.gamma_star)
    if eta is None:
        eta = eta_factor * bound
    if t_max % K:
        raise ConfigError(f"t_max: must be a multiple of K={K}")
    t_min = t_min if t_min is not None else K
    marks = log_spaced_iterations(t_min, t_max, n_checkpoints)
    cfg = SgdConfig(eta=eta, K=K, epochs=t_max // K, seed=seed, checkpoint_at=marks)
    traj = sgd_train(LinearModel.zeros(ds.dim), ds, cfg)
    return TheoryRun(ds, X, dual, bound, eta, traj)


def deep_instance(N=6, K=3, d0=8, hidden=32, exponent=1.01, seed=0):
    """Gaussian inputs with balanced labels i mod K and a 2-layer bias-free net."""
    rng = np.random.default_rng(seed)
    ds = clean_dataset(rng.standard_normal((N, d0)), np.arange(N) % K, K,
                       {"generator": "deep", "seed": seed})
    net = HomogeneousNet.init([d0, hidden, K], seed, exponent)
    return net, ds


def linear_homogeneous(d, K=2):
    """A single bias-free layer, i.e. a linear model viewed as a degree-1 net."""
    return HomogeneousNet((np.zeros((K, d)),), exponent=1.0)


# ---------------------------------------------------------------- detection runs


def noisy_blobs(q: float, seed: int, exclude_true_class: bool = True, **overrides):
    b = {**BLOBS_DEFAULTS, **overrides}
    train = generate_blobs(b["K"], b["per_class"], b["d"], b["separation"], seed)
    train = inject_uniform_noise(train, q, seed + 1, exclude_true_class)
    test = generate_blobs(b["K"], max(b["per_class"] // 2, 1), b["d"], b["separation"],
                          seed + 10_000)
    return train, test


def odd_config(seed: int, **overrides) -> OddConfig:
    o = {**ODD_DEFAULTS, **overrides}
    sgd = SgdConfig(eta=o["eta"], K=o["K"], epochs=o["epochs"],
                    schedule=Schedule("cosine", total_epochs=o["epochs"]), seed=seed,
                    reduction="mean", log_losses=False)
    return OddConfig(E=o["E"], p=o["p"], n_mc=o["n_mc"], sgd=sgd, seed=seed)


def odd_blobs_run(q: float, seed: int, with_erm: bool = False, exclude_true_class: bool = True,
                  **overrides):
    """One detection run on noisy blobs; optionally the ERM baseline too."""
    train, test = noisy_blobs(q, seed, exclude_true_class)
    cfg = odd_config(seed, **overrides)
    hidden = overrides.get("hidden", ODD_DEFAULTS["hidden"])
    m0 = MlpModel.init([train.dim, *hidden, train.num_classes], seed)
    res = run_odd(m0, train, cfg, test_ds=test)
    erm = accuracy(run_erm(m0, train, cfg.sgd), test) if with_erm else math.nan
    return res, erm
