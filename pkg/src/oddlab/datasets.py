"""Labeled datasets: the synthetic flip construction, Gaussian blobs,
uniform label noise and a CSV format."""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from oddlab.errors import InvalidFraction, InvalidParams, ParseError, SchemaError

RNG_NAME = "numpy.random.PCG64"


def make_rng(seed: int) -> np.random.Generator:
    """The one generator used everywhere (PCG64 via default_rng)."""
    return np.random.default_rng(seed)


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    features: np.ndarray  # (N, d), rows are examples
    labels: np.ndarray  # observed class ids in 0..K-1
    clean_labels: np.ndarray
    noise_mask: np.ndarray  # True where labels != clean_labels
    num_classes: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        yc = np.asarray(self.clean_labels, dtype=np.int64)
        mask = np.asarray(self.noise_mask, dtype=bool)
        if X.ndim != 2:
            raise InvalidParams("features must be 2-d")
        n = X.shape[0]
        if not (len(y) == len(yc) == len(mask) == n):
            raise InvalidParams("labels, clean_labels, noise_mask and features disagree on N")
        if n and (y.min() < 0 or y.max() >= self.num_classes or yc.min() < 0
                  or yc.max() >= self.num_classes):
            raise InvalidParams(f"class ids must lie in 0..{self.num_classes - 1}")
        if not np.array_equal(mask, y != yc):
            raise InvalidParams("noise_mask must equal labels != clean_labels")
        for name, arr in (("features", X), ("labels", y), ("clean_labels", yc), ("noise_mask", mask)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def signs(self) -> np.ndarray:
        """Binary labels as +-1 (class 1 -> +1, class 0 -> -1)."""
        if self.num_classes != 2:
            raise InvalidParams("a +-1 view only exists for binary data")
        return 2 * self.labels - 1

    def signed_columns(self) -> np.ndarray:
        """d x N matrix whose i-th column is y_i x_i."""
        return (self.features * self.signs[:, None]).T

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(
            self.features[idx], self.labels[idx], self.clean_labels[idx],
            self.noise_mask[idx], self.num_classes, dict(self.meta),
        )

    def equals(self, other: "LabeledDataset", atol: float = 0.0) -> bool:
        return (
            self.num_classes == other.num_classes
            and self.features.shape == other.features.shape
            and np.allclose(self.features, other.features, rtol=0, atol=atol)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.clean_labels, other.clean_labels)
        )


def clean_dataset(features, labels, num_classes: int, meta: dict | None = None) -> LabeledDataset:
    labels = np.asarray(labels, dtype=np.int64)
    return LabeledDataset(features, labels, labels.copy(), np.zeros(len(labels), bool),
                          num_classes, meta or {})


@dataclass(frozen=True)
class Theorem1Params:
    N: int
    d: int
    lam: float
    n_flip: int
    seed: int = 0

    def validate(self):
        if self.d <= self.N:
            raise InvalidParams(f"d must exceed N (got d={self.d}, N={self.N})")
        if not (1 <= self.n_flip and 2 * self.n_flip < self.N):
            raise InvalidParams(f"n_flip must satisfy 1 <= n_flip < N/2 (got {self.n_flip})")
        if not self.lam > 0:
            raise InvalidParams("lam must be positive")


def generate_theorem1(params: Theorem1Params) -> LabeledDataset:
    """First coordinate carries the clean +-1 label, the rest is isotropic
    Gaussian noise of total variance lam^2; then n_flip labels are flipped."""
    params.validate()
    N, d, lam = params.N, params.d, params.lam
    rng = make_rng(params.seed)
    clean = rng.integers(0, 2, size=N)
    X = np.empty((N, d))
    X[:, 0] = 2.0 * clean - 1.0
    X[:, 1:] = rng.normal(0.0, lam / math.sqrt(d - 1), size=(N, d - 1))
    flip = rng.choice(N, size=params.n_flip, replace=False)
    labels = clean.copy()
    labels[flip] = 1 - labels[flip]
    meta = {"generator": "theorem1", "rng": RNG_NAME, **dataclasses.asdict(params)}
    return LabeledDataset(X, labels, clean, labels != clean, 2, meta)


def generate_blobs(K: int, per_class: int, d: int, separation: float, seed: int) -> LabeledDataset:
    """Class k is N(separation * e_k, I_d); rows come out shuffled."""
    if K < 2 or d < K or per_class < 1:
        raise InvalidParams(f"need K >= 2, d >= K, per_class >= 1 (got K={K}, d={d}, per_class={per_class})")
    rng = make_rng(seed)
    labels = np.repeat(np.arange(K), per_class)
    X = rng.standard_normal((K * per_class, d))
    X[np.arange(K * per_class), labels] += separation
    order = rng.permutation(K * per_class)
    meta = {"generator": "blobs", "rng": RNG_NAME, "K": K, "per_class": per_class,
            "d": d, "separation": separation, "seed": seed}
    return clean_dataset(X[order], labels[order], K, meta)


def generate_gaussian(N: int, d: int, seed: int, labels: str = "random") -> LabeledDataset:
    """Binary data with standard normal features.

    labels="random" draws labels independently of x (separable almost surely
    when d >= N); labels="teacher" uses the sign of a random hyperplane, which
    is separable for any d.
    """
    if N < 2 or d < 1:
        raise InvalidParams(f"need N >= 2 and d >= 1 (got N={N}, d={d})")
    if labels not in ("random", "teacher"):
        raise InvalidParams(f"labels must be 'random' or 'teacher', got {labels!r}")
    rng = make_rng(seed)
    X = rng.standard_normal((N, d))
    if labels == "random":
        y = rng.integers(0, 2, size=N)
    else:
        w = rng.standard_normal(d)
        y = (X @ w > 0).astype(np.int64)
    meta = {"generator": "gaussian", "rng": RNG_NAME, "N": N, "d": d, "seed": seed, "labels": labels}
    return clean_dataset(X, y, 2, meta)


def inject_uniform_noise(ds: LabeledDataset, fraction: float, seed: int,
                         exclude_true_class: bool = False) -> LabeledDataset:
    """Redraw floor(fraction * N) labels uniformly at random.

    By default the redraw ranges over all K classes, so some picks land back
    on the true class and are not counted as noise. With exclude_true_class
    the redraw avoids the clean label and every pick becomes noise.
    """
    if not (0.0 <= fraction <= 1.0) or math.isnan(fraction):
        raise InvalidFraction(f"fraction must be in [0, 1], got {fraction}")
    K = ds.num_classes
    rng = make_rng(seed)
    n_pick = int(math.floor(fraction * ds.n))
    idx = rng.choice(ds.n, size=n_pick, replace=False)
    labels = ds.labels.copy()
    if exclude_true_class:
        shift = rng.integers(1, K, size=n_pick)
        labels[idx] = (ds.clean_labels[idx] + shift) % K
    else:
        labels[idx] = rng.integers(0, K, size=n_pick)
    meta = dict(ds.meta)
    meta["noise"] = {"fraction": fraction, "seed": seed, "exclude_true_class": exclude_true_class}
    return LabeledDataset(ds.features, labels, ds.clean_labels,
                          labels != ds.clean_labels, K, meta)


def save_csv(ds: LabeledDataset, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(format_csv(ds))


def format_csv(ds: LabeledDataset) -> str:
    header = [f"f{j}" for j in range(ds.dim)] + ["label", "clean_label", "is_noise"]
    lines = [",".join(header)]
    for x, y, yc, m in zip(ds.features, ds.labels, ds.clean_labels, ds.noise_mask):
        row = [f"{v:.17g}" for v in x] + [str(int(y)), str(int(yc)), str(int(m))]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def load_csv(path, num_classes: int | None = None) -> LabeledDataset:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if "label" not in header:
            raise SchemaError(f"{path}: no 'label' column in header")
        feat_cols = [c for c in header if c.startswith("f")]
        if feat_cols != [f"f{j}" for j in range(len(feat_cols))] or header[: len(feat_cols)] != feat_cols:
            raise SchemaError(f"{path}: feature columns must be f0..f(d-1) in order")
        d = len(feat_cols)
        extra = header[d:]
        if extra not in (["label"], ["label", "clean_label", "is_noise"]):
            raise SchemaError(f"{path}: unexpected trailing columns {extra}")
        rows, labels, clean, noise = [], [], [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise ParseError(f"{path}: row {lineno} has {len(rec)} fields, expected {len(header)}")
            col = 0
            try:
                rows.append([float(v) for v in rec[:d]])
                col = d
                labels.append(int(rec[d]))
                if len(extra) == 3:
                    col = d + 1
                    clean.append(int(rec[d + 1]))
                    col = d + 2
                    noise.append(int(rec[d + 2]))
            except ValueError:
                # find the offending field for the message
                for j, v in enumerate(rec):
                    try:
                        float(v) if j < d else int(v)
                    except ValueError:
                        col = j
                        break
                raise ParseError(f"{path}: row {lineno}, column {col} ({header[col]}): "
                                 f"cannot parse {rec[col]!r}") from None
    X = np.array(rows, dtype=np.float64).reshape(len(rows), d)
    y = np.array(labels, dtype=np.int64)
    yc = np.array(clean, dtype=np.int64) if clean else y.copy()
    if noise and not np.array_equal(np.array(noise, dtype=bool), y != yc):
        raise SchemaError(f"{path}: is_noise column disagrees with label/clean_label")
    if num_classes is None:
        num_classes = int(max(y.max(initial=0), yc.max(initial=0))) + 1
    meta = {"source": str(path), "mask_known": bool(clean)}
    return LabeledDataset(X, y, yc, y != yc, num_classes, meta)
