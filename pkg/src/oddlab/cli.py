"""Command line entry point.

    oddlab generate            --config cfg.json
    oddlab train               --config cfg.json
    oddlab odd-run             --config cfg.json
    oddlab simulate-threshold  --checkpoint model.json --p 10 --n-mc 100000
    oddlab verify {ratio,decomposition,separation,dual,deep} --config cfg.json

Config files are JSON; command-line flags override them, and `--set a.b=v`
overrides any nested key. The seed defaults to $ODD_SEED when neither the
config nor a flag sets it. Exit codes: 0 ok/pass, 1 verification failed,
2 bad configuration, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from pathlib import Path

import numpy as np

from oddlab import fileio
from oddlab.datasets import RNG_NAME, format_csv
from oddlab.errors import ConfigError, OddLabError
from oddlab.experiments import (
    dataset_from_spec,
    deep_instance,
    linear_homogeneous,
    model_from_spec,
    sgd_from_spec,
    theory_run,
)
from oddlab.linalg import cholesky
from oddlab.models import checkpoint_text, load_checkpoint
from oddlab.odd import (
    CounterfactualLossModel,
    OddConfig,
    histogram_rows,
    percentile_threshold,
    run_odd,
    sample_counterfactual_losses,
    write_odd_outputs,
)
from oddlab.optimizer import save_trajectory, sgd_train
from oddlab.svm import solve_dual, theorem1_reference
from oddlab.theory import (
    RATIO_TOL,
    dual_ratio_deviation,
    verify_alpha_ordering,
    verify_alpha_sum_bounds,
    verify_decomposition,
    verify_deep_coefficients,
    verify_loss_ratio,
    verify_separation,
)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


# ---------------------------------------------------------------- config handling


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(args) -> dict:
    cfg = {}
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config: file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON ({exc})") from None
        if not isinstance(cfg, dict):
            raise ConfigError("config: top level must be a JSON object")
    cfg = copy.deepcopy(cfg)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected key.path=value")
        key, val = item.split("=", 1)
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = _parse_value(val)
    if getattr(args, "out", None):
        cfg["out"] = args.out
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if "seed" not in cfg:
        env = os.environ.get("ODD_SEED")
        try:
            cfg["seed"] = int(env) if env is not None else 0
        except ValueError:
            raise ConfigError(f"ODD_SEED: not an integer: {env!r}") from None
    return cfg


def _seeded(spec: dict, seed: int) -> dict:
    spec = dict(spec)
    spec.setdefault("seed", seed)
    return spec


def _out_dir(cfg, default):
    return Path(cfg.get("out", default))


def _echo(cfg) -> dict:
    """Effective config as echoed into artifacts; the output path is left out
    so that reruns into different directories produce identical files."""
    return {k: v for k, v in cfg.items() if k != "out"}


# ---------------------------------------------------------------- commands


def cmd_generate(cfg) -> int:
    ds = dataset_from_spec(_seeded(cfg.get("dataset", {}), cfg["seed"]))
    out = Path(cfg.get("out", "dataset.csv"))
    fileio.atomic_write_text(out, format_csv(ds))
    print(f"wrote {ds.n} examples ({ds.dim} features, {int(ds.noise_mask.sum())} noisy) to {out}")
    return EXIT_OK


def cmd_train(cfg) -> int:
    ds = dataset_from_spec(_seeded(cfg.get("dataset", {}), cfg["seed"]))
    model = model_from_spec(_seeded(cfg.get("model", {}), cfg["seed"]), ds)
    sgd = sgd_from_spec(_seeded(cfg.get("sgd", {"eta": 0.1}), cfg["seed"]), ds.n)
    traj = sgd_train(model, ds, sgd)
    out = _out_dir(cfg, "trajectory")
    save_trajectory(traj, out)
    save_checkpoint_atomic(traj.model, out / "final_model.json")
    fileio.write_json(out / "run.json", {"rng": RNG_NAME, "seed": cfg["seed"], "config": _echo(cfg)})
    print(f"trained {traj.t_end} iterations; {len(traj.checkpoints)} checkpoints in {out}")
    return EXIT_OK


def save_checkpoint_atomic(model, path):
    fileio.atomic_write_text(path, checkpoint_text(model))


def cmd_odd_run(cfg) -> int:
    seed = cfg["seed"]
    ds = dataset_from_spec(_seeded(cfg.get("dataset", {"kind": "blobs"}), seed))
    test = None
    if "test_dataset" in cfg:
        test = dataset_from_spec(_seeded(cfg["test_dataset"], seed + 10_000))
    model = model_from_spec(_seeded(cfg.get("model", {"kind": "mlp", "hidden": [64]}), seed), ds)
    sgd = sgd_from_spec(_seeded(cfg.get("sgd", {"eta": 0.5}), seed), ds.n)
    o = cfg.get("odd", {})
    try:
        odd = OddConfig(E=int(o.get("E", max(1, sgd.epochs // 2))), p=float(o.get("p", 10.0)),
                        n_mc=int(o.get("n_mc", 100_000)), sgd=sgd, seed=seed)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"odd: {exc}") from None
    res = run_odd(model, ds, odd, test_ds=test)
    out = _out_dir(cfg, "odd_run")
    write_odd_outputs(res, out, _echo(cfg))
    save_checkpoint_atomic(res.model, out / "final_model.json")
    print(f"T_p = {res.split.threshold:.6g}; flagged {res.split.flagged.size}/{ds.n} "
          f"({res.flagged_fraction:.3f}); results in {out}")
    return EXIT_OK


def cmd_simulate_threshold(cfg) -> int:
    if "checkpoint" not in cfg:
        raise ConfigError("checkpoint: path to a model checkpoint is required")
    model = load_checkpoint(cfg["checkpoint"])
    cf = CounterfactualLossModel.from_model(model)
    samples = sample_counterfactual_losses(cf, int(cfg.get("n_mc", 100_000)), cfg["seed"])
    T = percentile_threshold(samples, float(cfg.get("p", 10.0)))
    out = _out_dir(cfg, "threshold")
    hdr, rows = histogram_rows(samples)
    fileio.write_csv(out / "qn_histogram.csv", hdr, rows)
    fileio.write_json(out / "threshold.json", {"rng": RNG_NAME, "seed": cfg["seed"],
                                               "config": _echo(cfg), "threshold": T})
    print(f"{T:.17g}")
    return EXIT_OK


def _theory_setup(cfg, default_ds):
    seed = cfg["seed"]
    ds = dataset_from_spec(_seeded(cfg.get("dataset", default_ds), seed))
    run = cfg.get("run", {})
    return theory_run(ds, eta_factor=float(run.get("eta_factor", 0.9)), K=int(run.get("K", 1)),
                      t_max=int(run.get("t_max", 100_000)),
                      n_checkpoints=int(run.get("n_checkpoints", 30)),
                      t_min=run.get("t_min"), seed=seed, eta=run.get("eta"))


def verify_ratio(cfg):
    r = _theory_setup(cfg, {"kind": "gaussian", "N": 6, "d": 16})
    rep = verify_loss_ratio(r.traj, r.dual, tol=float(cfg.get("tolerance", 0.10)))
    return rep, rep.passed


def verify_decomp(cfg):
    r = _theory_setup(cfg, {"kind": "theorem1", "N": 10, "d": 256, "n_flip": 2})
    rep = verify_decomposition(r.traj, r.dual, r.eta, r.X, K=int(cfg.get("run", {}).get("K", 1)))
    return rep, rep.passed


def verify_sep(cfg):
    cfg = copy.deepcopy(cfg)
    cfg.setdefault("run", {}).setdefault("t_max", 200_000)
    cfg["run"].setdefault("n_checkpoints", 40)
    r = _theory_setup(cfg, {"kind": "theorem1", "N": 20, "d": 512, "n_flip": 4, "lam": 1.0})
    rep = verify_separation(r.traj, r.ds.noise_mask, float(cfg.get("required_fraction", 0.5)))
    return rep, rep.passed


class _DictReport:
    def __init__(self, d, rows=None):
        self.d, self.rows = d, rows

    def to_dict(self):
        return self.d

    def csv_rows(self):
        return self.rows


def verify_dual_cmd(cfg):
    """Closed-form instance (feeds the reference A as the Gram matrix) or a dataset."""
    ref_spec = cfg.get("reference")
    if ref_spec is not None or "dataset" not in cfg:
        ref_spec = ref_spec or {"m": 2, "n": 1, "lam": 1.0}
        ref = theorem1_reference(int(ref_spec["m"]), int(ref_spec["n"]), float(ref_spec["lam"]))
        X = cholesky(ref.A).T  # X^T X = A exactly up to rounding
        dual = solve_dual(X)
        mask = ref.groups < 0
        target = ref.c
    else:
        ds = dataset_from_spec(_seeded(cfg["dataset"], cfg["seed"]))
        X = ds.signed_columns()
        dual = solve_dual(X)
        mask = ds.noise_mask
        target = None
        ref = None
    checks = {
        "gamma_identity": abs(dual.gamma_star - dual.alpha.sum() ** -0.5) <= 1e-8 * dual.gamma_star,
        "norm_identity": abs(dual.w_hat @ dual.w_hat - dual.alpha.sum()) <= 1e-8 * dual.alpha.sum(),
    }
    out = {"dual": dual.to_dict()}
    if target is not None:
        checks["alpha_matches_c"] = bool(np.max(np.abs(dual.alpha - target)) <= 1e-8)
        out["c"] = target.tolist()
    if ref is not None or (mask.any() and (~mask).any()):
        checks["alpha_ordering"] = verify_alpha_ordering(dual, mask).passed
    if ref is not None:
        checks["alpha_sum_bounds"] = verify_alpha_sum_bounds(dual, ref.m, ref.n, ref.lam).passed
    checks = {k: bool(v) for k, v in checks.items()}
    out["checks"] = checks
    out["passed"] = all(checks.values())
    rows = (["index", "alpha", "margin"],
            [(i, a, m) for i, (a, m) in enumerate(zip(dual.alpha, dual.margins(X)))])
    return _DictReport(out, rows), out["passed"]


def verify_deep_cmd(cfg):
    d = cfg.get("deep", {})
    lams = [float(v) for v in d.get("lambdas", [1e-2, 1e-3, 1e-4])]
    if d.get("linear"):
        ds = dataset_from_spec(_seeded(cfg.get("dataset", {"kind": "gaussian", "N": 6, "d": 16}),
                                       cfg["seed"]))
        net = linear_homogeneous(ds.dim, ds.num_classes)
    else:
        net, ds = deep_instance(int(d.get("N", 6)), int(d.get("K", 3)), int(d.get("d0", 8)),
                                int(d.get("hidden", 32)), float(d.get("exponent", 1.01)),
                                cfg["seed"])
    rep = verify_deep_coefficients(net, ds, lams, tol=float(d.get("tolerance", 1e-3)))
    payload = rep.to_dict()
    passed = rep.passed
    if d.get("linear"):
        dev = dual_ratio_deviation(rep, solve_dual(ds.signed_columns()))
        payload["svm_ratio_deviation"] = dev
        payload["svm_ratio_tolerance"] = RATIO_TOL
        passed = passed and dev <= RATIO_TOL
    N, K = rep.alpha_matrix.shape
    rows = (["example", "class", "alpha_fit", "alpha_from_beta"],
            [(i, j, rep.alpha_matrix[i, j], rep.alpha_from_beta[i, j])
             for i in range(N) for j in range(K)])
    return _DictReport(payload, rows), passed


VERIFIERS = {
    "ratio": verify_ratio,
    "decomposition": verify_decomp,
    "separation": verify_sep,
    "dual": verify_dual_cmd,
    "deep": verify_deep_cmd,
}


def cmd_verify(cfg, which) -> int:
    report, passed = VERIFIERS[which](cfg)
    out = _out_dir(cfg, f"verify_{which}")
    payload = {"which": which, "rng": RNG_NAME, "seed": cfg["seed"], "config": _echo(cfg),
               "passed": bool(passed), "report": report.to_dict()}
    fileio.write_json(out / "report.json", payload)
    header, rows = report.csv_rows()
    fileio.write_csv(out / "checkpoints.csv", header, rows)
    print(f"verify {which}: {'PASS' if passed else 'FAIL'} (report in {out})")
    return EXIT_OK if passed else EXIT_FAIL


# ---------------------------------------------------------------- argparse


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oddlab", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--out", help="output path (file or directory)")
        sp.add_argument("--seed", type=int, help="seed (default: config, then $ODD_SEED, then 0)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key, e.g. --set sgd.eta=0.1")

    common(sub.add_parser("generate", help="write a dataset CSV"))
    common(sub.add_parser("train", help="run SGD and save the trajectory"))
    common(sub.add_parser("odd-run", help="two-phase training with loss thresholding"))
    st = sub.add_parser("simulate-threshold", help="sample counterfactual losses from a checkpoint")
    common(st)
    st.add_argument("--checkpoint", help="model checkpoint JSON")
    st.add_argument("--p", type=float, help="percentile")
    st.add_argument("--n-mc", type=int, dest="n_mc", help="Monte Carlo sample count")
    vp = sub.add_parser("verify", help="numerical checks of the theory")
    vp.add_argument("which", choices=sorted(VERIFIERS))
    common(vp)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args)
        if args.command == "simulate-threshold":
            for key in ("checkpoint", "p", "n_mc"):
                if getattr(args, key, None) is not None:
                    cfg[key] = getattr(args, key)
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "odd-run":
            return cmd_odd_run(cfg)
        if args.command == "simulate-threshold":
            return cmd_simulate_threshold(cfg)
        return cmd_verify(cfg, args.which)
    except OddLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
