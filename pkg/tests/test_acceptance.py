"""Acceptance checks, one per criterion.

Each check prints a single line "criterion N: PASS|FAIL  <measurements>" and
the matching test asserts the pass flag. Run the file directly to get the
lines without pytest:

    python3 tests/test_acceptance.py [N ...]
"""

import json
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))
from oracles import brute_force_dual, central_diff, random_separable, two_point_losses  # noqa: E402

from oddlab.cli import main as cli_main  # noqa: E402
from oddlab.datasets import Theorem1Params, generate_gaussian, generate_theorem1  # noqa: E402
from oddlab.experiments import (  # noqa: E402
    deep_instance,
    linear_homogeneous,
    noisy_blobs,
    odd_blobs_run,
    theory_run,
)
from oddlab.models import check_homogeneity, per_example_class_gradients  # noqa: E402
from oddlab.odd import (  # noqa: E402
    CounterfactualLossModel,
    percentile_threshold,
    sample_counterfactual_losses,
    split_dataset,
)
from oddlab.svm import concentration_check, required_dimension, solve_dual, theorem1_reference  # noqa: E402
from oddlab.theory import (  # noqa: E402
    beta_coefficients,
    dual_ratio_deviation,
    verify_alpha_ordering,
    verify_alpha_sum_bounds,
    verify_deep_coefficients,
    verify_loss_ratio,
    verify_separation,
)

RESULTS = {}


def report(n, passed, detail):
    line = f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line, flush=True)
    return passed


# ---------------------------------------------------------------- 1


def check_1(seeds=range(10), t_max=200_000):
    """Loss separation on the flip construction, N=20 (16 clean, 4 flipped), d=512."""
    ok, slowest, details = 0, 0.0, []
    for seed in seeds:
        t0 = time.perf_counter()
        ds = generate_theorem1(Theorem1Params(N=20, d=512, lam=1.0, n_flip=4, seed=seed))
        run = theory_run(ds, eta_factor=0.9, K=1, t_max=t_max, n_checkpoints=40)
        rep = verify_separation(run.traj, ds.noise_mask, required_fraction=0.5)
        dt = time.perf_counter() - t0
        slowest = max(slowest, dt)
        ok += rep.passed and dt <= 60.0
        details.append(rep.first_separation)
    passed = ok >= 9
    return report(1, passed, f"{ok}/10 seeds separated (>= 9 needed), first separation "
                             f"iterations {details}, slowest seed {slowest:.1f}s (<= 60s)")


# ---------------------------------------------------------------- 2


def check_2(seeds=range(10), t_max=100_000):
    """Loss ratios versus dual ratios on random separable N=6, d=16 data."""
    ok, finals, mono = 0, [], 0
    for seed in seeds:
        ds = generate_gaussian(6, 16, seed)
        run = theory_run(ds, t_max=t_max, n_checkpoints=20)
        rep = verify_loss_ratio(run.traj, run.dual, tol=0.10, require_monotone=True)
        ok += rep.passed
        mono += rep.monotone
        finals.append(round(float(rep.max_rel_deviation[-1]), 3))
    passed = ok >= 9
    return report(2, passed, f"{ok}/10 seeds within 10% and monotone (>= 9 needed) at t={t_max}; "
                             f"final deviations {finals}; monotone in {mono}/10")


# ---------------------------------------------------------------- 3


def check_3(n_instances=1000, seed=2024):
    rng = np.random.default_rng(seed)
    worst_a = worst_g = worst_w = 0.0
    for _ in range(n_instances):
        N, d = int(rng.integers(2, 7)), int(rng.integers(1, 5))
        X = random_separable(rng, N, d)
        sol = solve_dual(X)
        a_ref, _ = brute_force_dual(X)
        s = sol.alpha.sum()
        worst_a = max(worst_a, float(np.max(np.abs(sol.alpha - a_ref))))
        worst_g = max(worst_g, abs(sol.gamma_star - s ** -0.5) / s ** -0.5)
        worst_w = max(worst_w, abs(sol.w_hat @ sol.w_hat - s) / s)
    passed = worst_a <= 1e-6 and worst_g <= 1e-8 and worst_w <= 1e-8
    return report(3, passed, f"{n_instances} instances: max |alpha - oracle| {worst_a:.1e} (<= 1e-6), "
                             f"gamma identity {worst_g:.1e}, norm identity {worst_w:.1e} (<= 1e-8)")


# ---------------------------------------------------------------- 4


def check_4(seeds=range(100)):
    ref = theorem1_reference(2, 1, 1.0)
    inv_err = float(np.max(np.abs(ref.A @ ref.A_inv - np.eye(3))))
    c_err = float(np.max(np.abs(ref.A @ ref.c - 1.0)))
    mask = ref.groups < 0
    order_ref = bool(ref.c[mask].min() > ref.c[~mask].max())
    sum_ref = verify_alpha_sum_bounds(ref.c, 2, 1, 1.0).passed
    d = required_dimension(2, 1, 1.0, 0.01)
    ok = 0
    for seed in seeds:
        ds = generate_theorem1(Theorem1Params(N=3, d=d, lam=1.0, n_flip=1, seed=seed))
        dual = solve_dual(ds.signed_columns())
        conc = concentration_check(ds, dual=dual)
        ok += (conc.passed and verify_alpha_ordering(dual, ds.noise_mask).passed
               and verify_alpha_sum_bounds(dual, 2, 1, 1.0).passed)
    passed = inv_err <= 1e-10 and c_err <= 1e-10 and order_ref and sum_ref and ok >= 95
    return report(4, passed, f"A A^-1 err {inv_err:.1e}, A c err {c_err:.1e} (<= 1e-10); "
                             f"reference ordering {order_ref}, sum bounds {sum_ref}; "
                             f"sampled d={d}: {ok}/100 seeds pass all statements (>= 95)")


# ---------------------------------------------------------------- 5


def check_5():
    K = 10
    zero = CounterfactualLossModel(np.zeros((K, 32)), np.zeros(K))
    s0 = sample_counterfactual_losses(zero, 100_000, 0)
    zero_err = float(np.max(np.abs(s0 - math.log(K))))

    B, K2, n = 2.0, 5, 100_000
    two = CounterfactualLossModel(np.zeros((K2, 8)), np.r_[B, np.zeros(K2 - 1)])
    s1 = sample_counterfactual_losses(two, n, 1)
    zscores = []
    for value, p in two_point_losses(B, K2).items():
        cnt = int(np.sum(np.abs(s1 - value) <= 1e-12))
        zscores.append(abs(cnt - n * p) / math.sqrt(n * p * (1 - p)))
    two_ok = max(zscores) <= 3.0 and len(np.unique(s1)) == 2

    rng = np.random.default_rng(7)
    cf = CounterfactualLossModel(rng.standard_normal((K, 64)) / 8.0, rng.standard_normal(K) * 0.1)
    a = sample_counterfactual_losses(cf, 100_000, 11)
    b = sample_counterfactual_losses(cf, 100_000, 12)
    boot = np.random.default_rng(99)
    reps = [percentile_threshold(boot.choice(a, a.size), 10) for _ in range(200)]
    se = float(np.std(reps))
    gap = abs(percentile_threshold(a, 10) - percentile_threshold(b, 10))
    passed = zero_err <= 4.5e-16 and two_ok and gap <= 3 * se
    return report(5, passed, f"zero fc max |l - ln K| {zero_err:.1e}; two-point max z {max(zscores):.2f} "
                             f"(<= 3); T_10 gap {gap:.2e} vs 3 x bootstrap SE {3 * se:.2e}")


# ---------------------------------------------------------------- 6


def check_6(seeds=range(5), paired=range(10)):
    rows, ok_levels = [], True
    for q in (0.1, 0.2, 0.4):
        fr, pr, rc = [], [], []
        for seed in seeds:
            res, _ = odd_blobs_run(q, seed)
            fr.append(res.flagged_fraction)
            pr.append(res.detection.precision)
            rc.append(res.detection.recall)
        f, p, r = np.mean(fr), np.mean(pr), np.mean(rc)
        ok_levels &= abs(f - q) <= 0.05 and p >= 0.85 and r >= 0.80
        rows.append(f"q={q:.0%}: flagged {f:.3f} P {p:.3f} R {r:.3f}")
    wins, accs = 0, []
    for seed in paired:
        res, erm = odd_blobs_run(0.4, seed, with_erm=True)
        wins += res.test_accuracy >= erm
        accs.append((round(res.test_accuracy, 3), round(erm, 3)))
    passed = bool(ok_levels and wins >= 8)
    return report(6, passed, "; ".join(rows) + f"; ODD >= ERM at 40% in {wins}/10 paired runs (>= 8) "
                  "[reference table p=10: 2.3/20.8/40.2 discarded; P 0.88-0.92, R 0.84-0.88]")


# ---------------------------------------------------------------- 7


def check_7():
    res, _ = odd_blobs_run(0.2, seed=0)
    model = res.phase1.model  # the model the split was made with
    train, _ = noisy_blobs(0.2, 0)
    Ts, sets, ds_losses = [], [], None
    for p in (1, 10, 30, 50, 80):
        T = percentile_threshold(res.qn_samples, p)
        sp = split_dataset(model, train, T, p)
        ds_losses = sp.losses
        Ts.append(T)
        sets.append(set(sp.flagged.tolist()))
    mono = all(a <= b for a, b in zip(Ts, Ts[1:]))
    nested = all(b <= a for a, b in zip(sets, sets[1:]))
    same_losses = np.array_equal(ds_losses, res.split.losses)
    passed = mono and nested and same_losses
    return report(7, passed, f"T_p = {[round(t, 4) for t in Ts]}, flagged sizes "
                             f"{[len(s) for s in sets]}; non-decreasing {mono}, nested {nested}")


# ---------------------------------------------------------------- 8


def check_8():
    net, ds = deep_instance()
    X, y = ds.features, ds.labels
    hom = max(check_homogeneity(net, x, scales=(0.5, 2.0, 4.0)).max_rel_deviation for x in X)

    fd_worst = 0.0
    w = net.params
    for g in per_example_class_gradients(net, X[:3]):
        fd = central_diff(lambda v: net.with_params(v).forward(X[g.i])[g.j], w)
        fd_worst = max(fd_worst, float(np.max(np.abs(g.grad - fd)) / np.max(np.abs(fd))))
    _, gl = net.loss_grad(X, y)
    fd = central_diff(lambda v: net.with_params(v).loss_grad(X, y)[0], w)
    fd_worst = max(fd_worst, float(np.max(np.abs(gl - fd)) / np.max(np.abs(fd))))

    rng = np.random.default_rng(0)
    beta_worst = max(float(np.max(np.abs(beta_coefficients(rng.normal(0, s, (50, 3)),
                                                           rng.integers(0, 3, 50)).sum(axis=1))))
                     for s in (0.1, 1.0, 10.0, 100.0))

    rep = verify_deep_coefficients(net, ds, [1e-2, 1e-3, 1e-4], tol=1e-3)
    lin_ds = generate_gaussian(6, 16, 0)
    lin = verify_deep_coefficients(linear_homogeneous(16), lin_ds,
                                   [1e-2, 1e-4, 1e-6, 1e-8, 1e-10, 1e-12])
    lin_dev = dual_ratio_deviation(lin, solve_dual(lin_ds.signed_columns()))
    grads = [f"{s.grad_norm:.1e}" for s in rep.stages]
    clauses = {
        "homogeneity": hom <= 1e-6,
        "finite differences": fd_worst <= 1e-4,
        "beta row sums": beta_worst <= 1e-12,
        "alpha row sums": rep.row_sum_max <= 1e-3,
        "sign pattern": rep.sign_ok,
        "stationarity": rep.converged,
        "linear cross-check": lin_dev <= 0.10 and lin.converged,
    }
    passed = all(clauses.values())
    failed = [k for k, v in clauses.items() if not v]
    return report(8, passed, f"homogeneity dev {hom:.1e}, FD rel err {fd_worst:.1e}, beta row sums "
                             f"{beta_worst:.1e}, alpha row sums {rep.row_sum_max:.1e}, signs {rep.sign_ok}, "
                             f"stage grad norms {grads} (target 1e-6), linear cross-check dev "
                             f"{lin_dev:.3f} (<= 0.10); failing clauses: {failed or 'none'}")


# ---------------------------------------------------------------- 9


def _tree(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(Path(d).rglob("*")) if p.is_file()}


def check_9(workdir):
    workdir = Path(workdir)
    odd = {"dataset": {"kind": "blobs", "K": 4, "per_class": 50, "d": 8,
                       "noise": {"fraction": 0.2, "seed": 1}},
           "model": {"kind": "mlp", "hidden": [16]},
           "sgd": {"eta": 0.5, "K": 10, "epochs": 10, "reduction": "mean",
                   "schedule": {"kind": "cosine", "total_epochs": 10}},
           "odd": {"E": 5, "p": 10, "n_mc": 5000}}
    commands = {
        "generate": (["generate"], {"dataset": {"kind": "theorem1", "N": 10, "d": 40, "n_flip": 2}}),
        "train": (["train"], {"dataset": {"kind": "theorem1", "N": 8, "d": 32, "n_flip": 2},
                              "model": {"kind": "linear"},
                              "sgd": {"eta": 0.05, "K": 2, "epochs": 20, "checkpoint_every": 10}}),
        "odd-run": (["odd-run"], odd),
        "verify-ratio": (["verify", "ratio"], {"run": {"t_max": 5000, "n_checkpoints": 8}}),
        "verify-decomposition": (["verify", "decomposition"], {"run": {"t_max": 5000, "n_checkpoints": 8}}),
        "verify-separation": (["verify", "separation"], {"run": {"t_max": 5000, "n_checkpoints": 8}}),
        "verify-dual": (["verify", "dual"], {}),
        "verify-deep": (["verify", "deep"], {"deep": {"linear": True}}),
    }
    bad = []
    for name, (argv, cfg) in commands.items():
        cfg_path = workdir / f"{name}.json"
        cfg_path.write_text(json.dumps(cfg))
        trees = []
        for k in range(2):
            out = workdir / f"{name}-{k}"
            out.mkdir()
            target = out / "data.csv" if name == "generate" else out
            cli_main(argv + ["--config", str(cfg_path), "--out", str(target), "--seed", "3"])
            trees.append(_tree(out))
        if not trees[0] or trees[0] != trees[1]:
            bad.append(name)
    ck = workdir / "odd-run-0" / "final_model.json"
    trees = []
    for k in range(2):
        out = workdir / f"threshold-{k}"
        cli_main(["simulate-threshold", "--checkpoint", str(ck), "--n-mc", "20000", "--out", str(out),
                  "--seed", "3"])
        trees.append(_tree(out))
    if trees[0] != trees[1]:
        bad.append("simulate-threshold")
    n_cmds = len(commands) + 1
    return report(9, not bad, f"{n_cmds - len(bad)}/{n_cmds} commands byte-identical on rerun"
                              + (f"; differing: {bad}" if bad else ""))


# ---------------------------------------------------------------- pytest entry points


@pytest.mark.slow
def test_criterion_1():
    assert check_1()


@pytest.mark.slow
def test_criterion_2():
    assert check_2()


def test_criterion_3():
    assert check_3()


@pytest.mark.slow
def test_criterion_4():
    assert check_4()


def test_criterion_5():
    assert check_5()


@pytest.mark.slow
def test_criterion_6():
    assert check_6()


def test_criterion_7():
    assert check_7()


def test_criterion_8():
    assert check_8()


def test_criterion_9(tmp_path, capsys):
    with capsys.disabled():
        # silence the CLI's own progress lines, keep the criterion line
        import contextlib
        import io

        buf = io.StringIO()
        with contextlib.redirect_stdout(buf):
            ok = check_9(tmp_path)
        print(RESULTS[9])
    assert ok


if __name__ == "__main__":
    import contextlib
    import io
    import tempfile

    wanted = [int(a) for a in sys.argv[1:]] or list(range(1, 10))
    for n in wanted:
        if n == 9:
            with tempfile.TemporaryDirectory() as tmp, contextlib.redirect_stdout(io.StringIO()):
                check_9(tmp)
            print(RESULTS[9])
        else:
            globals()[f"check_{n}"]()
    sys.exit(0 if all("PASS" in RESULTS[n] for n in wanted) else 1)
