"""Closed-form reference for the max-margin dual versus the numerical solver
on sampled flip-construction data of growing dimension.

    python3 demos/dual_demo.py
"""

import numpy as np

from oddlab.datasets import Theorem1Params, generate_theorem1
from oddlab.svm import concentration_check, solve_dual, theorem1_reference


def main():
    m, n, lam = 4, 1, 1.0
    ref = theorem1_reference(m, n, lam)
    print("reference c =", np.round(ref.c, 4), f"epsilon = {ref.epsilon:.4f}")
    for d in (100, 1_000, 10_000, 100_000):
        ds = generate_theorem1(Theorem1Params(N=m + n, d=d, lam=lam, n_flip=n, seed=0))
        dual = solve_dual(ds.signed_columns())
        rep = concentration_check(ds, ref, dual)
        print(f"d={d:>6}: alpha={np.round(dual.alpha, 3)} within reference box: {rep.passed}")


if __name__ == "__main__":
    main()
