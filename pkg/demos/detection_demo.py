"""Two-phase training with a counterfactual loss threshold on noisy blobs,
next to plain training on the noisy labels.

    python3 demos/detection_demo.py [noise fraction] [seed]
"""

import sys

from oddlab.experiments import odd_blobs_run
from oddlab.metrics import histogram


def main(q=0.2, seed=0):
    res, erm_acc = odd_blobs_run(q, seed, with_erm=True)
    split, det = res.split, res.detection
    print(f"noise {q:.0%}: threshold T_p={split.threshold:.3f} at p={split.p:g}")
    print(f"flagged {det.flagged_fraction:.3f} (true {det.true_noise_fraction:.3f}), "
          f"precision {det.precision:.3f}, recall {det.recall:.3f}")
    print(f"test accuracy: thresholded {res.test_accuracy:.3f}, plain {erm_acc:.3f}")

    # training losses at the threshold epoch; the bin holding T_p is marked
    lo, hi, counts = histogram(split.losses, bins=20)
    top = counts.max()
    for a, b, c in zip(lo, hi, counts):
        mark = "|" if a <= split.threshold < b else " "
        print(f"{a:6.2f} {mark} {'#' * int(40 * c / top)}")


if __name__ == "__main__":
    args = sys.argv[1:]
    main(float(args[0]) if args else 0.2, int(args[1]) if len(args) > 1 else 0)
