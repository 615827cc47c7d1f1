"""Impute a masked FLARE table with every method and compare Hamming losses.

Run with ``python demos/quickstart.py [fraction]``.
"""
import sys
import time

from marginimpute import datasets
from marginimpute.pipeline import METHODS, RunConfig, run_method
from marginimpute.table import MissingSpec, hamming_loss, make_splits


def main(fraction=0.3):
    truth = datasets.load("flare")
    masked, mask = make_splits(truth, MissingSpec.uniform(fraction, truth.n_cols, 0), 1)[0]
    print(f"FLARE {truth.n_rows}x{truth.n_cols}, {len(mask)} cells masked")
    for method in METHODS:
        start = time.perf_counter()
        run = run_method(masked, RunConfig(method=method))
        loss = 100 * hamming_loss(run.table, truth, mask)
        print(f"{method:8s} loss {loss:5.2f}%  lambda {run.lam}  "
              f"iterations {run.iterations} ({run.exit_reason})  "
              f"{time.perf_counter() - start:.1f}s")


if __name__ == "__main__":
    main(float(sys.argv[1]) if len(sys.argv) > 1 else 0.3)
