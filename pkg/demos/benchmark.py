"""Benchmark all methods on the bundled datasets and write one TSV per dataset.

Run with ``python demos/benchmark.py [n_splits] [out_dir]``; six splits of
all three bundled datasets take about an hour on one core.  Set
``MARGINIMPUTE_YEAST`` to include YEAST.
"""
import sys
from pathlib import Path

from marginimpute import datasets
from marginimpute.pipeline import METHODS, run_experiment, write_summary_tsv


def main(n_splits=6, out_dir="benchmark"):
    out = Path(out_dir)
    out.mkdir(exist_ok=True)
    for name in datasets.available():
        res = run_experiment(
            datasets.load(name), (0.1, 0.3, 0.5), n_splits, METHODS, dataset=name,
            progress=lambda r: print(f"{r.dataset} {r.fraction:g} split {r.split} "
                                     f"{r.method}: {100 * r.loss:.2f}%", flush=True))
        write_summary_tsv(res, out / f"{name}.tsv")
        print((out / f"{name}.tsv").read_text())


if __name__ == "__main__":
    args = sys.argv[1:]
    main(int(args[0]) if args else 6, args[1] if len(args) > 1 else "benchmark")
