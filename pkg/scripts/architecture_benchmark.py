"""Held-out F1 of the three architectures over several training seeds.

    python3 scripts/architecture_benchmark.py --seeds 1 2 3 4 5 --out results/arch.json

Each run holds out fold 0 of a seeded 5-fold split of the synthetic benchmark
(200 events per class, data seed 1), trains on the rest, picks p_th on the
training originals and scores the held-out fold.
"""

import argparse
import json
import sys
from pathlib import Path

from fusion_rnn.experiments import ARCHITECTURES, as_dicts, benchmark_data, chance_f1, holdout_run, summarize
from fusion_rnn.dataset import kfold_split


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    ap.add_argument("--arch", nargs="+", choices=list(ARCHITECTURES), default=list(ARCHITECTURES))
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--hidden", type=int, default=32)
    ap.add_argument("--out", type=Path)
    a = ap.parse_args(argv)

    d = benchmark_data()
    runs = []
    for seed in a.seeds:
        for arch in a.arch:
            r = holdout_run(d, arch, seed, epochs=a.epochs, hidden=a.hidden)
            runs.append(r)
            print(f"{arch:9s} seed {seed}: F1 {r.f1:.4f}  Pr {r.precision:.4f}  Re {r.recall:.4f}  "
                  f"p_th {r.p_th:.2f}  ({r.total_seconds:.0f} s)", flush=True)
    summary = summarize(runs)
    _, test_d = kfold_split(d, 5, 1).split(d, 0)
    for arch, s in summary.items():
        print(f"{arch:9s} mean F1 {s['mean_f1']:.4f} over {s['n']} seeds")
    out = {"epochs": a.epochs, "hidden": a.hidden, "chance_f1": chance_f1(test_d), "summary": summary,
           "runs": as_dicts(runs)}
    if a.out:
        a.out.parent.mkdir(parents=True, exist_ok=True)
        a.out.write_text(json.dumps(out, indent=2) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
