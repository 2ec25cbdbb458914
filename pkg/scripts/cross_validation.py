"""k-fold cross-validation of one architecture, reported as mean +/- standard error.

    python3 scripts/cross_validation.py --arch F-RNN-EL --epochs 40 --hidden 32
"""

import argparse
import json
import sys

from fusion_rnn.evaluation import cross_validate
from fusion_rnn.experiments import ARCHITECTURES, benchmark_data
from fusion_rnn.network import NetConfig
from fusion_rnn.training import TrainConfig


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--arch", choices=list(ARCHITECTURES), default="F-RNN-EL")
    ap.add_argument("--k", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--hidden", type=int, default=32)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--events-per-class", type=int, default=200)
    ap.add_argument("--jobs", type=int, default=1)
    a = ap.parse_args(argv)

    d = benchmark_data(events_per_class=a.events_per_class)
    variant, loss = ARCHITECTURES[a.arch]
    net = NetConfig(variant=variant, loss_scheme=loss, hidden_dim=a.hidden, fusion_dim=a.hidden)
    rep = cross_validate(d, net, TrainConfig(epochs=a.epochs, seed=a.seed), k=a.k, jobs=a.jobs)
    for f in rep.folds:
        m = f.metrics
        print(f"fold {f.fold}: p_th {f.p_th:.2f}  Pr {m.precision:.3f}  Re {m.recall:.3f}  F1 {m.f1:.3f}")
    s = rep.summary
    print(f"{a.arch}: Pr {100 * s['precision']['mean']:.1f} +/- {100 * s['precision']['se']:.1f}  "
          f"Re {100 * s['recall']['mean']:.1f} +/- {100 * s['recall']['se']:.1f}  "
          f"TTM {s['mean_ttm']['mean']:.2f} s")
    print(json.dumps(s))
    return 0


if __name__ == "__main__":
    sys.exit(main())
