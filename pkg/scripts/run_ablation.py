"""Ablation study on synthetic data: every arm x seed on one shared split.

    python scripts/run_ablation.py --epochs 30 --seeds 0 1 2 --csv ablation.csv

Extra ``--set`` overrides use the CLI syntax, e.g. ``--set data.amplitude=2.5``.
"""

import argparse
import time
from dataclasses import replace
from pathlib import Path

from diffe.config import build_config
from diffe.dataset import slots_to_recording
from diffe.evaluation import ablation_report, make_report
from diffe.networks import ABLATIONS
from diffe.preprocessing import preprocess
from diffe.synth import generate_dataset
from diffe.training import predict_scores, split_id, split_indices, train_model


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--arms", nargs="+", default=list(ABLATIONS), choices=ABLATIONS)
    ap.add_argument("--set", action="append", default=[])
    ap.add_argument("--csv", type=Path)
    args = ap.parse_args()

    cfg = build_config({}, [f"train.epochs={args.epochs}", *args.set])
    ds = preprocess(slots_to_recording(generate_dataset(cfg.data)), cfg.pipeline)
    tr, te = split_indices(ds.labels, cfg.train.test_fraction, cfg.train.split_seed)
    train, test = ds.subset(tr), ds.subset(te)
    print(f"{len(train)} train / {len(test)} test trials, {ds.n_classes} classes")

    reports = []
    for seed in args.seeds:
        for arm in args.arms:
            t0 = time.time()
            tc = replace(cfg.train, ablation=arm, seed=seed)
            model, hist = train_model(tc, train, test, cfg.model)
            rep = make_report(predict_scores(model, test.epochs), test.labels, seed=seed,
                              ablation=arm, split_id=split_id(te))
            curve = " ".join(f"{r.test_acc:.0f}" for r in hist.records)
            print(f"{arm:<20} seed {seed}: acc {rep.accuracy_pct:6.2f}  auc {rep.auc_pct:6.2f}  "
                  f"({time.time() - t0:.0f}s)  curve: {curve}", flush=True)
            reports.append(rep)

    table = ablation_report(reports)
    print(table.to_text())
    if args.csv:
        args.csv.write_text(table.to_csv())


if __name__ == "__main__":
    main()
