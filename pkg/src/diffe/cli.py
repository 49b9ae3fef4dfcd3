"""Command-line entry point: ``diffe {generate,preprocess,train,eval,ablate}``.

Exit codes: 0 success, 2 configuration or data error, 3 numeric failure,
4 I/O or file-format failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from .checkpoint import load_checkpoint
from .config import RunConfig, load_config
from .dataset import EpochedDataset, load, save, slots_to_recording
from .errors import DiffEError, FormatError, NumericError
from .evaluation import RunReport, ablation_report, make_report
from .networks import ABLATIONS
from .preprocessing import preprocess
from .synth import generate_dataset
from .training import (TrainHistory, predict_scores, split_id, split_indices, train_model,
                       write_history)

log = logging.getLogger("diffe")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class CliError(DiffEError):
    pass


def _config(args) -> RunConfig:
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        section = "data" if args.command == "generate" else "train"
        overrides.append(f"{section}.seed={args.seed}")
    if getattr(args, "epochs", None) is not None:
        overrides.append(f"train.epochs={args.epochs}")
    if getattr(args, "ablation", None) is not None:
        overrides.append(f'train.ablation="{args.ablation}"')
    return load_config(args.config, overrides)


def run_dir(root, seed: int) -> Path:
    base = Path(root) / f"{time.strftime('%Y%m%d-%H%M%S')}-seed{seed}"
    path, k = base, 1
    while path.exists():
        path = base.with_name(f"{base.name}-{k}")
        k += 1
    path.mkdir(parents=True)
    return path


def _epoched(path) -> EpochedDataset:
    ds = load(path)
    if ds.provenance.get("stage") == "raw":
        raise CliError(f"{path} holds a raw recording; run `diffe preprocess` on it first")
    return ds


def summary(ds: EpochedDataset) -> str:
    return (f"n={len(ds)} channels={ds.n_channels} L={ds.length} fs={ds.fs:g} "
            f"class_counts={ds.class_counts()}")


def train_run(cfg: RunConfig, ds: EpochedDataset, out: Path) -> RunReport:
    """Split, train, evaluate; everything lands in ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json() + "\n")
    tr_idx, te_idx = split_indices(ds.labels, cfg.train.test_fraction, cfg.train.split_seed)
    train, test = ds.subset(tr_idx), ds.subset(te_idx)
    history = TrainHistory()
    try:
        model, history = train_model(cfg.train, train, test, cfg.model,
                                     checkpoint_path=out / "model.ckpt",
                                     on_epoch=history.records.append)
    finally:
        write_history(history, out / "history.csv")
    scores = predict_scores(model, test.epochs, cfg.eval.batch_size)
    report = make_report(scores, test.labels, seed=cfg.train.seed, ablation=cfg.train.ablation,
                         split_id=split_id(te_idx), config=cfg.to_dict())
    (out / "report.json").write_text(report.to_json() + "\n")
    return report


def cmd_generate(args) -> None:
    cfg = _config(args)
    ds = generate_dataset(cfg.data)
    save(ds, args.out)
    print(f"wrote {args.out}: {summary(ds)}")


def cmd_preprocess(args) -> None:
    cfg = _config(args)
    raw = load(args.input)
    ds = preprocess(slots_to_recording(raw), cfg.pipeline)
    ds.provenance["source"] = raw.provenance.get("generator")
    save(ds, args.out)
    print(f"wrote {args.out}: {summary(ds)}")


def cmd_train(args) -> None:
    cfg = _config(args)
    ds = _epoched(args.data)
    out = run_dir(args.out_dir, cfg.train.seed)
    print(cfg.to_json())
    report = train_run(cfg, ds, out)
    print(f"{out}: accuracy {report.accuracy_pct:.2f}% AUC {report.auc_pct:.2f}%")


def cmd_eval(args) -> None:
    echoed = Path(args.checkpoint).with_name("config.json")
    if args.config is None and echoed.exists():
        args.config = echoed
    cfg = _config(args)
    ds = _epoched(args.data)
    model, _ = load_checkpoint(args.checkpoint)
    _, te_idx = split_indices(ds.labels, cfg.train.test_fraction, cfg.train.split_seed)
    test = ds.subset(te_idx)
    report = make_report(predict_scores(model, test.epochs, cfg.eval.batch_size), test.labels,
                         seed=cfg.train.seed, ablation=model.ablation, split_id=split_id(te_idx),
                         config=cfg.to_dict())
    text = report.to_json() + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")


def cmd_ablate(args) -> None:
    cfg = _config(args)
    if args.seeds:
        cfg.eval.seeds = list(args.seeds)
        cfg.eval.validate()
    ds = _epoched(args.data)
    out = run_dir(args.out_dir, cfg.eval.seeds[0])
    (out / "config.json").write_text(cfg.to_json() + "\n")
    reports = []
    for seed in cfg.eval.seeds:
        for arm in ABLATIONS:
            sub = replace(cfg, train=replace(cfg.train, ablation=arm, seed=seed))
            rep = train_run(sub, ds, out / f"{arm}-seed{seed}")
            print(f"{arm} seed {seed}: accuracy {rep.accuracy_pct:.2f}% AUC {rep.auc_pct:.2f}%")
            reports.append(rep)
    table = ablation_report(reports)
    (out / "ablation.csv").write_text(table.to_csv())
    (out / "ablation.txt").write_text(table.to_text())
    print(table.to_text(), end="")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="diffe", description=__doc__.splitlines()[0])
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="JSON run config")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")

    g = sub.add_parser("generate", help="write a synthetic raw recording")
    common(g)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", type=Path, required=True)
    g.set_defaults(func=cmd_generate)

    pp = sub.add_parser("preprocess", help="filter and epoch a raw recording")
    common(pp)
    pp.add_argument("--in", dest="input", type=Path, required=True)
    pp.add_argument("--out", type=Path, required=True)
    pp.set_defaults(func=cmd_preprocess)

    t = sub.add_parser("train", help="train one model and evaluate it on the held-out split")
    common(t)
    t.add_argument("--data", type=Path, required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--ablation", choices=ABLATIONS)
    t.add_argument("--out-dir", type=Path, default=Path("runs"))
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on the held-out split")
    common(e)
    e.add_argument("--checkpoint", type=Path, required=True)
    e.add_argument("--data", type=Path, required=True)
    e.add_argument("--out", type=Path)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train every ablation arm for each seed")
    common(a)
    a.add_argument("--data", type=Path, required=True)
    a.add_argument("--seeds", type=int, nargs="+")
    a.add_argument("--epochs", type=int)
    a.add_argument("--out-dir", type=Path, default=Path("runs"))
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc} (last good checkpoint kept)", file=sys.stderr)
        return EXIT_NUMERIC
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DiffEError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
