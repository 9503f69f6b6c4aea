"""Command-line entry point: train, ablate, gradcheck, synth."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import statistics
import sys
from pathlib import Path

import numpy as np

from . import trainer
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, dump_config, load_config
from .data import gen_gaussian_blobs_shift, gen_two_moons_shift, write_csv
from .errors import ConfigError, DisclusterError, ParseError
from .gradcheck import TOLERANCE, run_suite
from .model import AdaptationModel, predict
from .objectives import VARIANTS

log = logging.getLogger("discluster")

PROG = "discluster"
OUT_ENV = "DISCLUSTER_OUT"
ABLATION_ORDER = ["source_only", "em", "no_fisher_ordering", "no_fisher", "no_distilling",
                  "no_source_ordering", "no_source_fisher", "no_temperature",
                  "explicit_alignment", "full"]


class CliError(Exception):
    def __init__(self, kind: str, message: str, code: int):
        super().__init__(message)
        self.kind = kind
        self.code = code


def _out_dir(arg: str | None, cfg: ExperimentConfig | None = None) -> Path:
    chosen = arg or os.environ.get(OUT_ENV) or (cfg.run.out_dir if cfg else "runs/latest")
    path = Path(chosen)
    path.mkdir(parents=True, exist_ok=True)
    return path


class MetricsWriter:
    """Append-only JSONL writer, flushed after every record."""

    def __init__(self, path: Path):
        self.path = path
        self.fh = path.open("w")

    def __call__(self, record: dict):
        self.fh.write(json.dumps(record, sort_keys=True) + "\n")
        self.fh.flush()

    def close(self):
        self.fh.close()


def write_run_checkpoint(path: Path, state: trainer.TrainState, cfg: ExperimentConfig,
                         domains: trainer.Domains):
    model = state.model
    meta = {"input_dim": model.input_dim, "num_classes": model.num_classes,
            "extractor_dims": [layer.shape[1] for layer in model.extractor],
            "classifier_hidden": model.lifted_dim if model.two_layer else None,
            "seed": cfg.run.seed, "epochs": state.epoch}
    if domains.scaler is not None:
        meta["input_mean"] = domains.scaler[0].tolist()
        meta["input_std"] = domains.scaler[1].tolist()
    save_checkpoint(path, model.state_dict(), state.banks, meta)


def model_from_checkpoint(path) -> tuple[AdaptationModel, dict]:
    params, _, meta = load_checkpoint(path)
    model = AdaptationModel.build(meta["input_dim"], meta["num_classes"], meta["extractor_dims"],
                                  meta["classifier_hidden"])
    model.load_state_dict(params)
    return model, meta


def run_one(cfg: ExperimentConfig, out: Path, variant_id: str | None = None) -> dict:
    """Train one configuration and write metrics, checkpoint and resolved config into ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.resolved.json")
    domains = trainer.build_domains(cfg)
    writer = MetricsWriter(out / "metrics.jsonl")
    try:
        result = trainer.run_variant(cfg, variant_id or cfg.loss.variant, domains, on_epoch=writer)
    finally:
        writer.close()
    write_run_checkpoint(out / "checkpoint.bin", result["state"], cfg, domains)
    return result


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    out = _out_dir(args.out, cfg)
    result = run_one(cfg, out)
    final = result["final"]
    acc = final.get("target_acc")
    print(f"trained {cfg.loss.variant} for {cfg.schedule.epochs} epochs"
          + (f"; target accuracy {acc:.4f}" if acc is not None else "") + f"; outputs in {out}")
    return 0


def summarize(values: list[float]) -> tuple[float, float]:
    mean = statistics.fmean(values)
    sd = statistics.stdev(values) if len(values) > 1 else 0.0
    return mean, sd


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    trials = args.trials or cfg.run.trials
    variants = args.variants.split(",") if args.variants else ABLATION_ORDER
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}; known: {sorted(VARIANTS)}")
    out = _out_dir(args.out, cfg)
    rows = []
    for v in variants:
        accs = []
        for t in range(trials):
            trial_cfg = cfg.with_seed(cfg.run.seed + t).with_variant(v)
            result = run_one(trial_cfg, out / v / f"trial_{t}", v)
            accs.append(result["final"].get("target_acc", float("nan")))
        mean, sd = summarize(accs)
        rows.append({"variant": v, "mean": mean, "sd": sd, "trials": trials,
                     **{f"trial_{t}": a for t, a in enumerate(accs)}})
    table = out / "ablation.csv"
    with table.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    width = max(len(r["variant"]) for r in rows)
    print(f"{'variant':<{width}}  target acc (%)")
    for r in rows:
        print(f"{r['variant']:<{width}}  {100 * r['mean']:6.2f} +- {100 * r['sd']:.2f}")
    print(f"table written to {table}")
    return 0


def cmd_gradcheck(args) -> int:
    print(f"gradient check, eps={args.eps:g}, tolerance={TOLERANCE:g}")
    report = run_suite(args.eps, args.seed, fault=args.inject_fault,
                       progress=lambda k, v: print(f"  {k:<24} max rel err {v:.3e}"
                                                   f"  {'ok' if v < TOLERANCE else 'FAIL'}"))
    worst = max(report.values())
    ok = worst < TOLERANCE
    print(f"{'PASS' if ok else 'FAIL'}: worst relative error {worst:.3e}")
    return 0 if ok else 1


def cmd_synth(args) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    d = cfg.data
    seed = trainer.seeds_for(args.seed)["data"]
    if args.task == "two-moons":
        source, target = gen_two_moons_shift(d.n, d.noise_sd, d.rotation_deg, d.translation, seed)
    else:
        source, target = gen_gaussian_blobs_shift(d.num_classes, d.n_per_class, d.dim,
                                                  d.mean_shift, d.cov_scale, seed, d.separation)
    out = _out_dir(args.out)
    write_csv(source, out / "source.csv")
    write_csv(target, out / "target.csv")
    preds = {}
    if args.checkpoint:
        model, meta = model_from_checkpoint(args.checkpoint)
        mean = np.asarray(meta.get("input_mean", np.zeros(source.dim)))
        std = np.asarray(meta.get("input_std", np.ones(source.dim)))
        for ds in (source, target):
            preds[ds.domain_tag] = predict(model, (ds.features - mean) / std)
    with (out / "scatter.tsv").open("w") as fh:
        cols = ["x", "y", "label", "domain"] + (["predicted"] if preds else [])
        fh.write("\t".join(cols) + "\n")
        for ds in (source, target):
            for i, row in enumerate(ds.features):
                y = row[1] if ds.dim > 1 else 0.0
                cells = [repr(float(row[0])), repr(float(y)), str(int(ds.labels[i])), ds.domain_tag]
                if preds:
                    cells.append(str(int(preds[ds.domain_tag][i])))
                fh.write("\t".join(cells) + "\n")
    print(f"wrote source.csv, target.csv and scatter.tsv to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=PROG, description="Discriminative-clustering domain adaptation experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="run the ablation variants over several trials")
    p.add_argument("--config", required=True)
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--variants", help="comma-separated subset of variants")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every loss term")
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="write a synthetic task as CSV plus scatter data")
    p.add_argument("--task", choices=["two-moons", "blobs"], required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ParseError) as exc:
        print(f"{PROG}: config-error: {exc}", file=sys.stderr)
        return 1
    except (DisclusterError, OSError, ArithmeticError) as exc:
        print(f"{PROG}: runtime-error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
