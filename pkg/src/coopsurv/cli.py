"""Command-line interface.

Subcommands: generate, pretrain, finetune, evaluate, baseline, stats,
explain, compare. Outputs are JSON (metrics, statistics) or CSV
(per-patient risks, KM points, attention). Exit codes: 0 success,
2 validation/parse error, 3 undefined statistic.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from .data import SynthConfig, generate_synthetic_cohort, load_cohort, save_cohort
from .exceptions import (CheckpointError, ParseError, UndefinedLossError,
                         UndefinedStatisticError, ValidationError)
from . import interpret
from .models import MODEL_KINDS
from .stats import concordance_index, kaplan_meier, log_rank
from .training import (MetricsRecord, RunConfig, compare_models, cross_validate,
                       evaluate, finetune, load_model_checkpoint,
                       load_run_config, pretrain, save_model_checkpoint,
                       write_history_jsonl)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_UNDEFINED = 3


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, ParseError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (UndefinedStatisticError, UndefinedLossError) as exc:
        print(f"undefined statistic: {exc}", file=sys.stderr)
        return EXIT_UNDEFINED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coopsurv",
        description="Multimodal survival modeling with collaborative expert fusion")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic cohort")
    p.add_argument("--config", help="SynthConfig JSON file (defaults used if omitted)")
    p.add_argument("--out", required=True, help="cohort JSON output path")
    p.add_argument("--truth", help="optional CSV of hidden per-patient true risk")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("pretrain", help="train a model on the full cohort")
    p.add_argument("--config", required=True, help="RunConfig JSON file")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--log", help="per-epoch JSON-lines log path")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="cross-validated fine-tuning from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--cohort", required=True)
    p.add_argument("--config", help="RunConfig JSON (cohort_path/synth ignored)")
    p.add_argument("--fraction", type=float, help="train-split subsample fraction")
    p.add_argument("--folds", type=int, help="override k_folds")
    p.add_argument("--epochs", type=int, help="override finetune_epochs")
    p.add_argument("--seed", type=int, help="override seed")
    p.add_argument("--out", required=True, help="metrics JSON output path")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a cohort")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--cohort", required=True)
    p.add_argument("--out", help="metrics JSON output path (default: stdout)")
    p.add_argument("--risks-out", help="per-patient CSV output path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("baseline", help="cross-validate a model kind from scratch")
    p.add_argument("--kind", required=True, choices=MODEL_KINDS)
    p.add_argument("--config", required=True, help="RunConfig JSON file")
    p.add_argument("--out", required=True, help="metrics JSON output path")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("stats", help="survival statistics over a CSV")
    p.add_argument("--input", required=True,
                   help="CSV with columns risk,time,event[,group]")
    p.add_argument("--out", help="JSON output path (default: stdout)")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("explain", help="interpretability outputs for a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--cohort", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--records", type=int, default=25,
                   help="number of records for modality attribution")
    p.add_argument("--top-genes", type=float, default=0.05,
                   help="fraction of genes to report")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("compare", help="paired Wilcoxon over two metrics files")
    p.add_argument("metrics_a")
    p.add_argument("metrics_b")
    p.add_argument("--out", help="JSON output path (default: stdout)")
    p.set_defaults(func=cmd_compare)

    return parser


def _emit(payload: dict, out_path) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def cmd_generate(args) -> int:
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            cfg = SynthConfig.from_dict(json.load(fh))
    else:
        cfg = SynthConfig()
    cohort, truth = generate_synthetic_cohort(cfg)
    save_cohort(cohort, args.out)
    if args.truth:
        with open(args.truth, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["patient_id", "true_risk"])
            for record, z in zip(cohort.records, truth.true_risk):
                writer.writerow([record.patient_id, repr(float(z))])
    print(f"wrote {len(cohort)} records to {args.out}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    config = load_run_config(args.config)
    model = pretrain(config)
    save_model_checkpoint(args.out, model, config)
    if args.log:
        write_history_jsonl(model.history_, args.log)
    print(f"wrote checkpoint to {args.out}")
    return EXIT_OK


def _finetune_config(args) -> RunConfig:
    if args.config:
        payload = load_run_config(args.config).to_dict()
    else:
        payload = RunConfig(cohort_path=args.cohort).to_dict()
    payload["cohort_path"] = args.cohort
    payload["synth"] = None
    if args.fraction is not None:
        payload["fraction"] = args.fraction
    if args.folds is not None:
        payload["k_folds"] = args.folds
    if args.epochs is not None:
        payload["finetune_epochs"] = args.epochs
    if args.seed is not None:
        payload["seed"] = args.seed
    return RunConfig.from_dict(payload)


def cmd_finetune(args) -> int:
    config = _finetune_config(args)
    cohort = load_cohort(args.cohort)
    metrics = finetune(args.ckpt, cohort, config)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(metrics.to_json() + "\n")
    print(f"mean C-index {metrics.mean_c_index:.4f} over {metrics.k_folds} folds")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = load_model_checkpoint(args.ckpt)
    cohort = load_cohort(args.cohort)
    result = evaluate(model, cohort.records)
    payload = {
        "c_index": result.c_index,
        "n_records": len(cohort),
        "logrank_chi2": result.logrank_chi2,
        "logrank_p": result.logrank_p,
    }
    _emit(payload, args.out)
    if args.risks_out:
        with open(args.risks_out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["patient_id", "risk", "time", "event", "bin", "group"])
            for row in result.rows():
                writer.writerow(row)
    return EXIT_OK


def cmd_baseline(args) -> int:
    payload = load_run_config(args.config).to_dict()
    payload["baseline"] = args.kind
    config = RunConfig.from_dict(payload)
    metrics = cross_validate(config)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(metrics.to_json() + "\n")
    print(f"{args.kind}: mean C-index {metrics.mean_c_index:.4f}")
    return EXIT_OK


def _parse_event(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "t", "yes"):
        return True
    if lowered in ("0", "false", "f", "no"):
        return False
    raise ParseError(f"cannot parse event flag {raw!r}")


def cmd_stats(args) -> int:
    risks, times, events, groups = [], [], [], []
    try:
        with open(args.input, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"risk", "time", "event"} <= set(
                    reader.fieldnames):
                raise ParseError(f"{args.input}: need columns risk,time,event[,group]")
            has_group = "group" in reader.fieldnames
            for i, row in enumerate(reader):
                try:
                    risks.append(float(row["risk"]))
                    times.append(float(row["time"]))
                    events.append(_parse_event(row["event"]))
                except (TypeError, KeyError, ValueError) as exc:
                    raise ParseError(f"{args.input}: row {i + 2}: {exc}") from exc
                if has_group:
                    groups.append(row["group"])
    except OSError as exc:
        raise ValidationError(f"cannot read {args.input}: {exc}") from exc
    if not risks:
        raise ValidationError(f"{args.input}: no data rows")

    times_arr = np.array(times)
    events_arr = np.array(events)
    km = kaplan_meier(times_arr, events_arr)
    payload = {
        "n": len(risks),
        "c_index": concordance_index(np.array(risks), times_arr, events_arr),
        "kaplan_meier": [
            {"time": float(t), "survival": float(s), "at_risk": int(n), "events": int(d)}
            for t, s, n, d in zip(km.times, km.survival, km.at_risk, km.events)
        ],
    }
    if groups:
        labels = sorted(set(groups))
        if len(labels) != 2:
            raise ValidationError(f"log-rank needs exactly 2 groups, got {labels}")
        mask = np.array([g == labels[0] for g in groups])
        res = log_rank((times_arr[mask], events_arr[mask]),
                       (times_arr[~mask], events_arr[~mask]))
        payload["log_rank"] = {"groups": labels, "chi2": res.chi2, "p": res.p_value}
    _emit(payload, args.out)
    return EXIT_OK


def cmd_explain(args) -> int:
    from pathlib import Path

    model = load_model_checkpoint(args.ckpt)
    cohort = load_cohort(args.cohort)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    network = model.network_

    attributions = []
    for record in cohort.records[: args.records]:
        if len(record.present_modalities()) < 2:
            continue
        att = interpret.modality_shapley(network, record)
        attributions.append({"patient_id": record.patient_id,
                             "phi": att.phi, "baseline": att.baseline,
                             "full_value": att.full_value})
    _emit({"records": attributions}, out_dir / "modality_attributions.json")

    if hasattr(network, "fuse_groups"):
        importance = interpret.expert_group_importance(network, cohort)
        _emit({str(c): {"consensual": imp.consensual, "specialized": imp.specialized,
                        "overlapping": imp.overlapping}
               for c, imp in importance.items()},
              out_dir / "group_importance.json")

    scores = interpret.gene_importance(network)
    picks = interpret.top_genes(network, q=args.top_genes)
    _emit({"top_genes": [{"gene": int(g), "importance": float(scores[g])}
                         for g in picks]},
          out_dir / "top_genes.json")

    with open(out_dir / "attention.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "patch", "attention"])
        for record in cohort.records[: args.records]:
            if record.pathology is None:
                continue
            att = interpret.patch_attention(network, record)
            for j, a in enumerate(att):
                writer.writerow([record.patient_id, j, repr(float(a))])
    print(f"wrote explanations to {out_dir}")
    return EXIT_OK


def cmd_compare(args) -> int:
    def read_metrics(path):
        try:
            with open(path, encoding="utf-8") as fh:
                return MetricsRecord.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise ParseError(f"{path}: not a metrics file: {exc}") from exc

    a = read_metrics(args.metrics_a)
    b = read_metrics(args.metrics_b)
    res = compare_models(a, b)
    _emit({"kinds": [a.kind, b.kind],
           "mean_c_index": [a.mean_c_index, b.mean_c_index],
           "statistic": res.statistic, "p_value": res.p_value,
           "n_nonzero": res.n_nonzero, "degenerate": res.degenerate},
          args.out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
