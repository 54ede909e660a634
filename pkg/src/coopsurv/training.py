"""Experiment harness: pretraining, cross-validated fine-tuning, evaluation,
checkpointing, and paired model comparison.

Protocols:
  - ``pretrain``: one model fitted on the whole cohort with the combined
    objective; checkpointable.
  - ``cross_validate``: per-fold training from scratch and held-out
    evaluation (the baseline-comparison protocol; no information crosses a
    fold boundary).
  - ``finetune``: per-fold continuation from a pretrained checkpoint, with
    optional train-split subsampling for data-efficiency runs; test folds
    depend only on (cohort, seed), so fraction sweeps share them exactly.

Metrics serialize to canonical JSON with volatile fields (wall clock)
excluded, so identical (config, seed) runs produce byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .data import (Cohort, SynthConfig, generate_synthetic_cohort, load_cohort,
                   split_folds, subsample)
from .checkpoint import load_arrays, save_arrays
from .exceptions import CheckpointError, UndefinedStatisticError, ValidationError
from .models import MODEL_KINDS, BaseSurvivalModel, make_model
from .stats import (WilcoxonResult, concordance_index, log_rank,
                    stratify_by_median, wilcoxon_signed_rank)
from .validation import check_fraction, check_positive_int

_CKPT_FORMAT = "coopsurv-model"


@dataclass
class RunConfig:
    synth: SynthConfig | None = None
    cohort_path: str | None = None
    baseline: str = "mice"
    d_model: int = 64
    n_heads: int = 4
    snn_hidden: int = 128
    n_overlap_experts: int = 4
    top_k: int = 2
    d_contrast: int = 32
    temperature: float = 0.07
    alpha: float = 2.0
    lr: float = 1e-4
    batch_size: int = 32
    pretrain_epochs: int = 30
    finetune_epochs: int = 20
    k_folds: int = 5
    fraction: float = 1.0
    finetune_contrastive: bool = True
    max_report_len: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.baseline not in MODEL_KINDS:
            raise ValidationError(
                f"unknown baseline kind {self.baseline!r}; choose from {MODEL_KINDS}")
        if (self.synth is None) == (self.cohort_path is None):
            raise ValidationError("configure exactly one of synth / cohort_path")
        check_fraction(self.fraction, "fraction")
        check_positive_int(self.k_folds, "k_folds", minimum=2)
        for name in ("d_model", "n_heads", "snn_hidden", "n_overlap_experts",
                     "top_k", "d_contrast", "batch_size", "max_report_len"):
            check_positive_int(getattr(self, name), name)
        for name in ("pretrain_epochs", "finetune_epochs"):
            check_positive_int(getattr(self, name), name, minimum=0)

    @classmethod
    def from_dict(cls, payload: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ValidationError(f"unknown RunConfig fields: {sorted(unknown)}")
        data = dict(payload)
        if data.get("synth") is not None:
            data["synth"] = SynthConfig.from_dict(data["synth"])
        return cls(**data)

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["synth"] = self.synth.to_dict() if self.synth is not None else None
        return out

    def config_hash(self) -> str:
        return sha256_of_json(self.to_dict())

    def model_params(self) -> dict:
        params = dict(d_model=self.d_model, n_heads=self.n_heads,
                      snn_hidden=self.snn_hidden, d_contrast=self.d_contrast,
                      temperature=self.temperature, alpha=self.alpha, lr=self.lr,
                      batch_size=self.batch_size,
                      max_report_len=self.max_report_len, seed=self.seed)
        if self.baseline in ("mice", "moe"):
            params.update(n_overlap_experts=self.n_overlap_experts, top_k=self.top_k)
        return params


def sha256_of_json(payload) -> str:
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def load_run_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return RunConfig.from_dict(json.load(fh))


def resolve_cohort(config: RunConfig) -> Cohort:
    if config.cohort_path is not None:
        return load_cohort(config.cohort_path)
    return generate_synthetic_cohort(config.synth)[0]


@dataclass
class EvalResult:
    c_index: float
    risks: np.ndarray
    times: np.ndarray
    events: np.ndarray
    patient_ids: list[str]
    bins: list[int]
    high_idx: np.ndarray
    low_idx: np.ndarray
    logrank_chi2: float | None
    logrank_p: float | None

    def rows(self) -> list[tuple]:
        group = np.empty(len(self.risks), dtype=object)
        group[self.high_idx] = "high"
        group[self.low_idx] = "low"
        return [(pid, float(r), float(t), bool(e), int(b), g)
                for pid, r, t, e, b, g in zip(self.patient_ids, self.risks,
                                              self.times, self.events,
                                              self.bins, group)]


def evaluate(model: BaseSurvivalModel, records) -> EvalResult:
    """Held-out evaluation: scalar risks, concordance, median-split log-rank."""
    records = list(records.records) if isinstance(records, Cohort) else list(records)
    risks = model.predict_risk(records)
    times = np.array([r.label.time for r in records])
    events = np.array([r.label.event for r in records])
    c_index = concordance_index(risks, times, events)
    high, low = stratify_by_median(risks)
    chi2 = p = None
    if high.size and low.size:
        try:
            res = log_rank((times[high], events[high]), (times[low], events[low]))
            chi2, p = res.chi2, res.p_value
        except UndefinedStatisticError:
            pass  # degenerate split (e.g. constant risks); C-index still valid
    return EvalResult(c_index=c_index, risks=risks, times=times, events=events,
                      patient_ids=[r.patient_id for r in records],
                      bins=[r.label.bin for r in records],
                      high_idx=high, low_idx=low,
                      logrank_chi2=chi2, logrank_p=p)


@dataclass
class MetricsRecord:
    kind: str
    config_hash: str
    k_folds: int
    fraction: float
    fold_c_index: list[float]
    fold_logrank_p: list[float | None]
    fold_test_hash: str
    mean_c_index: float
    sd_c_index: float
    skipped_batches: int
    wall_clock_seconds: float = field(default=0.0)

    def to_dict(self, include_volatile: bool = False) -> dict:
        out = asdict(self)
        if not include_volatile:
            out.pop("wall_clock_seconds")
        return out

    def to_json(self, include_volatile: bool = False) -> str:
        return json.dumps(self.to_dict(include_volatile), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, payload: dict) -> "MetricsRecord":
        payload = dict(payload)
        payload.setdefault("wall_clock_seconds", 0.0)
        return cls(**payload)


def _aggregate(kind: str, config: RunConfig, fold_scores, fold_ps, folds,
               skipped: int, started: float) -> MetricsRecord:
    scores = np.asarray(fold_scores, dtype=float)
    test_hash = sha256_of_json([test.tolist() for _, test in folds])
    return MetricsRecord(
        kind=kind, config_hash=config.config_hash(), k_folds=config.k_folds,
        fraction=config.fraction, fold_c_index=[float(s) for s in scores],
        fold_logrank_p=fold_ps, fold_test_hash=test_hash,
        mean_c_index=float(scores.mean()), sd_c_index=float(scores.std(ddof=0)),
        skipped_batches=skipped,
        wall_clock_seconds=time.perf_counter() - started)


def write_history_jsonl(history: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in history:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


# -- pretraining and checkpoints -------------------------------------------

def pretrain(config: RunConfig, cohort: Cohort | None = None) -> BaseSurvivalModel:
    """Fit one model on the full cohort with the combined objective."""
    cohort = resolve_cohort(config) if cohort is None else cohort
    if cohort.n_cancer_types < 2:
        raise ValidationError("pretraining expects a cohort spanning >= 2 cancer types")
    model = make_model(config.baseline, **config.model_params())
    model.fit(cohort, epochs=config.pretrain_epochs)
    return model


def save_model_checkpoint(path, model: BaseSurvivalModel,
                          config: RunConfig | None = None) -> None:
    model._require_fitted()
    meta = {
        "format": _CKPT_FORMAT,
        "kind": model.kind,
        "params": model.get_params(),
        "dims": model.dims_,
        "config_hash": config.config_hash() if config is not None else None,
    }
    save_arrays(path, model.network_.state_arrays(), meta)


def load_model_checkpoint(path) -> BaseSurvivalModel:
    arrays, meta = load_arrays(path)
    if meta.get("format") != _CKPT_FORMAT:
        raise CheckpointError(f"{path}: not a model checkpoint")
    model = make_model(meta["kind"], **meta["params"])
    dims = dict(meta["dims"])
    rng = np.random.default_rng(model.seed)
    model.network_ = model._build_network(dims, rng)
    model.network_.load_state_arrays(arrays)
    model.dims_ = dims
    model.history_ = []
    return model


# -- cross-validated protocols ----------------------------------------------

def _fold_seeds(seed: int, k: int) -> list[int]:
    children = np.random.SeedSequence(seed).spawn(k)
    return [int(c.generate_state(1)[0]) for c in children]


def cross_validate(config: RunConfig, cohort: Cohort | None = None) -> MetricsRecord:
    """Per-fold training from scratch; the baseline-comparison protocol."""
    started = time.perf_counter()
    cohort = resolve_cohort(config) if cohort is None else cohort
    folds = split_folds(cohort, config.k_folds, config.seed)
    seeds = _fold_seeds(config.seed, config.k_folds)
    scores, ps, skipped = [], [], 0
    for (train_idx, test_idx), fold_seed in zip(folds, seeds):
        model = make_model(config.baseline, **config.model_params())
        model.set_params(seed=fold_seed)
        train = cohort.subset(train_idx)
        if config.fraction < 1.0:
            train = subsample(train, config.fraction, seed=fold_seed)
        model.fit(train, epochs=config.pretrain_epochs)
        result = evaluate(model, cohort.subset(test_idx))
        scores.append(result.c_index)
        ps.append(result.logrank_p)
        skipped += model.skipped_batches_
    return _aggregate(config.baseline, config, scores, ps, folds, skipped, started)


def finetune(checkpoint_path, cohort: Cohort, config: RunConfig) -> MetricsRecord:
    """Cross-validated continuation from a pretrained checkpoint.

    The training split may be subsampled (config.fraction) while test folds
    depend only on (cohort, seed): fraction sweeps share them exactly.
    """
    started = time.perf_counter()
    folds = split_folds(cohort, config.k_folds, config.seed)
    seeds = _fold_seeds(config.seed, config.k_folds)
    scores, ps, skipped = [], [], 0
    kind = None
    for (train_idx, test_idx), fold_seed in zip(folds, seeds):
        model = load_model_checkpoint(checkpoint_path)
        kind = model.kind
        model.set_params(warm_start=True, seed=fold_seed,
                         use_contrastive=config.finetune_contrastive)
        train = cohort.subset(train_idx)
        if config.fraction < 1.0:
            train = subsample(train, config.fraction, seed=fold_seed)
        model.fit(train, epochs=config.finetune_epochs)
        result = evaluate(model, cohort.subset(test_idx))
        scores.append(result.c_index)
        ps.append(result.logrank_p)
        skipped += model.skipped_batches_
    return _aggregate(kind, config, scores, ps, folds, skipped, started)


def compare_models(metrics_a: MetricsRecord, metrics_b: MetricsRecord) -> WilcoxonResult:
    """Two-sided Wilcoxon signed-rank over paired per-fold concordances."""
    a, b = metrics_a.fold_c_index, metrics_b.fold_c_index
    if len(a) != len(b):
        raise ValidationError(f"paired score lists differ in length: {len(a)} vs {len(b)}")
    return wilcoxon_signed_rank(list(zip(a, b)))
