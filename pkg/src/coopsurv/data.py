"""Multimodal patient cohorts: data model, synthetic pan-cancer generation
with known ground truth, time discretization, fold splitting, subsampling,
and JSON (de)serialization.

Synthetic design: each patient carries a latent risk z drawn from a
per-cancer-type shifted normal and a shared latent vector u. Every modality
observes a fixed random linear embedding of (u + private noise, w_m * (z +
risk noise)), so modalities agree through u (contrastive signal) while each
contributes an independently-noised view of z (prognostic synergy).
Survival times follow a discrete monthly hazard whose complementary
log-log is affine in z; censoring times are independent uniform draws
scaled by a factor calibrated to the target censoring rate.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import ParseError, ValidationError
from .validation import check_finite_array, check_fraction, check_positive_int

MODALITIES = ("pathology", "genomics", "report")
ENDPOINTS = ("OS", "DSS", "PFS", "DFS", "LRFS", "DMFS")

_MAX_MONTHS = 1200  # administrative horizon; event mass beyond it is negligible
_RISK_CHANNEL_GAIN = 3.0  # weight of the risk channel inside the latent mix
_TOKEN_SQUASH = 3.0  # tanh scale mapping report features onto vocabulary bins


@dataclass(frozen=True)
class SurvivalLabel:
    time: float
    event: bool           # True = event observed (uncensored)
    bin: int              # 1-based time-bin index
    endpoint: str = "OS"

    def __post_init__(self):
        if self.time <= 0.0 or not math.isfinite(self.time):
            raise ValidationError(f"follow-up time must be positive, got {self.time}")
        if self.endpoint not in ENDPOINTS:
            raise ValidationError(f"unknown endpoint {self.endpoint!r}")
        if self.bin < 1:
            raise ValidationError(f"bin index must be >= 1, got {self.bin}")


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    cancer_type: int
    label: SurvivalLabel
    pathology: np.ndarray | None = None   # (P, patch_dim) patch-embedding bag
    genomics: np.ndarray | None = None    # (gene_dim,) expression vector
    report: np.ndarray | None = None      # (T,) integer token ids

    def __post_init__(self):
        if self.pathology is None and self.genomics is None and self.report is None:
            raise ValidationError(f"record {self.patient_id!r} has no modality payload")
        if self.pathology is not None:
            bag = check_finite_array(self.pathology, f"{self.patient_id}.pathology", ndim=2)
            if bag.shape[0] < 1:
                raise ValidationError(f"record {self.patient_id!r} has an empty patch bag")
            object.__setattr__(self, "pathology", bag)
        if self.genomics is not None:
            object.__setattr__(
                self, "genomics",
                check_finite_array(self.genomics, f"{self.patient_id}.genomics", ndim=1))
        if self.report is not None:
            ids = np.asarray(self.report, dtype=np.int64)
            if ids.ndim != 1 or ids.size < 1:
                raise ValidationError(f"record {self.patient_id!r} has an empty report")
            if np.any(ids < 0):
                raise ValidationError(f"record {self.patient_id!r} has negative token ids")
            object.__setattr__(self, "report", ids)

    def present_modalities(self) -> tuple[str, ...]:
        return tuple(m for m in MODALITIES if getattr(self, m) is not None)


@dataclass(frozen=True)
class Cohort:
    records: tuple[PatientRecord, ...]
    n_cancer_types: int
    bin_edges: np.ndarray        # n_bins + 1 edges, [0, ..., +inf]
    gene_dim: int
    patch_dim: int
    vocab_size: int

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        edges = np.asarray(self.bin_edges, dtype=np.float64)
        if edges.ndim != 1 or edges.size < 3:
            raise ValidationError("bin_edges needs at least 3 entries (>= 2 bins)")
        if np.any(np.diff(edges) <= 0.0):
            raise ValidationError("bin_edges must be strictly ascending")
        object.__setattr__(self, "bin_edges", edges)
        for r in self.records:
            if not 0 <= r.cancer_type < self.n_cancer_types:
                raise ValidationError(
                    f"record {r.patient_id!r}: cancer_type {r.cancer_type} outside "
                    f"[0, {self.n_cancer_types})")
            if not 1 <= r.label.bin <= self.n_bins:
                raise ValidationError(
                    f"record {r.patient_id!r}: bin {r.label.bin} outside [1, {self.n_bins}]")
            if r.report is not None and np.any(r.report >= self.vocab_size):
                raise ValidationError(
                    f"record {r.patient_id!r}: token id >= vocab_size {self.vocab_size}")

    @property
    def n_bins(self) -> int:
        return self.bin_edges.size - 1

    def __len__(self) -> int:
        return len(self.records)

    def times(self) -> np.ndarray:
        return np.array([r.label.time for r in self.records])

    def events(self) -> np.ndarray:
        return np.array([r.label.event for r in self.records])

    def cancer_types(self) -> np.ndarray:
        return np.array([r.cancer_type for r in self.records])

    def subset(self, indices) -> "Cohort":
        idx = np.asarray(indices, dtype=np.intp)
        return replace(self, records=tuple(self.records[i] for i in idx))


@dataclass(frozen=True)
class GroundTruth:
    """Hidden generator state: per-patient true risk, aligned with records."""

    true_risk: np.ndarray


@dataclass(frozen=True)
class SynthConfig:
    n_cancer_types: int = 4
    patients_per_type: int = 250
    d_latent: int = 8
    gene_dim: int = 120
    patch_dim: int = 32
    vocab_size: int = 48
    report_length: int = 24
    bag_size_range: tuple[int, int] = (6, 14)
    signal_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)   # w_p, w_g, w_r
    modality_risk_noise: tuple[float, float, float] = (1.5, 1.5, 1.5)
    shared_noise: float = 0.6
    observation_noise: float = 0.3
    censoring_rate: float = 0.3
    missing_rates: tuple[float, float, float] = (0.0, 0.0, 0.0)
    n_bins: int = 4
    base_monthly_hazard: float = 0.03
    risk_coefficient: float = 1.2
    endpoint: str = "OS"
    seed: int = 0

    def __post_init__(self):
        check_positive_int(self.n_cancer_types, "n_cancer_types")
        check_positive_int(self.patients_per_type, "patients_per_type")
        check_positive_int(self.d_latent, "d_latent")
        check_positive_int(self.n_bins, "n_bins", minimum=2)
        for name in ("gene_dim", "patch_dim", "vocab_size", "report_length"):
            check_positive_int(getattr(self, name), name)
        lo, hi = self.bag_size_range
        if not 1 <= lo <= hi:
            raise ValidationError(f"bag_size_range {self.bag_size_range} invalid")
        if any(w < 0.0 for w in self.signal_weights):
            raise ValidationError("signal_weights must be >= 0")
        if not 0.0 <= self.censoring_rate < 1.0:
            raise ValidationError(f"censoring_rate {self.censoring_rate} outside [0, 1)")
        if any(not 0.0 <= r < 1.0 for r in self.missing_rates):
            raise ValidationError("missing_rates must lie in [0, 1)")
        if sum(1 for r in self.missing_rates if r > 0.0) > 2:
            raise ValidationError(
                "at most two modalities may have a nonzero missing rate "
                "(every record must keep at least one modality)")
        if not 0.0 < self.base_monthly_hazard < 1.0:
            raise ValidationError("base_monthly_hazard must lie in (0, 1)")
        if self.endpoint not in ENDPOINTS:
            raise ValidationError(f"unknown endpoint {self.endpoint!r}")

    @classmethod
    def from_dict(cls, payload: dict) -> "SynthConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        unknown = set(payload) - known
        if unknown:
            raise ValidationError(f"unknown SynthConfig fields: {sorted(unknown)}")
        cleaned = {k: tuple(v) if isinstance(v, list) else v for k, v in payload.items()}
        return cls(**cleaned)

    def to_dict(self) -> dict:
        out = {}
        for name in self.__dataclass_fields__:  # type: ignore[attr-defined]
            value = getattr(self, name)
            out[name] = list(value) if isinstance(value, tuple) else value
        return out


def discretize_times(event_times, n_bins: int) -> np.ndarray:
    """Bin edges at empirical quantiles of uncensored event times.

    Returns n_bins + 1 edges: 0, the interior quantiles j/n_bins, and +inf.
    A time t maps to the bin k with t in (edge_{k-1}, edge_k] (left-open,
    right-closed).
    """
    check_positive_int(n_bins, "n_bins", minimum=2)
    times = check_finite_array(event_times, "event_times", ndim=1)
    if times.size == 0 or np.any(times <= 0.0):
        raise ValidationError("event times must be non-empty and positive")
    if times.size < n_bins:
        raise ValidationError(
            f"only {times.size} uncensored event times for {n_bins} bins; use fewer bins")
    if np.unique(times).size == 1:
        raise ValidationError("all event times are equal; bin edges would be degenerate")
    interior = np.quantile(times, [j / n_bins for j in range(1, n_bins)])
    if np.unique(interior).size != interior.size or (interior.size and interior[0] <= 0.0):
        raise ValidationError(
            "degenerate bin edges (tied quantiles); use fewer bins or spread the times")
    return np.concatenate([[0.0], interior, [np.inf]])


def assign_bin(time: float, bin_edges: np.ndarray) -> int:
    """1-based bin of a time under the left-open/right-closed rule."""
    if time <= 0.0:
        raise ValidationError(f"time must be positive, got {time}")
    return int(np.searchsorted(bin_edges[1:], time, side="left")) + 1


def generate_synthetic_cohort(cfg: SynthConfig) -> tuple[Cohort, GroundTruth]:
    """Deterministic synthetic cohort plus the hidden per-patient true risk."""
    rng = np.random.default_rng(cfg.seed)
    n_total = cfg.n_cancer_types * cfg.patients_per_type
    latent_dim = cfg.d_latent + 1

    if cfg.n_cancer_types == 1:
        type_means = np.zeros(1)
    else:
        type_means = np.linspace(-1.0, 1.0, cfg.n_cancer_types)

    embed = {
        "pathology": rng.normal(size=(latent_dim, cfg.patch_dim)) / np.sqrt(latent_dim),
        "genomics": rng.normal(size=(latent_dim, cfg.gene_dim)) / np.sqrt(latent_dim),
        "report": rng.normal(size=(latent_dim, cfg.report_length)) / np.sqrt(latent_dim),
    }

    log_base_rate = math.log(-math.log1p(-cfg.base_monthly_hazard))
    # Outcomes carry the latent risk only to the extent that some modality
    # expresses it: with all signal weights at zero, survival times are
    # independent of z and the oracle concordance collapses to 0.5.
    risk_slope = cfg.risk_coefficient * max(cfg.signal_weights)

    cancer_ids = np.repeat(np.arange(cfg.n_cancer_types), cfg.patients_per_type)
    z_all = np.empty(n_total)
    event_months = np.empty(n_total)
    censor_u = np.empty(n_total)
    payloads: list[dict] = []

    for i in range(n_total):
        c = int(cancer_ids[i])
        z = type_means[c] + rng.normal()
        z_all[i] = z
        u = rng.normal(size=cfg.d_latent)
        raw = {}
        for m_idx, modality in enumerate(MODALITIES):
            base = u + cfg.shared_noise * rng.normal(size=cfg.d_latent)
            risk_channel = cfg.signal_weights[m_idx] * (
                z + cfg.modality_risk_noise[m_idx] * rng.normal())
            latent = np.concatenate([base, [_RISK_CHANNEL_GAIN * risk_channel]])
            if modality == "pathology":
                n_patches = int(rng.integers(cfg.bag_size_range[0], cfg.bag_size_range[1] + 1))
                bag = latent @ embed[modality]
                bag = bag[None, :] + cfg.observation_noise * rng.normal(
                    size=(n_patches, cfg.patch_dim))
                raw[modality] = bag
            else:
                vec = latent @ embed[modality] + cfg.observation_noise * rng.normal(
                    size=embed[modality].shape[1])
                raw[modality] = vec
        dropped = {m: bool(rng.uniform() < cfg.missing_rates[k])
                   for k, m in enumerate(MODALITIES)}
        payloads.append({"raw": raw, "dropped": dropped})

        # discrete monthly hazard; log-hazard (cloglog) affine in z
        hazard = 1.0 - math.exp(-math.exp(log_base_rate + risk_slope * z))
        u_t = rng.uniform()
        months = math.ceil(math.log1p(-u_t) / math.log1p(-hazard)) if hazard < 1.0 else 1
        event_months[i] = float(min(max(months, 1), _MAX_MONTHS))
        censor_u[i] = rng.uniform()

    times, events = _apply_censoring(event_months, censor_u, cfg.censoring_rate)

    uncensored = times[events]
    edges = discretize_times(uncensored, cfg.n_bins)

    # z-score genomics across records that keep the modality
    keep_gen = np.array([not p["dropped"]["genomics"] for p in payloads])
    if keep_gen.any():
        gmat = np.stack([payloads[i]["raw"]["genomics"] for i in np.flatnonzero(keep_gen)])
        gmean = gmat.mean(axis=0)
        gstd = gmat.std(axis=0)
        gstd[gstd < 1e-12] = 1.0
    else:
        gmean, gstd = 0.0, 1.0

    records = []
    for i in range(n_total):
        raw = payloads[i]["raw"]
        dropped = payloads[i]["dropped"]
        pathology = None if dropped["pathology"] else raw["pathology"]
        genomics = None if dropped["genomics"] else (raw["genomics"] - gmean) / gstd
        report = None
        if not dropped["report"]:
            feats = raw["report"]
            bins = np.floor((np.tanh(feats / _TOKEN_SQUASH) + 1.0) / 2.0 * cfg.vocab_size)
            report = np.clip(bins, 0, cfg.vocab_size - 1).astype(np.int64)
        label = SurvivalLabel(time=float(times[i]), event=bool(events[i]),
                              bin=assign_bin(float(times[i]), edges),
                              endpoint=cfg.endpoint)
        records.append(PatientRecord(
            patient_id=f"c{cancer_ids[i]:02d}-{i:05d}",
            cancer_type=int(cancer_ids[i]),
            label=label,
            pathology=pathology, genomics=genomics, report=report))

    cohort = Cohort(records=tuple(records), n_cancer_types=cfg.n_cancer_types,
                    bin_edges=edges, gene_dim=cfg.gene_dim,
                    patch_dim=cfg.patch_dim, vocab_size=cfg.vocab_size)
    return cohort, GroundTruth(true_risk=z_all)


def _apply_censoring(event_months: np.ndarray, censor_u: np.ndarray,
                     target_rate: float) -> tuple[np.ndarray, np.ndarray]:
    n = event_months.size
    if target_rate == 0.0:
        return event_months.copy(), np.ones(n, dtype=bool)
    t_scale = float(event_months.max())

    def realized_rate(r: float) -> float:
        return float(np.mean(r * t_scale * censor_u < event_months))

    lo, hi = 1e-9, 8.0  # rate is decreasing in r
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if realized_rate(mid) > target_rate:
            lo = mid
        else:
            hi = mid
    best = min((lo, hi, 0.5 * (lo + hi)), key=lambda r: abs(realized_rate(r) - target_rate))
    achieved = realized_rate(best)
    if abs(achieved - target_rate) > 0.05:
        raise ValidationError(
            f"censoring calibration off target: achieved {achieved:.3f} vs {target_rate:.3f}")
    censor_times = best * t_scale * censor_u
    censored = censor_times < event_months
    times = np.where(censored, censor_times, event_months)
    return times, ~censored


def split_folds(cohort: Cohort, k_folds: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Cross-validation partition stratified jointly by cancer type and
    event flag; if any joint stratum is smaller than k_folds, falls back to
    cancer-only stratification with a warning."""
    check_positive_int(k_folds, "k_folds", minimum=2)
    if len(cohort) < k_folds:
        raise ValidationError(f"cannot split {len(cohort)} records into {k_folds} folds")
    cancers = cohort.cancer_types()
    events = cohort.events()

    strata = _group_indices(list(zip(cancers.tolist(), events.tolist())))
    if min(len(v) for v in strata.values()) < k_folds:
        warnings.warn(
            "a (cancer, event) stratum is smaller than k_folds; "
            "falling back to cancer-only stratification", UserWarning, stacklevel=2)
        strata = _group_indices(cancers.tolist())

    rng = np.random.default_rng(seed)
    test_sets: list[list[int]] = [[] for _ in range(k_folds)]
    offset = 0
    for key in sorted(strata):
        idx = np.array(strata[key], dtype=np.intp)
        rng.shuffle(idx)
        for pos, record_idx in enumerate(idx):
            test_sets[(pos + offset) % k_folds].append(int(record_idx))
        offset = (offset + len(idx)) % k_folds

    folds = []
    all_idx = np.arange(len(cohort), dtype=np.intp)
    for f in range(k_folds):
        test = np.array(sorted(test_sets[f]), dtype=np.intp)
        train = np.setdiff1d(all_idx, test)
        folds.append((train, test))
    return folds


def subsample(cohort: Cohort, fraction: float, seed: int) -> Cohort:
    """Stratified (cancer x event) random subset of ceil(fraction * n) records."""
    check_fraction(fraction, "fraction")
    n = len(cohort)
    target = math.ceil(fraction * n)
    if fraction == 1.0:
        return cohort
    strata = _group_indices(list(zip(cohort.cancer_types().tolist(),
                                     cohort.events().tolist())))
    keys = sorted(strata)
    quotas = {k: fraction * len(strata[k]) for k in keys}
    take = {k: math.floor(quotas[k]) for k in keys}
    shortfall = target - sum(take.values())
    by_remainder = sorted(keys, key=lambda k: (-(quotas[k] - take[k]), k))
    for k in by_remainder[:shortfall]:
        take[k] += 1

    rng = np.random.default_rng(seed)
    chosen: list[int] = []
    for k in keys:
        idx = np.array(strata[k], dtype=np.intp)
        perm = rng.permutation(idx)
        chosen.extend(int(i) for i in perm[:take[k]])
    return cohort.subset(sorted(chosen))


def _group_indices(keys: list) -> dict:
    groups: dict = {}
    for i, key in enumerate(keys):
        groups.setdefault(key, []).append(i)
    return groups


# -- serialization ---------------------------------------------------------

_COHORT_FORMAT = "coopsurv-cohort"
_COHORT_VERSION = 1


def save_cohort(cohort: Cohort, path) -> None:
    edges = [None if math.isinf(e) else e for e in cohort.bin_edges.tolist()]
    doc = {
        "format": _COHORT_FORMAT,
        "version": _COHORT_VERSION,
        "n_cancer_types": cohort.n_cancer_types,
        "bin_edges": edges,
        "gene_dim": cohort.gene_dim,
        "patch_dim": cohort.patch_dim,
        "vocab_size": cohort.vocab_size,
        "records": [
            {
                "patient_id": r.patient_id,
                "cancer_type": r.cancer_type,
                "label": {"time": r.label.time, "event": r.label.event,
                          "bin": r.label.bin, "endpoint": r.label.endpoint},
                "pathology": None if r.pathology is None else r.pathology.tolist(),
                "genomics": None if r.genomics is None else r.genomics.tolist(),
                "report": None if r.report is None else r.report.tolist(),
            }
            for r in cohort.records
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_cohort(path) -> Cohort:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid JSON (line {exc.lineno}): {exc.msg}") from exc
    if not isinstance(doc, dict) or doc.get("format") != _COHORT_FORMAT:
        raise ParseError(f"{path}: not a cohort file")
    if doc.get("version") != _COHORT_VERSION:
        raise ParseError(f"{path}: unsupported cohort version {doc.get('version')!r}")
    try:
        edges = np.array([np.inf if e is None else float(e) for e in doc["bin_edges"]])
        records = []
        for i, rec in enumerate(doc["records"]):
            try:
                label = SurvivalLabel(time=float(rec["label"]["time"]),
                                      event=bool(rec["label"]["event"]),
                                      bin=int(rec["label"]["bin"]),
                                      endpoint=str(rec["label"]["endpoint"]))
                records.append(PatientRecord(
                    patient_id=str(rec["patient_id"]),
                    cancer_type=int(rec["cancer_type"]),
                    label=label,
                    pathology=None if rec["pathology"] is None else np.array(rec["pathology"]),
                    genomics=None if rec["genomics"] is None else np.array(rec["genomics"]),
                    report=None if rec["report"] is None else np.array(rec["report"])))
            except (KeyError, TypeError) as exc:
                raise ParseError(
                    f"{path}: record {i} ({rec.get('patient_id', '?')!r}) malformed: {exc}"
                ) from exc
        return Cohort(records=tuple(records),
                      n_cancer_types=int(doc["n_cancer_types"]),
                      bin_edges=edges,
                      gene_dim=int(doc["gene_dim"]),
                      patch_dim=int(doc["patch_dim"]),
                      vocab_size=int(doc["vocab_size"]))
    except KeyError as exc:
        raise ParseError(f"{path}: missing field {exc}") from exc
