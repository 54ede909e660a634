"""Interpretability analyses over a frozen model.

Modality attribution is an exact 3-player Shapley computation: the
characteristic function evaluates the model's scalar risk with every
modality outside the coalition replaced by its synthesized
(missing-modality) token, which keeps off-coalition inputs on-manifold.
Expert-group importance ablates one group token at a time, substituting
the cohort mean of that group's tokens and measuring the mean absolute
risk shift per cancer type. Gene importance reads first-layer weight
magnitudes of the genomics encoder; patch saliency re-emits the
pooling attention of the pathology encoder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .autodiff import Tensor, no_grad
from .data import MODALITIES, Cohort, PatientRecord
from .exceptions import ContractError, UndefinedStatisticError
from .stats import risk_from_hazards


@dataclass(frozen=True)
class ModalityAttribution:
    phi: dict[str, float]        # per-modality Shapley value (0.0 if absent)
    baseline: float              # v(empty): all modalities synthesized
    full_value: float            # v(all real modalities)

    def efficiency_gap(self) -> float:
        return abs(sum(self.phi.values()) - (self.full_value - self.baseline))


@dataclass(frozen=True)
class ExpertGroupImportance:
    consensual: float
    specialized: float
    overlapping: float

    def as_array(self) -> np.ndarray:
        return np.array([self.consensual, self.specialized, self.overlapping])


def _coalition_value(model, record: PatientRecord, real: tuple[str, ...],
                     coalition: frozenset) -> float:
    force = frozenset(m for m in real if m not in coalition)
    out = model.forward_record(record, force_synthesize=force)
    return risk_from_hazards(out.hazards.data)


def modality_shapley(model, record: PatientRecord) -> ModalityAttribution:
    """Exact Shapley attribution of the record's real modalities.

    Enumerates all coalitions of the real modalities (at most 2^3); needs at
    least two real modalities for a defined attribution.
    """
    real = record.present_modalities()
    n = len(real)
    if n < 2:
        raise UndefinedStatisticError(
            f"attribution undefined for record {record.patient_id!r}: "
            f"needs >= 2 real modalities, has {n}")
    with no_grad():
        values = {}
        for size in range(n + 1):
            for combo in combinations(real, size):
                key = frozenset(combo)
                values[key] = _coalition_value(model, record, real, key)
        phi = {m: 0.0 for m in MODALITIES}
        for player in real:
            others = [m for m in real if m != player]
            total = 0.0
            for size in range(len(others) + 1):
                for combo in combinations(others, size):
                    s = frozenset(combo)
                    weight = (math.factorial(size) * math.factorial(n - size - 1)
                              / math.factorial(n))
                    total += weight * (values[s | {player}] - values[s])
            phi[player] = total
    return ModalityAttribution(phi=phi,
                               baseline=values[frozenset()],
                               full_value=values[frozenset(real)])


def expert_group_importance(model, cohort: Cohort) -> dict[int, ExpertGroupImportance]:
    """Per-cancer-type importance of the three expert groups.

    For each patient the fusion stage is re-run three times, once per group,
    with that group's token replaced by the cohort mean of the group's
    tokens; a group's importance is the mean absolute risk shift, normalized
    across groups within each cancer type.
    """
    if len(cohort) == 0:
        raise ContractError("expert_group_importance needs a non-empty cohort")
    groups = ("consensual", "specialized", "overlapping")
    with no_grad():
        tokens = []
        base_risk = np.empty(len(cohort))
        for i, record in enumerate(cohort.records):
            out = model.forward_record(record)
            eo = out.expert_output
            tokens.append({g: getattr(eo, g).data for g in groups})
            base_risk[i] = risk_from_hazards(out.hazards.data)
        means = {g: np.mean([t[g] for t in tokens], axis=0) for g in groups}

        deltas = np.empty((len(cohort), 3))
        for i, record in enumerate(cohort.records):
            for gi, g in enumerate(groups):
                parts = {h: tokens[i][h] for h in groups}
                parts[g] = means[g]
                fused = model.fuse_groups(*(Tensor(parts[h]) for h in groups))
                risk = risk_from_hazards(model.hazard_head(fused).data)
                deltas[i, gi] = abs(risk - base_risk[i])

    result = {}
    cancers = cohort.cancer_types()
    for c in sorted(set(cancers.tolist())):
        mean_delta = deltas[cancers == c].mean(axis=0)
        total = mean_delta.sum()
        if total == 0.0:
            scores = np.full(3, 1.0 / 3.0)
        else:
            scores = mean_delta / total
        result[int(c)] = ExpertGroupImportance(*scores.tolist())
    return result


def gene_importance(model) -> np.ndarray:
    """Per-gene mean absolute weight in the genomics encoder's first layer."""
    encoders = getattr(model, "encoders", model)
    mlp = getattr(encoders, "genomics_mlp", None)
    if mlp is None:
        raise ContractError("model has no genomics encoder")
    return np.abs(mlp.fc1.weight.data).mean(axis=1)


def top_genes(model, q: float = 0.05) -> np.ndarray:
    """Indices of the top-q fraction of genes, most important first."""
    if not 0.0 < q <= 1.0:
        raise ContractError(f"q must lie in (0, 1], got {q}")
    scores = gene_importance(model)
    count = max(1, math.ceil(q * scores.size))
    order = np.argsort(-scores, kind="stable")
    return order[:count]


def patch_attention(model, record: PatientRecord) -> np.ndarray:
    """The pathology pooling attention for this record (sums to 1)."""
    if record.pathology is None:
        raise ContractError(f"record {record.patient_id!r} has no pathology bag")
    with no_grad():
        out = model.forward_record(record)
    if out.attention is None:
        raise ContractError("model did not produce patch attention")
    return out.attention.data.copy()
