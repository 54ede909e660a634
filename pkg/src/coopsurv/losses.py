"""Training objectives: censored discrete-time survival NLL, cross-modal
contrastive alignment, and their weighted combination.

A hazard vector H = (h_1..h_n) holds per-time-bin conditional event
probabilities, each in (0, 1); the discrete survival function is the
running product of (1 - h_j). Hazards are clamped to
[1e-7, 1 - 1e-7] before any log so the NLL stays finite; the clamp is
deliberate, not silent underflow handling.

Censorship convention: an observed event in bin k contributes
-log f_sur(H, k-1) - log h_k; a censored follow-up in bin k contributes
-log f_sur(H, k). This is the standard discrete-time likelihood.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import ContractError, UndefinedLossError

HAZARD_EPS = 1e-7


def _as_hazard_tensor(hazards) -> Tensor:
    h = hazards if isinstance(hazards, Tensor) else Tensor(np.asarray(hazards, dtype=np.float64))
    if h.ndim != 1 or h.shape[0] < 1:
        raise ContractError(f"hazard vector must be 1-d and non-empty, got shape {h.shape}")
    return h


def discrete_survival(hazards, k: int) -> Tensor:
    """f_sur(H, k) = prod_{j<=k} (1 - h_j), with f_sur(H, 0) = 1.

    Computed as a left-to-right sequential product so the recurrence
    f_sur(H, k) == f_sur(H, k-1) * (1 - h_k) holds bit-exactly.
    """
    h = _as_hazard_tensor(hazards)
    n = h.shape[0]
    if not 0 <= k <= n:
        raise ContractError(f"bin index k={k} outside [0, {n}]")
    surv = Tensor(np.asarray(1.0))
    for j in range(k):
        surv = ad.mul(surv, 1.0 - ad.vitem(h, j))
    return surv


def survival_nll(hazards, k: int, event: bool) -> Tensor:
    """Negative log-likelihood of one follow-up under the hazard vector.

    k is the 1-based bin holding the recorded time; event=True means the
    event was observed (uncensored).
    """
    h = _as_hazard_tensor(hazards)
    n = h.shape[0]
    if not 1 <= k <= n:
        raise ContractError(f"bin index k={k} outside [1, {n}]")
    hc = ad.clamp(h, HAZARD_EPS, 1.0 - HAZARD_EPS)
    log_surv_terms = ad.tlog(1.0 - hc)
    if event:
        tail = ad.tsum(ad.slice_vec(log_surv_terms, 0, k - 1))
        return ad.neg(ad.add(tail, ad.tlog(ad.vitem(hc, k - 1))))
    return ad.neg(ad.tsum(ad.slice_vec(log_surv_terms, 0, k)))


@dataclass
class ContrastiveBatch:
    """Per-modality embeddings of real (non-synthesized) modalities.

    ``embeddings[i]`` is a (d_cl,) tensor belonging to ``patient_ids[i]``;
    several entries may share a patient id (one per real modality).
    """

    embeddings: list[Tensor] = field(default_factory=list)
    patient_ids: list[int] = field(default_factory=list)
    temperature: float = 0.07

    def add(self, patient_id: int, embedding: Tensor) -> None:
        self.embeddings.append(embedding)
        self.patient_ids.append(patient_id)


def contrastive_loss(batch: ContrastiveBatch) -> Tensor:
    """Alignment loss over a batch: for each anchor embedding, positives are
    the same patient's other modalities and negatives are every embedding of
    other patients; similarity d(a, b) = exp(cos(a, b) / temperature).

    Anchors without a positive (unimodal patients) are excluded from the
    mean; if no anchor has a positive the loss is undefined.
    """
    m = len(batch.embeddings)
    if m != len(batch.patient_ids):
        raise ContractError("embeddings and patient_ids lengths differ")
    if batch.temperature <= 0.0:
        raise ContractError(f"temperature must be positive, got {batch.temperature}")
    pid = np.asarray(batch.patient_ids)
    same = pid[:, None] == pid[None, :]
    diag = np.eye(m, dtype=bool)
    pos_mask = same & ~diag
    neg_mask = ~same
    valid = np.flatnonzero(pos_mask.any(axis=1))
    if valid.size == 0:
        raise UndefinedLossError("contrastive loss undefined: no anchor has a positive pair")

    emb = ad.stack_rows(batch.embeddings)
    sq_norm = ad.tsum(ad.mul(emb, emb), axis=1)
    inv_norm = ad.texp(ad.mul(ad.tlog(sq_norm), -0.5))
    unit = ad.scale_rows(emb, inv_norm)
    cosine = ad.matmul(unit, ad.transpose(unit))
    sim = ad.texp(ad.mul(cosine, 1.0 / batch.temperature))

    anchors = ad.take_rows(sim, valid)
    pos = Tensor(pos_mask[valid].astype(np.float64))
    neg = Tensor(neg_mask[valid].astype(np.float64))
    pos_sum = ad.tsum(ad.mul(anchors, pos), axis=1)
    denom = ad.add(pos_sum, ad.tsum(ad.mul(anchors, neg), axis=1))
    per_anchor = ad.sub(ad.tlog(denom), ad.tlog(pos_sum))
    return ad.tmean(per_anchor)


def combined_loss(contrastive, survival, alpha: float = 2.0):
    """L = L_contrastive + alpha * L_survival (works on floats or tensors)."""
    if alpha < 0.0:
        raise ContractError(f"alpha must be >= 0, got {alpha}")
    return contrastive + alpha * survival
