"""Trainable survival models behind a sklearn-style estimator API.

Every model shares the same modality encoders and hazard-head design and is
trained with the combined objective L = L_contrastive + alpha * L_survival
(models that encode a single modality train on the survival term alone,
since a contrastive anchor needs a same-patient positive). ``fit`` consumes
a Cohort; ``predict_risk`` maps records to scalar risks via the negated
discrete survival mass of the predicted hazard vector.

Model zoo:
  - CollaborativeSurvivalModel: consensual + specialized + routed
    overlapping experts with a fusion expert (kind "mice").
  - UnimodalSurvivalModel: one encoder + hazard head (kinds "unimodal_*").
  - EarlyFusionSurvivalModel: concatenated tokens + 2-layer MLP + head.
  - LateFusionSurvivalModel: per-modality hazard heads, averaged.
  - MultiHeadSurvivalModel: shared MLP trunk + per-cancer hazard heads.
  - MixtureOfExpertsSurvivalModel: routed overlapping experts only.
"""

from __future__ import annotations

import time

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import autodiff as ad
from .autodiff import Adam, no_grad
from .data import MODALITIES, Cohort, PatientRecord
from .encoders import EncoderStack
from .exceptions import (CheckpointError, UndefinedLossError, ValidationError)
from .experts import (CollaborativeNetwork, HazardHead, PatientForward, Router)
from .losses import ContrastiveBatch, combined_loss, contrastive_loss, survival_nll
from .nn import Linear, Module, TransformerBlock
from .stats import risk_from_hazards

_SHORT = {"pathology": "p", "genomics": "g", "report": "r"}


# -- baseline network bodies ------------------------------------------------

class UnimodalNetwork(Module):
    def __init__(self, *, modality: str, dims: dict, rng: np.random.Generator,
                 d_model: int, n_heads: int, snn_hidden: int, max_report_len: int):
        self.modality = modality
        self.encoders = EncoderStack(
            gene_dim=dims["gene_dim"], patch_dim=dims["patch_dim"],
            vocab_size=dims["vocab_size"], n_cancer_types=dims["n_cancer_types"],
            rng=rng, d_model=d_model, snn_hidden=snn_hidden, n_heads=n_heads,
            max_report_len=max_report_len, modalities=(modality,))
        self.hazard_head = HazardHead(d_model, dims["n_bins"], rng)

    def forward_record(self, record: PatientRecord, *, train=False, rng=None,
                       force_synthesize=frozenset()) -> PatientForward:
        tokens, _, attention = self.encoders.encode_record(
            record, train=train, rng=rng, force_synthesize=force_synthesize)
        token = tokens[self.modality]
        return PatientForward(hazards=self.hazard_head(token.vector),
                              expert_output=None, contrastive={},
                              tokens=tokens, attention=attention)

    def grow_cancer_types(self, n: int, rng: np.random.Generator) -> None:
        _grow_embed(self.encoders, n, rng)


class _FusedEncoderNetwork(Module):
    """Shared scaffolding: all three encoders plus contrastive heads."""

    def __init__(self, *, dims: dict, rng: np.random.Generator, d_model: int,
                 n_heads: int, snn_hidden: int, max_report_len: int,
                 d_contrast: int):
        self.encoders = EncoderStack(
            gene_dim=dims["gene_dim"], patch_dim=dims["patch_dim"],
            vocab_size=dims["vocab_size"], n_cancer_types=dims["n_cancer_types"],
            rng=rng, d_model=d_model, snn_hidden=snn_hidden, n_heads=n_heads,
            max_report_len=max_report_len)
        self.contrast_heads = {m: Linear(d_model, d_contrast, rng) for m in MODALITIES}

    def _contrastive(self, tokens):
        return {m: self.contrast_heads[m](tokens[m].vector)
                for m in MODALITIES if not tokens[m].synthesized}

    def grow_cancer_types(self, n: int, rng: np.random.Generator) -> None:
        _grow_embed(self.encoders, n, rng)


class EarlyFusionNetwork(_FusedEncoderNetwork):
    def __init__(self, *, dims, rng, d_model, n_heads, snn_hidden,
                 max_report_len, d_contrast):
        super().__init__(dims=dims, rng=rng, d_model=d_model, n_heads=n_heads,
                         snn_hidden=snn_hidden, max_report_len=max_report_len,
                         d_contrast=d_contrast)
        self.fc1 = Linear(3 * d_model, d_model, rng)
        self.fc2 = Linear(d_model, d_model, rng)
        self.hazard_head = HazardHead(d_model, dims["n_bins"], rng)

    def forward_record(self, record, *, train=False, rng=None,
                       force_synthesize=frozenset()) -> PatientForward:
        tokens, _, attention = self.encoders.encode_record(
            record, train=train, rng=rng, force_synthesize=force_synthesize)
        cat = ad.concat_vec([tokens[m].vector for m in MODALITIES])
        hidden = self.fc2(ad.gelu(self.fc1(cat)))
        return PatientForward(hazards=self.hazard_head(hidden), expert_output=None,
                              contrastive=self._contrastive(tokens),
                              tokens=tokens, attention=attention)


class LateFusionNetwork(_FusedEncoderNetwork):
    def __init__(self, *, dims, rng, d_model, n_heads, snn_hidden,
                 max_report_len, d_contrast):
        super().__init__(dims=dims, rng=rng, d_model=d_model, n_heads=n_heads,
                         snn_hidden=snn_hidden, max_report_len=max_report_len,
                         d_contrast=d_contrast)
        self.heads = {m: HazardHead(d_model, dims["n_bins"], rng) for m in MODALITIES}

    def forward_record(self, record, *, train=False, rng=None,
                       force_synthesize=frozenset()) -> PatientForward:
        tokens, _, attention = self.encoders.encode_record(
            record, train=train, rng=rng, force_synthesize=force_synthesize)
        per_modality = [self.heads[m](tokens[m].vector) for m in MODALITIES]
        hazards = ad.stack_rows(per_modality).mean(axis=0)
        return PatientForward(hazards=hazards, expert_output=None,
                              contrastive=self._contrastive(tokens),
                              tokens=tokens, attention=attention)


class MultiHeadNetwork(_FusedEncoderNetwork):
    def __init__(self, *, dims, rng, d_model, n_heads, snn_hidden,
                 max_report_len, d_contrast):
        super().__init__(dims=dims, rng=rng, d_model=d_model, n_heads=n_heads,
                         snn_hidden=snn_hidden, max_report_len=max_report_len,
                         d_contrast=d_contrast)
        self._head_shape = (d_model, dims["n_bins"])
        self.fc1 = Linear(3 * d_model, d_model, rng)
        self.fc2 = Linear(d_model, d_model, rng)
        self.heads = [HazardHead(d_model, dims["n_bins"], rng)
                      for _ in range(dims["n_cancer_types"])]

    def forward_record(self, record, *, train=False, rng=None,
                       force_synthesize=frozenset()) -> PatientForward:
        tokens, _, attention = self.encoders.encode_record(
            record, train=train, rng=rng, force_synthesize=force_synthesize)
        cat = ad.concat_vec([tokens[m].vector for m in MODALITIES])
        hidden = self.fc2(ad.gelu(self.fc1(cat)))
        head = self.heads[record.cancer_type]
        return PatientForward(hazards=head(hidden), expert_output=None,
                              contrastive=self._contrastive(tokens),
                              tokens=tokens, attention=attention)

    def grow_cancer_types(self, n: int, rng: np.random.Generator) -> None:
        extra = n - len(self.heads)
        _grow_embed(self.encoders, n, rng)
        for _ in range(extra):
            self.heads.append(HazardHead(*self._head_shape, rng))


class MoENetwork(_FusedEncoderNetwork):
    """Routed overlapping experts only: no consensual, no specialized."""

    def __init__(self, *, dims, rng, d_model, n_heads, snn_hidden,
                 max_report_len, d_contrast, n_overlap_experts, top_k):
        super().__init__(dims=dims, rng=rng, d_model=d_model, n_heads=n_heads,
                         snn_hidden=snn_hidden, max_report_len=max_report_len,
                         d_contrast=d_contrast)
        self.overlapping = [TransformerBlock(d_model, n_heads, rng)
                            for _ in range(n_overlap_experts)]
        self.router = Router(d_model, n_overlap_experts, top_k, rng)
        self.fusion = TransformerBlock(d_model, n_heads, rng)
        self.hazard_head = HazardHead(d_model, dims["n_bins"], rng)

    def forward_record(self, record, *, train=False, rng=None,
                       force_synthesize=frozenset()) -> PatientForward:
        tokens, cancer_tok, attention = self.encoders.encode_record(
            record, train=train, rng=rng, force_synthesize=force_synthesize)
        x = ad.stack_rows([tokens[m].vector for m in MODALITIES] + [cancer_tok.vector])
        weights, selected, _ = self.router.route(x.mean(axis=0))
        pooled = [self.overlapping[e](x).mean(axis=0) for e in selected]
        overlap_tok = ad.matmul(weights, ad.stack_rows(pooled))
        fused = self.fusion(ad.stack_rows([overlap_tok])).mean(axis=0)
        return PatientForward(hazards=self.hazard_head(fused), expert_output=None,
                              contrastive=self._contrastive(tokens),
                              tokens=tokens, attention=attention)


def _grow_embed(encoders: EncoderStack, n: int, rng: np.random.Generator) -> None:
    current = encoders.n_cancer_types
    if n < current:
        raise ValidationError(f"cannot shrink cancer-type table from {current} to {n}")
    if n == current:
        return
    from .autodiff import Tensor
    from .nn import normal_init

    extra = normal_init(rng, (n - current, encoders.d_model))
    table = encoders.cancer_embed.table
    encoders.cancer_embed.table = Tensor(np.vstack([table.data, extra.data]),
                                         requires_grad=True)


# -- estimators --------------------------------------------------------------

class BaseSurvivalModel(BaseEstimator):
    """Shared fit/predict machinery; subclasses build the network body."""

    _kind = "base"

    def __init__(self, d_model=64, n_heads=4, snn_hidden=128, d_contrast=32,
                 temperature=0.07, alpha=2.0, lr=1e-4, batch_size=32, epochs=30,
                 max_report_len=128, use_contrastive=True, warm_start=False,
                 seed=0):
        self.d_model = d_model
        self.n_heads = n_heads
        self.snn_hidden = snn_hidden
        self.d_contrast = d_contrast
        self.temperature = temperature
        self.alpha = alpha
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.max_report_len = max_report_len
        self.use_contrastive = use_contrastive
        self.warm_start = warm_start
        self.seed = seed

    # subclass hooks ------------------------------------------------------
    def _build_network(self, dims: dict, rng: np.random.Generator) -> Module:
        raise NotImplementedError

    def _encoded_modalities(self) -> tuple[str, ...]:
        return MODALITIES

    @property
    def kind(self) -> str:
        return self._kind

    # training --------------------------------------------------------------
    def fit(self, cohort: Cohort, indices=None, epochs: int | None = None):
        """Train on the cohort (optionally restricted to ``indices``).

        With ``warm_start`` and an existing fitted network, training
        continues from the current parameters; the cancer-type table grows
        automatically when the cohort has unseen types.
        """
        records = (list(cohort.records) if indices is None
                   else [cohort.records[int(i)] for i in indices])
        if not records:
            raise ValidationError("fit() received an empty record set")
        dims = cohort_dims(cohort)
        rng = np.random.default_rng(self.seed)
        if self.warm_start and hasattr(self, "network_"):
            self._check_dims(dims)
            if dims["n_cancer_types"] > self.dims_["n_cancer_types"]:
                self.network_.grow_cancer_types(dims["n_cancer_types"], rng)
                self.dims_["n_cancer_types"] = dims["n_cancer_types"]
        else:
            self.network_ = self._build_network(dims, rng)
            self.dims_ = dict(dims)
        self._train(records, self.epochs if epochs is None else epochs, rng)
        return self

    def _train(self, records, epochs: int, rng: np.random.Generator) -> None:
        opt = Adam(self.network_.parameters(), lr=self.lr)
        contrastive_on = self.use_contrastive and len(self._encoded_modalities()) >= 2
        if not hasattr(self, "history_") or not self.warm_start:
            self.history_ = []
        self.skipped_batches_ = getattr(self, "skipped_batches_", 0)
        order = np.arange(len(records))
        for _ in range(epochs):
            started = time.perf_counter()
            rng.shuffle(order)
            sums = {"loss": 0.0, "survival": 0.0, "contrastive": 0.0}
            n_batches = 0
            skipped = 0
            for lo in range(0, len(order), self.batch_size):
                batch = order[lo:lo + self.batch_size]
                outs = [self.network_.forward_record(records[i], train=True, rng=rng)
                        for i in batch]
                surv = None
                for i, out in zip(batch, outs):
                    label = records[i].label
                    term = survival_nll(out.hazards, label.bin, label.event)
                    surv = term if surv is None else ad.add(surv, term)
                surv = ad.mul(surv, 1.0 / len(batch))
                if contrastive_on:
                    cbatch = ContrastiveBatch(temperature=self.temperature)
                    for local_pid, out in enumerate(outs):
                        for emb in out.contrastive.values():
                            cbatch.add(local_pid, emb)
                    try:
                        cl = contrastive_loss(cbatch)
                    except UndefinedLossError:
                        skipped += 1
                        continue
                    loss = combined_loss(cl, surv, self.alpha)
                    sums["contrastive"] += cl.item()
                else:
                    loss = combined_loss(0.0, surv, self.alpha)
                opt.zero_grad()
                loss.backward()
                opt.step()
                sums["loss"] += loss.item()
                sums["survival"] += surv.item()
                n_batches += 1
            self.skipped_batches_ += skipped
            self.history_.append({
                "epoch": len(self.history_),
                "loss": sums["loss"] / max(n_batches, 1),
                "survival": sums["survival"] / max(n_batches, 1),
                "contrastive": sums["contrastive"] / max(n_batches, 1),
                "skipped_batches": skipped,
                "seconds": time.perf_counter() - started,
            })

    # inference --------------------------------------------------------------
    def predict_hazards(self, records) -> np.ndarray:
        self._require_fitted()
        records = _as_records(records)
        out = np.empty((len(records), self.dims_["n_bins"]))
        with no_grad():
            for i, record in enumerate(records):
                out[i] = self.network_.forward_record(record).hazards.data
        return out

    def predict_risk(self, records) -> np.ndarray:
        hazards = self.predict_hazards(records)
        return np.array([risk_from_hazards(h) for h in hazards])

    def _require_fitted(self) -> None:
        if not hasattr(self, "network_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet")

    def _check_dims(self, dims: dict) -> None:
        for key in ("gene_dim", "patch_dim", "vocab_size", "n_bins"):
            if dims[key] != self.dims_[key]:
                raise CheckpointError(
                    f"cohort {key}={dims[key]} incompatible with fitted model "
                    f"{key}={self.dims_[key]}")
        if dims["n_cancer_types"] < self.dims_["n_cancer_types"]:
            # a smaller cohort may reuse a larger table; ids stay valid
            dims["n_cancer_types"] = self.dims_["n_cancer_types"]


class CollaborativeSurvivalModel(BaseSurvivalModel):
    """Collaborative multi-expert fusion over the three modalities."""

    _kind = "mice"

    def __init__(self, d_model=64, n_heads=4, snn_hidden=128, d_contrast=32,
                 temperature=0.07, alpha=2.0, lr=1e-4, batch_size=32, epochs=30,
                 max_report_len=128, use_contrastive=True, warm_start=False,
                 seed=0, n_overlap_experts=4, top_k=2):
        super().__init__(d_model=d_model, n_heads=n_heads, snn_hidden=snn_hidden,
                         d_contrast=d_contrast, temperature=temperature, alpha=alpha,
                         lr=lr, batch_size=batch_size, epochs=epochs,
                         max_report_len=max_report_len, use_contrastive=use_contrastive,
                         warm_start=warm_start, seed=seed)
        self.n_overlap_experts = n_overlap_experts
        self.top_k = top_k

    def _build_network(self, dims, rng):
        return CollaborativeNetwork(
            gene_dim=dims["gene_dim"], patch_dim=dims["patch_dim"],
            vocab_size=dims["vocab_size"], n_cancer_types=dims["n_cancer_types"],
            n_bins=dims["n_bins"], rng=rng, d_model=self.d_model,
            n_heads=self.n_heads, snn_hidden=self.snn_hidden,
            n_overlap_experts=self.n_overlap_experts, top_k=self.top_k,
            d_contrast=self.d_contrast, max_report_len=self.max_report_len)


class UnimodalSurvivalModel(BaseSurvivalModel):
    """Single-modality encoder plus hazard head."""

    def __init__(self, modality="genomics", d_model=64, n_heads=4, snn_hidden=128,
                 d_contrast=32, temperature=0.07, alpha=2.0, lr=1e-4, batch_size=32,
                 epochs=30, max_report_len=128, use_contrastive=True,
                 warm_start=False, seed=0):
        super().__init__(d_model=d_model, n_heads=n_heads, snn_hidden=snn_hidden,
                         d_contrast=d_contrast, temperature=temperature, alpha=alpha,
                         lr=lr, batch_size=batch_size, epochs=epochs,
                         max_report_len=max_report_len, use_contrastive=use_contrastive,
                         warm_start=warm_start, seed=seed)
        self.modality = modality

    @property
    def kind(self) -> str:
        return f"unimodal_{_SHORT[self.modality]}"

    def _encoded_modalities(self):
        return (self.modality,)

    def _build_network(self, dims, rng):
        if self.modality not in MODALITIES:
            raise ValidationError(f"unknown modality {self.modality!r}")
        return UnimodalNetwork(modality=self.modality, dims=dims, rng=rng,
                               d_model=self.d_model, n_heads=self.n_heads,
                               snn_hidden=self.snn_hidden,
                               max_report_len=self.max_report_len)


class _FusionModelBase(BaseSurvivalModel):
    _network_cls: type | None = None

    def _build_network(self, dims, rng):
        return self._network_cls(dims=dims, rng=rng, d_model=self.d_model,
                                 n_heads=self.n_heads, snn_hidden=self.snn_hidden,
                                 max_report_len=self.max_report_len,
                                 d_contrast=self.d_contrast)


class EarlyFusionSurvivalModel(_FusionModelBase):
    """Concatenated modality tokens through a 2-layer MLP and hazard head."""

    _kind = "early"
    _network_cls = EarlyFusionNetwork


class LateFusionSurvivalModel(_FusionModelBase):
    """Per-modality hazard heads whose hazard vectors are averaged."""

    _kind = "late"
    _network_cls = LateFusionNetwork


class MultiHeadSurvivalModel(_FusionModelBase):
    """Shared fusion trunk with one hazard head per cancer type."""

    _kind = "multihead"
    _network_cls = MultiHeadNetwork


class MixtureOfExpertsSurvivalModel(BaseSurvivalModel):
    """Routed overlapping experts only, plus fusion expert and head."""

    _kind = "moe"

    def __init__(self, d_model=64, n_heads=4, snn_hidden=128, d_contrast=32,
                 temperature=0.07, alpha=2.0, lr=1e-4, batch_size=32, epochs=30,
                 max_report_len=128, use_contrastive=True, warm_start=False,
                 seed=0, n_overlap_experts=4, top_k=2):
        super().__init__(d_model=d_model, n_heads=n_heads, snn_hidden=snn_hidden,
                         d_contrast=d_contrast, temperature=temperature, alpha=alpha,
                         lr=lr, batch_size=batch_size, epochs=epochs,
                         max_report_len=max_report_len, use_contrastive=use_contrastive,
                         warm_start=warm_start, seed=seed)
        self.n_overlap_experts = n_overlap_experts
        self.top_k = top_k

    def _build_network(self, dims, rng):
        return MoENetwork(dims=dims, rng=rng, d_model=self.d_model,
                          n_heads=self.n_heads, snn_hidden=self.snn_hidden,
                          max_report_len=self.max_report_len,
                          d_contrast=self.d_contrast,
                          n_overlap_experts=self.n_overlap_experts,
                          top_k=self.top_k)


MODEL_KINDS = ("mice", "unimodal_p", "unimodal_g", "unimodal_r",
               "early", "late", "multihead", "moe")

_MODALITY_OF = {"unimodal_p": "pathology", "unimodal_g": "genomics",
                "unimodal_r": "report"}


def make_model(kind: str, **params) -> BaseSurvivalModel:
    """Instantiate a model by its registry kind."""
    if kind == "mice":
        return CollaborativeSurvivalModel(**params)
    if kind in _MODALITY_OF:
        params.setdefault("modality", _MODALITY_OF[kind])
        return UnimodalSurvivalModel(**params)
    if kind == "early":
        return EarlyFusionSurvivalModel(**params)
    if kind == "late":
        return LateFusionSurvivalModel(**params)
    if kind == "multihead":
        return MultiHeadSurvivalModel(**params)
    if kind == "moe":
        return MixtureOfExpertsSurvivalModel(**params)
    raise ValidationError(f"unknown model kind {kind!r}; choose from {MODEL_KINDS}")


def cohort_dims(cohort: Cohort) -> dict:
    return {"gene_dim": cohort.gene_dim, "patch_dim": cohort.patch_dim,
            "vocab_size": cohort.vocab_size,
            "n_cancer_types": cohort.n_cancer_types, "n_bins": cohort.n_bins}


def _as_records(records) -> list[PatientRecord]:
    if isinstance(records, Cohort):
        return list(records.records)
    return list(records)
