"""Collaborative multi-expert fusion over modality tokens.

Three functionally distinct expert groups process the stacked modality
tokens: one consensual expert shared by every sample, one specialized
expert per cancer type (only the matching one runs), and a routed pool of
overlapping experts of which the top-k by gate logit run, their pooled
outputs combined with gate weights softmaxed over the selected set. A
fusion expert then attends over the three group tokens and a sigmoid head
maps the fused feature to per-bin hazards.

Per sample, exactly 1 + 1 + top_k expert blocks participate in the
forward pass, so all other expert parameters receive zero gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import MODALITIES, PatientRecord
from .encoders import EncoderStack, ModalityToken
from .exceptions import ContractError, ValidationError
from .nn import Linear, Module, TransformerBlock, normal_init


@dataclass
class ExpertSetOutput:
    """Group tokens entering the fusion expert, plus the router record."""

    consensual: Tensor           # (d_model,)
    specialized: Tensor          # (d_model,)
    overlapping: Tensor          # (d_model,)
    gates: np.ndarray            # (n_overlap,) weights, zero outside selected
    selected: np.ndarray         # (top_k,) expert indices, ascending


@dataclass
class PatientForward:
    hazards: Tensor                                  # (n_bins,) in (0, 1)
    expert_output: ExpertSetOutput | None
    contrastive: dict[str, Tensor] = field(default_factory=dict)
    tokens: dict[str, ModalityToken] = field(default_factory=dict)
    attention: Tensor | None = None                  # patch attention if real


class Router(Module):
    """Top-k gate over the overlapping expert pool.

    Gate weights are softmaxed over the selected logits only; ties in the
    top-k boundary break toward the lower expert index. The selected set is
    invariant to positive rescaling of the summary vector.
    """

    def __init__(self, d_model: int, n_experts: int, top_k: int, rng: np.random.Generator):
        if not 1 <= top_k <= n_experts:
            raise ValidationError(f"top_k={top_k} outside [1, {n_experts}]")
        bound = 1.0 / np.sqrt(d_model)
        self.gate = Tensor(rng.uniform(-bound, bound, size=(d_model, n_experts)),
                           requires_grad=True)
        self.n_experts = n_experts
        self.top_k = top_k

    def route(self, summary: Tensor) -> tuple[Tensor, np.ndarray, np.ndarray]:
        """Returns (gate weights over selected, selected indices, full gate vector)."""
        logits = ad.matmul(summary, self.gate)
        order = np.argsort(-logits.data, kind="stable")  # stable: ties keep lower index
        selected = np.sort(order[: self.top_k])
        weights = ad.softmax_rows(ad.take_rows(logits, selected))
        full = np.zeros(self.n_experts)
        full[selected] = weights.data
        return weights, selected, full


class HazardHead(Module):
    def __init__(self, d_model: int, n_bins: int, rng: np.random.Generator):
        self.linear = Linear(d_model, n_bins, rng)

    def __call__(self, fused: Tensor) -> Tensor:
        return ad.sigmoid(self.linear(fused))


class CollaborativeNetwork(Module):
    """Encoders + collaborative expert fusion + hazard and contrastive heads."""

    def __init__(self, *, gene_dim: int, patch_dim: int, vocab_size: int,
                 n_cancer_types: int, n_bins: int, rng: np.random.Generator,
                 d_model: int = 64, n_heads: int = 4, snn_hidden: int = 128,
                 n_overlap_experts: int = 4, top_k: int = 2,
                 d_contrast: int = 32, max_report_len: int = 128):
        self.d_model = d_model
        self.n_bins = n_bins
        self.n_heads = n_heads
        self.encoders = EncoderStack(
            gene_dim=gene_dim, patch_dim=patch_dim, vocab_size=vocab_size,
            n_cancer_types=n_cancer_types, rng=rng, d_model=d_model,
            snn_hidden=snn_hidden, n_heads=n_heads, max_report_len=max_report_len)
        self.consensual = TransformerBlock(d_model, n_heads, rng)
        self.specialized = [TransformerBlock(d_model, n_heads, rng)
                            for _ in range(n_cancer_types)]
        self.overlapping = [TransformerBlock(d_model, n_heads, rng)
                            for _ in range(n_overlap_experts)]
        self.router = Router(d_model, n_overlap_experts, top_k, rng)
        self.fusion = TransformerBlock(d_model, n_heads, rng)
        self.hazard_head = HazardHead(d_model, n_bins, rng)
        self.contrast_heads = {m: Linear(d_model, d_contrast, rng) for m in MODALITIES}

    @property
    def n_cancer_types(self) -> int:
        return len(self.specialized)

    def encode_record(self, record: PatientRecord, *, train: bool = False,
                      rng: np.random.Generator | None = None,
                      force_synthesize=frozenset()):
        return self.encoders.encode_record(
            record, train=train, rng=rng, force_synthesize=force_synthesize)

    def collaborative_forward(self, token_vectors: list[Tensor],
                              cancer_type: int) -> tuple[Tensor, ExpertSetOutput]:
        if not 0 <= cancer_type < self.n_cancer_types:
            raise ValidationError(
                f"cancer_type {cancer_type} outside [0, {self.n_cancer_types})")
        if len(token_vectors) != len(MODALITIES) + 1:
            raise ContractError(f"expected {len(MODALITIES) + 1} tokens, "
                                f"got {len(token_vectors)}")
        x = ad.stack_rows(token_vectors)
        summary = x.mean(axis=0)
        weights, selected, full_gates = self.router.route(summary)

        consensual_tok = self.consensual(x).mean(axis=0)
        specialized_tok = self.specialized[cancer_type](x).mean(axis=0)
        pooled = [self.overlapping[e](x).mean(axis=0) for e in selected]
        overlapping_tok = ad.matmul(weights, ad.stack_rows(pooled))

        fused = self.fuse_groups(consensual_tok, specialized_tok, overlapping_tok)
        out = ExpertSetOutput(consensual=consensual_tok, specialized=specialized_tok,
                              overlapping=overlapping_tok, gates=full_gates,
                              selected=selected)
        return fused, out

    def fuse_groups(self, consensual: Tensor, specialized: Tensor,
                    overlapping: Tensor) -> Tensor:
        group = ad.stack_rows([consensual, specialized, overlapping])
        return self.fusion(group).mean(axis=0)

    def forward_record(self, record: PatientRecord, *, train: bool = False,
                       rng: np.random.Generator | None = None,
                       force_synthesize=frozenset()) -> PatientForward:
        tokens, cancer_tok, attention = self.encode_record(
            record, train=train, rng=rng, force_synthesize=force_synthesize)
        vectors = [tokens[m].vector for m in MODALITIES] + [cancer_tok.vector]
        fused, expert_out = self.collaborative_forward(vectors, record.cancer_type)
        hazards = self.hazard_head(fused)
        contrastive = {m: self.contrast_heads[m](tokens[m].vector)
                       for m in MODALITIES if not tokens[m].synthesized}
        return PatientForward(hazards=hazards, expert_output=expert_out,
                              contrastive=contrastive, tokens=tokens,
                              attention=attention)

    def grow_cancer_types(self, n_cancer_types: int, rng: np.random.Generator) -> None:
        """Adapt to a cohort with more cancer types: fresh embedding rows and
        fresh specialized experts for the new types; everything else transfers."""
        current = self.n_cancer_types
        if n_cancer_types < current:
            raise ValidationError(
                f"cannot shrink cancer-type table from {current} to {n_cancer_types}")
        if n_cancer_types == current:
            return
        extra = normal_init(rng, (n_cancer_types - current, self.d_model))
        table = self.encoders.cancer_embed.table
        self.encoders.cancer_embed.table = Tensor(
            np.vstack([table.data, extra.data]), requires_grad=True)
        for _ in range(n_cancer_types - current):
            self.specialized.append(TransformerBlock(self.d_model, self.n_heads, rng))
