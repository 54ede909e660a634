"""Modality-specific encoders producing fixed-width tokens.

Each encoder maps one raw payload onto a d_model-wide token: genomics
through a two-layer self-normalizing MLP, pathology through gated-attention
pooling over the patch bag plus a projection, reports through token +
positional embeddings, one pre-norm transformer block, mean pooling, and a
projection. A learnable per-cancer embedding supplies the cancer token, and
per-modality synthesizer MLPs derive stand-in tokens for missing modalities
directly from it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import MODALITIES
from .exceptions import ContractError, DimensionError, ValidationError
from .nn import (Embedding, GatedAttentionPool, Linear, Module, SeluMLP,
                 TransformerBlock)

CANCER = "cancer"


@dataclass
class ModalityToken:
    vector: Tensor          # (d_model,)
    modality: str
    synthesized: bool = False


class EncoderStack(Module):
    """All modality encoders of one model instance.

    ``modalities`` restricts which payload encoders exist (baselines that
    consume a single modality do not carry the other encoders' weights);
    the cancer embedding and the synthesizers for the included modalities
    are always present.
    """

    def __init__(self, *, gene_dim: int, patch_dim: int, vocab_size: int,
                 n_cancer_types: int, rng: np.random.Generator,
                 d_model: int = 64, snn_hidden: int = 128, n_heads: int = 4,
                 max_report_len: int = 128,
                 modalities: tuple[str, ...] = MODALITIES):
        unknown = set(modalities) - set(MODALITIES)
        if unknown:
            raise ValidationError(f"unknown modalities: {sorted(unknown)}")
        self.d_model = d_model
        self.vocab_size = vocab_size
        self.gene_dim = gene_dim
        self.patch_dim = patch_dim
        self.max_report_len = max_report_len
        self.modalities = tuple(m for m in MODALITIES if m in modalities)

        if "genomics" in self.modalities:
            self.genomics_mlp = SeluMLP(gene_dim, snn_hidden, d_model, rng)
        if "pathology" in self.modalities:
            self.patch_pool = GatedAttentionPool(patch_dim, d_model, rng)
            self.patch_proj = Linear(patch_dim, d_model, rng)
        if "report" in self.modalities:
            self.token_embed = Embedding(vocab_size, d_model, rng)
            self.pos_embed = Embedding(max_report_len, d_model, rng)
            self.report_block = TransformerBlock(d_model, n_heads, rng)
            self.report_proj = Linear(d_model, d_model, rng)
        self.cancer_embed = Embedding(n_cancer_types, d_model, rng)
        self.synthesizers = {m: SeluMLP(d_model, snn_hidden, d_model, rng)
                             for m in self.modalities}

    @property
    def n_cancer_types(self) -> int:
        return self.cancer_embed.table.shape[0]

    def encode_genomics(self, genes) -> ModalityToken:
        vec = np.asarray(genes, dtype=np.float64)
        if vec.shape != (self.gene_dim,):
            raise DimensionError(f"gene vector shape {vec.shape} != ({self.gene_dim},)")
        return ModalityToken(self.genomics_mlp(Tensor(vec)), "genomics")

    def encode_pathology(self, bag) -> tuple[ModalityToken, Tensor]:
        arr = np.asarray(bag, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise ContractError(f"patch bag must be a non-empty (P, d) array, got {arr.shape}")
        if arr.shape[1] != self.patch_dim:
            raise DimensionError(f"patch width {arr.shape[1]} != {self.patch_dim}")
        pooled, attention = self.patch_pool(Tensor(arr))
        return ModalityToken(self.patch_proj(pooled), "pathology"), attention

    def encode_report(self, token_ids, train: bool = False,
                      rng: np.random.Generator | None = None) -> ModalityToken:
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.ndim != 1 or ids.size < 1:
            raise ContractError(f"token ids must be a non-empty vector, got shape {ids.shape}")
        if np.any(ids < 0) or np.any(ids >= self.vocab_size):
            raise ValidationError(
                f"token id outside [0, {self.vocab_size}) in report of length {ids.size}")
        if ids.size > self.max_report_len:
            # contiguous window: random offset while training, leading window in eval
            if train:
                if rng is None:
                    raise ContractError("training-mode truncation needs the run generator")
                offset = int(rng.integers(0, ids.size - self.max_report_len + 1))
            else:
                offset = 0
            ids = ids[offset:offset + self.max_report_len]
        x = ad.add(self.token_embed(ids), self.pos_embed(np.arange(ids.size)))
        x = self.report_block(x)
        return ModalityToken(self.report_proj(x.mean(axis=0)), "report")

    def cancer_token(self, cancer_type: int) -> ModalityToken:
        return ModalityToken(self.cancer_embed.lookup(cancer_type), CANCER)

    def encode_record(self, record, *, train: bool = False,
                      rng: np.random.Generator | None = None,
                      force_synthesize=frozenset()):
        """Encode the record's present modalities (among this stack's
        modalities) and synthesize the rest; absent payloads are never read.

        Returns (tokens, cancer token, pathology attention or None).
        """
        cancer_tok = self.cancer_token(record.cancer_type)
        tokens: dict[str, ModalityToken] = {}
        attention = None
        for m in self.modalities:
            payload = getattr(record, m)
            if payload is None or m in force_synthesize:
                tokens[m] = self.synthesize_missing(cancer_tok, m)
            elif m == "pathology":
                tokens[m], attention = self.encode_pathology(payload)
            elif m == "genomics":
                tokens[m] = self.encode_genomics(payload)
            else:
                tokens[m] = self.encode_report(payload, train=train, rng=rng)
        return tokens, cancer_tok, attention

    def synthesize_missing(self, cancer_token: ModalityToken, modality: str) -> ModalityToken:
        if modality not in MODALITIES:
            raise ContractError(f"cannot synthesize modality {modality!r}")
        if modality not in self.synthesizers:
            raise ContractError(f"this model has no {modality!r} synthesizer")
        return ModalityToken(self.synthesizers[modality](cancer_token.vector),
                             modality, synthesized=True)
