"""The MoPE-BAF network.

Stage 1: pre-norm transformer layers with shared self-attention under the
restricted prompt mask, vision rows routed through V-FFN and text rows through
L-FFN, and cross-attention prompt fusion at each block boundary. Stage 2 drops
the single-modal prompts, prepends the fresh VL-Prompt, and runs unrestricted
layers with a single VL-FFN. Two heads: classification over [CLS] and a
verbalizer LM head over [MASK].

The forward path is batched internally ([batch, seq, dim]); the per-sample
entry points wrap a batch of one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import numerics as nx
from . import vocab
from .data import Sample
from .errors import ConfigError, InputError, ShapeError
from .layout import (SequenceLayout, build_layout, build_stage1_mask,
                     build_stage2_mask, partition_blocks)
from .numerics import Tensor

INIT_STD = 0.02


@dataclass(frozen=True)
class ModelConfig:
    hidden_dim: int = 64
    n_heads: int = 4
    ffn_dim: int = 256
    stage1_layers: int = 6
    stage2_layers: int = 2
    vp_len: int = 10
    lp_len: int = 10
    vlp_len: int = 10
    block_count: int = 2
    vocab_size: int = 64
    patch_feature_dim: int = 32
    n_patches: int = 16
    max_text_len: int = 12
    n_classes: int = 2
    head: str = "classification"  # or "lm_verbalizer"
    restrict_stage1: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.hidden_dim % self.n_heads != 0:
            raise ConfigError(
                f"hidden_dim {self.hidden_dim} not divisible by n_heads {self.n_heads}")
        if self.block_count > 1 and self.vp_len != self.lp_len:
            raise ConfigError("vp_len must equal lp_len when block_count > 1")
        if not 1 <= self.block_count <= self.stage1_layers:
            raise ConfigError(
                f"block_count {self.block_count} out of range [1, {self.stage1_layers}]")
        if self.head not in ("classification", "lm_verbalizer"):
            raise ConfigError(f"unknown head {self.head!r}")


def desk_config(**overrides) -> ModelConfig:
    return ModelConfig(**overrides)


def paper_scale_config(**overrides) -> ModelConfig:
    base = dict(hidden_dim=64, n_heads=4, ffn_dim=256, stage1_layers=21,
                stage2_layers=3, vp_len=10, lp_len=10, vlp_len=10,
                block_count=2, n_patches=196, max_text_len=40)
    base.update(overrides)
    return ModelConfig(**base)


def _param(rng: np.random.Generator, shape, std: float = INIT_STD) -> Tensor:
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _ones(shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


def init_params(cfg: ModelConfig) -> dict[str, Tensor]:
    """All learnable tensors, keyed by dotted names in a fixed creation order."""
    rng = np.random.default_rng(cfg.seed)
    d, f = cfg.hidden_dim, cfg.ffn_dim
    p: dict[str, Tensor] = {}

    p["patch_proj.w"] = _param(rng, (cfg.patch_feature_dim, d))
    p["patch_proj.b"] = _zeros((d,))
    p["tok_emb"] = _param(rng, (cfg.vocab_size, d))
    p["img_pos"] = _param(rng, (cfg.n_patches, d))
    p["txt_pos"] = _param(rng, (cfg.max_text_len, d))
    p["vp"] = _param(rng, (cfg.vp_len, d))
    p["lp"] = _param(rng, (cfg.lp_len, d))
    p["vlp"] = _param(rng, (cfg.vlp_len, d))

    def add_ffn(prefix: str) -> None:
        p[f"{prefix}.ln.g"] = _ones((d,))
        p[f"{prefix}.ln.b"] = _zeros((d,))
        p[f"{prefix}.w1"] = _param(rng, (d, f))
        p[f"{prefix}.b1"] = _zeros((f,))
        p[f"{prefix}.w2"] = _param(rng, (f, d))
        p[f"{prefix}.b2"] = _zeros((d,))

    def add_layer(prefix: str, experts: tuple[str, ...]) -> None:
        p[f"{prefix}.ln_attn.g"] = _ones((d,))
        p[f"{prefix}.ln_attn.b"] = _zeros((d,))
        for w in ("wq", "wk", "wv", "wo"):
            p[f"{prefix}.{w}"] = _param(rng, (d, d))
        for b in ("bq", "bk", "bv", "bo"):
            p[f"{prefix}.{b}"] = _zeros((d,))
        for e in experts:
            add_ffn(f"{prefix}.{e}")

    for i in range(cfg.stage1_layers):
        add_layer(f"s1.{i}", ("vffn", "lffn"))
    for i in range(cfg.stage2_layers):
        add_layer(f"s2.{i}", ("vlffn",))
    for j in range(cfg.block_count - 1):
        p[f"fuse.{j}.fq"] = _param(rng, (d, d))
        p[f"fuse.{j}.fk"] = _param(rng, (d, d))
        p[f"fuse.{j}.fv"] = _param(rng, (d, d))
    p["final_ln.g"] = _ones((d,))
    p["final_ln.b"] = _zeros((d,))
    p["head.cls.w"] = _param(rng, (d, cfg.n_classes))
    p["head.cls.b"] = _zeros((cfg.n_classes,))
    p["head.lm.w"] = _param(rng, (d, cfg.vocab_size))
    p["head.lm.b"] = _zeros((cfg.vocab_size,))
    return p


def _attention(cfg: ModelConfig, p: dict[str, Tensor], prefix: str,
               h: Tensor, mask: np.ndarray) -> Tensor:
    """Pre-norm multi-head self-attention with residual; h is [B, n, d]."""
    bsz, n, d = h.shape
    nh = cfg.n_heads
    dh = d // nh
    x = nx.layer_norm(h, p[f"{prefix}.ln_attn.g"], p[f"{prefix}.ln_attn.b"])

    def heads(name_w, name_b):
        y = nx.matmul(x, p[name_w]) + p[name_b]
        return y.reshape(bsz, n, nh, dh).transpose((0, 2, 1, 3))  # [B, H, n, dh]

    q = heads(f"{prefix}.wq", f"{prefix}.bq")
    k = heads(f"{prefix}.wk", f"{prefix}.bk")
    v = heads(f"{prefix}.wv", f"{prefix}.bv")
    scores = nx.matmul(q, k.transpose((0, 1, 3, 2))) * (1.0 / math.sqrt(dh))
    attn = nx.masked_softmax(scores, mask)
    ctx = nx.matmul(attn, v).transpose((0, 2, 1, 3)).reshape(bsz, n, d)
    out = nx.matmul(ctx, p[f"{prefix}.wo"]) + p[f"{prefix}.bo"]
    return h + out


def _ffn(p: dict[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    """Pre-norm 2-layer GELU expert MLP with residual; row-wise."""
    y = nx.layer_norm(x, p[f"{prefix}.ln.g"], p[f"{prefix}.ln.b"])
    y = nx.gelu(nx.matmul(y, p[f"{prefix}.w1"]) + p[f"{prefix}.b1"])
    y = nx.matmul(y, p[f"{prefix}.w2"]) + p[f"{prefix}.b2"]
    return x + y


def stage1_layer_forward(cfg: ModelConfig, p: dict[str, Tensor], idx: int,
                         h: Tensor, layout: SequenceLayout,
                         mask: np.ndarray) -> Tensor:
    if mask.shape != (layout.total_len, layout.total_len):
        raise ShapeError(f"mask {mask.shape} does not match layout {layout.total_len}")
    prefix = f"s1.{idx}"
    h = _attention(cfg, p, prefix, h, mask)
    vp = h[:, slice(*layout.vp_span), :]
    lp = h[:, slice(*layout.lp_span), :]
    img = h[:, slice(*layout.img_span), :]
    txt = h[:, slice(*layout.txt_span), :]
    return nx.concat([
        _ffn(p, f"{prefix}.vffn", vp),
        _ffn(p, f"{prefix}.lffn", lp),
        _ffn(p, f"{prefix}.vffn", img),
        _ffn(p, f"{prefix}.lffn", txt),
    ], axis=1)


def stage2_layer_forward(cfg: ModelConfig, p: dict[str, Tensor], idx: int,
                         h: Tensor, mask: np.ndarray) -> Tensor:
    prefix = f"s2.{idx}"
    h = _attention(cfg, p, prefix, h, mask)
    return _ffn(p, f"{prefix}.vlffn", h)


def baf_fuse(cfg: ModelConfig, p: dict[str, Tensor], boundary: int,
             h_vp: Tensor, h_lp: Tensor) -> tuple[Tensor, Tensor]:
    """Cross-attention prompt reconstruction at a block boundary.

    The new V-Prompt is built from L-Prompt queries over V-Prompt keys/values
    (and symmetrically for the new L-Prompt); single head, bare output with no
    residual or norm. Projections are shared between the two directions.
    """
    if h_vp.shape != h_lp.shape:
        raise ConfigError(f"prompt shapes differ: {h_vp.shape} vs {h_lp.shape}")
    d = cfg.hidden_dim
    scale = 1.0 / math.sqrt(d)
    fq, fk, fv = p[f"fuse.{boundary}.fq"], p[f"fuse.{boundary}.fk"], p[f"fuse.{boundary}.fv"]
    plen = h_vp.shape[-2]
    full = np.ones((plen, plen), dtype=bool)

    def cross(queries: Tensor, keyvals: Tensor) -> Tensor:
        scores = nx.matmul(nx.matmul(queries, fq),
                           nx.matmul(keyvals, fk).transpose((0, 2, 1))) * scale
        return nx.matmul(nx.masked_softmax(scores, full), nx.matmul(keyvals, fv))

    s_vp = cross(h_lp, h_vp)
    s_lp = cross(h_vp, h_lp)
    return s_vp, s_lp


def embed_inputs(cfg: ModelConfig, p: dict[str, Tensor], patches: np.ndarray,
                 tokens: np.ndarray,
                 mask_index: int | None = None) -> tuple[Tensor, SequenceLayout]:
    """Pack [VP | LP | image | text] embeddings for a batch.

    ``patches`` is [B, n_patches, patch_feature_dim]; ``tokens`` is [B, T] of
    ids, every row starting with [CLS]. Prompt rows are the raw parameters with
    no position embedding.
    """
    patches = np.asarray(patches, dtype=np.float64)
    tokens = np.asarray(tokens, dtype=np.int64)
    if patches.ndim != 3 or tokens.ndim != 2:
        raise ShapeError("embed_inputs expects batched patches [B,n,f] and tokens [B,T]")
    bsz, n_text = tokens.shape
    if n_text > cfg.max_text_len:
        raise InputError(f"text length {n_text} exceeds max_text_len {cfg.max_text_len}")
    if tokens.min() < 0 or tokens.max() >= cfg.vocab_size:
        raise InputError("token id outside vocabulary")
    if not (tokens[:, 0] == vocab.CLS_ID).all():
        raise InputError("every token sequence must start with [CLS]")

    layout = build_layout(cfg.vp_len, cfg.lp_len, cfg.n_patches, n_text,
                          block_count=cfg.block_count, mask_index=mask_index)
    img = nx.matmul(Tensor(patches), p["patch_proj.w"]) + p["patch_proj.b"] + p["img_pos"]
    txt = p["tok_emb"][tokens] + p["txt_pos"][0:n_text]
    vp = nx.broadcast_to(p["vp"].reshape(1, cfg.vp_len, cfg.hidden_dim),
                         (bsz, cfg.vp_len, cfg.hidden_dim))
    lp = nx.broadcast_to(p["lp"].reshape(1, cfg.lp_len, cfg.hidden_dim),
                         (bsz, cfg.lp_len, cfg.hidden_dim))
    return nx.concat([vp, lp, img, txt], axis=1), layout


def forward_batch(cfg: ModelConfig, p: dict[str, Tensor], patches: np.ndarray,
                  tokens: np.ndarray,
                  mask_index: int | None = None) -> tuple[Tensor, Tensor | None]:
    """Full pipeline; returns ([B, d] CLS vectors, [B, d] MASK vectors or None)."""
    h, layout = embed_inputs(cfg, p, patches, tokens, mask_index)
    n_text = int(np.asarray(tokens).shape[1])
    bsz = h.shape[0]
    if cfg.restrict_stage1:
        mask1 = build_stage1_mask(layout)
    else:
        mask1 = np.ones((layout.total_len, layout.total_len), dtype=bool)

    blocks = partition_blocks(cfg.stage1_layers, cfg.block_count)
    layer = 0
    for b, size in enumerate(blocks.block_sizes):
        for _ in range(size):
            h = stage1_layer_forward(cfg, p, layer, h, layout, mask1)
            layer += 1
        if b < len(blocks.block_sizes) - 1:
            s_vp, s_lp = baf_fuse(cfg, p, b,
                                  h[:, slice(*layout.vp_span), :],
                                  h[:, slice(*layout.lp_span), :])
            h = nx.concat([s_vp, s_lp, h[:, layout.img_span[0]:, :]], axis=1)

    # stage-2 entry: drop VP/LP rows, prepend the fresh VL-Prompt
    body = h[:, layout.img_span[0]:, :]
    vlp = nx.broadcast_to(p["vlp"].reshape(1, cfg.vlp_len, cfg.hidden_dim),
                          (bsz, cfg.vlp_len, cfg.hidden_dim))
    h2 = nx.concat([vlp, body], axis=1)
    mask2 = build_stage2_mask(cfg.vlp_len, cfg.n_patches, n_text)
    for i in range(cfg.stage2_layers):
        h2 = stage2_layer_forward(cfg, p, i, h2, mask2)
    h2 = nx.layer_norm(h2, p["final_ln.g"], p["final_ln.b"])

    cls_idx = cfg.vlp_len + cfg.n_patches
    cls_vec = h2[:, cls_idx, :]
    mask_vec = None
    if mask_index is not None:
        mask_vec = h2[:, cfg.vlp_len + cfg.n_patches + mask_index, :]
    return cls_vec, mask_vec


def forward(cfg: ModelConfig, p: dict[str, Tensor],
            sample: Sample) -> tuple[Tensor, Tensor | None]:
    """Single-sample forward; returns the [d] CLS vector and optional [MASK] vector."""
    cls_vec, mask_vec = forward_batch(
        cfg, p, sample.patches[None, :, :], np.asarray(sample.tokens)[None, :],
        mask_index=sample.mask_index)
    return (cls_vec[0], None if mask_vec is None else mask_vec[0])


def batch_arrays(samples: list[Sample]) -> tuple[np.ndarray, np.ndarray,
                                                 np.ndarray, int | None]:
    """Stack samples of uniform length into batch arrays."""
    lengths = {len(s.tokens) for s in samples}
    if len(lengths) != 1:
        raise InputError(f"batch requires uniform token lengths, got {sorted(lengths)}")
    mask_indices = {s.mask_index for s in samples}
    if len(mask_indices) != 1:
        raise InputError("batch requires a uniform [MASK] position")
    patches = np.stack([s.patches for s in samples])
    tokens = np.stack([np.asarray(s.tokens) for s in samples])
    labels = np.asarray([s.label for s in samples])
    return patches, tokens, labels, samples[0].mask_index


def class_logits_batch(cfg: ModelConfig, p: dict[str, Tensor],
                       patches: np.ndarray, tokens: np.ndarray,
                       mask_index: int | None,
                       verbalizer: dict[int, int] | None = None) -> Tensor:
    """[B, n_classes] logits from the configured head."""
    cls_vec, mask_vec = forward_batch(cfg, p, patches, tokens, mask_index)
    if cfg.head == "classification":
        return nx.matmul(cls_vec, p["head.cls.w"]) + p["head.cls.b"]
    if mask_vec is None:
        raise ConfigError("lm_verbalizer head requires a template with [MASK]")
    if verbalizer is None:
        verbalizer = vocab.VERBALIZERS["sarcasm2" if cfg.n_classes == 2 else "sentiment3"]
    word_ids = [verbalizer[c] for c in range(cfg.n_classes)]
    if len(set(word_ids)) != len(word_ids) or max(word_ids) >= cfg.vocab_size:
        raise ConfigError(f"invalid verbalizer ids {word_ids}")
    lm = nx.matmul(mask_vec, p["head.lm.w"]) + p["head.lm.b"]
    return nx.concat([lm[:, w:w + 1] for w in word_ids], axis=1)


def predict(cfg: ModelConfig, p: dict[str, Tensor], sample: Sample,
            verbalizer: dict[int, int] | None = None) -> np.ndarray:
    """Class probability vector for one sample."""
    logits = class_logits_batch(
        cfg, p, sample.patches[None, :, :], np.asarray(sample.tokens)[None, :],
        sample.mask_index, verbalizer).data[0]
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def predict_batch(cfg: ModelConfig, p: dict[str, Tensor],
                  samples: list[Sample],
                  verbalizer: dict[int, int] | None = None) -> np.ndarray:
    """Argmax class ids for a list of uniform-length samples."""
    patches, tokens, _, mask_index = batch_arrays(samples)
    logits = class_logits_batch(cfg, p, patches, tokens, mask_index, verbalizer)
    return logits.data.argmax(axis=1)


def parameter_groups(names: list[str]) -> dict[str, list[str]]:
    """Group parameter names by functional unit (for gradient-flow audits)."""
    groups: dict[str, list[str]] = {}
    for name in names:
        parts = name.split(".")
        if parts[0] in ("s1", "s2", "fuse"):
            key = ".".join(parts[:2])
        elif parts[0] == "head":
            key = ".".join(parts[:2])
        else:
            key = parts[0]
        groups.setdefault(key, []).append(name)
    return groups
