"""Packed-sequence layout, restricted attention masks, and block partitioning.

The packed order is fixed as [V-Prompt | L-Prompt | image patches | text],
with the text segment starting at the [CLS] token. Stage-1 attention restricts
each prompt to its own modality; stage 2 is unrestricted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError


@dataclass(frozen=True)
class SequenceLayout:
    """Half-open index spans of the four segments in the packed sequence."""

    vp_span: tuple[int, int]
    lp_span: tuple[int, int]
    img_span: tuple[int, int]
    txt_span: tuple[int, int]
    mask_index: int | None = None  # absolute position of [MASK], if any

    @property
    def total_len(self) -> int:
        return self.txt_span[1]

    @property
    def vp_len(self) -> int:
        return self.vp_span[1] - self.vp_span[0]

    @property
    def lp_len(self) -> int:
        return self.lp_span[1] - self.lp_span[0]

    @property
    def cls_index(self) -> int:
        return self.txt_span[0]


@dataclass(frozen=True)
class BlockLayout:
    """Partition of the stage-1 layers into fusion blocks."""

    stage1_layers: int
    block_sizes: tuple[int, ...]
    fusion_boundaries: tuple[int, ...]  # first layer index of each block b >= 1


def build_layout(vp_len: int, lp_len: int, n_patches: int, n_text: int,
                 block_count: int = 1, mask_index: int | None = None) -> SequenceLayout:
    for name, v in (("vp_len", vp_len), ("lp_len", lp_len),
                    ("n_patches", n_patches), ("n_text", n_text)):
        if v < 0:
            raise InputError(f"build_layout: {name} must be >= 0, got {v}")
    if n_text < 1:
        raise InputError("build_layout: text segment must contain at least [CLS]")
    if block_count > 1 and vp_len != lp_len:
        raise ConfigError(
            f"prompt fusion requires equal prompt lengths, got {vp_len} != {lp_len}")
    a, b, c = vp_len, vp_len + lp_len, vp_len + lp_len + n_patches
    total = c + n_text
    abs_mask = None
    if mask_index is not None:
        abs_mask = c + mask_index
        if not (c <= abs_mask < total):
            raise InputError(f"mask_index {mask_index} outside the text segment")
    return SequenceLayout((0, a), (a, b), (b, c), (c, total), abs_mask)


def build_stage1_mask(layout: SequenceLayout) -> np.ndarray:
    """Row r may attend column c per the restricted receptive-field rules.

    VP sees VP+image; LP sees LP+text; image sees VP+image+text;
    text sees LP+image+text.
    """
    n = layout.total_len
    vp = np.zeros(n, dtype=bool)
    vp[slice(*layout.vp_span)] = True
    lp = np.zeros(n, dtype=bool)
    lp[slice(*layout.lp_span)] = True
    img = np.zeros(n, dtype=bool)
    img[slice(*layout.img_span)] = True
    txt = np.zeros(n, dtype=bool)
    txt[slice(*layout.txt_span)] = True

    mask = np.zeros((n, n), dtype=bool)
    mask[np.ix_(vp, vp | img)] = True
    mask[np.ix_(lp, lp | txt)] = True
    mask[np.ix_(img, vp | img | txt)] = True
    mask[np.ix_(txt, lp | img | txt)] = True
    return mask


def build_stage2_mask(vlp_len: int, n_patches: int, n_text: int) -> np.ndarray:
    """Stage 2 performs full fusion: every position attends every position."""
    for name, v in (("vlp_len", vlp_len), ("n_patches", n_patches), ("n_text", n_text)):
        if v < 0:
            raise InputError(f"build_stage2_mask: {name} must be >= 0, got {v}")
    n = vlp_len + n_patches + n_text
    return np.ones((n, n), dtype=bool)


def partition_blocks(stage1_layers: int, block_count: int) -> BlockLayout:
    """Split layers into blocks differing by at most 1, larger blocks first."""
    if not 1 <= block_count <= stage1_layers:
        raise ConfigError(
            f"block_count must be in [1, {stage1_layers}], got {block_count}")
    base, excess = divmod(stage1_layers, block_count)
    sizes = tuple([base + 1] * excess + [base] * (block_count - excess))
    boundaries = tuple(np.cumsum(sizes)[:-1].tolist())
    return BlockLayout(stage1_layers, sizes, boundaries)
