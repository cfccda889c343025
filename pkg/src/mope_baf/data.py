"""Deterministic synthetic cross-modal incongruity task.

Each sample pairs an image (patch features built from fixed symbol prototypes)
with a short token sequence; the label depends only on whether the two
modalities agree in polarity, so one modality alone is at chance on the
binary task. Everything is seed-driven and reproducible byte-for-byte.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import vocab
from .errors import ConfigError, InputError

POS, NEG = "POS", "NEG"

TASK_CLASSES = {"sarcasm2": 2, "sentiment3": 3}

# class names, index == class id
CLASS_NAMES = {
    "sarcasm2": ("nonsarcasm", "sarcasm"),
    "sentiment3": ("negative", "neutral", "positive"),
}


@dataclass
class DataConfig:
    task: str = "sarcasm2"
    n_patches: int = 16
    patch_feature_dim: int = 32
    max_text_len: int = 12
    vocab_size: int = 64
    majority_frac: float = 0.75
    noise_sigma: float = 0.1
    n_distractor_protos: int = 8
    distractor_pool: int = 8
    data_seed: int = 0

    def __post_init__(self) -> None:
        if self.task not in TASK_CLASSES:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.vocab_size < vocab.MIN_VOCAB:
            raise ConfigError(f"vocab_size must be >= {vocab.MIN_VOCAB}")
        if self.max_text_len < 3:
            raise ConfigError("max_text_len must leave room for [CLS] + polarity")
        if not 1 <= self.distractor_pool <= self.vocab_size - vocab.DISTRACTOR_START:
            raise ConfigError(
                f"distractor_pool must be in [1, {self.vocab_size - vocab.DISTRACTOR_START}]")

    @property
    def n_classes(self) -> int:
        return TASK_CLASSES[self.task]


@dataclass
class Sample:
    patches: np.ndarray  # [n_patches, patch_feature_dim]
    tokens: list[int]
    label: int
    meta: dict = field(default_factory=dict)
    mask_index: int | None = None  # position of [MASK] within tokens


@dataclass
class PromptTemplate:
    mode: str               # manual | soft | ptuning | none
    prefix_ids: list[int]

    def __post_init__(self) -> None:
        if self.mode not in ("manual", "soft", "ptuning", "none"):
            raise ConfigError(f"unknown template mode {self.mode!r}")

    @property
    def has_mask(self) -> bool:
        return self.mode in ("manual", "ptuning")


@dataclass
class FewShotSplit:
    train: list[Sample]
    dev: list[Sample]
    test: list[Sample]
    shots_per_class: int
    seed: int


def template_for(mode: str, task: str) -> PromptTemplate:
    if mode in ("soft", "none"):
        return PromptTemplate(mode, [])
    return PromptTemplate(mode, list(vocab.TEMPLATE_IDS[task]))


def label_for(task: str, image_polarity: str, text_polarity: str) -> int:
    if task == "sarcasm2":
        return 1 if image_polarity != text_polarity else 0
    if image_polarity == text_polarity:
        return 2 if image_polarity == POS else 0
    return 1


def _prototypes(cfg: DataConfig) -> dict:
    """Fixed unit-norm symbol prototypes derived from the global data seed."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.data_seed, 0x50524F54]))
    def unit(v):
        return v / np.linalg.norm(v)
    protos = {
        POS: unit(rng.standard_normal(cfg.patch_feature_dim)),
        NEG: unit(rng.standard_normal(cfg.patch_feature_dim)),
    }
    protos["distractors"] = np.stack([
        unit(rng.standard_normal(cfg.patch_feature_dim))
        for _ in range(cfg.n_distractor_protos)
    ])
    return protos


def gen_sample(cfg: DataConfig, rng_seed: int) -> Sample:
    protos = _prototypes(cfg)
    rng = np.random.default_rng(rng_seed)
    image_polarity = POS if rng.integers(2) == 0 else NEG
    text_polarity = POS if rng.integers(2) == 0 else NEG

    n_major = int(round(cfg.majority_frac * cfg.n_patches))
    order = rng.permutation(cfg.n_patches)
    patches = np.empty((cfg.n_patches, cfg.patch_feature_dim))
    for rank, idx in enumerate(order):
        if rank < n_major:
            patches[idx] = protos[image_polarity]
        else:
            patches[idx] = protos["distractors"][rng.integers(cfg.n_distractor_protos)]
    patches += rng.normal(0.0, cfg.noise_sigma, size=patches.shape)

    n_distract = cfg.max_text_len - 2
    # few-shot regime: a small distractor pool keeps every filler id seen in
    # training, so untrained embeddings never appear at test time
    body = list(rng.integers(vocab.DISTRACTOR_START,
                             vocab.DISTRACTOR_START + cfg.distractor_pool,
                             size=n_distract))
    pol_tok = vocab.POS_TOK if text_polarity == POS else vocab.NEG_TOK
    body.insert(int(rng.integers(n_distract + 1)), pol_tok)
    tokens = [vocab.CLS_ID] + [int(t) for t in body]

    return Sample(
        patches=patches,
        tokens=tokens,
        label=label_for(cfg.task, image_polarity, text_polarity),
        meta={"image_polarity": image_polarity, "text_polarity": text_polarity,
              "seed": int(rng_seed)},
    )


def _sample_seed(split_seed: int, counter: int) -> int:
    # distinct deterministic per-sample seeds, disjoint across split seeds
    return int(np.random.SeedSequence([split_seed, counter]).generate_state(1)[0])


def make_fewshot_split(cfg: DataConfig, shots_per_class: int, test_size: int,
                       seed: int) -> FewShotSplit:
    if shots_per_class < 1:
        raise InputError("shots_per_class must be >= 1")
    k = cfg.n_classes
    train: list[list[Sample]] = [[] for _ in range(k)]
    dev: list[list[Sample]] = [[] for _ in range(k)]
    test: list[Sample] = []
    counter = 0
    # fill class-balanced train then dev buckets by rejection, then the test set
    while any(len(b) < shots_per_class for b in train) \
            or any(len(b) < shots_per_class for b in dev) \
            or len(test) < test_size:
        s = gen_sample(cfg, _sample_seed(seed, counter))
        counter += 1
        if len(train[s.label]) < shots_per_class:
            train[s.label].append(s)
        elif len(dev[s.label]) < shots_per_class:
            dev[s.label].append(s)
        elif len(test) < test_size:
            test.append(s)
    return FewShotSplit(
        train=[s for bucket in train for s in bucket],
        dev=[s for bucket in dev for s in bucket],
        test=test,
        shots_per_class=shots_per_class,
        seed=seed,
    )


def apply_template(sample: Sample, template: PromptTemplate,
                   max_text_len: int) -> Sample:
    """Insert template tokens (and [MASK]) after [CLS]; truncate distractors."""
    if not template.has_mask:
        return replace(sample)
    inserted = template.prefix_ids + [vocab.MASK_ID]
    tokens = [sample.tokens[0]] + inserted + sample.tokens[1:]
    overflow = len(tokens) - max_text_len
    if overflow > 0:
        kept: list[int] = []
        for tok in reversed(tokens):
            if overflow > 0 and vocab.is_distractor(tok):
                overflow -= 1
                continue
            kept.append(tok)
        tokens = list(reversed(kept))
    if len(tokens) > max_text_len:
        raise InputError(
            f"template overflows max_text_len={max_text_len} even after truncation")
    return replace(sample, tokens=tokens, mask_index=1 + len(template.prefix_ids))


def export_split(split: FewShotSplit, path: str, cfg: DataConfig) -> None:
    """Line-delimited JSON records for reproducibility audits."""
    with open(path, "w") as fh:
        header = {"kind": "header", "task": cfg.task,
                  "shots_per_class": split.shots_per_class, "seed": split.seed}
        fh.write(json.dumps(header) + "\n")
        for part in ("train", "dev", "test"):
            for s in getattr(split, part):
                rec = {
                    "kind": part,
                    "seed": s.meta.get("seed"),
                    "image_polarity": s.meta.get("image_polarity"),
                    "text_polarity": s.meta.get("text_polarity"),
                    "label": s.label,
                    "tokens": s.tokens,
                    "mask_index": s.mask_index,
                    "patches": base64.b64encode(
                        np.ascontiguousarray(s.patches, dtype="<f8").tobytes()
                    ).decode("ascii"),
                    "patch_shape": list(s.patches.shape),
                }
                fh.write(json.dumps(rec) + "\n")


def import_split(path: str) -> FewShotSplit:
    parts: dict[str, list[Sample]] = {"train": [], "dev": [], "test": []}
    header = None
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            if rec["kind"] == "header":
                header = rec
                continue
            patches = np.frombuffer(
                base64.b64decode(rec["patches"]), dtype="<f8"
            ).reshape(rec["patch_shape"]).copy()
            parts[rec["kind"]].append(Sample(
                patches=patches,
                tokens=list(rec["tokens"]),
                label=int(rec["label"]),
                meta={"image_polarity": rec["image_polarity"],
                      "text_polarity": rec["text_polarity"],
                      "seed": rec["seed"]},
                mask_index=rec["mask_index"],
            ))
    if header is None:
        raise InputError(f"{path}: missing header record")
    return FewShotSplit(parts["train"], parts["dev"], parts["test"],
                        header["shots_per_class"], header["seed"])
