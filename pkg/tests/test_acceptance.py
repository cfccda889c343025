"""Acceptance suite: one test per shipped guarantee, one printed verdict each.

These are end-to-end checks at their stated tolerances; the per-module
suites cover the same ground at finer grain. The two training-based
criteria (memorization, directional few-shot gain) dominate the runtime.
"""

import dataclasses
import json
import os
import time
from fractions import Fraction

import numpy as np
import pytest

from mope_baf import numerics as nx
from mope_baf.cli import main as cli_main
from mope_baf.data import DataConfig, gen_sample, make_fewshot_split
from mope_baf.layout import build_layout, build_stage1_mask, partition_blocks
from mope_baf.metrics import binary_metrics, multiclass_metrics
from mope_baf.model import (ModelConfig, embed_inputs, forward_batch,
                            init_params, stage1_layer_forward)
from mope_baf.numerics import GradTape
from mope_baf.training import (TrainConfig, batch_loss, eval_metrics,
                               lr_at_step, train)

from test_model import (TINY_DATA, mope_forward_no_baf,
                        reference_base_forward)

HERE = os.path.dirname(__file__)
CONFIGS = os.path.join(HERE, "..", "configs")


def verdict(n: int, name: str, ok: bool) -> None:
    print(f"ACCEPTANCE {n:>2} {name}: {'PASS' if ok else 'FAIL'}")
    assert ok, f"acceptance criterion {n} ({name})"


# 1 ------------------------------------------------------------------------

def test_acceptance_1_gradient_oracle(capsys):
    t0 = time.time()
    code = cli_main(["gradcheck", "--config",
                     os.path.join(CONFIGS, "gradcheck.ini")])
    elapsed = time.time() - t0
    report = json.loads(capsys.readouterr().out)
    with capsys.disabled():
        print(f"\n[gradcheck max_rel_error={report['max_rel_error']:.3e}, "
              f"{elapsed:.1f}s]")
        verdict(1, "gradient oracle <= 1e-4 in < 60 s",
                code == 0 and report["max_rel_error"] <= 1e-4 and elapsed < 60)


# 2 ------------------------------------------------------------------------

def test_acceptance_2_degeneracy_bit_exact():
    ok = True
    for seed in range(10):
        base = dict(hidden_dim=8, n_heads=2, ffn_dim=16, stage1_layers=2,
                    stage2_layers=1, vocab_size=24, patch_feature_dim=4,
                    n_patches=3, max_text_len=6, seed=seed)
        s = gen_sample(TINY_DATA, seed + 300)
        patches, tokens = s.patches[None], np.asarray(s.tokens)[None]
        # (a) no prompts + one block == plain two-stage pipeline
        cfg = ModelConfig(vp_len=0, lp_len=0, vlp_len=0, block_count=1, **base)
        p = init_params(cfg)
        cls_vec, _ = forward_batch(cfg, p, patches, tokens)
        ok &= np.array_equal(cls_vec.data, reference_base_forward(cfg, p, patches, tokens))
        # (b) one block == MoPE without fusion
        cfg = ModelConfig(vp_len=2, lp_len=2, vlp_len=2, block_count=1, **base)
        p = init_params(cfg)
        cls_vec, _ = forward_batch(cfg, p, patches, tokens)
        ok &= np.array_equal(cls_vec.data,
                             mope_forward_no_baf(cfg, p, patches, tokens).data)
    verdict(2, "degeneracy equivalences bit-exact on 10 seeds", ok)


# 3 ------------------------------------------------------------------------

def test_acceptance_3_mask_invariants():
    rng = np.random.default_rng(0)
    ok = True
    for _ in range(50):
        vp, lp = rng.integers(1, 6), rng.integers(1, 6)
        ni, nt = int(rng.integers(1, 8)), int(rng.integers(1, 8))
        lay = build_layout(int(vp), int(lp), ni, nt)
        m = build_stage1_mask(lay)
        sl = {k: slice(*getattr(lay, f"{k}_span")) for k in ("vp", "lp", "img", "txt")}
        rules = [
            ("vp", "vp", True), ("vp", "lp", False), ("vp", "img", True), ("vp", "txt", False),
            ("lp", "vp", False), ("lp", "lp", True), ("lp", "img", False), ("lp", "txt", True),
            ("img", "vp", True), ("img", "lp", False), ("img", "img", True), ("img", "txt", True),
            ("txt", "vp", False), ("txt", "lp", True), ("txt", "img", True), ("txt", "txt", True),
        ]
        for qa, ka, want in rules:
            ok &= bool((m[sl[qa], sl[ka]] == want).all())
        scores = rng.standard_normal((lay.total_len, lay.total_len))
        p = nx.masked_softmax(nx.Tensor(scores), m).data
        ok &= bool(np.abs(p.sum(axis=-1) - 1.0).max() <= 1e-12)
        ok &= bool((p[~m] == 0.0).all())
    verdict(3, "stage-1 mask rules + masked softmax rows", ok)


# 4 ------------------------------------------------------------------------

def test_acceptance_4_single_layer_locality():
    ok = True
    rng = np.random.default_rng(1)
    cfg = ModelConfig(hidden_dim=8, n_heads=2, ffn_dim=16, stage1_layers=1,
                      stage2_layers=1, vp_len=2, lp_len=2, vlp_len=2,
                      block_count=1, vocab_size=24, patch_feature_dim=4,
                      n_patches=3, max_text_len=6)
    for trial in range(20):
        p = init_params(dataclasses.replace(cfg, seed=trial))
        s = gen_sample(TINY_DATA, trial)
        h, lay = embed_inputs(cfg, p, s.patches[None], np.asarray(s.tokens)[None])
        mask = build_stage1_mask(lay)
        out = stage1_layer_forward(cfg, p, 0, h, lay, mask).data
        pert = nx.Tensor(h.data.copy())
        span = lay.txt_span if trial % 2 == 0 else lay.img_span
        check = slice(*lay.vp_span) if trial % 2 == 0 else slice(*lay.lp_span)
        pert.data[:, span[0]:span[1], :] += rng.standard_normal(
            (1, span[1] - span[0], cfg.hidden_dim))
        out2 = stage1_layer_forward(cfg, p, 0, pert, lay, mask).data
        ok &= np.array_equal(out[:, check], out2[:, check])
    verdict(4, "single-layer modality locality, 20 trials", ok)


# 5 ------------------------------------------------------------------------

def _brute_partition(n: int, k: int) -> list[int]:
    # all non-increasing k-part sums of n with max-min <= 1: unique
    base, extra = divmod(n, k)
    return [base + 1] * extra + [base] * (k - extra)


def test_acceptance_5_block_partition_oracle():
    ok = list(partition_blocks(21, 2).block_sizes) == [11, 10]
    ok &= list(partition_blocks(21, 6).block_sizes) == [4, 4, 4, 3, 3, 3]
    for k in range(1, 8):
        got = list(partition_blocks(21, k).block_sizes)
        ok &= got == _brute_partition(21, k)
        ok &= sum(got) == 21 and max(got) - min(got) <= 1
        ok &= got == sorted(got, reverse=True)
    verdict(5, "block partition matches brute force for k=1..7", ok)


# 6 ------------------------------------------------------------------------

def test_acceptance_6_schedule_oracle():
    cfg = TrainConfig(peak_lr=3e-5, total_steps=200, warmup_frac=0.10)
    ok = abs(lr_at_step(cfg, 20) - 3e-5) <= 1e-12
    ok &= abs(lr_at_step(cfg, 10) - 1.5e-5) <= 1e-12
    ok &= abs(lr_at_step(cfg, 110) - 1.5e-5) <= 1e-12
    ok &= abs(lr_at_step(cfg, 200)) <= 1e-12
    verdict(6, "warmup/decay schedule oracle", ok)


# 7 ------------------------------------------------------------------------

def test_acceptance_7_memorization():
    t0 = time.time()
    split = make_fewshot_split(DataConfig(), 16, 0, seed=7)
    cfg = ModelConfig()
    res = train(cfg, TrainConfig(total_steps=200, batch_size=8), split)
    m = eval_metrics(cfg, res.params, split.train)
    elapsed = time.time() - t0
    verdict(7, f"memorization to 100% train acc in 200 steps ({elapsed:.0f}s)",
            m["accuracy"] == 1.0 and elapsed < 300)


# 8 ------------------------------------------------------------------------

def test_acceptance_8_directional_fewshot_gain(capsys):
    seeds = [1, 2, 3, 4, 5]
    train_cfg = TrainConfig(total_steps=800, peak_lr=1e-3)
    means = {}
    per_seed = {}
    base = ModelConfig()
    # plain soft-prompt ablation: text-side prompts only, full attention,
    # single block (no fusion); the shared stage-2 prompt is kept so the
    # gap isolates modality prompts, masking, and fusion
    soft = dataclasses.replace(base, vp_len=0, lp_len=10,
                               block_count=1, restrict_stage1=False)
    for name, mcfg in (("mope-baf", base), ("soft-prompt", soft)):
        accs = []
        for seed in seeds:
            split = make_fewshot_split(DataConfig(data_seed=seed), 16, 512,
                                       seed=seed)
            res = train(mcfg, train_cfg, split)
            accs.append(eval_metrics(mcfg, res.best_params, split.test)["accuracy"])
        means[name] = float(np.mean(accs))
        per_seed[name] = accs
    with capsys.disabled():
        for name in means:
            accs = ", ".join(f"{a:.3f}" for a in per_seed[name])
            sd = float(np.std(per_seed[name]))
            print(f"\n[{name}: {100*means[name]:.2f}({100*sd:.2f}) | {accs}]")
        verdict(8, "few-shot gain: mope-baf >= soft-prompt, both >= 60%",
                means["mope-baf"] >= means["soft-prompt"]
                and min(means.values()) >= 0.60)


# 9 ------------------------------------------------------------------------

def _group_norms(params):
    groups = {"prompts": 0.0, "vffn": 0.0, "lffn": 0.0, "vlffn": 0.0,
              "fuse": 0.0, "attn": 0.0, "embed": 0.0, "head": 0.0}
    for name, t in params.items():
        g = 0.0 if t.grad is None else float(np.linalg.norm(t.grad))
        if name in ("vp", "lp", "vlp"):
            groups["prompts"] += g
        elif ".vffn." in name:
            groups["vffn"] += g
        elif ".lffn." in name:
            groups["lffn"] += g
        elif ".vlffn." in name:
            groups["vlffn"] += g
        elif name.startswith("fuse."):
            groups["fuse"] += g
        elif ".w" in name or ".b" in name and not name.startswith("head"):
            groups["attn"] += g
        if name.startswith(("tok_emb", "patch_proj", "img_pos", "txt_pos")):
            groups["embed"] += g
        if name.startswith("head.cls"):
            groups["head"] += g
    return groups


def test_acceptance_9_gradient_flow_ledger():
    split = make_fewshot_split(DataConfig(), 4, 0, seed=2)
    ok = True
    for blocks, fuse_expected in ((2, True), (1, False)):
        cfg = dataclasses.replace(ModelConfig(), block_count=blocks)
        p = init_params(cfg)
        with GradTape() as tape:
            loss = batch_loss(cfg, p, split.train[:8])
            tape.backward(loss)
        g = _group_norms(p)
        for key in ("prompts", "vffn", "lffn", "vlffn", "attn", "embed", "head"):
            ok &= g[key] > 0.0
        ok &= (g["fuse"] > 0.0) == fuse_expected
    verdict(9, "on-path grads nonzero; fusion grads zero iff single block", ok)


# 10 -----------------------------------------------------------------------

def _brute_binary(preds, golds, pos):
    tp = sum(p == pos and g == pos for p, g in zip(preds, golds))
    fp = sum(p == pos and g != pos for p, g in zip(preds, golds))
    fn = sum(p != pos and g == pos for p, g in zip(preds, golds))
    P = Fraction(tp, tp + fp) if tp + fp else Fraction(0)
    R = Fraction(tp, tp + fn) if tp + fn else Fraction(0)
    F = 2 * P * R / (P + R) if P + R else Fraction(0)
    acc = Fraction(sum(p == g for p, g in zip(preds, golds)), len(golds))
    return acc, P, R, F


def test_acceptance_10_metric_oracles():
    rng = np.random.default_rng(10)
    ok = True
    for _ in range(100):
        n = int(rng.integers(1, 40))
        preds = list(rng.integers(0, 2, size=n))
        golds = list(rng.integers(0, 2, size=n))
        m = binary_metrics(preds, golds, positive_class=1)
        acc, P, R, F = _brute_binary(preds, golds, 1)
        ok &= m["accuracy"] == float(acc) and m["precision"] == float(P)
        ok &= m["recall"] == float(R) and abs(m["f1"] - F) <= 1e-15
        preds3 = list(rng.integers(0, 3, size=n))
        golds3 = list(rng.integers(0, 3, size=n))
        m3 = multiclass_metrics(preds3, golds3, 3)
        f1s, sups = [], []
        for c in range(3):
            _, _, _, f = _brute_binary(preds3, golds3, c)
            f1s.append(f)
            sups.append(sum(g == c for g in golds3))
        ok &= abs(m3["macro_f1"] - sum(f1s) / 3) <= 1e-15
        ok &= abs(m3["weighted_f1"]
                  - sum(f * s for f, s in zip(f1s, sups)) / n) <= 1e-15
    # worked examples, bit-exact
    m = binary_metrics([1, 1, 0, 1, 0, 0, 0, 0], [1, 1, 1, 0, 0, 0, 0, 0], 1)
    ok &= (m["accuracy"], m["precision"], m["recall"]) == (0.75, 2 / 3, 2 / 3)
    m3 = multiclass_metrics([0, 1, 1, 2], [0, 0, 1, 2], 3)
    ok &= m3["accuracy"] == 0.75 and m3["macro_f1"] == (2 / 3 + 2 / 3 + 1) / 3
    ok &= m3["weighted_f1"] == 0.75
    verdict(10, "metrics match brute-force confusion counts", ok)


# 11 -----------------------------------------------------------------------

def test_acceptance_11_reproducibility(tmp_path, capsys):
    ini = os.path.join(CONFIGS, "gradcheck.ini")
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    cli_main(["train", "--config", ini, "--out", a])
    cli_main(["train", "--config", ini, "--out", b])
    capsys.readouterr()
    ok = open(os.path.join(a, "trace.csv"), "rb").read() == \
        open(os.path.join(b, "trace.csv"), "rb").read()
    ok &= open(os.path.join(a, "best.ckpt"), "rb").read() == \
        open(os.path.join(b, "best.ckpt"), "rb").read()
    code = cli_main(["eval", os.path.join(a, "best.ckpt")])
    capsys.readouterr()
    ok &= code == 0
    with capsys.disabled():
        verdict(11, "bit-exact checkpoints and traces", ok)
