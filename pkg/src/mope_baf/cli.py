"""Command-line entry points: train, eval, gradcheck, ablate, dump-mask.

Exit codes: 0 success, 1 check/runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys

import numpy as np

from . import vocab
from .checkpoint import check_param_names, load_checkpoint, save_checkpoint
from .config import RunConfig, dump_run_config, load_run_config, parse_run_config
from .data import (FewShotSplit, apply_template, make_fewshot_split,
                   template_for)
from .errors import ConfigError, InputError, MopeBafError, NumericError
from .layout import build_layout, build_stage1_mask, build_stage2_mask
from .metrics import aggregate_runs
from .model import init_params
from .numerics import finite_diff_check
from .training import TrainResult, batch_loss, eval_metrics, train


def _templated_split(cfg: RunConfig, data_seed: int | None = None) -> FewShotSplit:
    seed = cfg.data.data_seed if data_seed is None else data_seed
    split = make_fewshot_split(cfg.data, cfg.run.shots_per_class,
                               cfg.run.test_size, seed)
    tmpl = template_for(cfg.run.template, cfg.data.task)
    if tmpl.has_mask:
        for part in (split.train, split.dev, split.test):
            part[:] = [apply_template(s, tmpl, cfg.data.max_text_len) for s in part]
    return split


def _verbalizer(cfg: RunConfig) -> dict[int, int]:
    return vocab.VERBALIZERS[cfg.data.task]


def run_training(cfg: RunConfig) -> tuple[TrainResult, FewShotSplit]:
    split = _templated_split(cfg)
    result = train(cfg.model, cfg.train, split, verbalizer=_verbalizer(cfg))
    return result, split


def _write_trace(path: str, trace: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["step", "lr", "train_loss",
                                                "dev_acc", "dev_f1"])
        writer.writeheader()
        writer.writerows(trace)


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    if args.seed is not None:
        cfg = RunConfig(model=dataclasses.replace(cfg.model, seed=args.seed),
                        train=dataclasses.replace(cfg.train, seed=args.seed),
                        data=cfg.data, run=cfg.run)
    out_dir = args.out or cfg.run.out_dir
    os.makedirs(out_dir, exist_ok=True)
    result, split = run_training(cfg)
    echo = dump_run_config(cfg)
    rng_info = {"data_seed": split.seed, "train_seed": cfg.train.seed,
                "model_seed": cfg.model.seed}
    save_checkpoint(os.path.join(out_dir, "best.ckpt"), echo,
                    result.best_params, rng_info=rng_info)
    save_checkpoint(os.path.join(out_dir, "final.ckpt"), echo,
                    result.params, rng_info=rng_info)
    _write_trace(os.path.join(out_dir, "trace.csv"), result.trace)
    print(json.dumps({"best_step": result.best_step, "dev": result.best_dev}))
    return 0


def cmd_eval(args) -> int:
    config_text, params, _, rng_info = load_checkpoint(args.checkpoint)
    cfg = parse_run_config(config_text)
    check_param_names(params, init_params(cfg.model), args.checkpoint)
    if args.seeds:
        seeds = [int(s) for s in args.seeds.split(",")]
    else:
        base = int(rng_info.get("data_seed", cfg.data.data_seed))
        seeds = [base + i for i in range(args.runs)]
    runs = []
    for seed in seeds:
        split = _templated_split(cfg, data_seed=seed)
        part = split.dev if args.split == "dev" else split.test
        m = eval_metrics(cfg.model, params, part, _verbalizer(cfg))
        runs.append({k: v for k, v in m.items() if k != "select_f1"})
    if len(runs) == 1:
        print(json.dumps(runs[0]))
    else:
        agg = aggregate_runs(runs)
        print(json.dumps({k: {"mean": mu, "sd": sd} for k, (mu, sd) in agg.items()}))
    return 0


def cmd_gradcheck(args) -> int:
    cfg = load_run_config(args.config)
    m = cfg.model
    if m.hidden_dim > 16 or m.stage1_layers + m.stage2_layers > 4:
        raise ConfigError(
            "gradcheck requires hidden_dim <= 16 and at most 4 layers "
            f"(got d={m.hidden_dim}, layers={m.stage1_layers + m.stage2_layers})")
    split = _templated_split(cfg)
    batch = split.train[:2]
    params = init_params(m)
    verb = _verbalizer(cfg)
    result = finite_diff_check(lambda: batch_loss(m, params, batch, verb),
                               params, h=args.h)
    report = {"max_rel_error": result.max_rel_error,
              "worst_param": result.worst_param,
              "worst_index": result.worst_index,
              "tolerance": args.tolerance}
    print(json.dumps(report))
    return 0 if result.max_rel_error <= args.tolerance else 1


_AXES = ("prompt_length", "block_count", "shots")


def cmd_ablate(args) -> int:
    base = load_run_config(args.config)
    values = [int(v) for v in args.values.split(",")]
    rows = []
    for value in values:
        per_seed = []
        for r in range(args.runs):
            cfg = base
            model = dataclasses.replace(cfg.model, seed=cfg.model.seed + r)
            run = cfg.run
            if args.axis == "prompt_length":
                model = dataclasses.replace(model, vp_len=value, lp_len=value,
                                            vlp_len=value)
            elif args.axis == "block_count":
                model = dataclasses.replace(model, block_count=value)
            elif args.axis == "shots":
                run = dataclasses.replace(run, shots_per_class=value)
            cfg = RunConfig(model=model,
                            train=dataclasses.replace(cfg.train,
                                                      seed=cfg.train.seed + r),
                            data=dataclasses.replace(cfg.data,
                                                     data_seed=cfg.data.data_seed + r),
                            run=run)
            try:
                result, split = run_training(cfg)
                m = eval_metrics(cfg.model, result.best_params, split.test,
                                 _verbalizer(cfg))
                per_seed.append(m["select_f1"])
            except MopeBafError as exc:
                print(f"# run failed ({args.axis}={value}, rep {r}): {exc}",
                      file=sys.stderr)
        if per_seed:
            mu = sum(per_seed) / len(per_seed)
            sd = (sum((v - mu) ** 2 for v in per_seed) / len(per_seed)) ** 0.5
        else:
            mu = sd = float("nan")
        rows.append((value, mu, sd))
    out = sys.stdout if not args.out else open(args.out, "w", newline="")
    try:
        writer = csv.writer(out)
        writer.writerow(["value", "mean_f1", "sd"])
        for value, mu, sd in rows:
            writer.writerow([value, f"{mu:.6f}", f"{sd:.6f}"])
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_dump_mask(args) -> int:
    if args.stage == 2:
        mask = build_stage2_mask(args.vlp, args.patches, args.text)
        labels = (["VLP"] * args.vlp + ["IMG"] * args.patches + ["TXT"] * args.text)
    else:
        layout = build_layout(args.vp, args.lp, args.patches, args.text)
        mask = build_stage1_mask(layout)
        labels = (["VP"] * args.vp + ["LP"] * args.lp
                  + ["IMG"] * args.patches + ["TXT"] * args.text)
    width = max(len(l) for l in labels) if labels else 3
    print(" " * (width + 1) + " ".join(f"{l:>{width}}" for l in labels))
    for label, row in zip(labels, mask):
        cells = " ".join(f"{int(v):>{width}}" for v in row)
        print(f"{label:>{width}} {cells}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mope-baf",
        description="Two-stage mixture-of-modality-experts transformer with "
                    "prompt experts and block-aware prompt fusion.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train from a config file")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--out", default=None)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("checkpoint")
    p_eval.add_argument("--runs", type=int, default=1)
    p_eval.add_argument("--seeds", default=None,
                        help="comma-separated data seeds (overrides --runs)")
    p_eval.add_argument("--split", choices=("test", "dev"), default="test")
    p_eval.set_defaults(func=cmd_eval)

    p_gc = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p_gc.add_argument("--config", required=True)
    p_gc.add_argument("--h", type=float, default=1e-4)
    p_gc.add_argument("--tolerance", type=float, default=1e-4)
    p_gc.set_defaults(func=cmd_gradcheck)

    p_ab = sub.add_parser("ablate", help="sweep one axis, emit CSV of mean F1")
    p_ab.add_argument("--config", required=True)
    p_ab.add_argument("--axis", choices=_AXES, required=True)
    p_ab.add_argument("--values", required=True, help="comma-separated ints")
    p_ab.add_argument("--runs", type=int, default=1)
    p_ab.add_argument("--out", default=None)
    p_ab.set_defaults(func=cmd_ablate)

    p_dm = sub.add_parser("dump-mask", help="print an attention mask as a 0/1 grid")
    p_dm.add_argument("--vp", type=int, default=1)
    p_dm.add_argument("--lp", type=int, default=1)
    p_dm.add_argument("--vlp", type=int, default=1)
    p_dm.add_argument("--patches", type=int, default=1)
    p_dm.add_argument("--text", type=int, default=1)
    p_dm.add_argument("--stage", type=int, choices=(1, 2), default=1)
    p_dm.set_defaults(func=cmd_dump_mask)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
