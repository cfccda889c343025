"""Loss, decoupled AdamW, the warmup/decay schedule, and the training loop."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import metrics as M
from . import numerics as nx
from .data import FewShotSplit, Sample
from .errors import InputError, NumericError
from .model import ModelConfig, batch_arrays, class_logits_batch, init_params, predict_batch
from .numerics import GradTape, Tensor


@dataclass
class TrainConfig:
    peak_lr: float = 1e-3          # desk default; 3e-5 at paper scale
    betas: tuple[float, float] = (0.9, 0.998)
    weight_decay: float = 0.01
    total_steps: int = 200
    warmup_frac: float = 0.10
    batch_size: int = 8
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.warmup_frac < 1.0:
            raise InputError("warmup_frac must be in (0, 1)")
        if self.total_steps < 1 or self.batch_size < 1:
            raise InputError("total_steps and batch_size must be positive")


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def lr_at_step(cfg: TrainConfig, step: int) -> float:
    """Linear warmup to the peak, then linear decay to zero at the last step."""
    if not 1 <= step <= cfg.total_steps:
        raise InputError(f"step {step} outside [1, {cfg.total_steps}]")
    warmup = int(round(cfg.warmup_frac * cfg.total_steps))
    if step <= warmup:
        return cfg.peak_lr * step / warmup
    return cfg.peak_lr * (cfg.total_steps - step) / (cfg.total_steps - warmup)


def _decayed(name: str) -> bool:
    # no decay on biases and layer-norm parameters
    return name.rsplit(".", 1)[-1] not in ("b", "g", "b1", "b2", "bq", "bk", "bv", "bo")


def adamw_step(params: dict[str, Tensor], state: OptimizerState,
               cfg: TrainConfig, step: int) -> None:
    """Decoupled AdamW update in place, reading gradients off the tensors."""
    lr = lr_at_step(cfg, step)
    b1, b2 = cfg.betas
    state.step = step
    bc1 = 1.0 - b1 ** step
    bc2 = 1.0 - b2 ** step
    for name, t in params.items():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        update = m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        if _decayed(name):
            update = update + cfg.weight_decay * t.data
        t.data -= lr * update


@dataclass
class TrainResult:
    params: dict[str, Tensor]
    best_params: dict[str, Tensor]
    best_step: int
    best_dev: dict[str, float]
    trace: list[dict]


def batch_loss(model_cfg: ModelConfig, params: dict[str, Tensor],
               samples: list[Sample],
               verbalizer: dict[int, int] | None = None) -> Tensor:
    patches, tokens, labels, mask_index = batch_arrays(samples)
    logits = class_logits_batch(model_cfg, params, patches, tokens,
                                mask_index, verbalizer)
    return nx.cross_entropy(logits, labels)


def eval_metrics(model_cfg: ModelConfig, params: dict[str, Tensor],
                 samples: list[Sample],
                 verbalizer: dict[int, int] | None = None) -> dict[str, float]:
    preds = predict_batch(model_cfg, params, samples, verbalizer)
    golds = [s.label for s in samples]
    if model_cfg.n_classes == 2:
        out = M.binary_metrics(list(preds), golds, positive_class=1)
        out["select_f1"] = out["f1"]
    else:
        out = M.multiclass_metrics(list(preds), golds, model_cfg.n_classes)
        out["select_f1"] = out["macro_f1"]
    return out


def _snapshot(params: dict[str, Tensor]) -> dict[str, Tensor]:
    return {k: Tensor(t.data.copy(), requires_grad=True) for k, t in params.items()}


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, split: FewShotSplit,
          verbalizer: dict[int, int] | None = None,
          params: dict[str, Tensor] | None = None) -> TrainResult:
    """Seed-deterministic loop; checkpoints the best dev F1 (ties -> earlier)."""
    if not split.train:
        raise InputError("empty training split")
    if params is None:
        params = init_params(model_cfg)
    state = OptimizerState()
    rng = np.random.default_rng(train_cfg.seed)

    best_params = _snapshot(params)
    best_f1 = -1.0
    best_step = 0
    best_dev: dict[str, float] = {}
    trace: list[dict] = []

    step = 0
    order: list[int] = []
    while step < train_cfg.total_steps:
        order = list(rng.permutation(len(split.train)))
        epoch_batches = [order[i:i + train_cfg.batch_size]
                         for i in range(0, len(order), train_cfg.batch_size)]
        for batch_idx in epoch_batches:
            if step >= train_cfg.total_steps:
                break
            step += 1
            batch = [split.train[i] for i in batch_idx]
            nx.zero_grads(params)
            with GradTape() as tape:
                loss = batch_loss(model_cfg, params, batch, verbalizer)
            if not np.isfinite(loss.data):
                raise NumericError(f"training diverged at step {step}")
            tape.backward(loss)
            adamw_step(params, state, train_cfg, step)
            trace.append({"step": step, "lr": lr_at_step(train_cfg, step),
                          "train_loss": float(loss.data),
                          "dev_acc": "", "dev_f1": ""})
        # dev evaluation once per epoch (and after the final step)
        if split.dev:
            dev = eval_metrics(model_cfg, params, split.dev, verbalizer)
            trace[-1]["dev_acc"] = dev["accuracy"]
            trace[-1]["dev_f1"] = dev["select_f1"]
            if dev["select_f1"] > best_f1:
                best_f1 = dev["select_f1"]
                best_params = _snapshot(params)
                best_step = step
                best_dev = copy.deepcopy(dev)
    return TrainResult(params=params, best_params=best_params,
                       best_step=best_step, best_dev=best_dev, trace=trace)
