"""Low-rank adapters on attention projections.

``inject`` freezes the base model, attaches A/B factor pairs to the target
projections and (by default) leaves the classifier head trainable; the
adapted forward is W x + (alpha/r) B(A x).  Because B starts at zero the
adapted model is exactly the base model at injection time.  ``merge``
folds the factors back into the frozen weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensorcore import Tensor
from .transformer import ModelParams

TARGET_PROJECTIONS = ("wq", "wk", "wv", "wo")


class LoraError(ValueError):
    pass


@dataclass
class LoraConfig:
    rank: int = 8
    alpha: float = 16.0
    targets: list = field(default_factory=lambda: ["wq", "wv"])
    train_head: bool = True

    def __post_init__(self):
        if self.rank < 1:
            raise LoraError("rank must be >= 1")
        if not self.targets:
            raise LoraError("targets must be non-empty")
        for t in self.targets:
            if t not in TARGET_PROJECTIONS:
                raise LoraError(f"unknown target projection: {t!r}")


@dataclass
class LoraReport:
    trainable: int
    total: int

    @property
    def reduction_percent(self) -> float:
        return round(100.0 * (self.total - self.trainable) / self.total, 2)


def inject(params: ModelParams, cfg: LoraConfig, seed: int = 0) -> ModelParams:
    """Return a copy of ``params`` with adapters attached and the base
    frozen.  A is uniform in [-1/sqrt(d_in), +1/sqrt(d_in)], B is zeros."""
    if params.lora_cfg is not None:
        raise LoraError("adapters already present")
    adapted = params.clone()
    rng = np.random.Generator(np.random.PCG64(seed))
    for t in adapted.tensors.values():
        t.requires_grad = False
    if cfg.train_head:
        for name in ("head.weight", "head.bias"):
            if name in adapted:
                adapted.tensors[name].requires_grad = True

    new_tensors: dict = {}
    for i in range(adapted.config.n_layers):
        for proj in cfg.targets:
            base = f"layers.{i}.attn.{proj}"
            if f"{base}.weight" not in adapted:
                raise LoraError(f"target projection not in model: {base}")
            d_in, d_out = adapted[f"{base}.weight"].shape
            bound = 1.0 / np.sqrt(d_in)
            a = rng.uniform(-bound, bound, size=(cfg.rank, d_in))
            new_tensors[f"{base}.lora_A"] = Tensor(a, requires_grad=True, name=f"{base}.lora_A")
            new_tensors[f"{base}.lora_B"] = Tensor(np.zeros((d_out, cfg.rank)),
                                                   requires_grad=True, name=f"{base}.lora_B")
    adapted.tensors.update(new_tensors)
    adapted.lora_cfg = cfg
    return adapted


def report(params: ModelParams) -> LoraReport:
    return LoraReport(trainable=params.count_parameters(trainable_only=True),
                      total=params.count_parameters())


def reduction_percent(total: int, trainable: int) -> float:
    """Display arithmetic shared with LoraReport: 100*(total-trainable)/total,
    rounded to 2 decimals."""
    return round(100.0 * (total - trainable) / total, 2)


def merge(params: ModelParams) -> ModelParams:
    """Fold adapters into their base weights: W' = W + (alpha/r) (B A)^T
    in the x @ W layout.  Returns a plain, fully trainable model."""
    if params.lora_cfg is None:
        raise LoraError("no adapters present")
    cfg = params.lora_cfg
    merged_tensors: dict = {}
    scaling = cfg.alpha / cfg.rank
    for name, t in params.tensors.items():
        if name.endswith(".lora_A") or name.endswith(".lora_B"):
            continue
        vals = t.values.copy()
        if name.endswith(".weight") and f"{name[:-len('.weight')]}.lora_A" in params:
            base = name[: -len(".weight")]
            a = params[f"{base}.lora_A"].values  # [r, d_in]
            b = params[f"{base}.lora_B"].values  # [d_out, r]
            vals = vals + scaling * (b @ a).T
        merged_tensors[name] = Tensor(vals, requires_grad=True, name=name)
    return ModelParams(params.config, merged_tensors, None)
