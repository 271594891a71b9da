"""Low-rank adapters: trainable B*A deltas attached to frozen named weights.

The delta starts at zero (B = 0), so an adapted model is initially
indistinguishable from its base. The delta is scaled by alpha/r. Only
adapter matrices train; every base weight is frozen at injection time.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from fnmatch import fnmatch

import numpy as np

from . import autodiff as ad
from .archive import ArchiveError, load_archive, save_archive
from .autodiff import Tensor


class LoraConfigError(ValueError):
    """Invalid adapter configuration (bad rank, unmatched patterns, ...)."""


@dataclass
class LoraConfig:
    r: int = 4
    alpha: float = 16.0
    dropout: float = 0.05
    target_names: list[str] = field(default_factory=lambda: ["q_proj", "v_proj"])

    def __post_init__(self):
        if self.r < 1:
            raise LoraConfigError(f"rank must be >= 1, got {self.r}")
        if not 0.0 <= self.dropout < 1.0:
            raise LoraConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if not self.target_names:
            raise LoraConfigError("target_names must not be empty")

    def to_dict(self) -> dict:
        return asdict(self)


class LoraAdapter:
    """One frozen weight W0 (d x k) plus its trainable A (r x k), B (d x r)."""

    def __init__(self, name: str, weight: Tensor, config: LoraConfig, rng: np.random.Generator):
        d, k = weight.shape
        if config.r > min(d, k):
            raise LoraConfigError(f"rank {config.r} exceeds min dimension of {name} ({d}x{k})")
        self.name = name
        self.weight = weight
        self.r = config.r
        self.alpha = config.alpha
        self.dropout = config.dropout
        self.scaling = config.alpha / config.r
        self.A = Tensor(rng.normal(0.0, 1.0 / config.r, (config.r, k)).astype(np.float32),
                        requires_grad=True, name=name + ".lora_A")
        self.B = Tensor(np.zeros((d, config.r), dtype=np.float32),
                        requires_grad=True, name=name + ".lora_B")
        self.merged = False
        self._premerge_weight: np.ndarray | None = None

    @property
    def shape(self) -> tuple:
        return self.weight.shape

    def trainable_count(self) -> int:
        d, k = self.weight.shape
        return (d + k) * self.r

    def delta(self) -> np.ndarray:
        return self.scaling * (self.B.data @ self.A.data)

    def forward(self, x: Tensor, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        """x @ W0^T + (alpha/r) * dropout(x) @ A^T @ B^T."""
        base = ad.matmul(x, ad.transpose(self.weight))
        path = ad.dropout(x, self.dropout, rng, training) if training and self.dropout > 0 else x
        delta = ad.matmul(ad.matmul(path, ad.transpose(self.A)), ad.transpose(self.B))
        return ad.add(base, ad.scale(delta, self.scaling))

    def merge(self) -> Tensor:
        """Fold the delta into the base weight; returns the plain weight."""
        if self.merged:
            raise RuntimeError(f"adapter {self.name} already merged")
        self._premerge_weight = self.weight.data.copy()
        self.weight.data = self.weight.data + self.delta().astype(self.weight.data.dtype)
        self.merged = True
        return self.weight

    def unmerge(self) -> None:
        """Restore the exact pre-merge weight."""
        if not self.merged:
            raise RuntimeError(f"adapter {self.name} is not merged")
        self.weight.data = self._premerge_weight
        self._premerge_weight = None
        self.merged = False


def _matches(name: str, pattern: str) -> bool:
    return pattern in name or fnmatch(name, pattern)


def inject(model, config: LoraConfig):
    """Attach adapters to every 2-D weight matching a target pattern.

    All base weights (matched or not) are frozen; only adapters train.
    """
    rng = np.random.default_rng(model.config.seed + 7)
    matched_patterns = set()
    for name, param in model.named_parameters().items():
        param.requires_grad = False
        if param.data.ndim != 2:
            continue
        hits = [pat for pat in config.target_names if _matches(name, pat)]
        if hits:
            matched_patterns.update(hits)
            model.adapters[name] = LoraAdapter(name, param, config, rng)
    unmatched = [pat for pat in config.target_names if pat not in matched_patterns]
    if unmatched:
        raise LoraConfigError(f"target patterns matched no parameters: {unmatched}")
    model.lora_config = config
    return model


def adapter_parameters(model) -> list[Tensor]:
    """A/B tensors of every adapter, in stable injection order."""
    out = []
    for adapter in model.adapters.values():
        out.extend([adapter.A, adapter.B])
    return out


def trainable_param_count(model) -> int:
    """Sum of (d+k)*r over all adapters."""
    return sum(a.trainable_count() for a in model.adapters.values())


def merge_all(model):
    for adapter in model.adapters.values():
        adapter.merge()
    return model


def unmerge_all(model):
    for adapter in model.adapters.values():
        adapter.unmerge()
    return model


def save_adapters(model, path) -> None:
    if not model.adapters:
        raise LoraConfigError("model has no adapters to save")
    arrays = {}
    for name, adapter in model.adapters.items():
        arrays[name + ".lora_A"] = adapter.A.data
        arrays[name + ".lora_B"] = adapter.B.data
    meta = {
        "kind": "lora-adapters",
        "config": model.lora_config.to_dict(),
        "base_layout": model.config.attention_layout,
    }
    save_archive(path, arrays, meta=meta)


def load_adapters(model, path):
    """Load adapter weights onto a matching base model, injecting if needed."""
    arrays, meta = load_archive(path)
    if meta.get("kind") != "lora-adapters":
        raise ArchiveError(f"{path}: not an adapter checkpoint")
    if meta.get("base_layout") != model.config.attention_layout:
        raise ArchiveError(
            f"{path}: adapter checkpoint targets layout {meta.get('base_layout')!r}, "
            f"model uses {model.config.attention_layout!r}")
    config = LoraConfig(**meta["config"])
    if not model.adapters:
        inject(model, config)
    for name, adapter in model.adapters.items():
        try:
            a, b = arrays[name + ".lora_A"], arrays[name + ".lora_B"]
        except KeyError as exc:
            raise ArchiveError(f"{path}: missing adapter arrays for {name}") from exc
        if a.shape != adapter.A.shape or b.shape != adapter.B.shape:
            raise ArchiveError(f"{path}: adapter shape mismatch for {name}")
        adapter.A.data = a.astype(np.float32)
        adapter.B.data = b.astype(np.float32)
    return model
