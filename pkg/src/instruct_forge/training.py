"""Instruction tuning loop: batch assembly with response masking, loss,
and adapter-only optimizer steps. Also provides a full-parameter language
model pretraining helper for building toy base models.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .lora import save_adapters
from .prompts import PromptTemplate, render_prompt, template_for
from .tokenizer import ByteTokenizer, PAD

logger = logging.getLogger(__name__)

MASK_POLICIES = ("response-only", "full-sequence")


@dataclass
class TrainConfig:
    learning_rate: float = 3e-4
    batch_size: int = 8
    epochs: int = 1
    train_seq_len: int = 256
    mask_policy: str = "response-only"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.train_seq_len < 1:
            raise ValueError("train_seq_len must be >= 1")
        if self.mask_policy not in MASK_POLICIES:
            raise ValueError(f"mask_policy must be one of {MASK_POLICIES}")


@dataclass
class TrainingBatch:
    tokens: np.ndarray          # [B, L] int64, PAD on the right
    targets: np.ndarray         # [B, L] next-token shift of the source rows
    loss_mask: np.ndarray       # [B, L] bool, False on prompt/padding per policy
    dropped: int = 0


class AdamW:
    """Adaptive moments with decoupled weight decay."""

    def __init__(self, params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            update = (self.m[i] / b1c) / (np.sqrt(self.v[i] / b2c) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data = p.data - self.lr * update
        self.zero_grad()

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def _encode_example(record, template, tokenizer, config):
    """Token row, target row, and mask row for one record, or None if dropped."""
    tpl = template if template is not None else template_for(record)
    full_text = render_prompt(record, tpl, include_response=True)
    prompt_text = render_prompt(record, tpl, include_response=False)
    full = [tokenizer.bos_id] + tokenizer.encode(full_text).ids + [tokenizer.eos_id]
    prompt_len = 1 + len(tokenizer.encode(prompt_text).ids)
    response_len = len(full) - prompt_len
    if response_len > config.train_seq_len:
        logger.warning("dropping record: response (%d tokens) exceeds train_seq_len %d",
                       response_len, config.train_seq_len)
        return None
    inputs = np.asarray(full[:-1], dtype=np.int64)
    targets = np.asarray(full[1:], dtype=np.int64)
    if config.mask_policy == "response-only":
        mask = np.arange(1, len(full)) >= prompt_len
    else:
        mask = np.ones(len(full) - 1, dtype=bool)
    # tail-keep truncation preserves the response span
    keep = min(len(inputs), config.train_seq_len)
    inputs, targets, mask = inputs[-keep:], targets[-keep:], mask[-keep:]
    if not mask.any():
        logger.warning("dropping record: no unmasked positions after truncation")
        return None
    return inputs, targets, mask


def build_batch(records, template, tokenizer, config: TrainConfig) -> TrainingBatch:
    """Render, encode, truncate (keeping the tail), pad, shift, and mask."""
    if not records:
        raise ValueError("build_batch requires at least one record")
    rows = []
    dropped = 0
    for record in records:
        row = _encode_example(record, template, tokenizer, config)
        if row is None:
            dropped += 1
        else:
            rows.append(row)
    if not rows:
        raise ValueError("every record in the batch was dropped")
    L = max(len(r[0]) for r in rows)
    B = len(rows)
    tokens = np.full((B, L), PAD, dtype=np.int64)
    targets = np.full((B, L), PAD, dtype=np.int64)
    mask = np.zeros((B, L), dtype=bool)
    for i, (inp, tgt, m) in enumerate(rows):
        tokens[i, : len(inp)] = inp
        targets[i, : len(tgt)] = tgt
        mask[i, : len(m)] = m
    return TrainingBatch(tokens=tokens, targets=targets, loss_mask=mask, dropped=dropped)


def train_step(model, batch: TrainingBatch, optimizer: AdamW) -> float:
    """One forward/backward/update over adapter parameters only."""
    if not model.adapters:
        raise ValueError("train_step requires a model with injected adapters")
    model.train_mode()
    logits = model.forward(batch.tokens)
    loss = ad.softmax_cross_entropy(logits, batch.targets, batch.loss_mask)
    loss.backward()
    optimizer.step()
    return loss.item()


def train(model, records, config: TrainConfig, template: PromptTemplate | None = None,
          tokenizer: ByteTokenizer | None = None, out_dir=None) -> list[dict]:
    """Epochs of shuffled mini-batches; one report dict per epoch.

    Writes an adapter checkpoint per epoch (and a JSONL report) when
    ``out_dir`` is given.
    """
    if not records:
        raise ValueError("train requires a non-empty dataset")
    if not model.adapters:
        raise ValueError("train requires a model with injected adapters")
    tokenizer = tokenizer or ByteTokenizer()
    model.rng = np.random.default_rng(config.seed + 13)
    optimizer = AdamW(_adapter_params(model), lr=config.learning_rate)
    report = []
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    for epoch in range(config.epochs):
        rng = np.random.default_rng(config.seed + epoch)
        order = rng.permutation(len(records))
        losses = []
        dropped = 0
        start = time.monotonic()
        for lo in range(0, len(records), config.batch_size):
            chunk = [records[i] for i in order[lo : lo + config.batch_size]]
            try:
                batch = build_batch(chunk, template, tokenizer, config)
            except ValueError:
                dropped += len(chunk)
                continue
            dropped += batch.dropped
            losses.append(train_step(model, batch, optimizer))
        entry = {
            "epoch": epoch,
            "mean_loss": float(np.mean(losses)) if losses else float("nan"),
            "steps": len(losses),
            "dropped": dropped,
            "seconds": time.monotonic() - start,
        }
        report.append(entry)
        if out_dir is not None:
            save_adapters(model, out_dir / f"adapters-epoch{epoch}.ifta")
            with open(out_dir / "train-report.jsonl", "a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry) + "\n")
    model.eval_mode()
    return report


def _adapter_params(model):
    out = []
    for adapter in model.adapters.values():
        out.extend([adapter.A, adapter.B])
    return out


def pretrain(model, texts, config: TrainConfig, tokenizer: ByteTokenizer | None = None) -> list[dict]:
    """Full-parameter next-token pretraining on plain texts.

    Used to build the toy base model before instruction tuning; packs the
    corpus into fixed-length windows and trains every model weight.
    """
    if not texts:
        raise ValueError("pretrain requires a non-empty corpus")
    tokenizer = tokenizer or ByteTokenizer()
    stream: list[int] = []
    for text in texts:
        stream.extend([tokenizer.bos_id] + tokenizer.encode(text).ids + [tokenizer.eos_id])
    L = config.train_seq_len
    windows = [stream[i : i + L + 1] for i in range(0, len(stream) - L, L)]
    if not windows:
        raise ValueError("corpus shorter than one training window")
    for p in model.params.values():
        p.requires_grad = True
    optimizer = AdamW(model.params.values(), lr=config.learning_rate)
    report = []
    model.train_mode()
    for epoch in range(config.epochs):
        rng = np.random.default_rng(config.seed + 101 + epoch)
        order = rng.permutation(len(windows))
        losses = []
        start = time.monotonic()
        for lo in range(0, len(windows), config.batch_size):
            rows = [windows[i] for i in order[lo : lo + config.batch_size]]
            W = min(len(r) for r in rows) - 1
            arr = np.asarray([r[: W + 1] for r in rows], dtype=np.int64)
            logits = model.forward(arr[:, :-1])
            loss = ad.softmax_cross_entropy(logits, arr[:, 1:])
            loss.backward()
            optimizer.step()
            losses.append(loss.item())
        report.append({
            "epoch": epoch,
            "mean_loss": float(np.mean(losses)),
            "dropped": 0,
            "seconds": time.monotonic() - start,
        })
    model.eval_mode()
    return report
