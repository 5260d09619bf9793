"""Training loop: Adam at a fixed learning rate, early stopping on validation loss.

"No improvement" means the validation loss failed to strictly beat the best
seen so far; hitting `patience` consecutive non-improving epochs stops the
run, and the returned model is the one with the minimum validation loss, not
the last.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .augment import AugmentConfig, apply as apply_augment
from .data_io import Dataset
from .model import ModelConfig, SegmentationModel, build, loss, save_checkpoint


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 12
    learning_rate: float = 1e-4
    max_epochs: int = 200
    patience: int = 20
    seed: int = 0
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if min(self.batch_size, self.max_epochs, self.patience) <= 0:
            raise ValueError("batch_size, max_epochs, patience must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")


@dataclass
class TrainState:
    epoch: int = 0
    best_val_loss: float = float("inf")
    best_epoch: int = 0
    epochs_since_improvement: int = 0
    history: list[tuple[float, float]] = field(default_factory=list)


def _to_batch(samples):
    imgs = np.stack([s.image for s in samples]).astype(np.float32)
    masks = np.stack([s.mask for s in samples]).astype(np.float32)
    return torch.from_numpy(imgs)[:, None], torch.from_numpy(masks)


def train_epoch(model, train_ds: Dataset, aug_cfg: AugmentConfig, train_cfg: TrainConfig,
                rng, optimizer=None, torch_gen=None):
    """One shuffled pass in batches of batch_size (final partial batch kept).

    Augmentation is applied per sample, from rng streams spawned off `rng`,
    before the forward pass. Returns the item-weighted mean training loss.
    """
    if len(train_ds) == 0:
        raise ValueError("empty training set")
    if optimizer is None:
        optimizer = torch.optim.Adam(model.parameters(), lr=train_cfg.learning_rate,
                                     betas=(0.9, 0.999), eps=1e-8)
    model.train()
    order = rng.permutation(len(train_ds.items))
    sample_seeds = rng.integers(0, 2**63 - 1, size=len(order))
    total, n_items = 0.0, 0
    for start in range(0, len(order), train_cfg.batch_size):
        idx = order[start : start + train_cfg.batch_size]
        batch = []
        for j, i in enumerate(idx):
            s = train_ds.items[i]
            img, mask = apply_augment(
                s.image, s.mask, aug_cfg, np.random.default_rng(int(sample_seeds[start + j]))
            )
            batch.append(type(s)(img, mask, s.id))
        xb, yb = _to_batch(batch)
        eps = None
        if model.var_encoder is not None:
            eps = torch.randn((len(idx), model.cfg.latent_dim), generator=torch_gen)
        optimizer.zero_grad()
        batch_loss = loss(model(xb, sample=True, eps=eps), yb, variant=model.cfg.variant)
        batch_loss.backward()
        optimizer.step()
        total += float(batch_loss.detach()) * len(idx)
        n_items += len(idx)
    return total / n_items


@torch.no_grad()
def validate(model, val_ds: Dataset, batch_size: int = 12) -> float:
    """Eval-mode (z = mu) mean loss over all items; no augmentation, no mutation."""
    if len(val_ds) == 0:
        raise ValueError("empty validation set")
    model.eval()
    total = 0.0
    items = val_ds.items
    for start in range(0, len(items), batch_size):
        xb, yb = _to_batch(items[start : start + batch_size])
        out = model(xb, sample=False)
        total += float(loss(out, yb, variant=model.cfg.variant)) * len(xb)
    return total / len(items)


def fit(model_cfg: ModelConfig, train_cfg: TrainConfig, aug_cfg: AugmentConfig,
        train_ds: Dataset, val_ds: Dataset, validate_fn=None):
    """Full training run; returns (best model, TrainState).

    `validate_fn` (no-arg callable returning the epoch's validation loss)
    exists for tests that need a scripted validation sequence.

    Writes `history.csv`, `best.ckpt`, and `last.ckpt` into
    train_cfg.checkpoint_dir when set.
    """
    torch.manual_seed(train_cfg.seed)
    model = build(model_cfg, train_cfg.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=train_cfg.learning_rate,
                                 betas=(0.9, 0.999), eps=1e-8)
    rng = np.random.default_rng(train_cfg.seed)
    torch_gen = torch.Generator().manual_seed(train_cfg.seed + 1)

    out_dir = Path(train_cfg.checkpoint_dir) if train_cfg.checkpoint_dir else None
    history_f = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        history_f = open(out_dir / "history.csv", "w")
        history_f.write("epoch,train_loss,val_loss\n")

    state = TrainState()
    best_sd = None
    try:
        for epoch in range(1, train_cfg.max_epochs + 1):
            train_loss = train_epoch(model, train_ds, aug_cfg, train_cfg, rng,
                                     optimizer=optimizer, torch_gen=torch_gen)
            val_loss = validate_fn() if validate_fn is not None else validate(
                model, val_ds, train_cfg.batch_size
            )
            state.epoch = epoch
            state.history.append((train_loss, val_loss))
            if history_f is not None:
                history_f.write(f"{epoch},{train_loss!r},{val_loss!r}\n")
                history_f.flush()
            if val_loss < state.best_val_loss:
                state.best_val_loss = val_loss
                state.best_epoch = epoch
                state.epochs_since_improvement = 0
                best_sd = {k: v.detach().clone() for k, v in model.state_dict().items()}
            else:
                state.epochs_since_improvement += 1
            if state.epochs_since_improvement >= train_cfg.patience:
                break
    finally:
        if history_f is not None:
            history_f.close()

    if out_dir is not None:
        save_checkpoint(out_dir / "last.ckpt", model, step=state.epoch)
    best_model = build(model_cfg, train_cfg.seed)
    best_model.load_state_dict(best_sd)
    best_model.eval()
    if out_dir is not None:
        save_checkpoint(out_dir / "best.ckpt", best_model, step=state.best_epoch)
    return best_model, state
