"""Central finite-difference gradient checking for the segmentation loss."""

from __future__ import annotations

import numpy as np
import torch

from vimpute_seg.model import ModelConfig, build, loss

MINI_CFG = ModelConfig(variant="proposed", base_features=2, latent_dim=2,
                       down_factors=(2, 2, 2, 2))


def mini_problem(seed: int = 0, size: int = 32):
    """Double-precision miniature model plus one (x, s, eps) batch."""
    model = build(MINI_CFG, seed).double()
    rng = np.random.default_rng(seed)
    x = torch.tensor(rng.random((1, 1, size, size)), dtype=torch.float64)
    s = torch.tensor((rng.random((1, size, size)) > 0.5).astype(np.float64))
    eps = torch.tensor(rng.standard_normal((1, MINI_CFG.latent_dim)), dtype=torch.float64)
    return model, x, s, eps


def loss_value(model, x, s, eps) -> torch.Tensor:
    return loss(model(x, sample=True, eps=eps), s, variant=model.cfg.variant)


def check_gradients(n_coords_per_group: int, seed: int = 0, step: float = 1e-3):
    """Compare autograd gradients against central differences.

    Returns a list of (param_name, analytic, numeric, rel_err) tuples covering
    randomly chosen coordinates from each of the three parameter groups.
    """
    model, x, s, eps = mini_problem(seed)
    model.zero_grad()
    loss_value(model, x, s, eps).backward()

    rng = np.random.default_rng(seed + 1)
    results = []
    by_group = {"seg_encoder": [], "var_encoder": [], "decoder": []}
    for name, p in model.named_parameters():
        by_group[name.split(".", 1)[0]].append((name, p))

    for group, params in by_group.items():
        sizes = np.array([p.numel() for _, p in params])
        for _ in range(n_coords_per_group):
            k = int(rng.integers(sizes.sum()))
            pi = int(np.searchsorted(np.cumsum(sizes), k, side="right"))
            name, p = params[pi]
            flat_idx = k - int(np.concatenate([[0], np.cumsum(sizes)])[pi])
            analytic = float(p.grad.view(-1)[flat_idx])

            with torch.no_grad():
                orig = float(p.view(-1)[flat_idx])
                p.view(-1)[flat_idx] = orig + step
                plus = float(loss_value(model, x, s, eps))
                p.view(-1)[flat_idx] = orig - step
                minus = float(loss_value(model, x, s, eps))
                p.view(-1)[flat_idx] = orig
            numeric = (plus - minus) / (2.0 * step)
            denom = max(abs(analytic), abs(numeric), 1e-8)
            results.append((name, analytic, numeric, abs(analytic - numeric) / denom))
    return results
