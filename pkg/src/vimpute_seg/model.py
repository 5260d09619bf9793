"""Segmentation networks: plain U-Net baseline and the variational-imputation variant.

Both share the same U-Net trunk: a stem at the input resolution followed by
four downsampling stages (factors 4, 4, 2, 2) that double the feature count,
and a mirrored decoder with skip connections. The proposed variant adds a
second encoder of the same stage structure whose bottleneck is flattened and
passed through a chain of 1-D convolutions to predict the mean and
log-variance of an axis-aligned Gaussian over an 8-dimensional latent code.
A latent sample is broadcast over the bottleneck grid, concatenated
channelwise with the trunk bottleneck, and decoded by the (single, shared)
decoder into a per-pixel foreground probability.

The training objective is binary cross entropy between predicted and target
masks plus, for the proposed variant, the closed-form KL divergence between
the predicted latent Gaussian and a standard normal prior (unit weight).
"""

from __future__ import annotations

import math
import pickle
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

LOGVAR_CLAMP = 10.0
BCE_EPS = 1e-7


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "proposed"            # "baseline" | "proposed"
    base_features: int | None = None     # defaults: 24 baseline, 16 proposed
    kernel_size: int = 3
    n_resolutions: int = 4
    down_factors: tuple[int, ...] = (4, 4, 2, 2)
    latent_dim: int = 8
    n_1d_conv_layers: int = 4

    def __post_init__(self):
        if self.variant not in ("baseline", "proposed"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.base_features is None:
            object.__setattr__(
                self, "base_features", 24 if self.variant == "baseline" else 16
            )
        if len(self.down_factors) != self.n_resolutions:
            raise ValueError("len(down_factors) must equal n_resolutions")
        if min(self.base_features, self.latent_dim, self.kernel_size) <= 0:
            raise ValueError("base_features, latent_dim, kernel_size must be positive")
        if self.n_1d_conv_layers < 2:
            raise ValueError("need at least 2 1-D conv layers for the latent head")

    @property
    def total_down(self) -> int:
        return math.prod(self.down_factors)


@dataclass
class ForwardOutput:
    soft_mask: torch.Tensor              # (B, H, W), values strictly in (0, 1)
    mu: torch.Tensor | None = None       # (B, latent_dim)
    logvar: torch.Tensor | None = None   # (B, latent_dim)
    z: torch.Tensor | None = None        # (B, latent_dim)


def _norm(ch: int) -> nn.GroupNorm:
    return nn.GroupNorm(math.gcd(8, ch), ch)


class DoubleConv(nn.Module):
    """Two conv-norm-SiLU blocks. SiLU keeps the loss smooth for gradient checks."""

    def __init__(self, in_ch, out_ch, k):
        super().__init__()
        p = k // 2
        self.block = nn.Sequential(
            nn.Conv2d(in_ch, out_ch, k, padding=p), _norm(out_ch), nn.SiLU(),
            nn.Conv2d(out_ch, out_ch, k, padding=p), _norm(out_ch), nn.SiLU(),
        )

    def forward(self, x):
        return self.block(x)


class Encoder(nn.Module):
    """Stem plus one (avg-pool, double-conv) stage per downsampling factor."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        b, k = cfg.base_features, cfg.kernel_size
        self.stem = DoubleConv(1, b, k)
        self.stages = nn.ModuleList()
        ch = b
        for f in cfg.down_factors:
            self.stages.append(
                nn.Sequential(nn.AvgPool2d(f), DoubleConv(ch, 2 * ch, k))
            )
            ch *= 2
        self.out_channels = ch

    def forward(self, x):
        feats = [self.stem(x)]
        for stage in self.stages:
            feats.append(stage(feats[-1]))
        return feats[-1], feats[:-1]   # bottleneck, skip features


class LatentHead(nn.Module):
    """Flatten the bottleneck grid into a sequence and reduce with 1-D convolutions."""

    def __init__(self, in_ch, latent_dim, n_layers):
        super().__init__()
        outs = [in_ch] + [max(in_ch // 2**i, 2 * latent_dim) for i in range(1, n_layers - 1)]
        outs.append(2 * latent_dim)
        layers: list[nn.Module] = []
        ch = in_ch
        for i, out in enumerate(outs):
            layers.append(nn.Conv1d(ch, out, kernel_size=3, padding=1))
            if i < len(outs) - 1:
                layers += [_norm(out), nn.SiLU()]
            ch = out
        self.net = nn.Sequential(*layers)
        self.latent_dim = latent_dim

    def forward(self, h):
        seq = h.flatten(2)                      # (B, C, H'*W')
        stats = self.net(seq).mean(dim=2)       # (B, 2*latent_dim)
        mu, logvar = stats.chunk(2, dim=1)
        return mu, logvar.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP)


class VariationalEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.trunk = Encoder(cfg)
        self.head = LatentHead(self.trunk.out_channels, cfg.latent_dim, cfg.n_1d_conv_layers)

    def forward(self, x):
        h, _ = self.trunk(x)
        return self.head(h)


class Decoder(nn.Module):
    """Mirrored upsampling path with skip concatenation and a sigmoid-ready 1x1 head."""

    def __init__(self, cfg: ModelConfig, in_channels):
        super().__init__()
        b, k = cfg.base_features, cfg.kernel_size
        skip_chs = [b * 2**i for i in range(len(cfg.down_factors))]   # stem .. last skip
        self.ups = nn.ModuleList()
        self.convs = nn.ModuleList()
        ch = in_channels
        for f, skip in zip(reversed(cfg.down_factors), reversed(skip_chs)):
            self.ups.append(
                nn.Sequential(
                    nn.Upsample(scale_factor=f, mode="bilinear", align_corners=False),
                    nn.Conv2d(ch, skip, kernel_size=1),
                )
            )
            self.convs.append(DoubleConv(2 * skip, skip, k))
            ch = skip
        self.head = nn.Conv2d(ch, 1, kernel_size=1)

    def forward(self, code, skips):
        x = code
        for up, conv, skip in zip(self.ups, self.convs, reversed(skips)):
            x = conv(torch.cat([up(x), skip], dim=1))
        return self.head(x)


class SegmentationModel(nn.Module):
    """Parameters partition into seg_encoder / var_encoder / decoder submodules."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.seg_encoder = Encoder(cfg)
        bottleneck_ch = self.seg_encoder.out_channels
        if cfg.variant == "proposed":
            self.var_encoder = VariationalEncoder(cfg)
            self.decoder = Decoder(cfg, bottleneck_ch + cfg.latent_dim)
        else:
            self.var_encoder = None
            self.decoder = Decoder(cfg, bottleneck_ch)

    def forward(self, x, sample=False, eps=None, generator=None) -> ForwardOutput:
        if x.ndim != 4 or x.shape[1] != 1:
            raise ValueError(f"expected input of shape (B, 1, H, W), got {tuple(x.shape)}")
        d = self.cfg.total_down
        if x.shape[2] % d or x.shape[3] % d or x.shape[2] < d or x.shape[3] < d:
            raise ValueError(
                f"input resolution {tuple(x.shape[2:])} not divisible by the "
                f"total downsampling factor {d}"
            )
        h, skips = self.seg_encoder(x)
        mu = logvar = z = None
        if self.var_encoder is not None:
            mu, logvar = self.var_encoder(x)
            if sample:
                if eps is None:
                    eps = torch.randn(mu.shape, generator=generator, dtype=mu.dtype,
                                      device=mu.device)
                z = mu + torch.exp(0.5 * logvar) * eps
            else:
                z = mu
            zmap = z[:, :, None, None].expand(-1, -1, h.shape[2], h.shape[3])
            h = torch.cat([h, zmap], dim=1)
        logits = self.decoder(h, skips)
        soft = torch.sigmoid(logits).clamp(1e-6, 1.0 - 1e-6).squeeze(1)
        return ForwardOutput(soft_mask=soft, mu=mu, logvar=logvar, z=z)


def build(cfg: ModelConfig, seed: int) -> SegmentationModel:
    """Assemble a model with deterministic initialization."""
    torch.manual_seed(seed)
    return SegmentationModel(cfg)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def parameter_groups(model: SegmentationModel) -> dict[str, list[str]]:
    """Map each parameter name to exactly one of the theta/phi/psi groups."""
    groups: dict[str, list[str]] = {"seg_encoder": [], "var_encoder": [], "decoder": []}
    for name, _ in model.named_parameters():
        top = name.split(".", 1)[0]
        if top not in groups:
            raise ValueError(f"parameter {name} outside the three groups")
        groups[top].append(name)
    return groups


def _as_tensor(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(np.asarray(x))


def kl_divergence(mu, logvar) -> torch.Tensor:
    """KL(N(mu, exp(logvar)) || N(0, I)) summed over latent dimensions.

    For batched (B, L) inputs returns a (B,) vector.
    """
    mu, logvar = _as_tensor(mu), _as_tensor(logvar)
    if not (torch.isfinite(mu).all() and torch.isfinite(logvar).all()):
        raise ValueError("non-finite latent statistics")
    return -0.5 * torch.sum(1.0 + logvar - mu**2 - torch.exp(logvar), dim=-1)


def reconstruction_loss(pred, target) -> torch.Tensor:
    """Pixel-mean binary cross entropy, clamped away from {0, 1} by BCE_EPS."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {tuple(pred.shape)} vs target {tuple(target.shape)}")
    p = pred.double().clamp(BCE_EPS, 1.0 - BCE_EPS)
    t = target.double()
    return -(t * torch.log(p) + (1.0 - t) * torch.log1p(-p)).mean()


def loss(out: ForwardOutput, target, variant: str | None = None) -> torch.Tensor:
    """Total objective: BCE for the baseline, BCE + KL for the proposed variant."""
    if variant == "proposed" and out.mu is None:
        raise ValueError("proposed variant requires latent statistics in the forward output")
    rec = reconstruction_loss(out.soft_mask, target)
    if out.mu is None:
        return rec
    return rec + kl_divergence(out.mu, out.logvar).mean().double()


def predict_soft(model: SegmentationModel, images: np.ndarray) -> np.ndarray:
    """Eval-mode soft masks for a (B, H, W) or (H, W) float array. Deterministic (z = mu)."""
    arr = np.asarray(images, dtype=np.float32)
    single = arr.ndim == 2
    if single:
        arr = arr[None]
    with torch.no_grad():
        out = model(torch.from_numpy(arr)[:, None], sample=False)
    soft = out.soft_mask.numpy()
    return soft[0] if single else soft


def save_checkpoint(path, model: SegmentationModel, step: int = 0) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {"model_config": asdict(model.cfg), "state_dict": model.state_dict(), "step": step},
        path,
    )


def load_checkpoint(path) -> tuple[SegmentationModel, int]:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
        cfg_dict = dict(payload["model_config"])
        cfg_dict["down_factors"] = tuple(cfg_dict["down_factors"])
        cfg = ModelConfig(**cfg_dict)
        model = SegmentationModel(cfg)
        model.load_state_dict(payload["state_dict"])
    except (KeyError, RuntimeError, EOFError, pickle.UnpicklingError) as exc:
        raise ValueError(f"corrupt or incompatible checkpoint {path}: {exc}") from exc
    model.eval()
    return model, int(payload.get("step", 0))
