"""Convolutional encoder/decoder pair mapping images and binary maps into a
compact latent space and back — the small stand-in for a pretrained VAE.

One codec serves all three input kinds (image, mask, edge); single-channel
maps are replicated across the input channels. Latents are bounded by a tanh
so they live on a diffusion-friendly scale. An identity configuration
(downsample 1, learned layers bypassed) is kept for exactness tests.
"""

import math
from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn as nn

from .checkpoint import load_checkpoint, save_checkpoint

IMAGE = "image"
MASK = "mask"
EDGE = "edge"
SOURCE_KINDS = (IMAGE, MASK, EDGE)


@dataclass(frozen=True)
class CodecConfig:
    downsample_factor: int = 4
    latent_channels: int = 4
    in_channels: int = 3
    base_channels: int = 16
    scale_factor: float = 1.0
    identity: bool = False

    def __post_init__(self):
        if self.scale_factor <= 0:
            raise ValueError("scale_factor must be > 0")
        f = self.downsample_factor
        if f < 1 or (f & (f - 1)) != 0:
            raise ValueError(f"downsample_factor must be a power of two, got {f}")
        if self.identity:
            if f != 1 or self.latent_channels != self.in_channels:
                raise ValueError(
                    "identity codec requires downsample 1 and latent = input channels"
                )


@dataclass(frozen=True)
class LatentTensor:
    """Latent-space array tagged with its origin kind and applied scale."""

    values: torch.Tensor
    source_kind: str
    scale_factor: float = 1.0

    def __post_init__(self):
        if self.source_kind not in SOURCE_KINDS:
            raise ValueError(f"unknown source kind {self.source_kind!r}")


class Codec(nn.Module):
    """Strided-conv encoder with a mirror decoder; pure functions over weights."""

    def __init__(self, config: CodecConfig = CodecConfig(), seed: int | None = None):
        super().__init__()
        self.config = config
        self.trained = False
        if seed is not None:
            torch.manual_seed(seed)

        if config.identity:
            self.encoder = nn.Identity()
            self.decoder = nn.Identity()
            return

        stages = int(math.log2(config.downsample_factor))
        widths = [config.base_channels * (2**i) for i in range(stages + 1)]

        enc = [nn.Conv2d(config.in_channels, widths[0], 3, padding=1), nn.SiLU()]
        for i in range(stages):
            enc += [nn.Conv2d(widths[i], widths[i + 1], 4, stride=2, padding=1), nn.SiLU()]
        enc += [
            nn.Conv2d(widths[-1], widths[-1], 3, padding=1),
            nn.SiLU(),
            nn.Conv2d(widths[-1], config.latent_channels, 3, padding=1),
            nn.Tanh(),
        ]
        self.encoder = nn.Sequential(*enc)

        dec = [
            nn.Conv2d(config.latent_channels, widths[-1], 3, padding=1),
            nn.SiLU(),
            nn.Conv2d(widths[-1], widths[-1], 3, padding=1),
            nn.SiLU(),
        ]
        for i in reversed(range(stages)):
            dec += [
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv2d(widths[i + 1], widths[i], 3, padding=1),
                nn.SiLU(),
            ]
        dec += [nn.Conv2d(widths[0], config.in_channels, 3, padding=1)]
        # emits logits; decode() squashes them to [0, 1]
        self.decoder = nn.Sequential(*dec)


def _to_batched(x) -> tuple[torch.Tensor, bool]:
    t = torch.as_tensor(np.asarray(x), dtype=torch.float32) if not torch.is_tensor(x) else x
    if t.dim() == 3:
        return t.unsqueeze(0), True
    if t.dim() == 4:
        return t, False
    raise ValueError(f"expected (C,H,W) or (B,C,H,W), got shape {tuple(t.shape)}")


def encode(codec: Codec, x, kind: str = IMAGE) -> LatentTensor:
    """Map an input in [0,1] to the latent space, applying the scale factor.

    Single-channel maps are replicated to the codec's input channel count.
    Spatial dims must be divisible by the downsample factor.
    """
    cfg = codec.config
    t, squeeze = _to_batched(x)
    if t.shape[1] == 1 and cfg.in_channels > 1:
        t = t.expand(-1, cfg.in_channels, -1, -1)
    if t.shape[1] != cfg.in_channels:
        raise ValueError(f"expected {cfg.in_channels} channels, got {t.shape[1]}")
    h, w = t.shape[-2:]
    f = cfg.downsample_factor
    if h % f or w % f:
        raise ValueError(
            f"spatial dims {(h, w)} not divisible by downsample factor {f}; pad the input"
        )
    with torch.no_grad():
        z = codec.encoder(t) * cfg.scale_factor
    if squeeze:
        z = z.squeeze(0)
    return LatentTensor(values=z, source_kind=kind, scale_factor=cfg.scale_factor)


def decode(codec: Codec, z: LatentTensor) -> torch.Tensor:
    """Map a latent back to input space, inverting the scale factor first."""
    cfg = codec.config
    t, squeeze = _to_batched(z.values)
    if t.shape[1] != cfg.latent_channels:
        raise ValueError(f"expected {cfg.latent_channels} latent channels, got {t.shape[1]}")
    with torch.no_grad():
        out = codec.decoder(t / z.scale_factor)
        if not cfg.identity:
            out = torch.sigmoid(out)
    return out.squeeze(0) if squeeze else out


@dataclass
class CodecTrainConfig:
    epochs: int = 20
    batch_size: int = 16
    learning_rate: float = 2e-3
    seed: int = 0
    target_mae: float = 0.005
    mask_repeats: int = 2  # oversample masks; their fidelity is what gets audited
    include_images: bool = True
    include_edges: bool = True


def _sample_tensors(samples, config: CodecTrainConfig):
    pool = []
    for s in samples:
        if config.include_images:
            pool.append(torch.as_tensor(s.image, dtype=torch.float32))
        pool.extend([torch.as_tensor(s.mask, dtype=torch.float32)] * config.mask_repeats)
        if config.include_edges:
            pool.append(torch.as_tensor(s.edge, dtype=torch.float32))
    return pool


def train_codec(samples, config: CodecTrainConfig = CodecTrainConfig(),
                codec_config: CodecConfig = CodecConfig(), holdout_masks=None):
    """Fit the autoencoder on image/mask/edge tensors with an L1 objective.

    Stops early once held-out mask MAE drops below config.target_mae (when a
    holdout set is given). Returns the frozen codec and a per-epoch log.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("train_codec: empty dataset")

    torch.manual_seed(config.seed)
    codec = Codec(codec_config)
    log = []
    if config.epochs == 0:
        codec.trained = False
        return codec, log

    pool = _sample_tensors(samples, config)
    in_ch = codec_config.in_channels
    pool = [t.expand(in_ch, -1, -1) if t.shape[0] == 1 else t for t in pool]
    data = torch.stack(pool)

    holdout = None
    if holdout_masks is not None:
        holdout = torch.stack(
            [torch.as_tensor(m, dtype=torch.float32).expand(in_ch, -1, -1) for m in holdout_masks]
        )

    bce = nn.BCEWithLogitsLoss()
    opt = torch.optim.Adam(codec.parameters(), lr=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    for epoch in range(config.epochs):
        order = rng.permutation(len(data))
        epoch_loss = 0.0
        nb = 0
        codec.train()
        for start in range(0, len(data), config.batch_size):
            batch = data[order[start : start + config.batch_size]]
            logits = codec.decoder(codec.encoder(batch))
            # BCE sharpens the near-binary targets; L1 keeps continuous content honest
            loss = bce(logits, batch) + 0.5 * torch.mean(
                torch.abs(torch.sigmoid(logits) - batch)
            )
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"codec training diverged at epoch {epoch}: loss={loss.item()}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += loss.item()
            nb += 1
        entry = {"epoch": epoch, "train_loss": epoch_loss / max(nb, 1)}
        if holdout is not None:
            codec.eval()
            with torch.no_grad():
                rec = torch.sigmoid(codec.decoder(codec.encoder(holdout)))
                entry["holdout_mae"] = torch.mean(torch.abs(rec - holdout)).item()
        log.append(entry)
        if holdout is not None and entry["holdout_mae"] <= config.target_mae:
            break

    codec.eval()
    codec.requires_grad_(False)
    codec.trained = True
    return codec, log


def reconstruction_report(codec: Codec, masks) -> dict:
    """Audit decode(encode(mask)) against each mask with the four usual columns."""
    from . import metrics as M

    rows = {"f_max": [], "e_measure": [], "s_measure": [], "mae": []}
    for m in masks:
        mask = np.asarray(m, dtype=np.float64)
        if mask.ndim == 3:
            mask = mask[0]
        z = encode(codec, torch.as_tensor(mask, dtype=torch.float32).unsqueeze(0), kind=MASK)
        rec = decode(codec, z)
        pred = rec.mean(dim=0).clamp(0, 1).numpy().astype(np.float64)
        rows["f_max"].append(M.f_max(pred, mask))
        rows["e_measure"].append(M.e_measure(pred, mask))
        rows["s_measure"].append(M.s_measure(pred, mask))
        rows["mae"].append(M.mae(pred, mask))
    report = {k: float(np.mean(v)) for k, v in rows.items()}
    report["count"] = len(masks)
    return report


def save_codec(codec: Codec, path):
    save_checkpoint(
        path, "codec", asdict(codec.config), codec.state_dict(), extra={"trained": codec.trained}
    )


def load_codec(path) -> Codec:
    payload = load_checkpoint(path, expect_kind="codec")
    codec = Codec(CodecConfig(**payload["config"]))
    codec.load_state_dict(payload["state_dict"])
    codec.trained = bool(payload.get("extra", {}).get("trained", False))
    codec.eval()
    codec.requires_grad_(False)
    return codec
