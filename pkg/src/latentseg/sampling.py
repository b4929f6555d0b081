"""Inference: one-step mask generation from pure noise plus the multi-step
variants used for the denoising-paradigm ablation, with postprocessing and
per-image timing.
"""

import time
import warnings
import zlib
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from . import codec as codec_mod
from .codec import Codec, IMAGE, LatentTensor
from .embedding import EDGE_LABEL, MASK_LABEL
from .schedule import NoisyLatent, Schedule, ddpm_step_to, one_step_denoise
from .unet import UNetModel

ONE_STEP = "one_step"
TWO_STEP_FIXED = "two_step_fixed"
N_STEP_DDPM = "n_step_ddpm"


def default_timesteps(n: int, T_train: int = 1000) -> list:
    """Evenly strided timesteps starting at T-1: n=2 gives [999, 499]."""
    stride = T_train // n
    return [T_train - 1 - k * stride for k in range(n)]


@dataclass
class SamplerConfig:
    paradigm: str = ONE_STEP
    timesteps: list = field(default_factory=lambda: [999])
    seed: int = 0
    binarize_threshold: float = 0.5

    def __post_init__(self):
        if self.paradigm not in (ONE_STEP, TWO_STEP_FIXED, N_STEP_DDPM):
            raise ValueError(f"unknown paradigm {self.paradigm!r}")
        ts = list(self.timesteps)
        if not ts or any(b >= a for a, b in zip(ts, ts[1:])):
            raise ValueError(f"timesteps must be nonempty and strictly decreasing: {ts}")
        if self.paradigm == ONE_STEP and len(ts) != 1:
            raise ValueError("one_step paradigm takes exactly one timestep")
        self.timesteps = ts


def postprocess(decoded: torch.Tensor) -> np.ndarray:
    """Average the decoded channels and clamp to [0, 1]; returns (1, H, W)."""
    arr = decoded.detach() if torch.is_tensor(decoded) else torch.as_tensor(decoded)
    return arr.mean(dim=0, keepdim=True).clamp(0.0, 1.0).cpu().numpy().astype(np.float32)


def _pad_to_multiple(image: torch.Tensor, multiple: int):
    h, w = image.shape[-2:]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return image, (h, w)
    return F.pad(image.unsqueeze(0), (0, pw, 0, ph), mode="reflect").squeeze(0), (h, w)


def seed_for_image(base_seed: int, image_id: str) -> int:
    """Stable per-image seed so results do not depend on processing order."""
    return (int(base_seed) * 1000003 + zlib.crc32(image_id.encode())) % 2**63


def sample(
    model: UNetModel,
    codec: Codec,
    schedule: Schedule,
    image,
    cfg: SamplerConfig,
    edge_stream: bool = True,
):
    """Generate a mask (and edge) map for one image.

    Encodes the image as the condition, starts both streams from seeded
    standard normal latents, and denoises: intermediate timesteps take a
    stochastic reverse step to the next listed timestep; the final timestep
    applies the single-step inversion to a clean latent. Returns
    (mask_map (1,H,W), edge_map or None, timing dict).
    """
    if not getattr(model, "trained", False):
        warnings.warn("sampling from an untrained denoiser")
    t0 = time.perf_counter()

    img = torch.as_tensor(np.asarray(image), dtype=torch.float32)
    if img.dim() != 3:
        raise ValueError(f"expected (3,H,W) image, got shape {tuple(img.shape)}")
    multiple = codec.config.downsample_factor * 2 ** (model.config.num_stages - 1)
    img, (orig_h, orig_w) = _pad_to_multiple(img, multiple)

    cond = codec_mod.encode(codec, img.unsqueeze(0), kind=IMAGE).values
    t_enc = time.perf_counter()

    gen = torch.Generator().manual_seed(int(cfg.seed))
    latent_shape = (1, cond.shape[1], cond.shape[2], cond.shape[3])
    m = torch.randn(latent_shape, generator=gen)
    if edge_stream:
        e = torch.randn(latent_shape, generator=gen)
        noisy = torch.cat([m, e], dim=0)
        labels = [MASK_LABEL, EDGE_LABEL]
        num_streams = 2
    else:
        noisy = m
        labels = [MASK_LABEL]
        num_streams = 1

    ts = cfg.timesteps
    model.eval()
    with torch.no_grad():
        x = noisy
        for i, t in enumerate(ts):
            eps_pred = model(x, cond, t, labels=labels, num_streams=num_streams)
            if i == len(ts) - 1:
                x = one_step_denoise(NoisyLatent(x, t), eps_pred, schedule)
            else:
                fresh = torch.randn(x.shape, generator=gen)
                x = ddpm_step_to(NoisyLatent(x, t), eps_pred, fresh, schedule, ts[i + 1]).values
    t_denoise = time.perf_counter()

    with torch.no_grad():
        decoded = codec_mod.decode(
            codec,
            LatentTensor(values=x, source_kind=IMAGE, scale_factor=codec.config.scale_factor),
        )
    mask_map = postprocess(decoded[0])[:, :orig_h, :orig_w]
    edge_map = postprocess(decoded[1])[:, :orig_h, :orig_w] if edge_stream else None
    t_end = time.perf_counter()

    timing = {
        "encode_ms": (t_enc - t0) * 1000.0,
        "denoise_ms": (t_denoise - t_enc) * 1000.0,
        "decode_ms": (t_end - t_denoise) * 1000.0,
        "total_ms": (t_end - t0) * 1000.0,
        "steps": len(ts),
    }
    return mask_map, edge_map, timing


def sampler_config_for(paradigm: str, T_train: int = 1000, seed: int = 0) -> SamplerConfig:
    if paradigm == ONE_STEP:
        return SamplerConfig(ONE_STEP, [T_train - 1], seed=seed)
    if paradigm == TWO_STEP_FIXED:
        return SamplerConfig(TWO_STEP_FIXED, default_timesteps(2, T_train), seed=seed)
    if isinstance(paradigm, int) or paradigm.isdigit():
        n = int(paradigm)
        kind = ONE_STEP if n == 1 else N_STEP_DDPM
        return SamplerConfig(kind, default_timesteps(n, T_train), seed=seed)
    raise ValueError(f"unknown paradigm {paradigm!r}")


def benchmark_paradigms(model, codec, schedule, samples, paradigms, seed: int = 0):
    """Metrics plus mean inference time per denoising paradigm.

    Returns one row per paradigm with the benchmark-table columns
    (f_max, e_measure, s_measure, mae, mean_time_ms).
    """
    from . import metrics as M

    rows = []
    for par in paradigms:
        cfg = sampler_config_for(par, schedule.T_train, seed)
        scores = {"f_max": [], "e_measure": [], "s_measure": [], "mae": []}
        times = []
        for s in samples:
            per_cfg = SamplerConfig(
                cfg.paradigm, cfg.timesteps, seed=seed_for_image(seed, s.id), binarize_threshold=cfg.binarize_threshold
            )
            mask_map, _, timing = sample(model, codec, schedule, s.image, per_cfg)
            times.append(timing["total_ms"])
            gt = s.mask[0]
            pred = mask_map[0]
            scores["f_max"].append(M.f_max(pred, gt))
            scores["e_measure"].append(M.e_measure(pred, gt))
            scores["s_measure"].append(M.s_measure(pred, gt))
            scores["mae"].append(M.mae(pred, gt))
        row = {"paradigm": str(par), "steps": len(cfg.timesteps)}
        row.update({k: float(np.mean(v)) for k, v in scores.items()})
        row["mean_time_ms"] = float(np.mean(times))
        rows.append(row)
    return rows
