"""Training loop: fixed max-timestep noising of mask and edge latents, doubled
batch noise prediction, single-step reconstruction, and latent-space squared
error, plus the augmentation pipeline that keeps (image, mask, edge) triples
consistent.
"""

import copy
import json
import logging
import time
import warnings
from dataclasses import dataclass, field, asdict, replace

import numpy as np
import torch
import torchvision.transforms.functional as TF
from scipy import ndimage

from . import codec as codec_mod
from .codec import Codec, EDGE, IMAGE, MASK, LatentTensor
from .embedding import EDGE_LABEL, MASK_LABEL
from .schedule import NoisyLatent, Schedule, add_noise, one_step_denoise
from .unet import UNetModel, save_unet

logger = logging.getLogger(__name__)

ONE_STEP = "one_step"
TWO_STEP_FIXED = "two_step_fixed"
RANDOM_T_ONEOF = "random_t_oneof"
RANDOM_T_FULL = "random_t_full"
PARADIGMS = (ONE_STEP, TWO_STEP_FIXED, RANDOM_T_ONEOF, RANDOM_T_FULL)

FIXED_TWO_STEPS = (999, 499)


@dataclass
class Sample:
    """One dataset item: RGB image, binary mask, and its derived edge map."""

    image: np.ndarray  # (3, H, W) float32 in [0, 1]
    mask: np.ndarray  # (1, H, W) float32 in {0, 1}
    edge: np.ndarray  # (1, H, W) float32 in [0, 1]
    id: str = ""

    def validate(self):
        if self.image.shape[1:] != self.mask.shape[1:] or self.mask.shape != self.edge.shape:
            raise ValueError(f"sample {self.id}: inconsistent shapes")
        vals = np.unique(self.mask)
        if not np.all(np.isin(vals, [0.0, 1.0])):
            raise ValueError(f"sample {self.id}: mask is not binary")
        return self


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 8
    epochs: int = 50
    lambda_edge: float = 1.0
    T_noise: int = 999
    shared_eps: bool = True
    paradigm: str = ONE_STEP
    use_edge_task: bool = True
    aug_flip: bool = True
    aug_crop: bool = True
    aug_rotate: bool = True
    aug_cutmix: bool = True
    seed: int = 0
    val_every: int = 5
    val_max_images: int = 32
    log_every: int = 10

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.paradigm not in PARADIGMS:
            raise ValueError(f"unknown paradigm {self.paradigm!r}")


def derive_edge(mask: np.ndarray, thickness: int = 1) -> np.ndarray:
    """Morphological gradient of a binary mask: dilation minus erosion with a
    square structuring element of size 2*thickness+1, zero-padded borders."""
    squeeze = mask.ndim == 3
    m = (mask[0] if squeeze else mask) > 0.5
    se = np.ones((2 * thickness + 1,) * 2, dtype=bool)
    dil = ndimage.binary_dilation(m, structure=se, border_value=0)
    ero = ndimage.binary_erosion(m, structure=se, border_value=0)
    edge = (dil & ~ero).astype(np.float32)
    return edge[None] if squeeze else edge


def cutmix(a: Sample, b: Sample, lam: float, rng: np.random.Generator) -> Sample:
    """Paste a rectangular region of area ratio (1 - lam) from b into a, across
    image, mask, and edge together; the edge map is re-derived afterward so it
    stays consistent with the merged mask."""
    if a.image.shape != b.image.shape:
        raise ValueError("cutmix requires equal shapes")
    if not 0.0 < lam < 1.0:
        raise ValueError(f"lam must be in (0,1), got {lam}")
    h, w = a.mask.shape[-2:]
    cut = np.sqrt(1.0 - lam)
    bh, bw = int(round(h * cut)), int(round(w * cut))
    if bh == 0 or bw == 0:
        return Sample(a.image.copy(), a.mask.copy(), a.edge.copy(), a.id)
    cy = int(rng.integers(0, h))
    cx = int(rng.integers(0, w))
    y0, y1 = np.clip([cy - bh // 2, cy + (bh + 1) // 2], 0, h)
    x0, x1 = np.clip([cx - bw // 2, cx + (bw + 1) // 2], 0, w)

    image = a.image.copy()
    mask = a.mask.copy()
    image[:, y0:y1, x0:x1] = b.image[:, y0:y1, x0:x1]
    mask[:, y0:y1, x0:x1] = b.mask[:, y0:y1, x0:x1]
    return Sample(image=image, mask=mask, edge=derive_edge(mask), id=a.id)


def _geometric_augment(s: Sample, rng: np.random.Generator, cfg: TrainConfig) -> Sample:
    image = torch.from_numpy(s.image.copy())
    mask = torch.from_numpy(s.mask.copy())

    if cfg.aug_flip and rng.random() < 0.5:
        image = TF.hflip(image)
        mask = TF.hflip(mask)

    if cfg.aug_rotate and rng.random() < 0.5:
        angle = float(rng.uniform(-30.0, 30.0))
        image = TF.rotate(image, angle, interpolation=TF.InterpolationMode.BILINEAR)
        mask = TF.rotate(mask, angle, interpolation=TF.InterpolationMode.NEAREST)

    if cfg.aug_crop and rng.random() < 0.5:
        h, w = s.mask.shape[-2:]
        area = float(rng.uniform(0.875, 1.0))
        ch, cw = max(1, int(round(h * np.sqrt(area)))), max(1, int(round(w * np.sqrt(area))))
        top = int(rng.integers(0, h - ch + 1))
        left = int(rng.integers(0, w - cw + 1))
        image = TF.resized_crop(
            image, top, left, ch, cw, [h, w], interpolation=TF.InterpolationMode.BILINEAR
        )
        mask = TF.resized_crop(
            mask, top, left, ch, cw, [h, w], interpolation=TF.InterpolationMode.NEAREST
        )

    mask_np = (mask.numpy() > 0.5).astype(np.float32)
    return Sample(
        image=image.clamp(0, 1).numpy(),
        mask=mask_np,
        edge=derive_edge(mask_np),
        id=s.id,
    )


def augment_batch(batch, rng: np.random.Generator, cfg: TrainConfig):
    """Geometric augmentations per sample, then CutMix between batch partners."""
    out = [_geometric_augment(s, rng, cfg) for s in batch]
    if cfg.aug_cutmix and len(out) > 1:
        for i in range(len(out)):
            if rng.random() < 0.5:
                j = int(rng.integers(0, len(out)))
                if j != i:
                    lam = float(rng.uniform(0.3, 0.9))
                    out[i] = cutmix(out[i], out[j], lam, rng)
    return out


def encode_batch(codec: Codec, batch) -> tuple:
    images = torch.stack([torch.from_numpy(np.ascontiguousarray(s.image)) for s in batch])
    masks = torch.stack([torch.from_numpy(np.ascontiguousarray(s.mask)) for s in batch])
    edges = torch.stack([torch.from_numpy(np.ascontiguousarray(s.edge)) for s in batch])
    cond = codec_mod.encode(codec, images, kind=IMAGE).values
    m = codec_mod.encode(codec, masks, kind=MASK).values
    e = codec_mod.encode(codec, edges, kind=EDGE).values
    return cond, m, e


def _pick_timesteps(cfg: TrainConfig, schedule: Schedule, rng: np.random.Generator):
    if cfg.paradigm == ONE_STEP:
        return [cfg.T_noise]
    if cfg.paradigm == TWO_STEP_FIXED:
        return list(FIXED_TWO_STEPS)
    if cfg.paradigm == RANDOM_T_ONEOF:
        return [int(rng.choice(FIXED_TWO_STEPS))]
    return [int(rng.integers(0, schedule.T_train))]


def train_step(
    batch,
    model: UNetModel,
    codec: Codec,
    schedule: Schedule,
    cfg: TrainConfig,
    optimizer: torch.optim.Optimizer,
    noise_gen: torch.Generator | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """One gradient step: noise at the paradigm's timestep(s), predict on the
    doubled batch, reconstruct the clean latents in a single step, and apply
    the squared-error objective (noise-space for the random-t paradigm)."""
    if not batch:
        raise ValueError("empty batch")
    rng = rng or np.random.default_rng(cfg.seed)
    cond, m, e = encode_batch(codec, batch)
    bsz = cond.shape[0]

    total = 0.0
    optimizer.zero_grad()
    for t in _pick_timesteps(cfg, schedule, rng):
        eps_m = torch.randn(m.shape, generator=noise_gen)
        m_t = add_noise(m, eps_m, t, schedule)
        if cfg.use_edge_task:
            eps_e = eps_m if cfg.shared_eps else torch.randn(e.shape, generator=noise_gen)
            e_t = add_noise(e, eps_e, t, schedule)
            noisy = torch.cat([m_t.values, e_t.values], dim=0)
            labels = [MASK_LABEL] * bsz + [EDGE_LABEL] * bsz
            eps_pred = model(noisy, cond, t, labels=labels, num_streams=2)
            eps_pred_m, eps_pred_e = eps_pred[:bsz], eps_pred[bsz:]
        else:
            labels = [MASK_LABEL] * bsz
            eps_pred_m = model(m_t.values, cond, t, labels=labels, num_streams=1)
            eps_pred_e = None

        if cfg.paradigm == RANDOM_T_FULL:
            # historical noise-prediction objective, kept for the multi-step row
            loss = torch.mean((eps_pred_m - eps_m) ** 2)
            if eps_pred_e is not None:
                loss = loss + cfg.lambda_edge * torch.mean((eps_pred_e - eps_e) ** 2)
        else:
            l_pred_m = one_step_denoise(NoisyLatent(m_t.values, t), eps_pred_m, schedule)
            loss = torch.mean((l_pred_m - m) ** 2)
            if eps_pred_e is not None:
                l_pred_e = one_step_denoise(NoisyLatent(e_t.values, t), eps_pred_e, schedule)
                loss = loss + cfg.lambda_edge * torch.mean((l_pred_e - e) ** 2)

        if not torch.isfinite(loss):
            raise RuntimeError(
                f"training diverged: loss={loss.item()} at t={t} "
                f"(lr={cfg.learning_rate}, batch={bsz})"
            )
        loss.backward()
        total += loss.item()

    optimizer.step()
    return total


def _validate(model, codec, schedule, val_samples, cfg: TrainConfig):
    from . import metrics as M
    from .sampling import SamplerConfig, sample

    subset = val_samples[: cfg.val_max_images]
    scfg = SamplerConfig(paradigm=ONE_STEP, timesteps=[cfg.T_noise], seed=cfg.seed)
    model.eval()
    scores = {"f_max": [], "mae": [], "s_measure": []}
    with torch.no_grad():
        for s in subset:
            mask_map, _, _ = sample(
                model, codec, schedule, s.image, scfg, edge_stream=cfg.use_edge_task
            )
            pred = mask_map[0]
            gt = s.mask[0]
            scores["f_max"].append(M.f_max(pred, gt))
            scores["mae"].append(M.mae(pred, gt))
            scores["s_measure"].append(M.s_measure(pred, gt))
    model.train()
    return {k: float(np.mean(v)) for k, v in scores.items()}


def train(
    train_samples,
    val_samples,
    model: UNetModel,
    codec: Codec,
    schedule: Schedule,
    cfg: TrainConfig,
    log_path=None,
    resume_state: dict | None = None,
):
    """Epoch loop with augmentation, periodic validation, and best-checkpoint
    tracking. Per-epoch RNG streams are derived from (seed, epoch) so a resume
    at an epoch boundary reproduces the uninterrupted trajectory.

    Returns (model, history); the model carries the final weights, history
    holds the step log, validation curve, and the best-by-validation weights.
    """
    train_samples = list(train_samples)
    if not train_samples:
        raise ValueError("train: empty dataset")
    if not codec.trained:
        warnings.warn("training against an untrained codec")

    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    start_epoch = 0
    global_step = 0
    history = {"steps": [], "val": [], "best": None, "wall_s": 0.0}
    if resume_state is not None:
        model.load_state_dict(resume_state["model"])
        optimizer.load_state_dict(resume_state["optimizer"])
        start_epoch = resume_state["epoch"] + 1
        global_step = resume_state.get("global_step", 0)

    log_file = open(log_path, "a") if log_path else None
    best = {"f_max": -1.0, "epoch": -1, "state": None}
    t_start = time.perf_counter()
    model.train()
    if cfg.epochs > start_epoch:
        model.trained = True
    try:
        for epoch in range(start_epoch, cfg.epochs):
            rng = np.random.default_rng([cfg.seed, epoch])
            noise_gen = torch.Generator().manual_seed(int(rng.integers(2**62)))
            order = rng.permutation(len(train_samples))
            for start in range(0, len(train_samples), cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                batch = augment_batch([train_samples[i] for i in idx], rng, cfg)
                t0 = time.perf_counter()
                loss = train_step(batch, model, codec, schedule, cfg, optimizer, noise_gen, rng)
                rec = {
                    "step": global_step,
                    "epoch": epoch,
                    "loss": loss,
                    "lr": cfg.learning_rate,
                    "wall_ms": (time.perf_counter() - t0) * 1000.0,
                }
                history["steps"].append(rec)
                if log_file and global_step % cfg.log_every == 0:
                    log_file.write(json.dumps(rec) + "\n")
                    log_file.flush()
                global_step += 1

            last = epoch == cfg.epochs - 1
            if val_samples and (last or (epoch + 1) % cfg.val_every == 0):
                scores = _validate(model, codec, schedule, list(val_samples), cfg)
                scores["epoch"] = epoch
                history["val"].append(scores)
                logger.info("epoch %d validation: %s", epoch, scores)
                if scores["f_max"] > best["f_max"]:
                    best = {
                        "f_max": scores["f_max"],
                        "epoch": epoch,
                        "state": copy.deepcopy(model.state_dict()),
                        "scores": scores,
                    }
    finally:
        if log_file:
            log_file.close()

    history["wall_s"] = time.perf_counter() - t_start
    history["best"] = {k: v for k, v in best.items() if k != "state"} if best["epoch"] >= 0 else None
    history["best_state"] = best["state"]
    history["final_epoch"] = cfg.epochs - 1
    history["optimizer_state"] = optimizer.state_dict()
    history["global_step"] = global_step
    model.trained = True
    return model, history


def save_train_checkpoint(model: UNetModel, history: dict, cfg: TrainConfig, path, best=False):
    state_override = history.get("best_state") if best else None
    extra = {
        "trained": True,
        "train_config": asdict(cfg),
        "epoch": history.get("final_epoch", -1) if not best else (history.get("best") or {}).get("epoch", -1),
        "global_step": history.get("global_step", 0),
        "val": history.get("val", []),
    }
    if not best:
        extra["optimizer"] = history.get("optimizer_state")
    if state_override is not None:
        saved = copy.deepcopy(model)
        saved.load_state_dict(state_override)
        save_unet(saved, path, extra=extra)
    else:
        save_unet(model, path, extra=extra)
