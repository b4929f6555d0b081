"""Compact conditional U-Net denoiser.

Encoder/mid/decoder of res blocks conditioned on combined time + task
embeddings; the conditional image latent is channel-concatenated at the input
and injected scale-wise into the deepest encoder stages; the mid-block runs
the interactive attention stack on the doubled mask/edge batch.
"""

import logging
from dataclasses import dataclass, asdict, field

import torch
import torch.nn as nn

from .attention import DBIABlock, MUTUAL
from .checkpoint import load_checkpoint, save_checkpoint
from .conditioning import InjectorHead
from .embedding import BatchDiscriminativeEmbedding, combine, timestep_embedding

logger = logging.getLogger(__name__)

NUM_INJECTOR_HEADS = 3


@dataclass(frozen=True)
class UNetConfig:
    base_channels: int = 32
    channel_multipliers: tuple = (1, 2, 4)
    res_blocks_per_stage: int = 2
    latent_channels: int = 4
    embed_dim: int = 128
    head_count: int = 4
    context_tokens: int = 8
    groups: int = 8
    use_swci: bool = True
    use_dbia_mutual: bool = True
    mutual_mode: str = MUTUAL

    def __post_init__(self):
        if not self.channel_multipliers:
            raise ValueError("channel_multipliers must be nonempty")
        for ch in self.stage_channels:
            if ch % self.groups:
                raise ValueError(f"stage width {ch} not divisible by groups {self.groups}")

    @property
    def stage_channels(self) -> tuple:
        return tuple(self.base_channels * m for m in self.channel_multipliers)

    @property
    def input_channels(self) -> int:
        # noisy latent concatenated with the conditional latent
        return 2 * self.latent_channels

    @property
    def num_stages(self) -> int:
        return len(self.channel_multipliers)


class ResBlock(nn.Module):
    """Two normed convolutions with an additive embedding shift and a skip."""

    def __init__(self, in_ch: int, out_ch: int, embed_dim: int, groups: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.emb_proj = nn.Linear(embed_dim, out_ch)
        self.norm2 = nn.GroupNorm(groups, out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.act = nn.SiLU()
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(self.act(self.norm1(x)))
        h = h + self.emb_proj(self.act(emb))[:, :, None, None]
        h = self.conv2(self.act(self.norm2(h)))
        return h + self.skip(x)


class Downsample(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.conv = nn.Conv2d(ch, ch, 4, stride=2, padding=1)

    def forward(self, x):
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.up = nn.Upsample(scale_factor=2, mode="nearest")
        self.conv = nn.Conv2d(in_ch, out_ch, 3, padding=1)

    def forward(self, x):
        return self.conv(self.up(x))


class UNetModel(nn.Module):
    """The denoiser. Batch layout for two streams: [mask items ; edge items],
    with the conditional latent shared by both halves; the halves interact only
    inside the mid-block's mutual attention sublayer."""

    def __init__(self, config: UNetConfig = UNetConfig()):
        super().__init__()
        self.config = config
        self.trained = False
        chs = config.stage_channels

        self.time_mlp = nn.Sequential(
            nn.Linear(config.embed_dim, config.embed_dim),
            nn.SiLU(),
            nn.Linear(config.embed_dim, config.embed_dim),
        )
        self.bde = BatchDiscriminativeEmbedding(config.embed_dim)

        self.conv_in = nn.Conv2d(config.input_channels, chs[0], 3, padding=1)

        self.enc_blocks = nn.ModuleList()
        self.downs = nn.ModuleList()
        prev = chs[0]
        for i, ch in enumerate(chs):
            stage = nn.ModuleList()
            for j in range(config.res_blocks_per_stage):
                stage.append(ResBlock(prev if j == 0 else ch, ch, config.embed_dim, config.groups))
            self.enc_blocks.append(stage)
            self.downs.append(Downsample(ch) if i < len(chs) - 1 else nn.Identity())
            prev = ch

        n_heads = min(NUM_INJECTOR_HEADS, len(chs))
        self.injector_offset = len(chs) - n_heads
        self.injectors = nn.ModuleList(
            InjectorHead(config.latent_channels, chs[self.injector_offset + k], target_scale=self.injector_offset + k)
            for k in range(n_heads)
        )

        self.mid_block1 = ResBlock(chs[-1], chs[-1], config.embed_dim, config.groups)
        self.mid_attn = DBIABlock(
            chs[-1],
            head_count=config.head_count,
            context_tokens=config.context_tokens,
            use_mutual=config.use_dbia_mutual,
            mutual_mode=config.mutual_mode,
        )
        self.mid_block2 = ResBlock(chs[-1], chs[-1], config.embed_dim, config.groups)

        self.dec_blocks = nn.ModuleList()
        self.ups = nn.ModuleList()
        for i in reversed(range(len(chs))):
            ch = chs[i]
            stage = nn.ModuleList()
            for j in range(config.res_blocks_per_stage):
                stage.append(
                    ResBlock(2 * ch if j == 0 else ch, ch, config.embed_dim, config.groups)
                )
            self.dec_blocks.append(stage)
            self.ups.append(Upsample(ch, chs[i - 1]) if i > 0 else nn.Identity())

        self.out_norm = nn.GroupNorm(config.groups, chs[0])
        self.out_act = nn.SiLU()
        self.conv_out = nn.Conv2d(chs[0], config.latent_channels, 3, padding=1)

    @property
    def param_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def forward(
        self,
        noisy: torch.Tensor,
        cond: torch.Tensor,
        t,
        labels=None,
        d_emb: torch.Tensor | None = None,
        num_streams: int = 2,
        swci_enabled: bool | None = None,
    ) -> torch.Tensor:
        cfg = self.config
        if noisy.shape[0] != num_streams * cond.shape[0]:
            raise ValueError(
                f"batch layout violation: noisy batch {noisy.shape[0]} != "
                f"{num_streams} x cond batch {cond.shape[0]}"
            )
        h, w = noisy.shape[-2:]
        div = 2 ** (cfg.num_stages - 1)
        if h % div or w % div:
            raise ValueError(f"latent dims {(h, w)} must be divisible by {div}")
        if d_emb is None:
            if labels is None:
                raise ValueError("provide labels or a precomputed d_emb")
            d_emb = self.bde(labels)
        if d_emb.shape[0] != noisy.shape[0]:
            raise ValueError("one embedding per batch item is required")
        use_swci = cfg.use_swci if swci_enabled is None else swci_enabled

        dtype = noisy.dtype
        tt = torch.as_tensor(t).reshape(-1)
        if tt.numel() == 1:
            tt = tt.expand(noisy.shape[0])
        temb = timestep_embedding(tt, cfg.embed_dim).to(dtype)
        emb = combine(self.time_mlp(temb), d_emb.to(dtype))

        cond_full = cond.repeat(num_streams, 1, 1, 1)
        x = self.conv_in(torch.cat([noisy, cond_full], dim=1))

        skips = []
        for i, (stage, down) in enumerate(zip(self.enc_blocks, self.downs)):
            for block in stage:
                x = block(x, emb)
            k = i - self.injector_offset
            if use_swci and 0 <= k < len(self.injectors):
                x = x + self.injectors[k](cond_full, x.shape[-2:])
            skips.append(x)
            x = down(x)

        x = self.mid_block1(x, emb)
        b, c, mh, mw = x.shape
        tokens = x.flatten(2).transpose(1, 2)
        tokens = self.mid_attn(tokens, num_streams=num_streams)
        x = tokens.transpose(1, 2).reshape(b, c, mh, mw)
        x = self.mid_block2(x, emb)

        for stage, up, skip in zip(self.dec_blocks, self.ups, reversed(skips)):
            x = torch.cat([x, skip], dim=1)
            for block in stage:
                x = block(x, emb)
            x = up(x)

        return self.conv_out(self.out_act(self.out_norm(x)))


def build_unet(config: UNetConfig = UNetConfig(), seed: int = 0) -> UNetModel:
    """Deterministic construction: same seed, bitwise-identical weights.

    Zero-init constraints (mutual output projection, injector zero convs) are
    established by the submodule constructors.
    """
    torch.manual_seed(seed)
    model = UNetModel(config)
    logger.info("built unet with %d parameters", model.param_count)
    return model


def predict_noise(model: UNetModel, noisy, cond, t, labels=None, d_emb=None,
                  num_streams: int = 2) -> torch.Tensor:
    """Noise prediction over the doubled [mask ; edge] batch."""
    return model(noisy, cond, t, labels=labels, d_emb=d_emb, num_streams=num_streams)


def save_unet(model: UNetModel, path, extra: dict | None = None):
    cfg = asdict(model.config)
    cfg["channel_multipliers"] = list(cfg["channel_multipliers"])
    save_checkpoint(path, "unet", cfg, model.state_dict(), extra=extra)


def load_unet(path) -> tuple[UNetModel, dict]:
    payload = load_checkpoint(path, expect_kind="unet")
    cfg = dict(payload["config"])
    cfg["channel_multipliers"] = tuple(cfg["channel_multipliers"])
    model = UNetModel(UNetConfig(**cfg))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload.get("extra", {})
