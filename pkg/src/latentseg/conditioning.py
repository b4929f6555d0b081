"""Scale-wise conditional injection: the conditional image latent is resized
to each of the deepest encoder scales and added through injector heads that
end in zero-initialized convolutions, so injection starts as an exact no-op.
"""

import torch
import torch.nn as nn
import torch.nn.functional as F


def resize_latent(z: torch.Tensor, target_hw) -> torch.Tensor:
    """Area-style resize of a (B, C, H, W) latent; channel count preserved."""
    th, tw = int(target_hw[0]), int(target_hw[1])
    if th < 1 or tw < 1:
        raise ValueError(f"target dims must be >= 1, got {(th, tw)}")
    if z.shape[-2:] == (th, tw):
        return z
    return F.interpolate(z, size=(th, tw), mode="area")


class InjectorHead(nn.Module):
    """One conditioning head: plain entry conv, then two zero convolutions
    around an activation. Both zero convs output exactly 0 at initialization,
    killing the branch."""

    def __init__(self, in_channels: int, out_channels: int, target_scale: int):
        super().__init__()
        self.target_scale = target_scale
        self.entry_conv = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.zero_conv_1 = nn.Conv2d(out_channels, out_channels, 1)
        self.zero_conv_2 = nn.Conv2d(out_channels, out_channels, 1)
        self.act = nn.SiLU()
        for conv in (self.zero_conv_1, self.zero_conv_2):
            nn.init.zeros_(conv.weight)
            nn.init.zeros_(conv.bias)

    def forward(self, cond_latent: torch.Tensor, target_hw) -> torch.Tensor:
        z = resize_latent(cond_latent, target_hw)
        return self.zero_conv_2(self.act(self.zero_conv_1(self.entry_conv(z))))


def inject(heads, cond_latent: torch.Tensor, encoder_feats):
    """Add each head's branch output to its encoder stage's feature map.

    heads are assigned to the deepest len(heads) stages; shallower stages pass
    through untouched.
    """
    heads = list(heads)
    feats = list(encoder_feats)
    if len(feats) < len(heads):
        raise ValueError(
            f"encoder has {len(feats)} stages but {len(heads)} injector heads"
        )
    offset = len(feats) - len(heads)
    out = feats[:offset]
    for head, feat in zip(heads, feats[offset:]):
        out.append(feat + head(cond_latent, feat.shape[-2:]))
    return out
