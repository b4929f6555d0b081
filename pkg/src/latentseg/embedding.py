"""Timestep embeddings and the batch-discriminative task embedding (BDE).

The BDE turns a small integer task label (0 = mask, 1 = edge) into a vector
the denoiser can add to its time embedding, letting one shared network serve
both prediction streams of a doubled batch.
"""

import math
from dataclasses import dataclass

import torch
import torch.nn as nn


@dataclass(frozen=True)
class DiscriminativeLabel:
    """Integer task id encoded with a fixed bit width."""

    value: int
    bit_width: int = 4

    def __post_init__(self):
        if not 0 <= self.value < 2**self.bit_width:
            raise ValueError(
                f"label {self.value} out of range for bit_width {self.bit_width}"
            )


MASK_LABEL = 0
EDGE_LABEL = 1


def timestep_embedding(t, dim: int) -> torch.Tensor:
    """Interleaved sin/cos embedding of timestep(s) at geometric frequencies.

    Accepts an int or a 1-D tensor of timesteps; returns (dim,) or (B, dim).
    """
    if dim % 2 != 0:
        raise ValueError(f"embedding dim must be even, got {dim}")
    scalar = not torch.is_tensor(t)
    tt = torch.as_tensor(t, dtype=torch.float64).reshape(-1)
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half
    )
    angles = tt[:, None] * freqs[None, :]
    emb = torch.zeros(tt.shape[0], dim, dtype=torch.float64)
    emb[:, 0::2] = torch.sin(angles)
    emb[:, 1::2] = torch.cos(angles)
    emb = emb.to(torch.get_default_dtype())
    return emb[0] if scalar else emb


def binary_bits(value: int, bit_width: int) -> torch.Tensor:
    """Expand an integer into its bits, least significant first, each in {0,1}."""
    return torch.tensor(
        [(value >> k) & 1 for k in range(bit_width)], dtype=torch.get_default_dtype()
    )


def positional_encode_bits(bits: torch.Tensor, num_bands: int = 6) -> torch.Tensor:
    """Frequency encoding of each bit: [sin(2^k pi p), cos(2^k pi p)], k < num_bands."""
    freqs = (2.0 ** torch.arange(num_bands, dtype=bits.dtype)) * math.pi
    angles = bits[..., :, None] * freqs  # (..., bits, bands)
    enc = torch.stack([torch.sin(angles), torch.cos(angles)], dim=-1)
    return enc.reshape(*bits.shape[:-1], bits.shape[-1] * num_bands * 2)


class BatchDiscriminativeEmbedding(nn.Module):
    """Binary expansion -> positional encoding -> learnable two-layer head.

    Output dimension matches the time embedding so the two combine by
    elementwise addition.
    """

    def __init__(self, embed_dim: int = 128, bit_width: int = 4, num_bands: int = 6):
        super().__init__()
        self.bit_width = bit_width
        self.num_bands = num_bands
        in_dim = bit_width * num_bands * 2
        self.proj = nn.Sequential(
            nn.Linear(in_dim, embed_dim),
            nn.SiLU(),
            nn.Linear(embed_dim, embed_dim),
        )

    def forward(self, labels) -> torch.Tensor:
        """labels: int, DiscriminativeLabel, or iterable of either -> (B, dim) or (dim,)."""
        if isinstance(labels, (int, DiscriminativeLabel)):
            return self.forward([labels])[0]
        values = []
        for lab in labels:
            if isinstance(lab, DiscriminativeLabel):
                if lab.bit_width != self.bit_width:
                    raise ValueError(
                        f"label bit_width {lab.bit_width} != head bit_width {self.bit_width}"
                    )
                values.append(lab.value)
            else:
                values.append(DiscriminativeLabel(int(lab), self.bit_width).value)
        bits = torch.stack([binary_bits(v, self.bit_width) for v in values])
        enc = positional_encode_bits(bits, self.num_bands)
        weight = self.proj[0].weight
        return self.proj(enc.to(dtype=weight.dtype, device=weight.device))


def combine(time_emb: torch.Tensor, d_emb: torch.Tensor) -> torch.Tensor:
    """Elementwise addition of time and task embeddings (fed to every ResBlock)."""
    if time_emb.shape[-1] != d_emb.shape[-1]:
        raise ValueError(
            f"embedding dim mismatch: {time_emb.shape[-1]} vs {d_emb.shape[-1]}"
        )
    return time_emb + d_emb
