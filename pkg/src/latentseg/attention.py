"""Mid-block interactive attention: self, null-context cross, and mutual
cross-domain attention between the mask and edge streams.

The mutual sublayer lets each stream's queries attend over the other stream's
keys/values. It is initialized as a copy of the self-attention weights and its
output projection starts at zero, so enabling it is a no-op until training
moves it.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn

MUTUAL = "mutual"
MUTUAL_GEO = "geo"  # fused variant: queries attend over concatenated K/V of both domains


@dataclass
class StreamFeatures:
    """Token features of the two streams plus the spatial dims for deflattening."""

    mask_feats: torch.Tensor  # (B, tokens, channels)
    edge_feats: torch.Tensor
    height: int = 0
    width: int = 0

    def __post_init__(self):
        if self.mask_feats.shape != self.edge_feats.shape:
            raise ValueError(
                f"stream shape mismatch: {tuple(self.mask_feats.shape)} vs "
                f"{tuple(self.edge_feats.shape)}"
            )


class ScaledDotProductAttention(nn.Module):
    """Multi-head scaled dot-product attention with separate q/k/v/out projections."""

    def __init__(self, channels: int, head_count: int):
        super().__init__()
        if channels % head_count != 0:
            raise ValueError(f"head_count {head_count} must divide channels {channels}")
        self.channels = channels
        self.head_count = head_count
        self.d_k = channels // head_count
        self.to_q = nn.Linear(channels, channels)
        self.to_k = nn.Linear(channels, channels)
        self.to_v = nn.Linear(channels, channels)
        self.to_out = nn.Linear(channels, channels)

    def _split_heads(self, x: torch.Tensor) -> torch.Tensor:
        b, n, _ = x.shape
        return x.view(b, n, self.head_count, self.d_k).transpose(1, 2)

    def forward(self, q_in: torch.Tensor, kv_in: torch.Tensor) -> torch.Tensor:
        b, n, _ = q_in.shape
        q = self._split_heads(self.to_q(q_in))
        k = self._split_heads(self.to_k(kv_in))
        v = self._split_heads(self.to_v(kv_in))
        attn = torch.softmax(q @ k.transpose(-2, -1) / self.d_k**0.5, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, self.channels)
        return self.to_out(out)


class DBIABlock(nn.Module):
    """Self-attention, vanilla cross-attention against learned null-context
    tokens, mutual cross-domain attention, and a feed-forward sublayer, each
    pre-normalized with a residual connection.
    """

    def __init__(
        self,
        channels: int,
        head_count: int = 4,
        context_tokens: int = 8,
        use_mutual: bool = True,
        mutual_mode: str = MUTUAL,
        zero_init_mutual_out: bool = True,
    ):
        super().__init__()
        if mutual_mode not in (MUTUAL, MUTUAL_GEO):
            raise ValueError(f"unknown mutual_mode {mutual_mode!r}")
        self.channels = channels
        self.head_count = head_count
        self.use_mutual = use_mutual
        self.mutual_mode = mutual_mode

        self.norm_self = nn.LayerNorm(channels)
        self.self_attn = ScaledDotProductAttention(channels, head_count)

        self.norm_cross = nn.LayerNorm(channels)
        self.cross_attn = ScaledDotProductAttention(channels, head_count)
        self.null_context = nn.Parameter(torch.randn(context_tokens, channels) * 0.02)

        self.norm_mutual = nn.LayerNorm(channels)
        self.mutual_attn = ScaledDotProductAttention(channels, head_count)

        self.norm_ff = nn.LayerNorm(channels)
        self.ff = nn.Sequential(
            nn.Linear(channels, channels * 4),
            nn.GELU(),
            nn.Linear(channels * 4, channels),
        )

        init_mutual_from_self(self)
        if zero_init_mutual_out:
            nn.init.zeros_(self.mutual_attn.to_out.weight)
            nn.init.zeros_(self.mutual_attn.to_out.bias)

    def _mutual(self, m: torch.Tensor, e: torch.Tensor):
        if self.mutual_mode == MUTUAL_GEO:
            kv_for_m = torch.cat([m, e], dim=1)
            kv_for_e = torch.cat([e, m], dim=1)
            return self.mutual_attn(m, kv_for_m), self.mutual_attn(e, kv_for_e)
        return self.mutual_attn(m, e), self.mutual_attn(e, m)

    def forward(self, x: torch.Tensor, num_streams: int = 2) -> torch.Tensor:
        """x: (B, tokens, channels); for num_streams=2 the batch is [mask ; edge]."""
        x = x + self.self_attn(self.norm_self(x), self.norm_self(x))
        ctx = self.null_context.unsqueeze(0).expand(x.shape[0], -1, -1)
        x = x + self.cross_attn(self.norm_cross(x), ctx)
        if self.use_mutual and num_streams == 2:
            if x.shape[0] % 2 != 0:
                raise ValueError("doubled-batch layout requires an even batch size")
            half = x.shape[0] // 2
            h = self.norm_mutual(x)
            out_m, out_e = self._mutual(h[:half], h[half:])
            x = x + torch.cat([out_m, out_e], dim=0)
        x = x + self.ff(self.norm_ff(x))
        return x


def init_mutual_from_self(block: DBIABlock) -> DBIABlock:
    """Deep-copy the self-attention projections into the mutual-attention module."""
    src, dst = block.self_attn, block.mutual_attn
    for name in ("to_q", "to_k", "to_v", "to_out"):
        s, d = getattr(src, name), getattr(dst, name)
        if s.weight.shape != d.weight.shape:
            raise ValueError(f"projection shape mismatch on {name}")
        with torch.no_grad():
            d.weight.copy_(s.weight)
            d.bias.copy_(s.bias)
    return block


def mutual_cross_domain_attention(block: DBIABlock, f: StreamFeatures) -> StreamFeatures:
    """Apply only the mutual sublayer: each stream's queries over the other
    stream's keys/values, residual around the attention (normalization is the
    enclosing block's concern)."""
    out_m, out_e = block._mutual(f.mask_feats, f.edge_feats)
    return StreamFeatures(
        mask_feats=f.mask_feats + out_m,
        edge_feats=f.edge_feats + out_e,
        height=f.height,
        width=f.width,
    )


def dbia_forward(block: DBIABlock, f: StreamFeatures, emb=None) -> StreamFeatures:
    """Run the full block on a doubled batch assembled from the two streams.

    emb is accepted for signature parity with the conditioned res blocks; the
    attention stack defines no weights that consume it.
    """
    x = torch.cat([f.mask_feats, f.edge_feats], dim=0)
    x = block(x, num_streams=2)
    half = x.shape[0] // 2
    return StreamFeatures(
        mask_feats=x[:half], edge_feats=x[half:], height=f.height, width=f.width
    )
