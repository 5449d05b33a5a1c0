"""Minimal vision transformer exposing the last attention layer's keys.

The module structure and parameter names match the common ViT-B/8
checkpoint layout (``patch_embed.proj``, ``blocks.N.attn.qkv``, ...), so a
reference state dict loads directly with ``load_state_dict``.
"""

import math

import torch
from torch import nn


class Mlp(nn.Module):
    def __init__(self, dim, hidden):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class Attention(nn.Module):
    def __init__(self, dim, num_heads):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.scale = self.head_dim ** -0.5
        self.qkv = nn.Linear(dim, dim * 3, bias=True)
        self.proj = nn.Linear(dim, dim)

    def keys(self, x):
        """Key tensor with all heads concatenated: (batch, tokens, dim)."""
        b, n, c = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.num_heads, self.head_dim)
        return qkv[:, :, 1].reshape(b, n, c)

    def forward(self, x):
        b, n, c = x.shape
        qkv = (
            self.qkv(x)
            .reshape(b, n, 3, self.num_heads, self.head_dim)
            .permute(2, 0, 3, 1, 4)
        )
        q, k, v = qkv.unbind(0)
        attn = torch.softmax((q @ k.transpose(-2, -1)) * self.scale, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, c)
        return self.proj(out)


class Block(nn.Module):
    def __init__(self, dim, num_heads, mlp_ratio=4.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, eps=1e-6)
        self.attn = Attention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim, eps=1e-6)
        self.mlp = Mlp(dim, int(dim * mlp_ratio))

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class PatchEmbed(nn.Module):
    def __init__(self, patch_size, in_chans, dim):
        super().__init__()
        self.patch_size = patch_size
        self.proj = nn.Conv2d(in_chans, dim, kernel_size=patch_size,
                              stride=patch_size)

    def forward(self, x):
        return self.proj(x).flatten(2).transpose(1, 2)  # (b, tokens, dim)


def interpolate_pos_embed(pos_embed, target_grid):
    """Resize the patch part of a (1, 1+g*g, dim) pos-embed to a new grid."""
    n_patches = pos_embed.shape[1] - 1
    grid = int(round(math.sqrt(n_patches)))
    if grid * grid != n_patches:
        raise ValueError(f"position embedding is not square: {n_patches}")
    if grid == target_grid:
        return pos_embed
    cls_part = pos_embed[:, :1]
    patch_part = pos_embed[:, 1:].reshape(1, grid, grid, -1).permute(0, 3, 1, 2)
    patch_part = torch.nn.functional.interpolate(
        patch_part, size=(target_grid, target_grid),
        mode="bicubic", align_corners=False,
    )
    patch_part = patch_part.permute(0, 2, 3, 1).reshape(
        1, target_grid * target_grid, -1
    )
    return torch.cat([cls_part, patch_part], dim=1)


class VisionTransformer(nn.Module):
    def __init__(self, patch_size=8, dim=768, depth=12, num_heads=12,
                 base_grid=28, in_chans=3):
        super().__init__()
        self.patch_size = patch_size
        self.embed_dim = dim
        self.patch_embed = PatchEmbed(patch_size, in_chans, dim)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, dim))
        self.pos_embed = nn.Parameter(
            torch.zeros(1, base_grid * base_grid + 1, dim)
        )
        self.blocks = nn.ModuleList(
            Block(dim, num_heads) for _ in range(depth)
        )
        self.norm = nn.LayerNorm(dim, eps=1e-6)
        self._init_weights()

    def _init_weights(self):
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        nn.init.trunc_normal_(self.cls_token, std=0.02)
        for module in self.modules():
            if isinstance(module, nn.Linear):
                nn.init.trunc_normal_(module.weight, std=0.02)
                nn.init.zeros_(module.bias)

    def _tokens(self, images):
        b, _, h, w = images.shape
        if h % self.patch_size or w % self.patch_size:
            raise ValueError(
                f"input {h}x{w} not divisible by patch size {self.patch_size}"
            )
        x = self.patch_embed(images)
        cls = self.cls_token.expand(b, -1, -1)
        x = torch.cat([cls, x], dim=1)
        grid = h // self.patch_size
        if grid != w // self.patch_size:
            raise ValueError("non-square input")
        return x + interpolate_pos_embed(self.pos_embed, grid), grid

    @torch.no_grad()
    def last_layer_keys(self, images):
        """Key features of the final attention layer, heads concatenated.

        Returns a (batch, grid, grid, dim) tensor; the class token is
        dropped so rows map one-to-one onto image patches.
        """
        x, grid = self._tokens(images)
        for block in self.blocks[:-1]:
            x = block(x)
        last = self.blocks[-1]
        keys = last.attn.keys(last.norm1(x))[:, 1:]
        return keys.reshape(keys.shape[0], grid, grid, self.embed_dim)


def build_vit_b8(depth=12, patch_size=8):
    """ViT-Base configuration; the reference checkpoint uses patch_size=8."""
    return VisionTransformer(patch_size=patch_size, dim=768, depth=depth,
                             num_heads=12)
