"""A small self-contained transformer encoder with task heads.

Stands in for any encoder checkpoint: "tiny-base" / "tiny-large" pick the
width. Weights are initialized from N(0, 0.02) like standard transformer
encoders. Sequence tasks read a masked mean over token states; token
tasks read the per-token states through a linear head.
"""

from __future__ import annotations

import hashlib

import torch
from torch import nn

_SIZES = {
    "tiny-base": dict(dim=64, layers=2, heads=4, ff=128),
    "tiny-large": dict(dim=96, layers=3, heads=4, ff=192),
}


def model_size(model: str) -> dict:
    for key, size in _SIZES.items():
        if model == key:
            return size
    # unknown identifiers fall back to base width; identity is configuration
    return _SIZES["tiny-large" if "large" in model.lower() else "tiny-base"]


class Encoder(nn.Module):
    def __init__(self, vocab_size: int, num_outputs: int, token_level: bool,
                 model: str = "tiny-base", max_positions: int = 258):
        super().__init__()
        size = model_size(model)
        dim = size["dim"]
        self.token_level = token_level
        self.embed = nn.Embedding(vocab_size, dim, padding_idx=0)
        self.pos = nn.Embedding(max_positions, dim)
        layer = nn.TransformerEncoderLayer(
            d_model=dim, nhead=size["heads"], dim_feedforward=size["ff"],
            batch_first=True, dropout=0.1,
        )
        self.encoder = nn.TransformerEncoder(
            layer, num_layers=size["layers"], enable_nested_tensor=False
        )
        self.head = nn.Linear(dim, num_outputs)
        self.apply(self._init)

    @staticmethod
    def _init(module: nn.Module) -> None:
        if isinstance(module, (nn.Linear, nn.Embedding)):
            nn.init.normal_(module.weight, mean=0.0, std=0.02)
            if isinstance(module, nn.Linear) and module.bias is not None:
                nn.init.zeros_(module.bias)

    def forward(self, token_ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        # token_ids, mask: (batch, seq); mask True where real tokens
        positions = torch.arange(token_ids.shape[1], device=token_ids.device)
        states = self.embed(token_ids) + self.pos(positions)[None, :, :]
        states = self.encoder(states, src_key_padding_mask=~mask)
        if self.token_level:
            return self.head(states)  # (batch, seq, num_outputs)
        denom = mask.sum(dim=1, keepdim=True).clamp(min=1)
        pooled = (states * mask.unsqueeze(-1)).sum(dim=1) / denom
        return self.head(pooled)  # (batch, num_outputs)


def parameter_hash(model: nn.Module) -> str:
    """Stable hash of all parameters; used for the warm-start check."""
    digest = hashlib.sha256()
    for name, tensor in sorted(model.state_dict().items()):
        digest.update(name.encode("utf-8"))
        digest.update(tensor.detach().cpu().numpy().tobytes())
    return digest.hexdigest()
