"""A tiny causal transformer with per-layer hidden-state access.

Stands in for a schema-linking language model at desk scale: deterministic
random initialization, greedy decoding, and a forward pass that returns the
hidden state of every layer at every position. Any model exposed to the
exporter must provide the same ``forward_hidden`` contract.
"""

from __future__ import annotations

import math

import torch
from torch import nn


class TinyCausalLM(nn.Module):
    def __init__(
        self,
        vocab_size: int,
        d_model: int = 32,
        n_layers: int = 4,
        n_heads: int = 4,
        max_len: int = 128,
        seed: int = 0,
    ) -> None:
        super().__init__()
        torch.manual_seed(seed)
        self.vocab_size = vocab_size
        self.d_model = d_model
        self.n_layers = n_layers
        self.embed = nn.Embedding(vocab_size, d_model)
        self.pos = nn.Embedding(max_len, d_model)
        self.layers = nn.ModuleList(
            [
                nn.TransformerEncoderLayer(
                    d_model, n_heads, dim_feedforward=2 * d_model, batch_first=True
                )
                for _ in range(n_layers)
            ]
        )
        self.head = nn.Linear(d_model, vocab_size)
        self.eval()

    @torch.no_grad()
    def forward_hidden(self, tokens: list[int]) -> tuple[torch.Tensor, torch.Tensor]:
        """(logits at the last position, hidden states [n_layers, d_model] there).

        The hidden states are the per-layer outputs at the final position of
        the prefix: the representation consumed when emitting the next token.
        The prefix must be non-empty (generation always follows a prompt).
        """
        if not tokens:
            raise ValueError("forward_hidden requires a non-empty prefix")
        ids = torch.tensor([tokens], dtype=torch.long)
        x = self.embed(ids) + self.pos(torch.arange(ids.shape[1]))[None, :]
        x = x / math.sqrt(self.d_model)
        mask = nn.Transformer.generate_square_subsequent_mask(ids.shape[1])
        states = []
        for layer in self.layers:
            x = layer(x, src_mask=mask)
            states.append(x[0, -1])
        logits = self.head(x[0, -1])
        return logits, torch.stack(states)
