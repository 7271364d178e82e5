"""Feature fusion: channel-gated local attentive fusion and baselines.

The attentive fusion reweights the target modality's channels per
timestep using a gate computed from a temporally aggregated query (from
the target) and a per-timestep key (from the reference). It never mixes
different timesteps, so local discriminability is preserved:
row t of the output depends on the reference only through row t.
"""

from __future__ import annotations

import torch
from torch import nn

POOL_KINDS = ("mean", "max")


def aggregate(f: torch.Tensor, kind: str = "mean") -> torch.Tensor:
    """Collapse a (T', D) sequence to a single D-vector."""
    if f.shape[0] < 1:
        raise ValueError("cannot aggregate an empty sequence")
    if kind == "mean":
        return f.mean(dim=0)
    if kind == "max":
        return f.max(dim=0).values
    raise ValueError(f"unknown pooling kind {kind!r}, expected one of {POOL_KINDS}")


def local_attentive_fusion(
    f_target: torch.Tensor,
    f_ref: torch.Tensor,
    w_query: torch.Tensor,
    w_key: torch.Tensor,
    pool: str = "mean",
) -> torch.Tensor:
    """Per-timestep channel gating of the target by agreement with the reference.

    q = W_query^T agg(f_target); gate_t = sigmoid(q * (W_key^T f_ref[t]));
    output_t = gate_t * f_target[t]. Gates lie strictly in (0, 1), so the
    output is elementwise bounded by the target.
    """
    if f_target.shape != f_ref.shape:
        raise ValueError(f"shape mismatch: target {tuple(f_target.shape)} vs ref {tuple(f_ref.shape)}")
    q = w_query.t() @ aggregate(f_target, pool)  # (D,)
    keys = f_ref @ w_key  # (T', D), row t = W_key^T f_ref[t]
    gates = torch.sigmoid(q.unsqueeze(0) * keys)
    return gates * f_target


def baseline_fuse(f_app: torch.Tensor, f_mot: torch.Tensor, kind: str) -> torch.Tensor:
    """Early fusion baselines: channel concatenation or elementwise sum."""
    if f_app.shape != f_mot.shape:
        raise ValueError(f"shape mismatch: {tuple(f_app.shape)} vs {tuple(f_mot.shape)}")
    if kind == "concat":
        return torch.cat([f_app, f_mot], dim=-1)
    if kind == "sum":
        return f_app + f_mot
    raise ValueError(f"unknown fusion kind {kind!r}")


class BranchProjections(nn.Module):
    """Two temporal-conv stacks projecting backbone features into the
    appearance and motion spaces (same output dimension)."""

    def __init__(self, in_dim: int, proj_dim: int, kernel_size: int = 3):
        super().__init__()
        pad = kernel_size // 2

        def make_stack():
            return nn.Sequential(
                nn.Conv1d(in_dim, proj_dim, kernel_size, padding=pad),
                nn.ReLU(),
                nn.Conv1d(proj_dim, proj_dim, kernel_size, padding=pad),
            )

        self.phi_app = make_stack()
        self.phi_mot = make_stack()

    def _apply_stack(self, stack: nn.Sequential, z: torch.Tensor) -> torch.Tensor:
        return stack(z.transpose(0, 1).unsqueeze(0)).squeeze(0).transpose(0, 1)

    def forward(self, z: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """z: (T', C_feat) -> (f_app, f_mot), each (T', D)."""
        return self._apply_stack(self.phi_app, z), self._apply_stack(self.phi_mot, z)

    decompose = forward


class LocalAttentiveFusion(nn.Module):
    """Bidirectional enhancement with one (W_query, W_key) pair per direction."""

    def __init__(self, dim: int, pool: str = "mean"):
        super().__init__()
        if pool not in POOL_KINDS:
            raise ValueError(f"unknown pooling kind {pool!r}")
        self.pool = pool
        # queries start at zero so every gate opens at sigmoid(0) = 0.5 and
        # the fused output begins as a uniformly scaled concatenation; the
        # gates then specialize only where that reduces the loss
        self.w_query_app = nn.Parameter(torch.zeros(dim, dim))
        self.w_key_app = nn.Parameter(torch.empty(dim, dim))
        self.w_query_mot = nn.Parameter(torch.zeros(dim, dim))
        self.w_key_mot = nn.Parameter(torch.empty(dim, dim))
        for w in (self.w_key_app, self.w_key_mot):
            nn.init.xavier_uniform_(w)

    def forward(self, f_app: torch.Tensor, f_mot: torch.Tensor) -> torch.Tensor:
        """Enhance each branch with the other as reference, then concatenate."""
        app_enh = local_attentive_fusion(f_app, f_mot, self.w_query_app, self.w_key_app, self.pool)
        mot_enh = local_attentive_fusion(f_mot, f_app, self.w_query_mot, self.w_key_mot, self.pool)
        return torch.cat([app_enh, mot_enh], dim=-1)
