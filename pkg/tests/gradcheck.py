"""Central finite-difference gradient checking for scalar-valued closures."""

from __future__ import annotations

from typing import Callable, Sequence

import torch


def finite_difference_grad(
    fn: Callable[[], torch.Tensor], leaf: torch.Tensor, eps: float = 1e-6
) -> torch.Tensor:
    """Central differences of a scalar closure w.r.t. one leaf tensor.

    The closure must re-read the (mutated in place) leaf on every call;
    double precision is assumed.
    """
    grad = torch.zeros_like(leaf)
    flat = leaf.data.view(-1)
    gflat = grad.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        up = fn().item()
        flat[i] = orig - eps
        down = fn().item()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * eps)
    return grad


def assert_grads_match(
    fn: Callable[[], torch.Tensor],
    leaves: Sequence[torch.Tensor],
    rel_tol: float = 1e-4,
    eps: float = 1e-6,
) -> None:
    """Autograd vs central differences on every leaf, elementwise."""
    out = fn()
    autograds = torch.autograd.grad(out, leaves, allow_unused=True)
    for leaf, ag in zip(leaves, autograds):
        if ag is None:
            ag = torch.zeros_like(leaf)
        fd = finite_difference_grad(fn, leaf, eps)
        scale = torch.maximum(ag.abs(), fd.abs()).clamp_min(1.0)
        err = (ag - fd).abs() / scale
        assert err.max().item() <= rel_tol, (
            f"gradient mismatch: max rel err {err.max().item():.3e} (tol {rel_tol})"
        )
