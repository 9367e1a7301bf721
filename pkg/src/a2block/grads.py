"""Hand-derived backward passes for the block primitives and the fused
block, plus the central finite-difference oracle used to verify them.

Verification always runs in float64; central differences are meaningless
in float32.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .block import AssociationOrder, DoubleAttentionParams, _branches, _project, resolve_order
from .tensor import ShapeError, _require_finite


def backward_matmul(d_out: np.ndarray, lhs: np.ndarray, rhs: np.ndarray):
    """Adjoint of C = lhs @ rhs: (d_out @ rhs^T, lhs^T @ d_out)."""
    if d_out.shape != (lhs.shape[0], rhs.shape[1]):
        raise ShapeError(f"upstream shape {d_out.shape} != ({lhs.shape[0]}, {rhs.shape[1]})")
    return d_out @ rhs.T, lhs.T @ d_out


def backward_softmax_rows(d_out: np.ndarray, softmax_out: np.ndarray) -> np.ndarray:
    """Adjoint through a row softmax: s * (du - <du, s> per row)."""
    if d_out.shape != softmax_out.shape:
        raise ShapeError(f"upstream shape {d_out.shape} != {softmax_out.shape}")
    inner = (d_out * softmax_out).sum(axis=1, keepdims=True)
    return softmax_out * (d_out - inner)


def backward_softmax_cols(d_out: np.ndarray, softmax_out: np.ndarray) -> np.ndarray:
    """Adjoint through a column softmax."""
    if d_out.shape != softmax_out.shape:
        raise ShapeError(f"upstream shape {d_out.shape} != {softmax_out.shape}")
    inner = (d_out * softmax_out).sum(axis=0, keepdims=True)
    return softmax_out * (d_out - inner)


def backward_conv_pointwise(d_out: np.ndarray, x: np.ndarray, w: np.ndarray, has_bias: bool = False):
    """Adjoint of y = w @ x (+ bias): returns (dx, dw[, dbias])."""
    if d_out.shape != (w.shape[0], x.shape[1]):
        raise ShapeError(f"upstream shape {d_out.shape} != ({w.shape[0]}, {x.shape[1]})")
    dx = w.T @ d_out
    dw = d_out @ x.T
    if has_bias:
        return dx, dw, d_out.sum(axis=1)
    return dx, dw


def finite_difference(f: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central differences (f(x+eps e) - f(x-eps e)) / 2 eps, elementwise."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = f(x)
        flat[i] = old - eps
        down = f(x)
        flat[i] = old
        gflat[i] = (up - down) / (2.0 * eps)
    return grad


@dataclass
class BlockState:
    """Forward cache: inputs, branch activations and the first matrix
    product of whichever association the forward actually used."""

    x: np.ndarray
    feats: np.ndarray
    gate: np.ndarray
    select: np.ndarray
    first_product: np.ndarray  # (m, n) bag for LEFT, (L, L) relation for RIGHT
    core: np.ndarray
    order: AssociationOrder


def block_forward_cached(
    x: np.ndarray,
    params: DoubleAttentionParams,
    order: AssociationOrder = AssociationOrder.LEFT,
) -> tuple[np.ndarray, BlockState]:
    """Forward pass that retains what the backward pass needs."""
    params.validate()
    feats, gate, select = _branches(x, params)
    order = resolve_order(order, params.m, params.n, x.shape[1])
    if order == AssociationOrder.LEFT:
        first = feats @ gate.T
        core = first @ select
    else:
        first = gate.T @ select
        core = feats @ first
    out = x + _project(core, params.w_out, params.b_out)
    _require_finite("block output", out)
    return out, BlockState(x, feats, gate, select, first, core, order)


@dataclass
class BlockGrads:
    dx: np.ndarray
    dw_feat: np.ndarray
    dw_gather: np.ndarray
    dw_distr: np.ndarray
    dw_out: np.ndarray
    db_feat: np.ndarray | None = None
    db_gather: np.ndarray | None = None
    db_distr: np.ndarray | None = None
    db_out: np.ndarray | None = None


def backward_block(d_out: np.ndarray, state: BlockState, params: DoubleAttentionParams) -> BlockGrads:
    """Gradients of the full block w.r.t. the input and all weight maps.

    Follows the association order the cached forward used; both orders
    produce the same gradients up to roundoff.
    """
    if state is None:
        raise ValueError("backward_block needs the cached forward state")
    x, feats, gate, select = state.x, state.feats, state.gate, state.select
    if d_out.shape != x.shape:
        raise ShapeError(f"upstream shape {d_out.shape} != input shape {x.shape}")

    dw_out = d_out @ state.core.T
    db_out = d_out.sum(axis=1) if params.b_out is not None else None
    d_core = params.w_out.T @ d_out

    if state.order == AssociationOrder.LEFT:
        bag = state.first_product
        d_bag, d_select = backward_matmul(d_core, bag, select)
        d_feats, d_gate_t = backward_matmul(d_bag, feats, gate.T)
        d_gate = d_gate_t.T
    else:
        relation = state.first_product
        d_feats, d_relation = backward_matmul(d_core, feats, relation)
        d_gate_t, d_select = backward_matmul(d_relation, gate.T, select)
        d_gate = d_gate_t.T

    d_gather_logits = backward_softmax_rows(d_gate, gate)
    d_distr_logits = backward_softmax_cols(d_select, select)

    dx = (
        d_out
        + params.w_feat.T @ d_feats
        + params.w_gather.T @ d_gather_logits
        + params.w_distr.T @ d_distr_logits
    )
    grads = BlockGrads(
        dx=dx,
        dw_feat=d_feats @ x.T,
        dw_gather=d_gather_logits @ x.T,
        dw_distr=d_distr_logits @ x.T,
        dw_out=dw_out,
        db_out=db_out,
    )
    if params.b_feat is not None:
        grads.db_feat = d_feats.sum(axis=1)
        grads.db_gather = d_gather_logits.sum(axis=1)
        grads.db_distr = d_distr_logits.sum(axis=1)
    return grads
