"""Gradient verification harness.

Every analytic adjoint is compared against central finite differences in
float64. A slot passes when the relative error is within tolerance on
elements whose reference magnitude exceeds a small floor, and the
absolute error is within tolerance elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .block import AssociationOrder, init_params
from .grads import (
    backward_block,
    backward_conv_pointwise,
    backward_matmul,
    backward_softmax_cols,
    backward_softmax_rows,
    block_forward_cached,
    finite_difference,
)
from .tensor import conv_pointwise, matmul, softmax_cols, softmax_rows
from .tinynet import TinyLayerConfig, TinyNetConfig, materialize_tiny

EPS = 1e-5
REL_FLOOR = 1e-8
PRIMITIVE_TOL = 1e-6
BLOCK_TOL = 1e-5


@dataclass
class GradReport:
    op: str
    slot: str
    max_rel_err: float
    max_abs_err: float
    tolerance: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "op": self.op,
            "slot": self.slot,
            "max_rel_err": self.max_rel_err,
            "max_abs_err": self.max_abs_err,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def compare_grads(analytic: np.ndarray, reference: np.ndarray, tolerance: float, floor: float = REL_FLOOR):
    """(max_rel_err, max_abs_err, passed) against a reference gradient."""
    analytic = np.asarray(analytic, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    abs_err = np.abs(analytic - reference)
    mask = np.abs(reference) > floor
    max_rel = float((abs_err[mask] / np.abs(reference[mask])).max()) if mask.any() else 0.0
    max_abs_small = float(abs_err[~mask].max()) if (~mask).any() else 0.0
    passed = max_rel <= tolerance and max_abs_small <= tolerance
    return max_rel, float(abs_err.max()), passed


class _Accumulator:
    """Worst-case errors per (op, slot) across trials."""

    def __init__(self):
        self.worst: dict[tuple[str, str], list] = {}

    def add(self, op: str, slot: str, analytic, reference, tolerance: float):
        rel, abs_, ok = compare_grads(analytic, reference, tolerance)
        key = (op, slot)
        cur = self.worst.setdefault(key, [0.0, 0.0, tolerance, True])
        cur[0] = max(cur[0], rel)
        cur[1] = max(cur[1], abs_)
        cur[3] = cur[3] and ok

    def reports(self) -> list[GradReport]:
        return [
            GradReport(op=op, slot=slot, max_rel_err=v[0], max_abs_err=v[1], tolerance=v[2], passed=v[3])
            for (op, slot), v in self.worst.items()
        ]


def _weighted_sum(upstream):
    return lambda out: float((upstream * out).sum())


def check_primitives(seed: int = 0, trials: int = 20) -> list[GradReport]:
    acc = _Accumulator()
    for t in range(trials):
        rng = np.random.default_rng([seed, t])

        a = rng.normal(size=(4, 3))
        b = rng.normal(size=(3, 5))
        u = rng.normal(size=(4, 5))
        loss = _weighted_sum(u)
        da, db = backward_matmul(u, a, b)
        acc.add("matmul", "lhs", da, finite_difference(lambda v: loss(matmul(v, b)), a, EPS), PRIMITIVE_TOL)
        acc.add("matmul", "rhs", db, finite_difference(lambda v: loss(matmul(a, v)), b, EPS), PRIMITIVE_TOL)

        m = rng.normal(size=(4, 6))
        u = rng.normal(size=(4, 6))
        loss = _weighted_sum(u)
        acc.add(
            "softmax_rows", "input",
            backward_softmax_rows(u, softmax_rows(m)),
            finite_difference(lambda v: loss(softmax_rows(v)), m, EPS), PRIMITIVE_TOL,
        )
        acc.add(
            "softmax_cols", "input",
            backward_softmax_cols(u, softmax_cols(m)),
            finite_difference(lambda v: loss(softmax_cols(v)), m, EPS), PRIMITIVE_TOL,
        )

        x = rng.normal(size=(5, 7))
        w = rng.normal(size=(4, 5))
        bias = rng.normal(size=4)
        u = rng.normal(size=(4, 7))
        loss = _weighted_sum(u)
        dx, dw, dbias = backward_conv_pointwise(u, x, w, has_bias=True)
        acc.add("conv_pointwise", "input", dx,
                finite_difference(lambda v: loss(conv_pointwise(v, w, bias)), x, EPS), PRIMITIVE_TOL)
        acc.add("conv_pointwise", "weight", dw,
                finite_difference(lambda v: loss(conv_pointwise(x, v, bias)), w, EPS), PRIMITIVE_TOL)
        acc.add("conv_pointwise", "bias", dbias,
                finite_difference(lambda v: loss(conv_pointwise(x, w, v)), bias, EPS), PRIMITIVE_TOL)
    return acc.reports()


def _block_setup(seed: int, trial: int, c=8, L=27, m=2, n=2):
    rng = np.random.default_rng([seed, trial])
    x = rng.normal(size=(c, L))
    params = init_params(c, m, n, seed=seed * 7919 + trial, dtype=np.float64, w_out_init="random")
    upstream = rng.normal(size=(c, L))
    return x, params, upstream


def check_block(seed: int = 0, trials: int = 20) -> list[GradReport]:
    acc = _Accumulator()
    for t in range(trials):
        x, params, u = _block_setup(seed, t)
        loss = _weighted_sum(u)
        _, state = block_forward_cached(x, params, AssociationOrder.LEFT)
        grads = backward_block(u, state, params)

        def forward_with(name, value):
            saved = getattr(params, name).copy()
            getattr(params, name)[...] = value
            out, _ = block_forward_cached(x, params, AssociationOrder.LEFT)
            getattr(params, name)[...] = saved
            return loss(out)

        acc.add("block", "input", grads.dx,
                finite_difference(lambda v: loss(block_forward_cached(v, params, AssociationOrder.LEFT)[0]), x, EPS),
                BLOCK_TOL)
        for name, analytic in (
            ("w_feat", grads.dw_feat),
            ("w_gather", grads.dw_gather),
            ("w_distr", grads.dw_distr),
            ("w_out", grads.dw_out),
        ):
            acc.add("block", name, analytic,
                    finite_difference(lambda v, nm=name: forward_with(nm, v), getattr(params, name).copy(), EPS),
                    BLOCK_TOL)

        # both association orders must backpropagate to the same gradients
        _, state_r = block_forward_cached(x, params, AssociationOrder.RIGHT)
        grads_r = backward_block(u, state_r, params)
        acc.add("block", "order_agreement", grads_r.dx, grads.dx, 1e-10)
    return acc.reports()


def check_tiny_net(seed: int = 0, trials: int = 20) -> list[GradReport]:
    acc = _Accumulator()
    config = TinyNetConfig(
        channels_in=8,
        layers=[
            TinyLayerConfig("conv", channels_out=8),
            TinyLayerConfig("a2_block", m=2, n=2),
            TinyLayerConfig("conv", channels_out=8),
        ],
    )
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        net = materialize_tiny(config, seed=seed * 104729 + t)
        x = rng.normal(size=(8, 27))
        y, caches = net.forward_cached(x)
        dx, grads = net.backward(np.ones_like(y), caches)

        def loss_with(name, value):
            net.set_parameter(name, value)
            return float(net.forward(x).sum())

        acc.add("tiny_net", "input", dx,
                finite_difference(lambda v: float(net.forward(v).sum()), x, EPS), BLOCK_TOL)
        for name, analytic in grads.items():
            original = net.parameters()[name].copy()
            numeric = finite_difference(lambda v, nm=name: loss_with(nm, v), original.copy(), EPS)
            net.set_parameter(name, original)
            acc.add("tiny_net", name, analytic, numeric, BLOCK_TOL)
    return acc.reports()


TARGETS = ("primitives", "block", "tiny-net")


def run_gradcheck(target: str, seed: int = 0, trials: int = 20) -> list[GradReport]:
    if target == "primitives":
        return check_primitives(seed, trials)
    if target == "block":
        return check_block(seed, trials)
    if target == "tiny-net":
        return check_tiny_net(seed, trials)
    raise ValueError(f"unknown gradcheck target {target!r}; known: {', '.join(TARGETS)}")
