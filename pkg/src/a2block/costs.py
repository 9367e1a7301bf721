"""Symbolic FLOPs / parameter / peak-memory accounting.

One FLOP means one multiply-add throughout; that convention reproduces
the published conv-net totals this model is checked against. Softmax,
residual adds, reshapes, pooling and normalization cost no FLOPs.
Intermediates are 32-bit floats unless the convention says otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .tensor import Shape4

Kernel = tuple[int, int, int]


@dataclass(frozen=True)
class CostConvention:
    """Counting rules, recorded alongside every report.

    include_bias / include_bn add per-channel bias and batch-norm
    scale+shift to parameter counts (never to FLOPs); include_fc gates
    the classifier head entirely.
    """

    include_bias: bool = True
    include_bn: bool = True
    include_fc: bool = True
    bytes_per_element: int = 4
    flop_unit: str = field(default="multiply-add", compare=False)

    def to_dict(self) -> dict:
        return {
            "flop_unit": self.flop_unit,
            "include_bias": self.include_bias,
            "include_bn": self.include_bn,
            "include_fc": self.include_fc,
            "bytes_per_element": self.bytes_per_element,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CostConvention":
        known = {k: v for k, v in d.items() if k in ("include_bias", "include_bn", "include_fc", "bytes_per_element")}
        return cls(**known)


DEFAULT_CONVENTION = CostConvention()


@dataclass(frozen=True)
class BlockCost:
    """Multiply-adds, learnable scalars and the largest materialized intermediate."""

    flops: int
    params: int
    peak_intermediate_bytes: int
    activation_bytes: int = 0

    def __add__(self, other: "BlockCost") -> "BlockCost":
        return BlockCost(
            flops=self.flops + other.flops,
            params=self.params + other.params,
            peak_intermediate_bytes=max(self.peak_intermediate_bytes, other.peak_intermediate_bytes),
            activation_bytes=self.activation_bytes + other.activation_bytes,
        )


def _locations(shape) -> int:
    """Accept Shape4, a (d, h, w) triple, or a plain location count."""
    if isinstance(shape, Shape4):
        return shape.locations
    if isinstance(shape, int):
        return shape
    d, h, w = shape
    return d * h * w


def _extras(channels: int, convention: CostConvention) -> int:
    extra = 0
    if convention.include_bias:
        extra += channels
    if convention.include_bn:
        extra += 2 * channels
    return extra


def conv_cost(
    c_in: int,
    c_out: int,
    kernel: Kernel,
    out_shape,
    convention: CostConvention = DEFAULT_CONVENTION,
) -> BlockCost:
    """Dense convolution: c_in*c_out*kd*kh*kw multiply-adds per output location."""
    L = _locations(out_shape)
    k = kernel[0] * kernel[1] * kernel[2]
    flops = c_in * c_out * k * L
    params = c_in * c_out * k + _extras(c_out, convention)
    out_bytes = c_out * L * convention.bytes_per_element
    return BlockCost(flops=flops, params=params, peak_intermediate_bytes=out_bytes, activation_bytes=out_bytes)


def fc_cost(c_in: int, c_out: int, convention: CostConvention = DEFAULT_CONVENTION) -> BlockCost:
    """Fully connected head; zero when the convention excludes it."""
    if not convention.include_fc:
        return BlockCost(0, 0, 0)
    params = c_in * c_out + (c_out if convention.include_bias else 0)
    out_bytes = c_out * convention.bytes_per_element
    return BlockCost(flops=c_in * c_out, params=params, peak_intermediate_bytes=out_bytes, activation_bytes=out_bytes)


def resolve_order_for(m: int, n: int, shape) -> str:
    """"left" iff n*m < L^2, "right" iff n*m > L^2, "left" on ties."""
    L = _locations(shape)
    return "right" if n * m > L * L else "left"


def choose_association(m: int, n: int, shape):
    """Cheaper association order for the block's matrix-product chain."""
    from .block import AssociationOrder  # local import, block depends on costs

    if m < 1 or n < 1 or _locations(shape) < 1:
        raise ValueError("choose_association needs positive extents")
    return AssociationOrder(resolve_order_for(m, n, shape))


def _block_conv_part(c: int, m: int, n: int, L: int, convention: CostConvention) -> BlockCost:
    # three c -> (m or n) projections plus the m -> c output expansion
    flops = (c * m + 2 * c * n + m * c) * L
    params = 2 * c * m + 2 * c * n
    params += _extras(m, convention) + 2 * _extras(n, convention) + _extras(c, convention)
    act = (m * L + 2 * n * L + c * L) * convention.bytes_per_element
    return BlockCost(flops=flops, params=params, peak_intermediate_bytes=0, activation_bytes=act)


def a2_block_cost(
    c: int,
    m: int,
    n: int,
    shape,
    order=None,
    convention: CostConvention = DEFAULT_CONVENTION,
) -> BlockCost:
    """Cost of one double-attention block at the given feature-map shape.

    Left association multiplies through the (m, n) bag: 2*m*n*L extra
    multiply-adds and an m*n intermediate. Right association multiplies
    through the (L, L) relation matrix: (m+n)*L^2 multiply-adds and an
    L^2 intermediate. Parameters do not depend on the order.
    """
    L = _locations(shape)
    conv = _block_conv_part(c, m, n, L, convention)
    order_name = getattr(order, "value", order) or resolve_order_for(m, n, L)
    if order_name == "auto":
        order_name = resolve_order_for(m, n, L)
    if order_name == "left":
        mm_flops = 2 * m * n * L
        peak = m * n * convention.bytes_per_element
        mm_act = (m * n + m * L) * convention.bytes_per_element
    elif order_name == "right":
        mm_flops = (m + n) * L * L
        peak = L * L * convention.bytes_per_element
        mm_act = (L * L + m * L) * convention.bytes_per_element
    else:
        raise ValueError(f"unknown association order {order_name!r}")
    return BlockCost(
        flops=conv.flops + mm_flops,
        params=conv.params,
        peak_intermediate_bytes=peak,
        activation_bytes=conv.activation_bytes + mm_act,
    )


def nl_block_cost(
    c: int,
    n: int,
    shape,
    convention: CostConvention = DEFAULT_CONVENTION,
) -> BlockCost:
    """Cost of a non-local block: same projections, but the (L, L)
    pairwise relation matrix is always materialized (n*L^2 twice)."""
    L = _locations(shape)
    conv = _block_conv_part(c, n, n, L, convention)
    mm_flops = 2 * n * L * L
    peak = L * L * convention.bytes_per_element
    mm_act = (L * L + n * L) * convention.bytes_per_element
    return BlockCost(
        flops=conv.flops + mm_flops,
        params=conv.params,
        peak_intermediate_bytes=peak,
        activation_bytes=conv.activation_bytes + mm_act,
    )
