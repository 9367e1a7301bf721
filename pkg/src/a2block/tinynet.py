"""Desk-scale executable network: pointwise convs and attention blocks.

Small enough to gradient-check end to end, and instrumented so the
multiply-adds it actually executes can be compared against the symbolic
cost model for the same configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backbones import LayerSpec, NetworkDescriptor, Stage, count
from .block import AssociationOrder, DoubleAttentionParams, init_params, resolve_order
from .costs import CostConvention
from .grads import BlockState, backward_block, backward_conv_pointwise, block_forward_cached
from .tensor import Shape4, conv_pointwise


@dataclass
class TinyLayerConfig:
    kind: str  # "conv" or "a2_block"
    channels_out: int | None = None  # conv
    m: int | None = None  # block
    n: int | None = None  # block
    order: str = "auto"  # block

    def __post_init__(self):
        if self.kind not in ("conv", "a2_block"):
            raise ValueError(f"tiny nets support conv and a2_block layers, not {self.kind!r}")


@dataclass
class TinyNetConfig:
    channels_in: int
    layers: list[TinyLayerConfig] = field(default_factory=list)


class TinyNet:
    """Sequential stack over the tensor primitives; float64 throughout."""

    def __init__(self, config: TinyNetConfig, seed: int = 0, init: str = "random"):
        self.config = config
        self.convs: dict[int, np.ndarray] = {}
        self.blocks: dict[int, DoubleAttentionParams] = {}
        c = config.channels_in
        for i, layer in enumerate(config.layers):
            if layer.kind == "conv":
                c_out = layer.channels_out
                if init == "identity":
                    if c_out != c:
                        raise ValueError("identity init needs channels_out == channels_in")
                    w = np.eye(c, dtype=np.float64)
                else:
                    rng = np.random.Generator(np.random.PCG64(seed + i))
                    w = rng.normal(0.0, 1.0 / np.sqrt(c), size=(c_out, c))
                self.convs[i] = w
                c = c_out
            else:
                m = layer.m if layer.m is not None else c // 4
                n = layer.n if layer.n is not None else c // 4
                w_out_init = "zeros" if init == "identity" else "random"
                self.blocks[i] = init_params(
                    c, m, n, seed=seed + i, dtype=np.float64, w_out_init=w_out_init
                )
        self.channels_out = c

    def parameters(self) -> dict[str, np.ndarray]:
        params: dict[str, np.ndarray] = {}
        for i, w in self.convs.items():
            params[f"layer{i}.w"] = w
        for i, p in self.blocks.items():
            for name in ("w_feat", "w_gather", "w_distr", "w_out"):
                params[f"layer{i}.{name}"] = getattr(p, name)
        return params

    def set_parameter(self, name: str, value: np.ndarray) -> None:
        target = self.parameters()[name]
        target[...] = value

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def _block_order(self, idx: int, L: int) -> AssociationOrder:
        params = self.blocks[idx]
        wanted = AssociationOrder(self.config.layers[idx].order)
        return resolve_order(wanted, params.m, params.n, L)

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, _ = self.forward_counted(x)
        return y

    def forward_counted(self, x: np.ndarray) -> tuple[np.ndarray, int]:
        """Run the stack and return (output, executed multiply-adds)."""
        y = np.asarray(x, dtype=np.float64)
        macs = 0
        for i, layer in enumerate(self.config.layers):
            L = y.shape[1]
            if layer.kind == "conv":
                w = self.convs[i]
                macs += w.shape[0] * w.shape[1] * L
                y = conv_pointwise(y, w)
            else:
                p = self.blocks[i]
                order = self._block_order(i, L)
                macs += (p.c * p.m + 2 * p.c * p.n + p.m * p.c) * L
                if order == AssociationOrder.LEFT:
                    macs += 2 * p.m * p.n * L
                else:
                    macs += (p.m + p.n) * L * L
                y, _ = block_forward_cached(y, p, order)
        return y, macs

    def forward_cached(self, x: np.ndarray):
        y = np.asarray(x, dtype=np.float64)
        caches: list[tuple[str, object]] = []
        for i, layer in enumerate(self.config.layers):
            if layer.kind == "conv":
                caches.append(("conv", y))
                y = conv_pointwise(y, self.convs[i])
            else:
                order = self._block_order(i, y.shape[1])
                y, state = block_forward_cached(y, self.blocks[i], order)
                caches.append(("a2_block", state))
        return y, caches

    def backward(self, d_out: np.ndarray, caches) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        """Gradients of every parameter and of the net input."""
        grads: dict[str, np.ndarray] = {}
        d = d_out
        for i in reversed(range(len(self.config.layers))):
            kind, cache = caches[i]
            if kind == "conv":
                d, dw = backward_conv_pointwise(d, cache, self.convs[i])
                grads[f"layer{i}.w"] = dw
            else:
                state: BlockState = cache
                bg = backward_block(d, state, self.blocks[i])
                grads[f"layer{i}.w_feat"] = bg.dw_feat
                grads[f"layer{i}.w_gather"] = bg.dw_gather
                grads[f"layer{i}.w_distr"] = bg.dw_distr
                grads[f"layer{i}.w_out"] = bg.dw_out
                d = bg.dx
        return d, grads

    def to_descriptor(self, shape: Shape4) -> NetworkDescriptor:
        """Symbolic twin of this net for the cost model."""
        if shape.c != self.config.channels_in:
            raise ValueError(f"shape channels {shape.c} != configured {self.config.channels_in}")
        layers = []
        c = self.config.channels_in
        for i, layer in enumerate(self.config.layers):
            if layer.kind == "conv":
                layers.append(LayerSpec("conv", kernel=(1, 1, 1), channels_in=c, channels_out=layer.channels_out))
                c = layer.channels_out
            else:
                p = self.blocks[i]
                layers.append(LayerSpec("a2_block", channels_in=c, channels_out=c, m=p.m, n=p.n))
        return NetworkDescriptor(name="tiny", input_shape=shape, stages=[Stage("body", layers)])


def materialize_tiny(config: TinyNetConfig, seed: int = 0, init: str = "random") -> TinyNet:
    """Build an executable net from a config of pointwise convs and blocks."""
    return TinyNet(config, seed=seed, init=init)


def modelled_flops(net: TinyNet, shape: Shape4) -> int:
    """Cost-model figure for the same stack (bias/BN-free convention)."""
    convention = CostConvention(include_bias=False, include_bn=False)
    return count(net.to_descriptor(shape), convention).flops
