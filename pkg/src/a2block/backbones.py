"""Symbolic backbone descriptions and whole-network accounting.

Presets mirror the three video residual networks the block was evaluated
on (depths 26/29/50) plus the image variant of the deepest one. A
descriptor is data, not an executable model: stages of bottleneck units
with explicit kernels and strides, counted layer by layer through the
cost model. Strides sit on each downsampling unit's middle conv (and its
projection shortcut), which is what reproduces the published FLOPs.
"""

from __future__ import annotations

import copy
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .costs import BlockCost, CostConvention, DEFAULT_CONVENTION, a2_block_cost, conv_cost, fc_cost, nl_block_cost
from .tensor import Shape4

BOTTLENECK_EXPANSION = 4


@dataclass
class LayerSpec:
    kind: str  # conv | maxpool | globalavgpool | fc | residual_unit | a2_block | nl_block
    kernel: tuple[int, int, int] | None = None
    stride: tuple[int, int, int] = (1, 1, 1)
    channels_in: int | None = None
    channels_out: int | None = None
    repeat: int = 1
    m: int | None = None  # block-only
    n: int | None = None  # block-only

    _KINDS = ("conv", "maxpool", "globalavgpool", "fc", "residual_unit", "a2_block", "nl_block")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kernel is not None and any(k < 1 for k in self.kernel):
            raise ValueError(f"kernel extents must be positive: {self.kernel}")
        if any(s < 1 for s in self.stride):
            raise ValueError(f"strides must be positive: {self.stride}")
        if self.repeat < 1:
            raise ValueError("repeat must be >= 1")

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        for key in ("kernel", "stride", "channels_in", "channels_out", "repeat", "m", "n"):
            v = getattr(self, key)
            if key == "stride" and v == (1, 1, 1):
                continue
            if key == "repeat" and v == 1:
                continue
            if v is not None:
                d[key] = list(v) if isinstance(v, tuple) else v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        kwargs = dict(d)
        for key in ("kernel", "stride"):
            if key in kwargs and kwargs[key] is not None:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


@dataclass
class Stage:
    name: str
    layers: list[LayerSpec] = field(default_factory=list)

    def residual_unit_indices(self) -> list[int]:
        return [i for i, l in enumerate(self.layers) if l.kind == "residual_unit"]


@dataclass
class NetworkDescriptor:
    name: str
    input_shape: Shape4
    stages: list[Stage] = field(default_factory=list)

    def stage(self, name: str) -> Stage:
        for s in self.stages:
            if s.name == name:
                return s
        raise KeyError(f"no stage named {name!r} in {self.name}")

    def to_json(self) -> str:
        doc = {
            "name": self.name,
            "input": list(self.input_shape.as_tuple()),
            "stages": [
                {"name": s.name, "layers": [l.to_dict() for l in s.layers]} for s in self.stages
            ],
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NetworkDescriptor":
        doc = json.loads(text)
        return cls(
            name=doc["name"],
            input_shape=Shape4(*doc["input"]),
            stages=[
                Stage(name=s["name"], layers=[LayerSpec.from_dict(l) for l in s["layers"]])
                for s in doc["stages"]
            ],
        )


@dataclass(frozen=True)
class InsertionPoint:
    """Placement of an attention block: after the given residual unit
    (1-based) of a stage; the published default is after the second."""

    stage: str
    after_unit: int = 2


def _bottleneck_stage(name, channels_in, channels_out, temporal_kernels, first_stride) -> Stage:
    layers = []
    c_in = channels_in
    for i, k in enumerate(temporal_kernels):
        layers.append(
            LayerSpec(
                kind="residual_unit",
                kernel=(k, 3, 3),
                stride=first_stride if i == 0 else (1, 1, 1),
                channels_in=c_in,
                channels_out=channels_out,
            )
        )
        c_in = channels_out
    return Stage(name=name, layers=layers)


def _video_resnet(name, units_per_stage) -> NetworkDescriptor:
    stages = [
        Stage("conv1", [LayerSpec("conv", kernel=(3, 5, 5), stride=(1, 2, 2), channels_in=3, channels_out=16)]),
        _bottleneck_stage("conv2", 16, 128, [3] * units_per_stage[0], (2, 1, 1)),
        _bottleneck_stage("conv3", 128, 256, [3] * units_per_stage[1], (1, 2, 2)),
        _bottleneck_stage("conv4", 256, 512, [3] * units_per_stage[2], (1, 2, 2)),
        _bottleneck_stage("conv5", 512, 1024, [3] * units_per_stage[3], (1, 2, 2)),
        Stage("head", [
            LayerSpec("globalavgpool"),
            LayerSpec("fc", channels_in=1024, channels_out=400),
        ]),
    ]
    return NetworkDescriptor(name=name, input_shape=Shape4(3, 16, 112, 112), stages=stages)


def _cycle(pattern, count):
    return [pattern[i % len(pattern)] for i in range(count)]


def _resnet50_video() -> NetworkDescriptor:
    stages = [
        Stage("conv1", [
            LayerSpec("conv", kernel=(3, 5, 5), stride=(1, 2, 2), channels_in=3, channels_out=32),
            LayerSpec("maxpool", kernel=(1, 3, 3), stride=(1, 2, 2)),
        ]),
        _bottleneck_stage("conv2", 32, 256, [3, 3, 3], (1, 1, 1)),
        _bottleneck_stage("conv3", 256, 512, _cycle([3, 1, 3], 4), (2, 2, 2)),
        _bottleneck_stage("conv4", 512, 1024, [3, 1, 3, 1, 3, 1], (1, 2, 2)),
        _bottleneck_stage("conv5", 1024, 2048, [1, 3, 1], (1, 2, 2)),
        Stage("head", [
            LayerSpec("globalavgpool"),
            LayerSpec("fc", channels_in=2048, channels_out=400),
        ]),
    ]
    return NetworkDescriptor(name="resnet50_video", input_shape=Shape4(3, 8, 224, 224), stages=stages)


def _resnet50_image() -> NetworkDescriptor:
    net = _resnet50_video()
    net.name = "resnet50_image"
    net.input_shape = Shape4(3, 1, 224, 224)
    for stage in net.stages:
        for layer in stage.layers:
            if layer.kernel is not None:
                layer.kernel = (1, layer.kernel[1], layer.kernel[2])
            layer.stride = (1, layer.stride[1], layer.stride[2])
            if layer.kind == "fc":
                layer.channels_out = 1000
    return net


PRESETS = ("resnet26", "resnet29", "resnet50_video", "resnet50_image")


def build_preset(name: str) -> NetworkDescriptor:
    if name == "resnet26":
        return _video_resnet("resnet26", (2, 2, 2, 2))
    if name == "resnet29":
        return _video_resnet("resnet29", (2, 2, 3, 2))
    if name == "resnet50_video":
        return _resnet50_video()
    if name == "resnet50_image":
        return _resnet50_image()
    raise KeyError(f"unknown preset {name!r}; known: {', '.join(PRESETS)}")


_INSERT_RE = re.compile(r"^(a2|nl)@([A-Za-z0-9_]+)(?:x(\d+))?$")


def parse_insertion(spec: str) -> tuple[str, str, int]:
    """Parse 'kind@stage' or 'kind@stagexN', e.g. 'a2@conv4x2'."""
    m = _INSERT_RE.match(spec.strip())
    if not m:
        raise ValueError(f"bad insertion spec {spec!r}; expected kind@stage[xN], e.g. a2@conv4x1")
    kind, stage, count = m.group(1), m.group(2), int(m.group(3) or 1)
    if count < 1:
        raise ValueError(f"insertion count must be >= 1 in {spec!r}")
    return kind, stage, count


def insert_block(
    net: NetworkDescriptor,
    kind: str,
    points: list[InsertionPoint],
    ratio: float = 0.25,
) -> NetworkDescriptor:
    """Return a copy of the network with attention blocks added.

    Each block's internal widths are ratio * the stage's output channels
    (the published setting is 1/4). Blocks at the same point stack in
    order. The input descriptor is never modified.
    """
    if kind not in ("a2", "nl"):
        raise ValueError(f"unknown block kind {kind!r}; expected 'a2' or 'nl'")
    out = copy.deepcopy(net)
    for point in points:
        stage = out.stage(point.stage)
        units = stage.residual_unit_indices()
        if not units:
            raise ValueError(f"stage {point.stage!r} has no residual units to insert after")
        if not (1 <= point.after_unit <= len(units)):
            raise ValueError(
                f"insertion point after unit {point.after_unit} invalid: "
                f"stage {point.stage!r} has {len(units)} units"
            )
        unit = stage.layers[units[point.after_unit - 1]]
        c = unit.channels_out
        width = c * ratio
        if abs(width - round(width)) > 1e-9:
            raise ValueError(f"channel count {c} not divisible by ratio {ratio}")
        width = int(round(width))
        block = LayerSpec(
            kind="a2_block" if kind == "a2" else "nl_block",
            channels_in=c,
            channels_out=c,
            m=width,
            n=width,
        )
        stage.layers.insert(units[point.after_unit - 1] + 1, block)
    return out


@dataclass
class LayerCount:
    stage: str
    label: str
    kind: str
    out_shape: tuple[int, int, int, int]
    flops: int
    params: int


@dataclass
class NetworkCost:
    name: str
    params: int
    flops: int
    per_layer: list[LayerCount]
    convention: CostConvention

    def stage_totals(self) -> dict[str, tuple[int, int]]:
        totals: dict[str, tuple[int, int]] = {}
        for row in self.per_layer:
            p, f = totals.get(row.stage, (0, 0))
            totals[row.stage] = (p + row.params, f + row.flops)
        return totals


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def _strided(shape: Shape4, stride, channels=None) -> Shape4:
    return Shape4(
        channels if channels is not None else shape.c,
        _ceil_div(shape.d, stride[0]),
        _ceil_div(shape.h, stride[1]),
        _ceil_div(shape.w, stride[2]),
    )


def _count_unit(layer: LayerSpec, shape: Shape4, convention) -> tuple[BlockCost, Shape4]:
    mid = layer.channels_out // BOTTLENECK_EXPANSION
    out_shape = _strided(shape, layer.stride, layer.channels_out)
    cost = conv_cost(layer.channels_in, mid, (1, 1, 1), Shape4(mid, shape.d, shape.h, shape.w), convention)
    cost += conv_cost(mid, mid, layer.kernel, out_shape, convention)
    cost += conv_cost(mid, layer.channels_out, (1, 1, 1), out_shape, convention)
    if layer.channels_in != layer.channels_out or layer.stride != (1, 1, 1):
        cost += conv_cost(layer.channels_in, layer.channels_out, (1, 1, 1), out_shape, convention)
    return cost, out_shape


def count(net: NetworkDescriptor, convention: CostConvention = DEFAULT_CONVENTION) -> NetworkCost:
    """Parameter and FLOPs accounting with a per-layer trace.

    Walks the descriptor stage by stage, tracking activation shape, and
    raises if a layer's declared input channels disagree with the traced
    shape.
    """
    shape = net.input_shape
    rows: list[LayerCount] = []
    total = BlockCost(0, 0, 0)

    for stage in net.stages:
        unit_no = 0
        block_no = 0
        for layer in stage.layers:
            for _ in range(layer.repeat):
                if layer.channels_in is not None and layer.channels_in != shape.c:
                    raise ValueError(
                        f"{net.name}/{stage.name}: layer expects {layer.channels_in} input "
                        f"channels but traced shape is {shape.as_tuple()}"
                    )
                if layer.kind == "conv":
                    out_shape = _strided(shape, layer.stride, layer.channels_out)
                    cost = conv_cost(shape.c, layer.channels_out, layer.kernel, out_shape, convention)
                    label = f"conv{layer.kernel}"
                elif layer.kind == "residual_unit":
                    unit_no += 1
                    cost, out_shape = _count_unit(layer, shape, convention)
                    label = f"unit{unit_no} k={layer.kernel[0]}"
                elif layer.kind == "maxpool":
                    out_shape = _strided(shape, layer.stride)
                    cost = BlockCost(0, 0, 0)
                    label = "maxpool"
                elif layer.kind == "globalavgpool":
                    out_shape = Shape4(shape.c, 1, 1, 1)
                    cost = BlockCost(0, 0, 0)
                    label = "globalavgpool"
                elif layer.kind == "fc":
                    cost = fc_cost(shape.c, layer.channels_out, convention)
                    out_shape = Shape4(layer.channels_out, 1, 1, 1)
                    label = f"fc {shape.c}->{layer.channels_out}"
                elif layer.kind == "a2_block":
                    block_no += 1
                    cost = a2_block_cost(shape.c, layer.m, layer.n, shape, order="auto", convention=convention)
                    out_shape = shape
                    label = f"a2_block{block_no} m=n={layer.m}"
                elif layer.kind == "nl_block":
                    block_no += 1
                    cost = nl_block_cost(shape.c, layer.n, shape, convention=convention)
                    out_shape = shape
                    label = f"nl_block{block_no} n={layer.n}"
                else:  # pragma: no cover - guarded by LayerSpec validation
                    raise ValueError(f"unhandled layer kind {layer.kind!r}")
                rows.append(LayerCount(stage.name, label, layer.kind, out_shape.as_tuple(), cost.flops, cost.params))
                total = total + cost
                shape = out_shape

    return NetworkCost(name=net.name, params=total.params, flops=total.flops, per_layer=rows, convention=convention)


def save_descriptor(net: NetworkDescriptor, path: str | Path) -> None:
    Path(path).write_text(net.to_json() + "\n")


def load_descriptor(path: str | Path) -> NetworkDescriptor:
    return NetworkDescriptor.from_json(Path(path).read_text())
