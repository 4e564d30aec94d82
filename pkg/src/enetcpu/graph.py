"""Static computation graph: node specs, builders for the segmentation
architecture, shape inference, and weight initialization.

Nodes are immutable and stored in topological order.  Node ids are stable
labels (optimization passes keep the ids of surviving nodes), so storage
position and id may diverge after a pass.  Weights live outside the graph in
a plain dict keyed by "<node name>.<role>" strings.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .errors import BuildError, ShapeError, ValidationError
from .kernels import ConvParams
from .tensor import Shape, check_shape

BN_EPS = 1e-5
PRELU_INIT = 0.25


class NodeKind(enum.Enum):
    INPUT = "input"
    OUTPUT = "output"
    CONV = "conv"
    CONV_TRANSPOSE = "conv_transpose"
    ASYM_CONV5 = "asym_conv5"
    MAXPOOL = "maxpool"
    MAX_UNPOOL = "max_unpool"
    BATCHNORM = "batchnorm"
    PRELU = "prelu"
    ADD = "add"
    CONCAT = "concat"
    PAD_CHANNELS = "pad_channels"
    DROPOUT = "dropout"


class BottleneckKind(enum.Enum):
    REGULAR = "regular"
    DOWNSAMPLING = "downsampling"
    UPSAMPLING = "upsampling"
    DILATED = "dilated"
    ASYMMETRIC5 = "asymmetric5"


# node kinds that own parameters, with the weight roles they bind
_WEIGHT_ROLES = {
    NodeKind.CONV: ("weight", "bias"),
    NodeKind.CONV_TRANSPOSE: ("weight", "bias"),
    NodeKind.ASYM_CONV5: ("weight_5x1", "weight_1x5", "bias"),
    NodeKind.BATCHNORM: ("gamma", "beta", "mean", "var"),
    NodeKind.PRELU: ("slopes",),
}


@dataclass(frozen=True)
class NodeSpec:
    """One operator instance in the graph."""

    id: int
    kind: NodeKind
    name: str
    inputs: tuple[int, ...]
    conv: Optional[ConvParams] = None
    bn_eps: Optional[float] = None
    dropout_rate: Optional[float] = None
    target_channels: Optional[int] = None
    index_link: Optional[int] = None  # MAX_UNPOOL -> id of the source MAXPOOL
    weight_refs: tuple[tuple[str, str], ...] = ()

    def ref(self, role: str) -> str:
        """Weight-store key bound to a role ("weight", "gamma", ...)."""
        for r, key in self.weight_refs:
            if r == role:
                return key
        raise KeyError(f"node {self.name} has no weight role {role!r}")

    @property
    def stage(self) -> str:
        """Coarse grouping key: initial, bottleneck1..5, fullconv, ..."""
        return self.name.split(".", 1)[0]


@dataclass(frozen=True)
class Graph:
    """Immutable operator DAG with a single input and a single output."""

    nodes: tuple[NodeSpec, ...]
    input_shape: Shape
    num_classes: int = 0

    def __post_init__(self):
        seen_ids: set[int] = set()
        seen_names: set[str] = set()
        for n in self.nodes:
            if n.id in seen_ids:
                raise ValidationError(f"duplicate node id {n.id}")
            if n.name in seen_names:
                raise ValidationError(f"duplicate node name {n.name!r}")
            for src in n.inputs:
                if src not in seen_ids:
                    raise ValidationError(
                        f"node {n.name} consumes id {src} that is not stored earlier"
                    )
            seen_ids.add(n.id)
            seen_names.add(n.name)
        by_id = {n.id: n for n in self.nodes}
        by_name = {n.name: n for n in self.nodes}
        object.__setattr__(self, "_by_id", by_id)
        object.__setattr__(self, "_by_name", by_name)

    def __iter__(self) -> Iterator[NodeSpec]:
        return iter(self.nodes)

    def node(self, nid: int) -> NodeSpec:
        return self._by_id[nid]

    def find(self, name: str) -> NodeSpec:
        return self._by_name[name]

    @property
    def input_node(self) -> NodeSpec:
        return next(n for n in self.nodes if n.kind is NodeKind.INPUT)

    @property
    def output_node(self) -> NodeSpec:
        return next(n for n in self.nodes if n.kind is NodeKind.OUTPUT)

    def consumers(self) -> dict[int, tuple[int, ...]]:
        """Map node id -> ids of nodes that read it, in storage order."""
        out: dict[int, list[int]] = {n.id: [] for n in self.nodes}
        for n in self.nodes:
            for src in n.inputs:
                out[src].append(n.id)
        return {k: tuple(v) for k, v in out.items()}


def module_names(g: Graph) -> tuple[str, ...]:
    """Ordered distinct architecture modules (initial, bottlenecks, classifier)."""
    seen: dict[str, None] = {}
    for n in g.nodes:
        if n.kind in (NodeKind.INPUT, NodeKind.OUTPUT):
            continue
        parts = n.name.split(".")
        key = ".".join(parts[:2]) if parts[0].startswith("bottleneck") else parts[0]
        seen.setdefault(key, None)
    return tuple(seen)


class GraphBuilder:
    """Append-only construction of a Graph in topological order."""

    def __init__(self, input_shape: Shape, num_classes: int = 0):
        check_shape(Shape(*input_shape))
        self.input_shape = Shape(*input_shape)
        self.num_classes = num_classes
        self._nodes: list[NodeSpec] = []
        self.input_id = self._append(NodeKind.INPUT, "input", ())

    def _append(self, kind: NodeKind, name: str, inputs: tuple[int, ...],
                with_bias: bool = False, **attrs) -> int:
        nid = len(self._nodes)
        roles = _WEIGHT_ROLES.get(kind, ())
        refs = tuple(
            (role, f"{name}.{role}")
            for role in roles
            if role != "bias" or with_bias
        )
        self._nodes.append(NodeSpec(id=nid, kind=kind, name=name, inputs=inputs,
                                    weight_refs=refs, **attrs))
        return nid

    def conv(self, name: str, src: int, params: ConvParams) -> int:
        return self._append(NodeKind.CONV, name, (src,), conv=params,
                            with_bias=params.has_bias)

    def conv_transpose(self, name: str, src: int, params: ConvParams) -> int:
        return self._append(NodeKind.CONV_TRANSPOSE, name, (src,), conv=params,
                            with_bias=params.has_bias)

    def asym_conv5(self, name: str, src: int, channels: int,
                   has_bias: bool = False) -> int:
        params = ConvParams(out_channels=channels, kernel_h=5, kernel_w=5,
                            pad_h=2, pad_w=2, has_bias=has_bias)
        return self._append(NodeKind.ASYM_CONV5, name, (src,), conv=params,
                            with_bias=has_bias)

    def maxpool(self, name: str, src: int) -> int:
        return self._append(NodeKind.MAXPOOL, name, (src,))

    def max_unpool(self, name: str, src: int, index_source: int) -> int:
        if not 0 <= index_source < len(self._nodes) or \
                self._nodes[index_source].kind is not NodeKind.MAXPOOL:
            raise BuildError(f"unpool {name} index source must be an existing maxpool node")
        return self._append(NodeKind.MAX_UNPOOL, name, (src,),
                            index_link=index_source)

    def batchnorm(self, name: str, src: int, eps: float = BN_EPS) -> int:
        return self._append(NodeKind.BATCHNORM, name, (src,), bn_eps=eps)

    def prelu(self, name: str, src: int) -> int:
        return self._append(NodeKind.PRELU, name, (src,))

    def add(self, name: str, a: int, b: int) -> int:
        return self._append(NodeKind.ADD, name, (a, b))

    def concat(self, name: str, a: int, b: int) -> int:
        return self._append(NodeKind.CONCAT, name, (a, b))

    def pad_channels(self, name: str, src: int, target_channels: int) -> int:
        return self._append(NodeKind.PAD_CHANNELS, name, (src,),
                            target_channels=target_channels)

    def dropout(self, name: str, src: int, rate: float) -> int:
        if not 0.0 <= rate < 1.0:
            raise BuildError(f"dropout rate must be in [0, 1), got {rate}")
        return self._append(NodeKind.DROPOUT, name, (src,), dropout_rate=rate)

    def find(self, name: str) -> int:
        for n in self._nodes:
            if n.name == name:
                return n.id
        raise KeyError(f"no node named {name!r}")

    def build(self, final: int) -> Graph:
        self._append(NodeKind.OUTPUT, "output", (final,))
        return Graph(nodes=tuple(self._nodes), input_shape=self.input_shape,
                     num_classes=self.num_classes)


# ---------------------------------------------------------------------------
# architecture blocks

def build_initial_block(b: GraphBuilder) -> int:
    """Entry block: 3x3 stride-2 conv to 13 maps next to a 2x2 maxpool of the
    raw input, concatenated to 16 channels, then BN and PReLU."""
    c, h, w = b.input_shape
    if c != 3:
        raise BuildError(f"initial block expects a 3-channel input, got {c}")
    if h % 2 or w % 2:
        raise BuildError(f"initial block needs even input dims, got {h}x{w}")
    conv = b.conv("initial.conv", b.input_id,
                  ConvParams(out_channels=13, kernel_h=3, kernel_w=3,
                             stride=2, pad_h=1, pad_w=1))
    pool = b.maxpool("initial.pool", b.input_id)
    cat = b.concat("initial.concat", conv, pool)
    bn = b.batchnorm("initial.bn", cat)
    return b.prelu("initial.prelu", bn)


def build_bottleneck(b: GraphBuilder, kind: BottleneckKind, in_ch: int,
                     out_ch: int, src: int, *, name: str, dilation: int = 1,
                     dropout_rate: float = 0.1,
                     unpool_source: Optional[int] = None) -> int:
    """Residual bottleneck: 1x1 projection, main convolution, 1x1 expansion
    on the extension branch; identity / pool+pad / conv+unpool on the main
    branch; Add then PReLU after the merge."""
    if in_ch % 4 or out_ch % 4:
        raise BuildError(f"{name}: channel counts must be divisible by 4, "
                         f"got {in_ch} -> {out_ch}")
    inner = out_ch // 4
    if kind is BottleneckKind.DILATED:
        if dilation < 2:
            raise BuildError(f"{name}: dilated bottleneck needs dilation >= 2")
    elif dilation != 1:
        raise BuildError(f"{name}: dilation only applies to dilated bottlenecks")
    if kind in (BottleneckKind.REGULAR, BottleneckKind.DILATED,
                BottleneckKind.ASYMMETRIC5):
        if in_ch != out_ch:
            raise BuildError(f"{name}: {kind.value} bottleneck cannot change "
                             f"channel count ({in_ch} -> {out_ch})")
    if kind is BottleneckKind.DOWNSAMPLING and out_ch < in_ch:
        raise BuildError(f"{name}: downsampling bottleneck cannot shrink channels")
    if kind is BottleneckKind.UPSAMPLING and unpool_source is None:
        raise BuildError(f"{name}: upsampling bottleneck needs an unpool index source")

    # extension branch: projection
    if kind is BottleneckKind.DOWNSAMPLING:
        proj_params = ConvParams(out_channels=inner, kernel_h=2, kernel_w=2, stride=2)
    else:
        proj_params = ConvParams(out_channels=inner, kernel_h=1, kernel_w=1)
    ext = b.conv(f"{name}.ext.proj", src, proj_params)
    ext = b.batchnorm(f"{name}.ext.proj_bn", ext)
    ext = b.prelu(f"{name}.ext.proj_prelu", ext)

    # extension branch: main convolution
    if kind is BottleneckKind.ASYMMETRIC5:
        ext = b.asym_conv5(f"{name}.ext.asym", ext, inner)
    elif kind is BottleneckKind.UPSAMPLING:
        ext = b.conv_transpose(
            f"{name}.ext.deconv", ext,
            ConvParams(out_channels=inner, kernel_h=3, kernel_w=3, stride=2,
                       pad_h=1, pad_w=1, out_pad=1))
    else:
        ext = b.conv(
            f"{name}.ext.conv", ext,
            ConvParams(out_channels=inner, kernel_h=3, kernel_w=3,
                       pad_h=dilation, pad_w=dilation, dilation=dilation))
    ext = b.batchnorm(f"{name}.ext.conv_bn", ext)
    ext = b.prelu(f"{name}.ext.conv_prelu", ext)

    # extension branch: expansion, then regularizer
    ext = b.conv(f"{name}.ext.expand", ext,
                 ConvParams(out_channels=out_ch, kernel_h=1, kernel_w=1))
    ext = b.batchnorm(f"{name}.ext.expand_bn", ext)
    ext = b.dropout(f"{name}.ext.dropout", ext, dropout_rate)

    # main branch
    if kind is BottleneckKind.DOWNSAMPLING:
        main = b.maxpool(f"{name}.main.pool", src)
        main = b.pad_channels(f"{name}.main.pad", main, out_ch)
    elif kind is BottleneckKind.UPSAMPLING:
        main = b.conv(f"{name}.main.conv", src,
                      ConvParams(out_channels=out_ch, kernel_h=1, kernel_w=1))
        main = b.batchnorm(f"{name}.main.bn", main)
        main = b.max_unpool(f"{name}.main.unpool", main, unpool_source)
    else:
        main = src

    merged = b.add(f"{name}.add", main, ext)
    return b.prelu(f"{name}.prelu", merged)


def build_enet(num_classes: int, input_h: int, input_w: int) -> Graph:
    """The full encoder-decoder segmentation network."""
    if num_classes < 2:
        raise BuildError(f"need at least 2 classes, got {num_classes}")
    if input_h % 8 or input_w % 8:
        raise BuildError(
            f"input dims must be divisible by 8, got {input_h}x{input_w}"
        )
    b = GraphBuilder(Shape(3, input_h, input_w), num_classes=num_classes)
    x = build_initial_block(b)

    # stage 1: downsample to 64 channels, then 4 regular blocks
    x = build_bottleneck(b, BottleneckKind.DOWNSAMPLING, 16, 64, x,
                         name="bottleneck1.0", dropout_rate=0.01)
    for i in range(1, 5):
        x = build_bottleneck(b, BottleneckKind.REGULAR, 64, 64, x,
                             name=f"bottleneck1.{i}", dropout_rate=0.01)

    # stages 2 and 3 share one sequence; stage 3 skips the downsampler
    seq = [
        (BottleneckKind.REGULAR, 1), (BottleneckKind.DILATED, 2),
        (BottleneckKind.ASYMMETRIC5, 1), (BottleneckKind.DILATED, 4),
        (BottleneckKind.REGULAR, 1), (BottleneckKind.DILATED, 8),
        (BottleneckKind.ASYMMETRIC5, 1), (BottleneckKind.DILATED, 16),
    ]
    x = build_bottleneck(b, BottleneckKind.DOWNSAMPLING, 64, 128, x,
                         name="bottleneck2.0", dropout_rate=0.1)
    for i, (kind, rate) in enumerate(seq, start=1):
        x = build_bottleneck(b, kind, 128, 128, x, name=f"bottleneck2.{i}",
                             dilation=rate if kind is BottleneckKind.DILATED else 1,
                             dropout_rate=0.1)
    for i, (kind, rate) in enumerate(seq, start=1):
        x = build_bottleneck(b, kind, 128, 128, x, name=f"bottleneck3.{i}",
                             dilation=rate if kind is BottleneckKind.DILATED else 1,
                             dropout_rate=0.1)

    # decoder: unpool with the encoder's pooling indices
    x = build_bottleneck(b, BottleneckKind.UPSAMPLING, 128, 64, x,
                         name="bottleneck4.0", dropout_rate=0.1,
                         unpool_source=b.find("bottleneck2.0.main.pool"))
    for i in (1, 2):
        x = build_bottleneck(b, BottleneckKind.REGULAR, 64, 64, x,
                             name=f"bottleneck4.{i}", dropout_rate=0.1)
    x = build_bottleneck(b, BottleneckKind.UPSAMPLING, 64, 16, x,
                         name="bottleneck5.0", dropout_rate=0.1,
                         unpool_source=b.find("bottleneck1.0.main.pool"))
    x = build_bottleneck(b, BottleneckKind.REGULAR, 16, 16, x,
                         name="bottleneck5.1", dropout_rate=0.1)

    # bare full convolution to class scores; the only biased layer
    x = b.conv_transpose("fullconv", x,
                         ConvParams(out_channels=num_classes, kernel_h=2,
                                    kernel_w=2, stride=2, has_bias=True))
    return b.build(x)


# ---------------------------------------------------------------------------
# shape inference

def infer_shapes(g: Graph) -> dict[int, Shape]:
    """Propagate the input shape through every node; raises ValidationError
    naming the first node whose geometry is inconsistent."""
    shapes: dict[int, Shape] = {}

    def fail(n: NodeSpec, why: str):
        raise ValidationError(f"node {n.id} ({n.name}): {why}")

    for n in g.nodes:
        try:
            if n.kind is NodeKind.INPUT:
                out = check_shape(g.input_shape)
            elif n.kind is NodeKind.OUTPUT:
                out = shapes[n.inputs[0]]
            elif n.kind is NodeKind.CONV:
                c, h, w = shapes[n.inputs[0]]
                oh, ow = n.conv.conv_out_hw(h, w)
                out = Shape(n.conv.out_channels, oh, ow)
            elif n.kind is NodeKind.CONV_TRANSPOSE:
                c, h, w = shapes[n.inputs[0]]
                oh, ow = n.conv.tconv_out_hw(h, w)
                out = Shape(n.conv.out_channels, oh, ow)
            elif n.kind is NodeKind.ASYM_CONV5:
                c, h, w = shapes[n.inputs[0]]
                if c != n.conv.out_channels:
                    fail(n, f"asymmetric conv keeps channel count, got {c} in "
                            f"vs {n.conv.out_channels} out")
                oh, ow = n.conv.conv_out_hw(h, w)
                out = Shape(c, oh, ow)
            elif n.kind is NodeKind.MAXPOOL:
                c, h, w = shapes[n.inputs[0]]
                if h % 2 or w % 2:
                    fail(n, f"maxpool needs even dims, got {h}x{w}")
                out = Shape(c, h // 2, w // 2)
            elif n.kind is NodeKind.MAX_UNPOOL:
                c, h, w = shapes[n.inputs[0]]
                if n.index_link is None or n.index_link not in shapes:
                    fail(n, "unpool has no resolvable index source")
                link = g.node(n.index_link)
                if link.kind is not NodeKind.MAXPOOL:
                    fail(n, f"unpool index source {link.name} is not a maxpool")
                if shapes[n.index_link] != Shape(c, h, w):
                    fail(n, f"unpool input {Shape(c, h, w)} does not match "
                            f"index source output {shapes[n.index_link]}")
                out = Shape(c, 2 * h, 2 * w)
            elif n.kind in (NodeKind.BATCHNORM, NodeKind.PRELU, NodeKind.DROPOUT):
                out = shapes[n.inputs[0]]
            elif n.kind is NodeKind.ADD:
                a, bb = shapes[n.inputs[0]], shapes[n.inputs[1]]
                if a != bb:
                    fail(n, f"add inputs disagree: {a} vs {bb}")
                out = a
            elif n.kind is NodeKind.CONCAT:
                a, bb = shapes[n.inputs[0]], shapes[n.inputs[1]]
                if a[1:] != bb[1:]:
                    fail(n, f"concat spatial dims disagree: {a} vs {bb}")
                out = Shape(a.channels + bb.channels, a.height, a.width)
            elif n.kind is NodeKind.PAD_CHANNELS:
                c, h, w = shapes[n.inputs[0]]
                if n.target_channels < c:
                    fail(n, f"cannot pad {c} channels down to {n.target_channels}")
                out = Shape(n.target_channels, h, w)
            else:  # pragma: no cover - enum is closed
                fail(n, f"unknown node kind {n.kind}")
            shapes[n.id] = check_shape(out)
        except ShapeError as e:
            fail(n, str(e))
    return shapes


# ---------------------------------------------------------------------------
# weight initialization

def expected_weight_shapes(g: Graph) -> dict[str, tuple[int, ...]]:
    """Shape every weight-store entry must have, derived from the graph."""
    shapes = infer_shapes(g)
    out: dict[str, tuple[int, ...]] = {}
    for n in g.nodes:
        if not n.weight_refs:
            continue
        in_c = shapes[g.node(n.inputs[0]).id].channels
        if n.kind is NodeKind.CONV:
            p = n.conv
            out[n.ref("weight")] = (p.out_channels, in_c, p.kernel_h, p.kernel_w)
            if p.has_bias:
                out[n.ref("bias")] = (p.out_channels,)
        elif n.kind is NodeKind.CONV_TRANSPOSE:
            p = n.conv
            out[n.ref("weight")] = (in_c, p.out_channels, p.kernel_h, p.kernel_w)
            if p.has_bias:
                out[n.ref("bias")] = (p.out_channels,)
        elif n.kind is NodeKind.ASYM_CONV5:
            c = n.conv.out_channels
            out[n.ref("weight_5x1")] = (c, in_c, 5, 1)
            out[n.ref("weight_1x5")] = (c, c, 1, 5)
            if n.conv.has_bias:
                out[n.ref("bias")] = (c,)
        elif n.kind is NodeKind.BATCHNORM:
            for role in ("gamma", "beta", "mean", "var"):
                out[n.ref(role)] = (in_c,)
        elif n.kind is NodeKind.PRELU:
            out[n.ref("slopes")] = (in_c,)
    return out


def init_weights(g: Graph, seed: int = 0) -> dict[str, np.ndarray]:
    """Deterministic random initialization: conv weights are zero-mean
    gaussian scaled by 1/sqrt(fan-in), biases zero, BN is the identity
    transform, PReLU slopes start at 0.25."""
    rng = np.random.default_rng(seed)
    want = expected_weight_shapes(g)
    store: dict[str, np.ndarray] = {}
    for key, shp in want.items():
        role = key.rsplit(".", 1)[1]
        if role in ("weight", "weight_5x1", "weight_1x5"):
            if role == "weight" and len(shp) == 4:
                node_name = key.rsplit(".", 1)[0]
                n = g.find(node_name)
                if n.kind is NodeKind.CONV_TRANSPOSE:
                    fan_in = shp[0] * shp[2] * shp[3]  # (in, out, kh, kw)
                else:
                    fan_in = shp[1] * shp[2] * shp[3]
            else:
                fan_in = shp[1] * shp[2] * shp[3]
            store[key] = (rng.standard_normal(shp) / np.sqrt(fan_in)).astype(np.float32)
        elif role == "bias" or role in ("beta", "mean"):
            store[key] = np.zeros(shp, dtype=np.float32)
        elif role in ("gamma", "var"):
            store[key] = np.ones(shp, dtype=np.float32)
        elif role == "slopes":
            store[key] = np.full(shp, PRELU_INIT, dtype=np.float32)
        else:  # pragma: no cover - role set is closed
            raise ValidationError(f"unknown weight role in key {key!r}")
    return store
