"""Static cost analysis: parameter counts, MAC/FLOP estimates, serialized
model size, and class-balancing weights from label histograms.

Everything here is derived from the graph alone (shape inference), never
from executing kernels, so it runs in microseconds at any resolution.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import FormatError
from .graph import Graph, NodeKind, NodeSpec, expected_weight_shapes, infer_shapes
from .tensor import Shape


class FlopConvention(enum.Enum):
    """How multiply-accumulates translate to FLOPs."""

    FMA2 = "fma2"  # one MAC = 2 FLOPs (multiply + add)
    MAC = "mac"    # one MAC = 1 FLOP (fused)

    @property
    def flops_per_mac(self) -> int:
        return 2 if self is FlopConvention.FMA2 else 1


# weightless elementwise kinds charged one MAC per output element
_ELEMENTWISE = (NodeKind.BATCHNORM, NodeKind.PRELU, NodeKind.ADD,
                NodeKind.MAXPOOL, NodeKind.MAX_UNPOOL)
# data movement costs no arithmetic
_FREE = (NodeKind.INPUT, NodeKind.OUTPUT, NodeKind.CONCAT,
         NodeKind.PAD_CHANNELS, NodeKind.DROPOUT)

_CONVLIKE = (NodeKind.CONV, NodeKind.CONV_TRANSPOSE, NodeKind.ASYM_CONV5)


@dataclass(frozen=True)
class NodeCost:
    """Static cost of one node."""

    name: str
    kind: NodeKind
    out_shape: Shape
    params: int
    macs: int

    @property
    def stage(self) -> str:
        return self.name.split(".", 1)[0]


@dataclass(frozen=True)
class CostReport:
    """Per-node and aggregate cost of a graph at its build resolution."""

    input_shape: Shape
    convention: FlopConvention
    per_node: tuple[NodeCost, ...]

    @property
    def total_params(self) -> int:
        return sum(c.params for c in self.per_node)

    @property
    def total_macs(self) -> int:
        return sum(c.macs for c in self.per_node)

    @property
    def total_flops(self) -> int:
        return self.total_macs * self.convention.flops_per_mac

    def conv_macs(self) -> int:
        """MACs spent in convolution-like nodes only."""
        return sum(c.macs for c in self.per_node if c.kind in _CONVLIKE)

    def by_stage(self) -> dict[str, tuple[int, int]]:
        """Ordered stage name -> (params, macs) aggregation."""
        out: dict[str, tuple[int, int]] = {}
        for c in self.per_node:
            p, m = out.get(c.stage, (0, 0))
            out[c.stage] = (p + c.params, m + c.macs)
        return out


def _node_params(n: NodeSpec, in_c: int) -> int:
    if n.kind is NodeKind.CONV:
        p = n.conv
        return p.out_channels * in_c * p.kernel_h * p.kernel_w + \
            (p.out_channels if p.has_bias else 0)
    if n.kind is NodeKind.CONV_TRANSPOSE:
        p = n.conv
        return in_c * p.out_channels * p.kernel_h * p.kernel_w + \
            (p.out_channels if p.has_bias else 0)
    if n.kind is NodeKind.ASYM_CONV5:
        c = n.conv.out_channels
        return c * in_c * 5 + c * c * 5 + (c if n.conv.has_bias else 0)
    if n.kind is NodeKind.BATCHNORM:
        return 4 * in_c
    if n.kind is NodeKind.PRELU:
        return in_c
    return 0


def _node_macs(n: NodeSpec, in_shape: Shape, out_shape: Shape) -> int:
    if n.kind is NodeKind.CONV:
        p = n.conv
        return out_shape.count * in_shape.channels * p.kernel_h * p.kernel_w
    if n.kind is NodeKind.CONV_TRANSPOSE:
        # each input element is read once per (out channel, kernel tap)
        p = n.conv
        return in_shape.count * p.out_channels * p.kernel_h * p.kernel_w
    if n.kind is NodeKind.ASYM_CONV5:
        c = n.conv.out_channels
        return out_shape.count * in_shape.channels * 5 + out_shape.count * c * 5
    if n.kind in _ELEMENTWISE:
        return out_shape.count
    return 0


def count_params(g: Graph) -> int:
    """Total trainable parameters in the graph."""
    shapes = infer_shapes(g)
    total = 0
    for n in g.nodes:
        if n.weight_refs or n.kind in _CONVLIKE:
            total += _node_params(n, shapes[n.inputs[0]].channels)
    return total


def count_flops(g: Graph,
                convention: FlopConvention = FlopConvention.FMA2) -> CostReport:
    """Per-node MAC/parameter census at the graph's build resolution."""
    shapes = infer_shapes(g)
    per_node = []
    for n in g.nodes:
        in_shape = shapes[n.inputs[0]] if n.inputs else shapes[n.id]
        params = _node_params(n, in_shape.channels) if (
            n.weight_refs or n.kind in _CONVLIKE) else 0
        per_node.append(NodeCost(name=n.name, kind=n.kind,
                                 out_shape=shapes[n.id], params=params,
                                 macs=_node_macs(n, in_shape, shapes[n.id])))
    return CostReport(input_shape=g.input_shape, convention=convention,
                      per_node=tuple(per_node))


@dataclass(frozen=True)
class SizeReport:
    """Serialized model footprint at a given storage precision."""

    params: int
    payload_bytes: int    # raw tensor data
    container_bytes: int  # payload plus headers and record metadata

    @property
    def payload_mb(self) -> float:
        return self.payload_bytes / 1e6

    @property
    def container_mb(self) -> float:
        return self.container_bytes / 1e6


def model_size_fp16(g: Graph) -> SizeReport:
    """Size of the model serialized with half-precision tensor payloads."""
    want = expected_weight_shapes(g)
    params = count_params(g)
    payload = 2 * params
    container = 12  # magic + version + record count
    for name, shp in want.items():
        container += 2 + len(name.encode("utf-8")) + 1 + 1 + 4 * len(shp)
    container += payload
    return SizeReport(params=params, payload_bytes=payload,
                      container_bytes=container)


# ---------------------------------------------------------------------------
# class-balancing weights

@dataclass(frozen=True)
class ClassHistogram:
    """Pixel counts per class label."""

    labels: tuple[str, ...]
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        object.__setattr__(self, "counts", counts)
        if len(self.labels) != len(counts):
            raise FormatError(
                f"{len(self.labels)} labels but {len(counts)} counts")
        if len(set(self.labels)) != len(self.labels):
            raise FormatError("duplicate class labels in histogram")
        if counts.ndim != 1 or np.any(counts < 0):
            raise FormatError("histogram counts must be non-negative integers")
        if counts.sum() == 0:
            raise FormatError("histogram is empty (all counts zero)")

    @property
    def probabilities(self) -> np.ndarray:
        return self.counts / self.counts.sum()


def load_histogram(path) -> ClassHistogram:
    """Parse a histogram text file: one `<label> <pixel_count>` pair per
    line; blank lines and `#` comments are ignored."""
    labels: list[str] = []
    counts: list[int] = []
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.readlines()
    except OSError as e:
        raise FormatError(f"cannot read histogram {path}: {e}") from e
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise FormatError(
                f"{path}:{lineno}: expected '<label> <count>', got {raw.strip()!r}")
        label, count_s = parts
        try:
            count = int(count_s)
        except ValueError:
            raise FormatError(
                f"{path}:{lineno}: count {count_s!r} is not an integer") from None
        if count < 0:
            raise FormatError(f"{path}:{lineno}: negative count {count}")
        if label in labels:
            raise FormatError(f"{path}:{lineno}: duplicate label {label!r}")
        labels.append(label)
        counts.append(count)
    if not labels:
        raise FormatError(f"{path}: no histogram entries")
    return ClassHistogram(labels=tuple(labels), counts=np.array(counts, dtype=np.int64))


def compute_class_weights(hist: ClassHistogram, c: float = 1.02) -> np.ndarray:
    """Inverse-log class weighting: w = 1 / ln(c + p_class).

    Rare classes get large weights; the spread is bounded by
    [1/ln(c+1), 1/ln(c)], which for the default c is roughly [1.42, 50.5].
    """
    if not c > 1.0:
        raise ValueError(f"weighting constant c must be > 1, got {c}")
    p = hist.probabilities
    return 1.0 / np.log(c + p)


def bound_class_weights(c: float = 1.02) -> tuple[float, float]:
    """The (min, max) weights reachable for a given c."""
    return 1.0 / math.log(c + 1.0), 1.0 / math.log(c)
