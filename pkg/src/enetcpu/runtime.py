"""Graph execution: buffer planning, the interpreter loop, label extraction,
and latency measurement.

Planning assigns every intermediate value to a reusable arena slot via
liveness analysis.  Execution with and without a plan is bitwise identical:
kernels always compute into fresh arrays and planned mode copies results into
slot views, so a planning bug shows up as corrupted values (or poisoned NaNs
in debug mode) instead of silent reuse.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import CorruptIndicesError, ExecutionError, ShapeError
from .graph import Graph, NodeKind, infer_shapes
from .kernels import (
    BnParams,
    add,
    batchnorm_infer,
    concat_channels,
    conv2d,
    conv_asymmetric5,
    conv_transpose2d,
    max_unpool2x2,
    maxpool2x2,
    pad_channels,
    prelu,
    spatial_dropout_infer,
)
from .passes import validate
from .tensor import Shape

_BYTES_F32 = 4


@dataclass(frozen=True)
class ExecutionPlan:
    """Slot assignment for every intermediate value.

    peak_bytes is the arena high-water mark (sum of slot sizes);
    no_reuse_bytes is what holding every intermediate alive would cost.
    Pool nodes in `retained` keep their index arrays alive past normal
    liveness because a later unpool consumes them.
    """

    order: tuple[int, ...]
    slot_of: dict[int, int]
    slot_sizes: tuple[int, ...]
    peak_bytes: int
    no_reuse_bytes: int
    retained: frozenset[int]


def plan_buffers(g: Graph) -> ExecutionPlan:
    """Greedy liveness-driven slot assignment over topological order."""
    shapes = infer_shapes(g)
    order = tuple(n.id for n in g.nodes)
    pos = {nid: i for i, nid in enumerate(order)}

    last_use: dict[int, int] = {}
    for n in g.nodes:
        for src in n.inputs:
            last_use[src] = max(last_use.get(src, -1), pos[n.id])

    retained = frozenset(n.index_link for n in g.nodes
                         if n.kind is NodeKind.MAX_UNPOOL and n.index_link is not None)

    slot_of: dict[int, int] = {}
    slot_sizes: list[int] = []
    free: list[int] = []  # currently unassigned slot ids
    no_reuse = 0

    for n in g.nodes:
        if n.kind in (NodeKind.INPUT, NodeKind.OUTPUT):
            continue
        need = shapes[n.id].count * _BYTES_F32
        no_reuse += need
        # best-fit among free slots; inputs still live, so their slots are
        # not in `free` and the no-aliasing rule holds by construction
        best = -1
        for s in free:
            if slot_sizes[s] >= need and (best < 0 or slot_sizes[s] < slot_sizes[best]):
                best = s
        if best >= 0:
            free.remove(best)
            slot_of[n.id] = best
        else:
            slot_of[n.id] = len(slot_sizes)
            slot_sizes.append(need)
        # release inputs that die at this node (their last consumer is us)
        for src in set(n.inputs):
            if last_use.get(src) == pos[n.id] and src in slot_of:
                free.append(slot_of[src])
        free.sort()

    return ExecutionPlan(order=order, slot_of=slot_of,
                         slot_sizes=tuple(slot_sizes),
                         peak_bytes=sum(slot_sizes), no_reuse_bytes=no_reuse,
                         retained=retained)


def _node_value(n, g, weights, vals, pool_idx, shapes):
    """Run one node's kernel and return its output array."""
    a = vals[n.inputs[0]] if n.inputs else None
    if n.kind is NodeKind.CONV:
        bias = weights[n.ref("bias")] if n.conv.has_bias else None
        return conv2d(a, weights[n.ref("weight")], bias, n.conv)
    if n.kind is NodeKind.CONV_TRANSPOSE:
        bias = weights[n.ref("bias")] if n.conv.has_bias else None
        return conv_transpose2d(a, weights[n.ref("weight")], bias,
                                stride=n.conv.stride, pad=n.conv.pad_h,
                                out_pad=n.conv.out_pad)
    if n.kind is NodeKind.ASYM_CONV5:
        bias = weights[n.ref("bias")] if n.conv.has_bias else None
        return conv_asymmetric5(a, weights[n.ref("weight_5x1")],
                                weights[n.ref("weight_1x5")], bias)
    if n.kind is NodeKind.MAX_UNPOOL:
        if n.index_link not in pool_idx:
            raise ExecutionError(
                f"unpool {n.name}: pooling indices of node {n.index_link} "
                f"are not available")
        idx = pool_idx[n.index_link]
        if np.any(idx < 0):
            raise CorruptIndicesError(
                f"unpool {n.name}: consumed or poisoned pooling indices")
        out_shape = shapes[n.id]
        return max_unpool2x2(a, idx, out_shape.height, out_shape.width)
    if n.kind is NodeKind.BATCHNORM:
        p = BnParams(gamma=weights[n.ref("gamma")], beta=weights[n.ref("beta")],
                     mean=weights[n.ref("mean")], var=weights[n.ref("var")],
                     eps=n.bn_eps)
        return batchnorm_infer(a, p)
    if n.kind is NodeKind.PRELU:
        return prelu(a, weights[n.ref("slopes")])
    if n.kind is NodeKind.ADD:
        return add(a, vals[n.inputs[1]])
    if n.kind is NodeKind.CONCAT:
        return concat_channels(a, vals[n.inputs[1]])
    if n.kind is NodeKind.PAD_CHANNELS:
        return pad_channels(a, n.target_channels)
    if n.kind is NodeKind.DROPOUT:
        return spatial_dropout_infer(a)
    raise ExecutionError(f"node {n.name}: no kernel for {n.kind}")  # pragma: no cover


def execute(g: Graph, weights: dict[str, np.ndarray], x: np.ndarray,
            plan: Optional[ExecutionPlan] = None, *, check: bool = True,
            poison: bool = False) -> np.ndarray:
    """Run the graph over one input tensor and return the output tensor.

    With a plan, intermediates live in the plan's arena slots; poison=True
    additionally overwrites freed slots with NaN (and dead pooling indices
    with -1) so any liveness bug turns into a loud failure.
    """
    if check:
        diags = validate(g, weights)
        if diags:
            raise ExecutionError("graph failed validation: " + "; ".join(diags[:5]))
    x = np.ascontiguousarray(x, dtype=np.float32)
    if x.ndim != 3 or Shape(*x.shape) != g.input_shape:
        raise ExecutionError(
            f"input shape {'x'.join(map(str, x.shape))} does not match the "
            f"graph input {g.input_shape}")

    shapes = infer_shapes(g)
    pos = {n.id: i for i, n in enumerate(g.nodes)}
    last_use: dict[int, int] = {}
    for n in g.nodes:
        for src in n.inputs:
            last_use[src] = max(last_use.get(src, -1), pos[n.id])
    idx_last_use = {}
    for n in g.nodes:
        if n.kind is NodeKind.MAX_UNPOOL and n.index_link is not None:
            idx_last_use[n.index_link] = max(idx_last_use.get(n.index_link, -1),
                                             pos[n.id])

    arena = None
    if plan is not None:
        arena = [np.empty(size // _BYTES_F32, dtype=np.float32)
                 for size in plan.slot_sizes]
        if poison:
            for buf in arena:
                buf.fill(np.nan)

    vals: dict[int, np.ndarray] = {}
    pool_idx: dict[int, np.ndarray] = {}
    result: Optional[np.ndarray] = None

    for i, n in enumerate(g.nodes):
        if n.kind is NodeKind.INPUT:
            vals[n.id] = x
        elif n.kind is NodeKind.OUTPUT:
            result = vals[n.inputs[0]].copy()
        elif n.kind is NodeKind.MAXPOOL:
            res = maxpool2x2(vals[n.inputs[0]])
            pool_idx[n.id] = res.indices
            vals[n.id] = _store(res.values, n, plan, arena, shapes)
        else:
            out = _node_value(n, g, weights, vals, pool_idx, shapes)
            vals[n.id] = _store(out, n, plan, arena, shapes)

        # free values/indices whose last consumer just ran
        for src in set(n.inputs):
            if last_use.get(src) == i and src in vals:
                if poison and plan is not None and src in plan.slot_of:
                    vals[src][...] = np.nan
                del vals[src]
        if n.kind is NodeKind.MAX_UNPOOL and idx_last_use.get(n.index_link) == i:
            if poison:
                pool_idx[n.index_link].fill(-1)
            del pool_idx[n.index_link]

    if result is None:  # pragma: no cover - graphs always carry an output node
        raise ExecutionError("graph has no output node")
    return result


def _store(out: np.ndarray, n, plan, arena, shapes):
    """Park a node's result in its arena slot (planned) or keep it (unplanned)."""
    if plan is None:
        return out
    slot = plan.slot_of[n.id]
    view = arena[slot][: shapes[n.id].count].reshape(tuple(shapes[n.id]))
    view[...] = out
    return view


def argmax_labels(logits: np.ndarray) -> np.ndarray:
    """Per-pixel class with the highest score; ties go to the lowest index."""
    if logits.ndim != 3:
        raise ShapeError(f"logits must be CHW, got ndim={logits.ndim}")
    if logits.shape[0] < 2:
        raise ShapeError(f"need at least 2 class maps, got {logits.shape[0]}")
    return np.argmax(logits, axis=0).astype(np.int64)


@dataclass(frozen=True)
class BenchResult:
    """Latency measurement for one graph at one resolution."""

    shape: Shape
    warmup: int
    iters: int
    mean_ms: float
    std_ms: float

    @property
    def fps(self) -> float:
        return 1000.0 / self.mean_ms if self.mean_ms > 0 else float("inf")


def benchmark(g: Graph, weights: dict[str, np.ndarray], input_shape: Shape,
              warmup: int = 1, iters: int = 5, seed: int = 0) -> BenchResult:
    """Time planned execution of the graph over a fixed random input."""
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    if warmup < 0:
        raise ValueError(f"warmup must be >= 0, got {warmup}")
    input_shape = Shape(*input_shape)
    if input_shape != g.input_shape:
        raise ExecutionError(
            f"benchmark shape {input_shape} does not match graph input "
            f"{g.input_shape}")
    rng = np.random.default_rng(seed)
    x = rng.random(tuple(input_shape), dtype=np.float32)
    plan = plan_buffers(g)
    execute(g, weights, x, plan)  # one checked pass; timed passes skip checks
    for _ in range(warmup):
        execute(g, weights, x, plan, check=False)
    times = []
    for _ in range(iters):
        t0 = time.perf_counter()
        execute(g, weights, x, plan, check=False)
        times.append((time.perf_counter() - t0) * 1000.0)
    mean = float(np.mean(times))
    std = float(np.std(times))
    return BenchResult(shape=input_shape, warmup=warmup, iters=iters,
                       mean_ms=mean, std_ms=std)
