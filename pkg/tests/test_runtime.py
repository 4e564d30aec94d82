"""Runtime: buffer planning, interpreter correctness (planned == unplanned,
bitwise), pooled-index retention, labels, and benchmarking."""

import numpy as np
import pytest

from enetcpu.errors import ExecutionError, ShapeError
from enetcpu.graph import GraphBuilder, build_enet, init_weights
from enetcpu.kernels import ConvParams
from enetcpu.runtime import (
    BenchResult,
    argmax_labels,
    benchmark,
    execute,
    plan_buffers,
)
from enetcpu.tensor import Shape

F32 = np.float32


def _chain_graph():
    """input -> conv -> prelu -> conv -> output, all one shape."""
    b = GraphBuilder(Shape(4, 8, 8))
    x = b.conv("c1", b.input_id, ConvParams(out_channels=4, kernel_h=3,
                                            kernel_w=3, pad_h=1, pad_w=1))
    x = b.prelu("p1", x)
    x = b.conv("c2", x, ConvParams(out_channels=4, kernel_h=1, kernel_w=1))
    return b.build(x)


# ---------------------------------------------------------------------------
# planning

def test_plan_chain_reuses_one_slot():
    g = _chain_graph()
    plan = plan_buffers(g)
    # three equal-sized intermediates over a linear chain need two slots
    assert len(plan.slot_sizes) == 2
    assert plan.peak_bytes == 2 * 4 * 8 * 8 * 4
    assert plan.no_reuse_bytes == 3 * 4 * 8 * 8 * 4
    assert plan.peak_bytes < plan.no_reuse_bytes


def test_plan_add_inputs_get_distinct_slots():
    b = GraphBuilder(Shape(2, 4, 4))
    left = b.conv("l", b.input_id, ConvParams(out_channels=2, kernel_h=1, kernel_w=1))
    right = b.conv("r", b.input_id, ConvParams(out_channels=2, kernel_h=1, kernel_w=1))
    s = b.add("s", left, right)
    g = b.build(s)
    plan = plan_buffers(g)
    assert plan.slot_of[g.find("l").id] != plan.slot_of[g.find("r").id]
    # the sum may not alias either addend
    assert plan.slot_of[g.find("s").id] not in (
        plan.slot_of[g.find("l").id], plan.slot_of[g.find("r").id])


def test_plan_never_aliases_output_with_live_inputs():
    g = build_enet(19, 64, 64)
    plan = plan_buffers(g)
    pos = {nid: i for i, nid in enumerate(plan.order)}
    last_use = {}
    for n in g.nodes:
        for src in n.inputs:
            last_use[src] = max(last_use.get(src, -1), pos[n.id])
    for n in g.nodes:
        if n.id not in plan.slot_of:
            continue
        for src in n.inputs:
            if src in plan.slot_of:
                assert plan.slot_of[src] != plan.slot_of[n.id], n.name
        # no other node whose value is still live shares our slot
        for other in g.nodes:
            if other.id == n.id or other.id not in plan.slot_of:
                continue
            if pos[other.id] < pos[n.id] and last_use.get(other.id, -1) > pos[n.id]:
                assert plan.slot_of[other.id] != plan.slot_of[n.id], \
                    f"{n.name} would clobber live {other.name}"


def test_plan_enet_reuse_beats_no_reuse():
    g = build_enet(19, 128, 128)
    plan = plan_buffers(g)
    assert plan.peak_bytes < plan.no_reuse_bytes
    # reuse should be dramatic on a 315-node graph, not marginal
    assert plan.peak_bytes < plan.no_reuse_bytes // 5
    assert len(plan.retained) == 2  # two encoder pools feed decoder unpools


# ---------------------------------------------------------------------------
# execution

def test_execute_planned_equals_unplanned_bitwise_on_random_graphs():
    for seed in range(50):
        rng = np.random.default_rng(seed)
        b = GraphBuilder(Shape(4, 8, 8))
        vals = [b.conv("c0", b.input_id,
                       ConvParams(out_channels=4, kernel_h=1, kernel_w=1))]
        for i in range(int(rng.integers(3, 12))):
            choice = rng.integers(0, 4)
            src = vals[-1]
            if choice == 0:
                nid = b.conv(f"conv{i}", src,
                             ConvParams(out_channels=4, kernel_h=3, kernel_w=3,
                                        pad_h=1, pad_w=1))
            elif choice == 1:
                nid = b.prelu(f"act{i}", src)
            elif choice == 2:
                nid = b.batchnorm(f"bn{i}", src)
            else:
                other = vals[int(rng.integers(0, len(vals)))]
                nid = b.add(f"add{i}", src, other)
            vals.append(nid)
        g = b.build(vals[-1])
        w = init_weights(g, seed=seed)
        x = rng.random((4, 8, 8), dtype=F32)
        plain = execute(g, w, x)
        planned = execute(g, w, x, plan_buffers(g))
        np.testing.assert_array_equal(plain, planned)
        assert np.all(np.isfinite(plain))


def test_execute_through_pool_unpool_with_retained_indices():
    for seed in range(10):
        b = GraphBuilder(Shape(4, 8, 8))
        pre = b.conv("pre", b.input_id,
                     ConvParams(out_channels=4, kernel_h=1, kernel_w=1))
        pool = b.maxpool("pool", pre)
        mid = b.conv("mid", pool, ConvParams(out_channels=4, kernel_h=1, kernel_w=1))
        up = b.max_unpool("up", mid, pool)
        merged = b.add("merge", pre, up)  # forces `pre` to stay live across the dip
        out = b.prelu("out", merged)
        g = b.build(out)
        w = init_weights(g, seed=seed)
        rng = np.random.default_rng(100 + seed)
        x = rng.random((4, 8, 8), dtype=F32)
        plain = execute(g, w, x)
        planned = execute(g, w, x, plan_buffers(g))
        np.testing.assert_array_equal(plain, planned)


def test_execute_full_enet_planned_poisoned_and_plain_agree():
    g = build_enet(5, 64, 64)
    w = init_weights(g, seed=1)
    rng = np.random.default_rng(2)
    x = rng.random((3, 64, 64), dtype=F32)
    plain = execute(g, w, x)
    planned = execute(g, w, x, plan_buffers(g))
    poisoned = execute(g, w, x, plan_buffers(g), poison=True)
    np.testing.assert_array_equal(plain, planned)
    np.testing.assert_array_equal(plain, poisoned)
    assert plain.shape == (5, 64, 64)
    assert np.all(np.isfinite(plain))


def test_execute_is_deterministic_across_runs():
    g = build_enet(4, 64, 64)
    w = init_weights(g, seed=3)
    rng = np.random.default_rng(4)
    x = rng.random((3, 64, 64), dtype=F32)
    runs = [execute(g, w, x, plan_buffers(g)) for _ in range(3)]
    assert np.array_equal(runs[0], runs[1]) and np.array_equal(runs[1], runs[2])


def test_execute_rejects_wrong_input_shape_and_bad_store():
    g = build_enet(4, 64, 64)
    w = init_weights(g, seed=0)
    with pytest.raises(ExecutionError, match="input"):
        execute(g, w, np.zeros((3, 32, 32), dtype=F32))
    bad = dict(w)
    del bad["fullconv.bias"]
    with pytest.raises(ExecutionError, match="validation"):
        execute(g, bad, np.zeros((3, 64, 64), dtype=F32))


# ---------------------------------------------------------------------------
# labels

def test_argmax_labels_tie_breaks_low_and_matches_scan():
    tie = np.zeros((3, 2, 2), dtype=F32)
    np.testing.assert_array_equal(argmax_labels(tie), np.zeros((2, 2), dtype=np.int64))

    rng = np.random.default_rng(5)
    logits = rng.random((7, 9, 11), dtype=F32)
    got = argmax_labels(logits)
    assert got.shape == (9, 11) and got.dtype == np.int64
    for y in range(9):
        for x in range(11):
            best = 0
            for c in range(1, 7):
                if logits[c, y, x] > logits[best, y, x]:
                    best = c
            assert got[y, x] == best


def test_argmax_labels_needs_two_classes():
    with pytest.raises(ShapeError):
        argmax_labels(np.zeros((1, 4, 4), dtype=F32))


# ---------------------------------------------------------------------------
# benchmark

def test_benchmark_single_iteration_has_zero_std():
    g = build_enet(4, 64, 64)
    w = init_weights(g, seed=0)
    res = benchmark(g, w, Shape(3, 64, 64), warmup=0, iters=1)
    assert isinstance(res, BenchResult)
    assert res.iters == 1 and res.warmup == 0
    assert res.std_ms == 0.0
    assert res.mean_ms > 0.0
    assert res.fps == pytest.approx(1000.0 / res.mean_ms)


def test_benchmark_validates_arguments():
    g = build_enet(4, 64, 64)
    w = init_weights(g, seed=0)
    with pytest.raises(ValueError):
        benchmark(g, w, Shape(3, 64, 64), warmup=0, iters=0)
    with pytest.raises(ExecutionError):
        benchmark(g, w, Shape(3, 32, 32), warmup=0, iters=1)
