"""Optimization passes: batch-norm folding math, dropout elision, pass
composition, and structural validation diagnostics."""

from dataclasses import replace

import numpy as np
import pytest

from enetcpu.errors import FoldError
from enetcpu.graph import (
    Graph,
    GraphBuilder,
    NodeKind,
    build_enet,
    init_weights,
)
from enetcpu.kernels import ConvParams
from enetcpu.passes import elide_dropout, fold_batchnorm, optimize, validate
from enetcpu.runtime import execute
from enetcpu.tensor import Shape, approx_eq

F32 = np.float32


def _perturb_bn_stats(store, seed):
    """Give BN layers non-trivial statistics so folding has real work to do."""
    rng = np.random.default_rng(seed)
    out = dict(store)
    for key, arr in store.items():
        role = key.rsplit(".", 1)[1]
        if role == "gamma":
            out[key] = (0.7 + 0.6 * rng.random(arr.shape)).astype(F32)
        elif role == "var":
            out[key] = (0.5 + rng.random(arr.shape)).astype(F32)
        elif role in ("beta", "mean"):
            out[key] = (rng.random(arr.shape) - 0.5).astype(F32)
    return out


# ---------------------------------------------------------------------------
# fold_batchnorm

def test_fold_scalar_math():
    # gamma=2, beta=0.5, mean=1, var=1, eps=0 over weight w: W'=2w, b'=-1.5
    b = GraphBuilder(Shape(1, 4, 4))
    c = b.conv("c", b.input_id, ConvParams(out_channels=1, kernel_h=1, kernel_w=1))
    bn = b.batchnorm("n", c, eps=0.0)
    g = b.build(bn)
    w = {
        "c.weight": np.full((1, 1, 1, 1), 3.0, dtype=F32),
        "n.gamma": np.array([2.0], dtype=F32),
        "n.beta": np.array([0.5], dtype=F32),
        "n.mean": np.array([1.0], dtype=F32),
        "n.var": np.array([1.0], dtype=F32),
    }
    g2, w2, report = fold_batchnorm(g, w)
    assert report.removed == ("n",)
    assert w2["c.weight"][0, 0, 0, 0] == pytest.approx(6.0)
    assert w2["c.bias"][0] == pytest.approx(-1.5)
    assert not any(k.startswith("n.") for k in w2)
    conv = g2.find("c")
    assert conv.conv.has_bias
    assert validate(g2, w2) == []


def test_fold_preserves_outputs_on_mixed_conv_kinds():
    # conv + transposed conv + asymmetric conv, each followed by BN with
    # non-trivial statistics; folded graph must reproduce the original
    b = GraphBuilder(Shape(4, 8, 8))
    x = b.conv("c1", b.input_id, ConvParams(out_channels=8, kernel_h=3,
                                            kernel_w=3, pad_h=1, pad_w=1))
    x = b.batchnorm("c1_bn", x)
    x = b.prelu("c1_act", x)
    x = b.conv_transpose("up", x, ConvParams(out_channels=4, kernel_h=2,
                                             kernel_w=2, stride=2))
    x = b.batchnorm("up_bn", x)
    x = b.asym_conv5("asym", x, 4)
    x = b.batchnorm("asym_bn", x)
    g = b.build(x)
    w = _perturb_bn_stats(init_weights(g, seed=1), seed=2)

    g2, w2, report = fold_batchnorm(g, w)
    assert set(report.removed) == {"c1_bn", "up_bn", "asym_bn"}
    assert len(g2.nodes) == len(g.nodes) - 3
    assert validate(g2, w2) == []

    rng = np.random.default_rng(3)
    xin = rng.random((4, 8, 8), dtype=F32)
    base = execute(g, w, xin)
    fused = execute(g2, w2, xin)
    assert approx_eq(fused, base, atol=1e-5, rtol=1e-5)


def test_fold_skips_bn_after_non_conv_by_default():
    b = GraphBuilder(Shape(2, 4, 4))
    p = b.prelu("act", b.input_id)
    bn = b.batchnorm("bn", p)
    g = b.build(bn)
    w = init_weights(g, seed=0)
    g2, w2, report = fold_batchnorm(g, w)
    assert report.removed == ()
    assert any("bn" in note for note in report.notes)
    assert [n.name for n in g2.nodes] == [n.name for n in g.nodes]
    with pytest.raises(FoldError, match="bn"):
        fold_batchnorm(g, w, strict=True)


def test_fold_refuses_shared_conv_output():
    # the conv feeds both a BN and a second consumer: folding would change
    # what the second consumer sees
    b = GraphBuilder(Shape(2, 4, 4))
    c = b.conv("c", b.input_id, ConvParams(out_channels=2, kernel_h=1, kernel_w=1))
    bn = b.batchnorm("bn", c)
    s = b.add("shortcut", c, bn)
    g = b.build(s)
    w = init_weights(g, seed=0)
    g2, _, report = fold_batchnorm(g, w)
    assert report.removed == ()
    assert any("shortcut" in note or "2 consumers" in note for note in report.notes)
    with pytest.raises(FoldError):
        fold_batchnorm(g, w, strict=True)


def test_fold_enet_removes_all_but_the_post_concat_bn():
    g = build_enet(19, 64, 64)
    w = init_weights(g, seed=0)
    g2, w2, report = fold_batchnorm(g, w)
    assert len(report.removed) == 83
    remaining = [n.name for n in g2.nodes if n.kind is NodeKind.BATCHNORM]
    assert remaining == ["initial.bn"]
    assert len(g2.nodes) == 315 - 83
    assert validate(g2, w2) == []
    # folding something twice is a no-op
    g3, w3, report2 = fold_batchnorm(g2, w2)
    assert report2.removed == ()
    assert [n.name for n in g3.nodes] == [n.name for n in g2.nodes]


# ---------------------------------------------------------------------------
# elide_dropout

def test_elide_dropout_on_enet_removes_one_per_bottleneck():
    g = build_enet(19, 64, 64)
    g2, report = elide_dropout(g)
    assert len(report.removed) == 27
    assert all(name.endswith(".ext.dropout") for name in report.removed)
    assert not any(n.kind is NodeKind.DROPOUT for n in g2.nodes)
    assert len(g2.nodes) == 315 - 27
    g3, report2 = elide_dropout(g2)
    assert report2.removed == ()


def test_elide_dropout_preserves_execution_bitwise():
    b = GraphBuilder(Shape(4, 8, 8))
    x = b.conv("c", b.input_id, ConvParams(out_channels=4, kernel_h=3,
                                           kernel_w=3, pad_h=1, pad_w=1))
    x = b.dropout("d1", x, 0.1)
    x = b.dropout("d2", x, 0.01)  # chained dropouts must redirect through
    x = b.prelu("act", x)
    g = b.build(x)
    w = init_weights(g, seed=4)
    g2, report = elide_dropout(g)
    assert report.removed == ("d1", "d2")
    rng = np.random.default_rng(5)
    xin = rng.random((4, 8, 8), dtype=F32)
    np.testing.assert_array_equal(execute(g, w, xin), execute(g2, w, xin))


# ---------------------------------------------------------------------------
# pass composition

def test_pass_order_does_not_matter():
    g = build_enet(7, 64, 64)
    w = _perturb_bn_stats(init_weights(g, seed=6), seed=7)
    a_g, a_w, _ = fold_batchnorm(g, w)
    a_g, _ = elide_dropout(a_g)
    b_g, _ = elide_dropout(g)
    b_g, b_w, _ = fold_batchnorm(b_g, w)
    assert a_g.nodes == b_g.nodes
    assert set(a_w) == set(b_w)
    assert all(np.array_equal(a_w[k], b_w[k]) for k in a_w)


def test_optimize_runs_both_passes():
    g = build_enet(5, 64, 64)
    w = init_weights(g, seed=8)
    g2, w2, reports = optimize(g, w)
    assert [r.pass_name for r in reports] == ["fold_batchnorm", "elide_dropout"]
    assert len(g2.nodes) == 315 - 83 - 27
    assert validate(g2, w2) == []


def test_full_network_equivalence_after_optimize():
    g = build_enet(19, 64, 64)
    w = _perturb_bn_stats(init_weights(g, seed=9), seed=10)
    g2, w2, _ = optimize(g, w)
    rng = np.random.default_rng(11)
    x = rng.random((3, 64, 64), dtype=F32)
    base = execute(g, w, x)
    fused = execute(g2, w2, x)
    assert base.shape == fused.shape == (19, 64, 64)
    assert approx_eq(fused, base, atol=1e-4, rtol=1e-4)
    assert len(g2.nodes) < len(g.nodes)


# ---------------------------------------------------------------------------
# validate

def test_validate_clean_network():
    g = build_enet(19, 64, 64)
    assert validate(g, init_weights(g, seed=0)) == []


def test_validate_reports_weight_problems():
    g = build_enet(5, 64, 64)
    w = init_weights(g, seed=0)

    missing = dict(w)
    del missing["initial.conv.weight"]
    assert any("initial.conv.weight" in d for d in validate(g, missing))

    wrong = dict(w)
    wrong["initial.conv.weight"] = np.zeros((13, 3, 5, 5), dtype=F32)
    assert any("shape" in d and "initial.conv.weight" in d for d in validate(g, wrong))

    cast = dict(w)
    cast["initial.bn.gamma"] = w["initial.bn.gamma"].astype(np.float64)
    assert any("dtype" in d for d in validate(g, cast))

    extra = dict(w)
    extra["leftover.weight"] = np.zeros(3, dtype=F32)
    assert any("not referenced" in d for d in validate(g, extra))


def test_validate_reports_detached_nodes():
    b = GraphBuilder(Shape(2, 4, 4))
    main = b.prelu("act", b.input_id)
    b.conv("orphan", b.input_id, ConvParams(out_channels=2, kernel_h=1, kernel_w=1))
    g = b.build(main)
    w = init_weights(g, seed=0)
    diags = validate(g, w)
    assert any("orphan" in d and "output" in d for d in diags)


def test_validate_reports_bad_unpool_link():
    b = GraphBuilder(Shape(2, 8, 8))
    pool = b.maxpool("pool", b.input_id)
    up = b.max_unpool("up", pool, pool)
    g = b.build(up)
    # corrupt the link to point at a non-pool node
    bad_nodes = tuple(
        replace(n, index_link=0) if n.name == "up" else n for n in g.nodes
    )
    bad = Graph(nodes=bad_nodes, input_shape=g.input_shape,
                num_classes=g.num_classes)
    diags = validate(bad, {})
    assert any("up" in d and "not a maxpool" in d for d in diags)


def test_validate_reports_shape_inference_failure():
    b = GraphBuilder(Shape(2, 5, 5))
    pool = b.maxpool("pool", b.input_id)  # odd dims cannot pool
    g = b.build(pool)
    diags = validate(g, {})
    assert any("shape inference failed" in d for d in diags)
