"""Graph optimization passes and structural validation.

Both passes are semantics-preserving at inference time: batch-norm folding
rewrites conv weights so the normalization vanishes, and dropout elision
removes identity nodes.  Node ids of surviving nodes never change.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import FoldError, ValidationError
from .graph import Graph, NodeKind, NodeSpec, expected_weight_shapes

_FOLDABLE_SOURCES = (NodeKind.CONV, NodeKind.CONV_TRANSPOSE, NodeKind.ASYM_CONV5)


@dataclass(frozen=True)
class PassReport:
    """What a pass did: removed node names, rewritten node names, notes."""

    pass_name: str
    removed: tuple[str, ...]
    changed: tuple[str, ...] = ()
    notes: tuple[str, ...] = ()

    def summary(self) -> str:
        return (f"{self.pass_name}: removed {len(self.removed)} nodes, "
                f"rewrote {len(self.changed)}")


def _drop_nodes(g: Graph, dead: set[int], redirect: dict[int, int],
                patched: dict[int, NodeSpec]) -> Graph:
    """Rebuild the node tuple without `dead`, rewiring inputs through
    `redirect` and substituting `patched` specs.  Ids are preserved."""
    kept = []
    for n in g.nodes:
        if n.id in dead:
            continue
        n = patched.get(n.id, n)
        new_inputs = tuple(redirect.get(i, i) for i in n.inputs)
        if new_inputs != n.inputs:
            n = replace(n, inputs=new_inputs)
        kept.append(n)
    return Graph(nodes=tuple(kept), input_shape=g.input_shape,
                 num_classes=g.num_classes)


def fold_batchnorm(g: Graph, weights: dict[str, np.ndarray], *,
                   strict: bool = False) -> tuple[Graph, dict[str, np.ndarray], PassReport]:
    """Fold every BatchNorm that directly follows a single-consumer conv into
    that conv's weights; the conv gains a bias if it had none.

    BatchNorms that do not sit on a conv (the entry block's, which follows a
    concat) are left in place; with strict=True they raise FoldError instead.
    """
    consumers = g.consumers()
    new_store = dict(weights)
    dead: set[int] = set()
    redirect: dict[int, int] = {}
    patched: dict[int, NodeSpec] = {}
    removed, changed, notes = [], [], []

    for n in g.nodes:
        if n.kind is not NodeKind.BATCHNORM:
            continue
        src = g.node(n.inputs[0])
        if src.kind not in _FOLDABLE_SOURCES:
            why = f"{n.name}: input {src.name} is a {src.kind.value}, not a conv"
            if strict:
                raise FoldError(f"cannot fold {why}")
            notes.append(f"kept {why}")
            continue
        if len(consumers[src.id]) != 1:
            why = (f"{n.name}: conv {src.name} feeds {len(consumers[src.id])} "
                   f"consumers, folding would corrupt the others")
            if strict:
                raise FoldError(f"cannot fold {why}")
            notes.append(f"kept {why}")
            continue
        if src.id in patched:  # two BNs stacked on one conv never both fold
            notes.append(f"kept {n.name}: conv {src.name} already folded into")
            continue

        gamma = weights[n.ref("gamma")].astype(np.float64)
        beta = weights[n.ref("beta")].astype(np.float64)
        mean = weights[n.ref("mean")].astype(np.float64)
        var = weights[n.ref("var")].astype(np.float64)
        scale = gamma / np.sqrt(var + n.bn_eps)

        if src.kind is NodeKind.ASYM_CONV5:
            wkey = src.ref("weight_1x5")
            axis = 0  # (out, mid, 1, 5)
        elif src.kind is NodeKind.CONV_TRANSPOSE:
            wkey = src.ref("weight")
            axis = 1  # (in, out, kh, kw)
        else:
            wkey = src.ref("weight")
            axis = 0  # (out, in, kh, kw)
        w_old = new_store[wkey].astype(np.float64)
        shape_bcast = [1, 1, 1, 1]
        shape_bcast[axis] = len(scale)
        new_store[wkey] = (w_old * scale.reshape(shape_bcast)).astype(np.float32)

        if src.conv.has_bias:
            bias_key = src.ref("bias")
            b_old = new_store[bias_key].astype(np.float64)
            new_src = src
        else:
            bias_key = f"{src.name}.bias"
            b_old = np.zeros(len(scale), dtype=np.float64)
            new_src = replace(src, conv=replace(src.conv, has_bias=True),
                              weight_refs=src.weight_refs + (("bias", bias_key),))
        new_store[bias_key] = ((b_old - mean) * scale + beta).astype(np.float32)

        for role in ("gamma", "beta", "mean", "var"):
            del new_store[n.ref(role)]
        patched[src.id] = new_src
        dead.add(n.id)
        redirect[n.id] = src.id
        removed.append(n.name)
        changed.append(src.name)

    out = _drop_nodes(g, dead, redirect, patched)
    report = PassReport(pass_name="fold_batchnorm", removed=tuple(removed),
                        changed=tuple(changed), notes=tuple(notes))
    return out, new_store, report


def elide_dropout(g: Graph) -> tuple[Graph, PassReport]:
    """Remove every Dropout node; inference-mode spatial dropout is identity."""
    dead = {n.id for n in g.nodes if n.kind is NodeKind.DROPOUT}
    redirect = {n.id: n.inputs[0] for n in g.nodes if n.id in dead}
    # a dropout may feed another dropout; chase redirects to a live node
    for k in list(redirect):
        tgt = redirect[k]
        while tgt in redirect:
            tgt = redirect[tgt]
        redirect[k] = tgt
    removed = tuple(n.name for n in g.nodes if n.id in dead)
    out = _drop_nodes(g, dead, redirect, {})
    return out, PassReport(pass_name="elide_dropout", removed=removed)


def optimize(g: Graph, weights: dict[str, np.ndarray]) -> tuple[
        Graph, dict[str, np.ndarray], tuple[PassReport, ...]]:
    """Standard inference pipeline: fold batch norms, then drop dropout."""
    g1, w1, rep1 = fold_batchnorm(g, weights)
    g2, rep2 = elide_dropout(g1)
    return g2, w1, (rep1, rep2)


def validate(g: Graph, weights: dict[str, np.ndarray]) -> list[str]:
    """Structural and binding checks; returns human-readable diagnostics,
    empty when the graph is executable with this weight store."""
    diags: list[str] = []

    n_inputs = sum(1 for n in g.nodes if n.kind is NodeKind.INPUT)
    n_outputs = sum(1 for n in g.nodes if n.kind is NodeKind.OUTPUT)
    if n_inputs != 1:
        diags.append(f"graph must have exactly 1 input node, found {n_inputs}")
    if n_outputs != 1:
        diags.append(f"graph must have exactly 1 output node, found {n_outputs}")

    # reachability: forward from input, backward from output
    if n_inputs == 1 and n_outputs == 1:
        consumers = g.consumers()
        fwd: set[int] = set()
        stack = [g.input_node.id]
        while stack:
            nid = stack.pop()
            if nid in fwd:
                continue
            fwd.add(nid)
            stack.extend(consumers[nid])
        bwd: set[int] = set()
        stack = [g.output_node.id]
        while stack:
            nid = stack.pop()
            if nid in bwd:
                continue
            bwd.add(nid)
            node = g.node(nid)
            stack.extend(node.inputs)
            if node.index_link is not None:
                stack.append(node.index_link)
        for n in g.nodes:
            if n.id not in fwd:
                diags.append(f"node {n.id} ({n.name}) is unreachable from the input")
            elif n.id not in bwd:
                diags.append(f"node {n.id} ({n.name}) does not contribute to the output")

    for n in g.nodes:
        if n.kind is NodeKind.MAX_UNPOOL:
            if n.index_link is None:
                diags.append(f"unpool {n.name} has no index source")
            else:
                try:
                    link = g.node(n.index_link)
                    if link.kind is not NodeKind.MAXPOOL:
                        diags.append(f"unpool {n.name} index source {link.name} "
                                     f"is not a maxpool")
                except KeyError:
                    diags.append(f"unpool {n.name} index source id "
                                 f"{n.index_link} does not exist")

    try:
        want = expected_weight_shapes(g)
    except ValidationError as e:
        diags.append(f"shape inference failed: {e}")
        return diags

    for key, shp in want.items():
        if key not in weights:
            diags.append(f"missing weight {key!r} (expected shape {shp})")
        elif tuple(weights[key].shape) != tuple(shp):
            diags.append(f"weight {key!r} has shape {tuple(weights[key].shape)}, "
                         f"expected {shp}")
        elif weights[key].dtype != np.float32:
            diags.append(f"weight {key!r} has dtype {weights[key].dtype}, "
                         f"expected float32")
    for key in weights:
        if key not in want:
            diags.append(f"weight {key!r} is not referenced by any node")
    return diags
