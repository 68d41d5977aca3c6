"""Structural rewrites: filter removal and mirrored inner-layer removal.

Both rewrites return a *new* validated (graph, weights) pair; inputs are
never mutated.  Filter removal deletes output channels from conv layers and
propagates the deletion to every consumer: norms lose the matching entries,
downstream conv kernels lose the matching input slices, and concatenations
renumber their surviving channels with original-width offsets.

``remove_inner_layers`` cuts the innermost encoder/decoder stage pairs of the
8-stage U-Net, widening nothing: the surviving innermost decoder keeps (by
default) the half of its kernel that always read the skip connection, and is
rewired to consume the new bottleneck directly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from .criteria import PlanError, PruningPlan, RemoveLayerPair, validate_plan
from .graph import (ActSpec, ConcatSpec, ConvSpec, ConvTransposeSpec,
                    GeneratorGraph, InputSpec, LayerNode, NormSpec, OutputSpec,
                    topological_order, validate)
from .weights import KERNEL_INIT_STD, WeightStore, validate_weights

LAYER_REMOVAL_POLICIES = ("skip", "average", "reinit")


@dataclass(frozen=True)
class ChannelMap:
    """Which original channels of a node's output survive, in order.

    ``kept[new_index] = original_index``; strictly increasing.
    """

    kept: tuple[int, ...]
    original_width: int

    @property
    def new_width(self) -> int:
        return len(self.kept)

    @property
    def is_identity(self) -> bool:
        return self.new_width == self.original_width

    def removed(self) -> tuple[int, ...]:
        keep = set(self.kept)
        return tuple(i for i in range(self.original_width) if i not in keep)


@dataclass(frozen=True)
class PruneResult:
    graph: GeneratorGraph
    store: WeightStore
    channel_maps: Mapping[str, ChannelMap]


def channel_maps_to_json_dict(maps: Mapping[str, ChannelMap]) -> dict:
    """Audit form of the surviving-channel maps (node id -> kept channels)."""
    return {nid: {"original_width": m.original_width, "kept": list(m.kept)}
            for nid, m in maps.items()}


def _output_channel_maps(graph: GeneratorGraph,
                         removed: Mapping[str, tuple[int, ...]]
                         ) -> dict[str, ChannelMap]:
    """Surviving output channels for every node, propagated through the DAG."""
    shapes = validate(graph).shapes
    maps: dict[str, ChannelMap] = {}
    for nid in topological_order(graph):
        node = graph.nodes[nid]
        kind = node.kind
        width = shapes[nid].channels
        if isinstance(kind, (ConvSpec, ConvTransposeSpec)):
            gone = set(removed.get(nid, ()))
            kept = tuple(i for i in range(width) if i not in gone)
            maps[nid] = ChannelMap(kept, width)
        elif isinstance(kind, InputSpec):
            maps[nid] = ChannelMap(tuple(range(width)), width)
        elif isinstance(kind, ConcatSpec):
            kept: list[int] = []
            offset = 0
            for src in node.inputs:
                src_map = maps[src]
                kept.extend(offset + i for i in src_map.kept)
                offset += src_map.original_width
            maps[nid] = ChannelMap(tuple(kept), width)
        else:  # norm / act / output: channel-preserving
            maps[nid] = ChannelMap(maps[node.inputs[0]].kept, width)
    return maps


def apply_filter_prune(graph: GeneratorGraph, store: WeightStore,
                       plan: PruningPlan,
                       allow_output_layers: bool = False) -> PruneResult:
    """Remove the planned filters and every weight slice that consumed them."""
    if plan.pair_actions:
        raise PlanError("plan contains layer-pair actions; use apply_plan")
    validate_plan(graph, plan, allow_output_layers=allow_output_layers)
    maps = _output_channel_maps(graph, plan.removed_by_layer())

    new_nodes: dict[str, LayerNode] = {}
    new_store = WeightStore()
    for nid, node in graph.nodes.items():
        kind = node.kind
        if isinstance(kind, (ConvSpec, ConvTransposeSpec)):
            in_map = maps[node.inputs[0]]
            out_map = maps[nid]
            new_kind = replace(kind, in_channels=in_map.new_width,
                               out_channels=out_map.new_width)
            kernel = store.get(nid, "kernel")
            if isinstance(kind, ConvSpec):
                kernel = kernel[np.ix_(out_map.kept, in_map.kept)]
            else:
                kernel = kernel[np.ix_(in_map.kept, out_map.kept)]
            new_store.set(nid, "kernel", kernel)
            if kind.has_bias:
                new_store.set(nid, "bias", store.get(nid, "bias")[list(out_map.kept)])
        elif isinstance(kind, NormSpec):
            ch_map = maps[node.inputs[0]]
            new_kind = replace(kind, channels=ch_map.new_width)
            roles = () if kind.norm_kind == "none" else (
                ("norm_scale", "norm_shift", "norm_mean", "norm_var")
                if kind.norm_kind == "batch" else ("norm_scale", "norm_shift"))
            for role in roles:
                new_store.set(nid, role, store.get(nid, role)[list(ch_map.kept)])
        else:
            new_kind = kind
        new_nodes[nid] = LayerNode(id=nid, name=node.name, kind=new_kind,
                                   inputs=node.inputs)

    new_graph = GeneratorGraph(nodes=new_nodes, input_ids=graph.input_ids,
                               output_id=graph.output_id,
                               skip_edges=graph.skip_edges, arch=graph.arch)
    validate(new_graph)
    validate_weights(new_graph, new_store)
    return PruneResult(graph=new_graph, store=new_store, channel_maps=maps)


# --------------------------------------------------------------------------
# mirrored inner-layer removal
# --------------------------------------------------------------------------


def remove_inner_layers(graph: GeneratorGraph, store: WeightStore, depth: int,
                        policy: str = "skip", seed: int = 0
                        ) -> tuple[GeneratorGraph, WeightStore]:
    """Cut the ``depth`` innermost encoder/decoder stage pairs of the 8-stage
    U-Net (C8/U8 inward-out), rewiring the surviving innermost decoder to the
    new bottleneck.

    That decoder's kernel originally read [decoder path | skip]; ``policy``
    picks its new weights: ``skip`` keeps the skip half (its input is
    unchanged numerically at that slot), ``average`` blends both halves, and
    ``reinit`` redraws the kernel from N(0, 0.02) with ``seed``.
    """
    if graph.arch != "pix2pix":
        raise PlanError("inner-layer removal is defined for the pix2pix arch")
    if not 1 <= depth <= 3:
        raise PlanError(f"layer-removal depth must be 1..3, got {depth}")
    if policy not in LAYER_REMOVAL_POLICIES:
        raise PlanError(f"unknown policy '{policy}' "
                        f"(choose from {LAYER_REMOVAL_POLICIES})")

    shapes = validate(graph).shapes
    removed_ids: set[str] = set()
    for stage in range(8, 8 - depth, -1):
        for nid in (f"C{stage}", f"C{stage}.act", f"C{stage}.norm",
                    f"U{stage}", f"U{stage}.act", f"U{stage}.norm",
                    f"U{stage}.cat"):
            if nid in graph.nodes:
                removed_ids.add(nid)

    survivor = f"U{8 - depth}"                  # innermost decoder that stays
    cat_id = f"{survivor}.cat"
    if cat_id not in graph.nodes:
        raise PlanError(f"graph has no node '{cat_id}'; not an 8-stage U-Net")
    cat_inputs = graph.nodes[cat_id].inputs
    trunk_src, skip_src = cat_inputs[0], cat_inputs[1]
    dec_width = shapes[trunk_src].channels
    skip_width = shapes[skip_src].channels
    removed_ids.add(cat_id)

    kernel = np.asarray(store.get(survivor, "kernel"))
    spec = graph.nodes[survivor].kind
    if not isinstance(spec, ConvTransposeSpec) or spec.in_channels != dec_width + skip_width:
        raise PlanError(f"node '{survivor}' does not match the expected "
                        f"decoder wiring")
    if policy == "skip":
        new_kernel = kernel[dec_width:]
    elif policy == "average":
        if dec_width != skip_width:
            raise PlanError("policy 'average' needs equal decoder/skip widths; "
                            f"got {dec_width} and {skip_width}")
        new_kernel = 0.5 * (kernel[:dec_width] + kernel[dec_width:])
    else:  # reinit
        rng = np.random.default_rng(seed)
        new_kernel = rng.normal(0.0, KERNEL_INIT_STD,
                                size=(skip_width,) + kernel.shape[1:])

    new_nodes: dict[str, LayerNode] = {}
    for nid, node in graph.nodes.items():
        if nid in removed_ids:
            continue
        if nid == f"{survivor}.act":
            node = LayerNode(id=nid, name=node.name, kind=node.kind,
                             inputs=(skip_src,))
        elif nid == survivor:
            node = LayerNode(id=nid, name=node.name,
                             kind=replace(spec, in_channels=skip_width),
                             inputs=node.inputs)
        new_nodes[nid] = node

    new_store = WeightStore()
    for (tid, role), value in store.items():
        if tid in removed_ids:
            continue
        new_store.set(tid, role, value)
    new_store.set(survivor, "kernel", new_kernel.astype(np.float32))

    skips = tuple((node.inputs[1], node.id) for node in new_nodes.values()
                  if isinstance(node.kind, ConcatSpec))
    new_graph = GeneratorGraph(nodes=new_nodes, input_ids=graph.input_ids,
                               output_id=graph.output_id, skip_edges=skips,
                               arch=graph.arch)
    validate(new_graph)
    validate_weights(new_graph, new_store)
    return new_graph, new_store


def apply_plan(graph: GeneratorGraph, store: WeightStore, plan: PruningPlan,
               policy: str = "skip", seed: int = 0) -> PruneResult:
    """Apply a full plan: layer-pair removals first (they must form the
    innermost mirror set), then filter removals on the reduced network.
    The returned channel maps are relative to the post-pair-removal graph.
    """
    pairs = plan.pair_actions
    if pairs:
        depth = len(pairs)
        expected = {(f"C{9 - d}", f"U{9 - d}") for d in range(1, depth + 1)}
        got = {(p.encoder, p.decoder) for p in pairs}
        if got != expected or depth > 3:
            raise PlanError(
                f"layer-pair actions must be the {len(got)} innermost mirror "
                f"pairs {sorted(expected)}, got {sorted(got)}")
        graph, store = remove_inner_layers(graph, store, depth,
                                           policy=policy, seed=seed)
    filters_only = PruningPlan(criterion=plan.criterion,
                               actions=tuple(plan.filter_actions))
    return apply_filter_prune(graph, store, filters_only)
