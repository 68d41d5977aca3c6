"""Filter-importance criteria and pruning-plan construction.

A *filter* is one output channel's kernel slice: row ``kernel[i]`` of a
convolution, column ``kernel[:, i]`` of a transposed convolution (biases are
not part of the filter vector).  Criteria score every filter of every conv
layer; planners turn scores into a :class:`PruningPlan` — a list of actions,
each either removing named filters from a layer or removing a mirrored
encoder/decoder layer pair.

Lower score = less important = pruned first.  All scoring runs in float64
with stable, index-tie-broken ordering, so plans are deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .graph import (ConvSpec, ConvTransposeSpec, GeneratorGraph, GraphError,
                    output_layer_ids, topological_order)
from .weights import WeightStore

CRITERIA = ("l2", "gm", "lamp")


class PlanError(GraphError):
    """A pruning plan that cannot be applied to the given graph."""


@dataclass(frozen=True)
class ImportanceScore:
    layer: str
    index: int
    score: float


def _filter_matrix(graph: GeneratorGraph, store: WeightStore,
                   layer: str) -> np.ndarray:
    """(n_filters, filter_dim) float64 view of one layer's filters."""
    kind = graph.nodes[layer].kind
    kernel = np.asarray(store.get(layer, "kernel"), dtype=np.float64)
    if isinstance(kind, ConvSpec):
        return kernel.reshape(kernel.shape[0], -1)
    if isinstance(kind, ConvTransposeSpec):
        return kernel.swapaxes(0, 1).reshape(kernel.shape[1], -1)
    raise PlanError(f"node '{layer}' is not a conv layer")


def _scored_layers(graph: GeneratorGraph) -> list[str]:
    return graph.conv_node_ids()


def score_l2(graph: GeneratorGraph, store: WeightStore) -> list[ImportanceScore]:
    """Filter magnitude: score(i) = ||f_i||_2."""
    out: list[ImportanceScore] = []
    for layer in _scored_layers(graph):
        norms = np.linalg.norm(_filter_matrix(graph, store, layer), axis=1)
        out.extend(ImportanceScore(layer, i, float(s)) for i, s in enumerate(norms))
    return out


def score_geometric_median(graph: GeneratorGraph,
                           store: WeightStore) -> list[ImportanceScore]:
    """Redundancy via distance mass: score(i) = sum_j ||f_i - f_j||_2.

    A filter close to all the others (small distance sum) is nearly
    replaceable by them and is pruned first.  Pairwise distances come from
    the Gram matrix in float64, clipped at zero before the square root.
    """
    out: list[ImportanceScore] = []
    for layer in _scored_layers(graph):
        f = _filter_matrix(graph, store, layer)
        gram = f @ f.T
        sq = np.diag(gram)
        d2 = sq[:, None] + sq[None, :] - 2.0 * gram
        dist = np.sqrt(np.clip(d2, 0.0, None))
        sums = dist.sum(axis=1)
        out.extend(ImportanceScore(layer, i, float(s)) for i, s in enumerate(sums))
    return out


def score_lamp_structured(graph: GeneratorGraph,
                          store: WeightStore) -> list[ImportanceScore]:
    """Filter-level adaptive magnitude score.

    With m_i = ||f_i||_2^2 sorted ascending (ties broken by index),
    score(i) = m_i / sum of m_j over all j with m_j >= m_i (its own term
    included).  Scores are comparable across layers; each layer's largest
    filter scores exactly 1.
    """
    out: list[ImportanceScore] = []
    for layer in _scored_layers(graph):
        f = _filter_matrix(graph, store, layer)
        m = np.einsum("ij,ij->i", f, f)
        order = np.lexsort((np.arange(len(m)), m))      # ascending, index ties
        sorted_m = m[order]
        suffix = np.cumsum(sorted_m[::-1])[::-1]        # suffix[p] = sum m[p:]
        scores = np.zeros(len(m))
        nonzero = suffix > 0.0
        scores[order[nonzero]] = sorted_m[nonzero] / suffix[nonzero]
        out.extend(ImportanceScore(layer, i, float(s)) for i, s in enumerate(scores))
    return out


_SCORERS = {"l2": score_l2, "gm": score_geometric_median,
            "lamp": score_lamp_structured}


def score(graph: GeneratorGraph, store: WeightStore,
          criterion: str) -> list[ImportanceScore]:
    if criterion not in _SCORERS:
        raise PlanError(f"unknown criterion '{criterion}' (choose from {CRITERIA})")
    return _SCORERS[criterion](graph, store)


# --------------------------------------------------------------------------
# plans
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RemoveFilters:
    layer: str
    indices: tuple[int, ...]


@dataclass(frozen=True)
class RemoveLayerPair:
    encoder: str
    decoder: str


Action = RemoveFilters | RemoveLayerPair


@dataclass(frozen=True)
class PruningPlan:
    criterion: str
    actions: tuple[Action, ...]
    # how the plan was produced (planner + ratios); informational, not
    # serialized, and excluded from equality
    provenance: str = field(default="", compare=False)

    @property
    def filter_actions(self) -> tuple[RemoveFilters, ...]:
        return tuple(a for a in self.actions if isinstance(a, RemoveFilters))

    @property
    def pair_actions(self) -> tuple[RemoveLayerPair, ...]:
        return tuple(a for a in self.actions if isinstance(a, RemoveLayerPair))

    def removed_by_layer(self) -> dict[str, tuple[int, ...]]:
        return {a.layer: a.indices for a in self.filter_actions}


def validate_plan(graph: GeneratorGraph, plan: PruningPlan,
                  allow_output_layers: bool = False) -> None:
    """Reject plans that cannot apply: unknown/duplicate layers, indices out
    of range, emptied layers, or filter removal from an output-adjacent layer.
    """
    protected = set() if allow_output_layers else output_layer_ids(graph)
    seen_layers: set[str] = set()
    for action in plan.actions:
        if isinstance(action, RemoveLayerPair):
            for nid in (action.encoder, action.decoder):
                if nid not in graph.nodes or not isinstance(
                        graph.nodes[nid].kind, (ConvSpec, ConvTransposeSpec)):
                    raise PlanError(f"layer pair names non-conv node '{nid}'")
            continue
        layer = action.layer
        if layer in seen_layers:
            raise PlanError(f"layer '{layer}' appears in more than one action")
        seen_layers.add(layer)
        if layer not in graph.nodes:
            raise PlanError(f"plan targets unknown layer '{layer}'")
        kind = graph.nodes[layer].kind
        if not isinstance(kind, (ConvSpec, ConvTransposeSpec)):
            raise PlanError(f"plan targets non-conv node '{layer}'")
        if layer in protected:
            raise PlanError(f"layer '{layer}' feeds the network output and "
                            f"must keep all its filters")
        idx = action.indices
        if len(set(idx)) != len(idx):
            raise PlanError(f"layer '{layer}': duplicate filter indices")
        if any(not isinstance(i, int) or i < 0 or i >= kind.out_channels
               for i in idx):
            raise PlanError(f"layer '{layer}': filter index out of range "
                            f"0..{kind.out_channels - 1}")
        if len(idx) >= kind.out_channels:
            raise PlanError(f"layer '{layer}': plan removes all "
                            f"{kind.out_channels} filters")


def _by_layer(scores: Sequence[ImportanceScore]) -> dict[str, list[ImportanceScore]]:
    grouped: dict[str, list[ImportanceScore]] = {}
    for s in scores:
        grouped.setdefault(s.layer, []).append(s)
    return grouped


def _lowest(scores: list[ImportanceScore], count: int) -> tuple[int, ...]:
    ranked = sorted(scores, key=lambda s: (s.score, s.index))
    return tuple(sorted(s.index for s in ranked[:count]))


def _check_ratio(ratio: float) -> float:
    if not 0.0 < ratio < 1.0:
        raise PlanError(f"ratio must be strictly between 0 and 1, got {ratio}")
    return ratio


def plan_uniform(graph: GeneratorGraph, scores: Sequence[ImportanceScore],
                 ratio: float, criterion: str = "",
                 exclude: Sequence[str] = ()) -> PruningPlan:
    """Remove floor(ratio * n_filters) lowest-scoring filters from every conv
    layer except output-adjacent layers and any in ``exclude``.
    """
    _check_ratio(ratio)
    grouped = _by_layer(scores)
    protected = output_layer_ids(graph) | set(exclude)
    actions: list[RemoveFilters] = []
    for layer in graph.conv_node_ids():
        if layer in protected:
            continue
        layer_scores = grouped.get(layer, [])
        count = int(ratio * len(layer_scores))
        if count:
            actions.append(RemoveFilters(layer, _lowest(layer_scores, count)))
    note = f"uniform ratio={ratio:g}" + (f" exclude={','.join(exclude)}" if exclude else "")
    plan = PruningPlan(criterion=criterion, actions=tuple(actions), provenance=note)
    validate_plan(graph, plan)
    return plan


def plan_global(graph: GeneratorGraph, scores: Sequence[ImportanceScore],
                ratio: float, criterion: str = "",
                exclude: Sequence[str] = ()) -> PruningPlan:
    """One network-wide budget: floor(ratio * total filters) removals, taken
    greedily from the lowest scores anywhere; candidates that would empty
    their layer are skipped.  Requires a cross-layer-comparable criterion.
    """
    _check_ratio(ratio)
    protected = output_layer_ids(graph) | set(exclude)
    topo_pos = {nid: i for i, nid in enumerate(topological_order(graph))}
    eligible = [s for s in scores if s.layer not in protected]
    widths: dict[str, int] = {}
    for s in eligible:
        widths[s.layer] = max(widths.get(s.layer, 0), s.index + 1)
    budget = int(ratio * len(eligible))
    ranked = sorted(eligible, key=lambda s: (s.score, topo_pos[s.layer], s.index))
    removed: dict[str, list[int]] = {}
    taken = 0
    for s in ranked:
        if taken == budget:
            break
        layer_removed = removed.setdefault(s.layer, [])
        if len(layer_removed) >= widths[s.layer] - 1:
            continue                       # never empty a layer
        layer_removed.append(s.index)
        taken += 1
    actions = tuple(RemoveFilters(layer, tuple(sorted(idx)))
                    for layer, idx in removed.items() if idx)
    plan = PruningPlan(criterion=criterion, actions=actions,
                       provenance=f"global ratio={ratio:g}")
    validate_plan(graph, plan)
    return plan


def plan_inner(graph: GeneratorGraph, scores: Sequence[ImportanceScore],
               layer_ratios: Mapping[str, float] | Sequence[tuple[str, float]],
               criterion: str = "") -> PruningPlan:
    """Per-layer ratios: remove floor(ratio * n) lowest-scoring filters from
    each named layer."""
    pairs = list(layer_ratios.items()) if isinstance(layer_ratios, Mapping) \
        else list(layer_ratios)
    grouped = _by_layer(scores)
    actions: list[RemoveFilters] = []
    seen: set[str] = set()
    for layer, ratio in pairs:
        _check_ratio(ratio)
        if layer in seen:
            raise PlanError(f"layer '{layer}' given more than one ratio")
        seen.add(layer)
        if layer not in grouped:
            raise PlanError(f"no scores for layer '{layer}' "
                            f"(not a conv layer of this graph?)")
        count = int(ratio * len(grouped[layer]))
        if count:
            actions.append(RemoveFilters(layer, _lowest(grouped[layer], count)))
    note = "inner " + ",".join(f"{l}={r:g}" for l, r in pairs)
    plan = PruningPlan(criterion=criterion, actions=tuple(actions), provenance=note)
    validate_plan(graph, plan)
    return plan


def plan_layer_pairs(graph: GeneratorGraph, depth: int) -> PruningPlan:
    """Mirrored innermost encoder/decoder pair removal for the 8-stage U-Net."""
    if graph.arch != "pix2pix":
        raise PlanError("layer-pair removal is defined for the pix2pix arch")
    if not 1 <= depth <= 3:
        raise PlanError(f"layer-pair depth must be 1..3, got {depth}")
    pairs = tuple(RemoveLayerPair(f"C{9 - d}", f"U{9 - d}")
                  for d in range(1, depth + 1))
    plan = PruningPlan(criterion="none", actions=pairs,
                       provenance=f"layer-pairs depth={depth}")
    validate_plan(graph, plan)
    return plan


# --------------------------------------------------------------------------
# shipped presets
# --------------------------------------------------------------------------

# name -> (default criterion, {layer: prune ratio})
PRESETS: dict[str, tuple[str, dict[str, float]]] = {
    "e2s-filter": ("l2", {"C6": 0.50, "C7": 0.50, "C8": 0.50}),
    "e2s-filter-bold": ("l2", {"C6": 0.50, "C7": 0.50, "C8": 0.50,
                               "U8": 0.25, "U7": 0.25}),
    "facades-filter": ("l2", {"C6": 0.50, "C7": 0.75, "C8": 0.75,
                              "U8": 0.75, "U7": 0.75}),
    "facades-filter-bold": ("l2", {"C6": 0.50, "C7": 0.75, "C8": 0.75,
                                   "U8": 0.75, "U7": 0.75, "U6": 0.25}),
    "wav2lip-inner": ("l2", {"CV6": 0.50, "CV7": 0.50, "CV8": 0.50,
                             "CA5": 0.50, "CA6": 0.50, "CA7": 0.50,
                             "U6": 0.50, "U5": 0.50, "U4": 0.67}),
}


def preset_plan(name: str, graph: GeneratorGraph, store: WeightStore,
                criterion: str | None = None) -> PruningPlan:
    if name not in PRESETS:
        raise PlanError(f"unknown preset '{name}' "
                        f"(choose from {sorted(PRESETS)})")
    default_criterion, ratios = PRESETS[name]
    chosen = criterion or default_criterion
    scores = score(graph, store, chosen)
    plan = plan_inner(graph, scores, ratios, criterion=chosen)
    return PruningPlan(criterion=plan.criterion, actions=plan.actions,
                       provenance=f"preset {name}")


# --------------------------------------------------------------------------
# plan JSON
# --------------------------------------------------------------------------

_PLAN_KEYS = {"criterion", "actions"}


def plan_to_json_dict(plan: PruningPlan) -> dict:
    actions: list[dict] = []
    for a in plan.actions:
        if isinstance(a, RemoveFilters):
            actions.append({"layer": a.layer, "remove": list(a.indices)})
        else:
            actions.append({"pair": [a.encoder, a.decoder]})
    return {"criterion": plan.criterion, "actions": actions}


def plan_to_json(plan: PruningPlan, indent: int | None = 2) -> str:
    return json.dumps(plan_to_json_dict(plan), indent=indent)


def plan_from_json_dict(doc: object) -> PruningPlan:
    if not isinstance(doc, dict) or set(doc) != _PLAN_KEYS:
        raise PlanError("plan must be an object with exactly "
                        "'criterion' and 'actions'")
    if not isinstance(doc["criterion"], str):
        raise PlanError("plan criterion must be a string")
    if not isinstance(doc["actions"], list):
        raise PlanError("plan actions must be a list")
    actions: list[Action] = []
    for raw in doc["actions"]:
        if not isinstance(raw, dict):
            raise PlanError("plan action must be an object")
        if set(raw) == {"layer", "remove"}:
            if not isinstance(raw["remove"], list):
                raise PlanError(f"layer '{raw['layer']}': 'remove' must be a list")
            actions.append(RemoveFilters(raw["layer"],
                                         tuple(sorted(raw["remove"]))))
        elif set(raw) == {"pair"}:
            pair = raw["pair"]
            if (not isinstance(pair, list) or len(pair) != 2
                    or not all(isinstance(p, str) for p in pair)):
                raise PlanError("'pair' must be a list of two layer names")
            actions.append(RemoveLayerPair(pair[0], pair[1]))
        else:
            raise PlanError(f"plan action must have keys {{layer, remove}} or "
                            f"{{pair}}, got {sorted(raw)}")
    return PruningPlan(criterion=doc["criterion"], actions=tuple(actions))


def plan_from_json(text: str) -> PruningPlan:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PlanError(f"invalid plan JSON: {exc}") from exc
    return plan_from_json_dict(doc)
