"""Verification oracle, sensitivity sweep, and latency benchmark.

The masked-equivalence oracle is the package's correctness witness for
filter pruning: a structurally pruned network must compute exactly what the
original computes when every kernel slice that *read* a removed channel is
zeroed.  The zeroing walk is written independently of the pruning rewrite
(it never reuses the rewrite's channel propagation), so the two
implementations check each other.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import costs
from .criteria import (ImportanceScore, PlanError, PruningPlan, RemoveFilters,
                       _check_ratio, score, validate_plan)
from .graph import (ConcatSpec, ConvSpec, ConvTransposeSpec, GeneratorGraph,
                    InputSpec, validate, topological_order)
from .infer import run, run_with_trace
from .transform import apply_filter_prune
from .weights import WeightStore

DEFAULT_TOLERANCE = 1e-5


def make_probes(graph: GeneratorGraph, count: int,
                seed: int = 0) -> list[dict[str, np.ndarray]]:
    """Standard-normal float32 input sets, deterministic in (graph, seed)."""
    rng = np.random.default_rng(seed)
    probes = []
    for _ in range(count):
        probe = {}
        for iid in graph.input_ids:
            shape = graph.nodes[iid].kind.shape
            probe[iid] = rng.standard_normal(shape.as_tuple()).astype(np.float32)
        probes.append(probe)
    return probes


# --------------------------------------------------------------------------
# masked equivalence
# --------------------------------------------------------------------------


def masked_store(graph: GeneratorGraph, store: WeightStore,
                 removed: Mapping[str, Sequence[int]]) -> WeightStore:
    """Zero every kernel slice that reads a removed channel.

    ``removed`` maps conv node id -> output channels being pruned.  Dead
    channels propagate through channel-preserving nodes and concatenations
    (with original-width offsets) but stop at the next conv: a conv that
    merely *reads* dead channels has those input slices zeroed, while its own
    output channels stay live.
    """
    shapes = validate(graph).shapes
    dead: dict[str, frozenset[int]] = {}
    out = store.copy()
    for nid in topological_order(graph):
        node = graph.nodes[nid]
        kind = node.kind
        if isinstance(kind, InputSpec):
            dead[nid] = frozenset()
        elif isinstance(kind, (ConvSpec, ConvTransposeSpec)):
            gone = sorted(set(removed.get(nid, ())))
            dead[nid] = frozenset(gone)
            dead_in = sorted(dead[node.inputs[0]])
            if dead_in:
                kernel = out.get(nid, "kernel").copy()
                if isinstance(kind, ConvSpec):
                    kernel[:, dead_in] = 0.0
                else:
                    kernel[dead_in] = 0.0
                out.set(nid, "kernel", kernel)
        elif isinstance(kind, ConcatSpec):
            merged: set[int] = set()
            offset = 0
            for src in node.inputs:
                merged.update(offset + i for i in dead[src])
                offset += shapes[src].channels
            dead[nid] = frozenset(merged)
        else:
            dead[nid] = dead[node.inputs[0]]
    return out


@dataclass(frozen=True)
class EquivalenceReport:
    passed: bool
    n_probes: int
    tolerance: float
    max_abs_dev: float
    first_failing_probe: int | None = None
    worst_node: str | None = None
    per_node_dev: Mapping[str, float] | None = None

    def summary(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        line = (f"{verdict}: masked equivalence over {self.n_probes} probes, "
                f"max |dev| = {self.max_abs_dev:.3g} "
                f"(tolerance {self.tolerance:g})")
        if not self.passed:
            line += f"; first failing probe {self.first_failing_probe}"
            if self.worst_node is not None:
                line += f", worst node '{self.worst_node}'"
        return line


def verify_masked_equivalence(graph: GeneratorGraph, store: WeightStore,
                              plan: PruningPlan, n_probes: int = 100,
                              seed: int = 0,
                              tolerance: float = DEFAULT_TOLERANCE
                              ) -> EquivalenceReport:
    """Check prune(graph) against the zero-masked original on random probes.

    Only filter-removal plans have a masked counterpart (a removed *layer*
    has no zeroed-weight equivalent), so plans with layer-pair actions are
    rejected.
    """
    if plan.pair_actions:
        raise PlanError("masked equivalence is defined for filter-removal "
                        "plans only")
    validate_plan(graph, plan)
    result = apply_filter_prune(graph, store, plan)
    masked = masked_store(graph, store, plan.removed_by_layer())

    worst = 0.0
    first_bad: int | None = None
    probes = make_probes(graph, n_probes, seed=seed)
    out_map = result.channel_maps[graph.output_id]
    for pi, probe in enumerate(probes):
        ref = run(graph, masked, probe)[list(out_map.kept)]
        got = run(result.graph, result.store, probe)
        dev = float(np.max(np.abs(ref - got))) if ref.size else 0.0
        worst = max(worst, dev)
        if dev > tolerance and first_bad is None:
            first_bad = pi
    if worst <= tolerance:
        return EquivalenceReport(True, n_probes, tolerance, worst)

    # diagnose: per-node deviation on the first failing probe, restricted to
    # each node's surviving channels
    _, ref_trace = run_with_trace(graph, masked, probes[first_bad])
    _, got_trace = run_with_trace(result.graph, result.store, probes[first_bad])
    per_node: dict[str, float] = {}
    for nid in got_trace:
        cmap = result.channel_maps[nid]
        ref_slice = ref_trace[nid][list(cmap.kept)]
        per_node[nid] = float(np.max(np.abs(ref_slice - got_trace[nid])))
    worst_node = max(per_node, key=per_node.get)
    return EquivalenceReport(False, n_probes, tolerance, worst,
                             first_failing_probe=first_bad,
                             worst_node=worst_node, per_node_dev=per_node)


# --------------------------------------------------------------------------
# sensitivity sweep
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    layer: str
    ratio: float
    criterion: str
    params: int
    macs: int
    divergence: float


def _single_layer_plan(layer: str, scores: Sequence[ImportanceScore],
                       ratio: float, criterion: str) -> PruningPlan:
    layer_scores = [s for s in scores if s.layer == layer]
    count = int(ratio * len(layer_scores))
    ranked = sorted(layer_scores, key=lambda s: (s.score, s.index))
    indices = tuple(sorted(s.index for s in ranked[:count]))
    actions = (RemoveFilters(layer, indices),) if indices else ()
    return PruningPlan(criterion=criterion, actions=actions)


def sensitivity_sweep(graph: GeneratorGraph, store: WeightStore,
                      ratios: Sequence[float] = (0.25, 0.50, 0.75),
                      criterion: str = "l2", n_probes: int = 8,
                      seed: int = 0) -> list[SweepRow]:
    """Prune each conv layer alone at each ratio and measure output drift.

    Divergence — mean over probes of ||pruned - original||_2 / element
    count, on the surviving output channels — is a *structural* proxy: it
    measures how much of the computation a layer's filters carry, not
    perceptual quality of a trained model (no perceptual metric is computable
    without trained weights).  Every conv layer is swept, including the one
    feeding the network output (the sweep is a measurement, not a deployment
    plan; output-layer rows are compared on their surviving channels).  Rows
    are ordered layer-major (topological), ratios ascending, and are
    deterministic in (graph, store, seed).
    """
    for ratio in ratios:
        _check_ratio(ratio)
    scores = score(graph, store, criterion)
    probes = make_probes(graph, n_probes, seed=seed)
    baseline = [run(graph, store, p) for p in probes]
    rows: list[SweepRow] = []
    for layer in graph.conv_node_ids():
        for ratio in sorted(ratios):
            plan = _single_layer_plan(layer, scores, ratio, criterion)
            result = apply_filter_prune(graph, store, plan,
                                        allow_output_layers=True)
            report = costs.full_report(result.graph)
            out_map = result.channel_maps[graph.output_id]
            kept = list(out_map.kept)
            divs = []
            for ref, probe in zip(baseline, probes):
                got = run(result.graph, result.store, probe)
                diff = ref[kept].astype(np.float64) - got.astype(np.float64)
                divs.append(np.linalg.norm(diff) / diff.size)
            rows.append(SweepRow(layer=layer, ratio=float(ratio),
                                 criterion=criterion,
                                 params=report.total_params,
                                 macs=report.total_macs,
                                 divergence=float(np.mean(divs))))
    return rows


def sweep_to_csv(rows: Sequence[SweepRow]) -> str:
    lines = ["layer,ratio,criterion,params,macs,divergence"]
    lines.extend(f"{r.layer},{r.ratio:.2f},{r.criterion},{r.params},"
                 f"{r.macs},{r.divergence:.6g}" for r in rows)
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# latency benchmark
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchResult:
    median_ms: float
    p90_ms: float
    runs: int

    def to_json(self) -> str:
        return json.dumps({"median_ms": self.median_ms,
                           "p90_ms": self.p90_ms,
                           "runs": self.runs})

    def speedup_vs(self, baseline: "BenchResult") -> float:
        """How much faster this run is than ``baseline`` (>1 means faster)."""
        return baseline.median_ms / self.median_ms

    @staticmethod
    def from_json(text: str) -> "BenchResult":
        doc = json.loads(text)
        return BenchResult(median_ms=float(doc["median_ms"]),
                           p90_ms=float(doc["p90_ms"]),
                           runs=int(doc["runs"]))


def bench(graph: GeneratorGraph, store: WeightStore, n_warmup: int = 2,
          n_runs: int = 10, seed: int = 0) -> BenchResult:
    """Wall-clock forward latency of the reference engine on one probe."""
    if n_runs < 3:
        raise ValueError("n_runs must be at least 3 for stable order statistics")
    probe = make_probes(graph, 1, seed=seed)[0]
    for _ in range(n_warmup):
        run(graph, store, probe)
    times = []
    for _ in range(n_runs):
        t0 = time.perf_counter()
        run(graph, store, probe)
        times.append((time.perf_counter() - t0) * 1e3)
    return BenchResult(median_ms=float(np.median(times)),
                       p90_ms=float(np.percentile(times, 90)),
                       runs=n_runs)
