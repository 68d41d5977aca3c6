"""Parameter and multiply-accumulate (MAC) cost model.

Counting conventions (stated here once; every rendered report repeats them):

* Parameters: conv kernels ``out*in*k*k`` plus ``out`` if biased; a norm
  attached to a conv contributes its affine ``2*c`` to that layer's row.
  Batch-norm running statistics (another ``2*c``) are tracked separately as
  ``stat_params`` and excluded from headline totals.
* MACs: convolutions and transposed convolutions are both counted at their
  *output* resolution, ``out_h * out_w * out_ch * in_ch * k * k``.  Bias,
  norm, and activation work is not counted.  For a k4 s2 p1 transposed conv
  the equivalent input-referenced count is exactly ``out-based / s**2``
  (see :func:`conv_transpose_macs_input_referenced`).
"""

from __future__ import annotations

import io
from dataclasses import dataclass

from .graph import (ConvSpec, ConvTransposeSpec, GeneratorGraph, NormSpec,
                    topological_order, validate)

MACS_CONVENTION = ("MACs counted at output resolution: out_h*out_w*out_ch*in_ch*k^2 "
                   "for conv and transposed conv; bias/norm/act excluded. "
                   "Params exclude norm running statistics (reported separately).")


@dataclass(frozen=True)
class LayerCost:
    layer: str          # conv node id (or a standalone norm's node id)
    params: int         # kernel + bias + attached norm affine
    stat_params: int    # attached batch-norm running statistics
    macs: int


@dataclass(frozen=True)
class CostReport:
    arch: str
    rows: tuple[LayerCost, ...]

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_stat_params(self) -> int:
        return sum(r.stat_params for r in self.rows)

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.rows)

    def row(self, layer: str) -> LayerCost:
        for r in self.rows:
            if r.layer == layer:
                return r
        raise KeyError(f"no cost row for layer '{layer}'")


def _norm_param_split(kind: NormSpec) -> tuple[int, int]:
    """(affine params, running-stat params) of one norm node."""
    if kind.norm_kind == "none":
        return 0, 0
    affine = 2 * kind.channels
    stats = 2 * kind.channels if kind.norm_kind == "batch" else 0
    return affine, stats


def full_report(graph: GeneratorGraph) -> CostReport:
    shapes = validate(graph).shapes
    # attribute each norm to the conv node it directly consumes
    attached: dict[str, str] = {}
    for nid, node in graph.nodes.items():
        if isinstance(node.kind, NormSpec):
            src = node.inputs[0]
            if isinstance(graph.nodes[src].kind, (ConvSpec, ConvTransposeSpec)):
                attached[nid] = src

    norm_affine: dict[str, int] = {}
    norm_stats: dict[str, int] = {}
    standalone: list[LayerCost] = []
    for nid, node in graph.nodes.items():
        if not isinstance(node.kind, NormSpec):
            continue
        affine, stats = _norm_param_split(node.kind)
        if nid in attached:
            owner = attached[nid]
            norm_affine[owner] = norm_affine.get(owner, 0) + affine
            norm_stats[owner] = norm_stats.get(owner, 0) + stats
        else:
            standalone.append(LayerCost(nid, affine, stats, 0))

    rows: list[LayerCost] = []
    for nid in topological_order(graph):
        node = graph.nodes[nid]
        kind = node.kind
        if not isinstance(kind, (ConvSpec, ConvTransposeSpec)):
            continue
        k2 = kind.kernel_size ** 2
        params = kind.out_channels * kind.in_channels * k2
        if kind.has_bias:
            params += kind.out_channels
        params += norm_affine.get(nid, 0)
        out = shapes[nid]
        macs = out.height * out.width * kind.out_channels * kind.in_channels * k2
        rows.append(LayerCost(nid, params, norm_stats.get(nid, 0), macs))
    rows.extend(standalone)
    return CostReport(arch=graph.arch, rows=tuple(rows))


def count_params(graph: GeneratorGraph) -> int:
    return full_report(graph).total_params


def count_stat_params(graph: GeneratorGraph) -> int:
    return full_report(graph).total_stat_params


def count_macs(graph: GeneratorGraph) -> int:
    return full_report(graph).total_macs


def conv_transpose_macs_input_referenced(spec: ConvTransposeSpec,
                                         in_h: int, in_w: int) -> int:
    """MAC count referenced to the input grid (each input pixel is scattered
    through the full k*k kernel).  For stride-s layers whose output grid is
    exactly s times the input this equals the output-referenced count / s**2.
    """
    return in_h * in_w * spec.out_channels * spec.in_channels * spec.kernel_size ** 2


# --------------------------------------------------------------------------
# comparisons and rendering
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ReductionSummary:
    base_params: int
    new_params: int
    base_macs: int
    new_macs: int

    @property
    def params_factor(self) -> float:
        return self.base_params / self.new_params

    @property
    def macs_factor(self) -> float:
        return self.base_macs / self.new_macs

    @property
    def params_saved_pct(self) -> float:
        return 100.0 * (1.0 - self.new_params / self.base_params)

    @property
    def macs_saved_pct(self) -> float:
        return 100.0 * (1.0 - self.new_macs / self.base_macs)


def format_factor(x: float) -> str:
    """Compression factors render with one decimal, e.g. ``18.7x``."""
    return f"{x:.1f}x"


def diff_reports(base: CostReport, pruned: CostReport) -> ReductionSummary:
    if pruned.total_params <= 0 or pruned.total_macs <= 0:
        raise ValueError("pruned network has zero cost; nothing left to compare")
    if base.total_params <= 0 or base.total_macs <= 0:
        raise ValueError("baseline network has zero cost")
    return ReductionSummary(base_params=base.total_params,
                            new_params=pruned.total_params,
                            base_macs=base.total_macs,
                            new_macs=pruned.total_macs)


def render_summary(s: ReductionSummary) -> str:
    return (f"params {s.base_params} -> {s.new_params} "
            f"({format_factor(s.params_factor)}, {s.params_saved_pct:.1f}% saved); "
            f"macs {s.base_macs} -> {s.new_macs} "
            f"({format_factor(s.macs_factor)}, {s.macs_saved_pct:.1f}% saved)")


def render_text(report: CostReport) -> str:
    buf = io.StringIO()
    buf.write(f"# arch: {report.arch}\n")
    buf.write(f"# {MACS_CONVENTION}\n")
    width = max([len("layer")] + [len(r.layer) for r in report.rows])
    buf.write(f"{'layer':<{width}}  {'params':>12}  {'macs':>16}\n")
    for r in report.rows:
        buf.write(f"{r.layer:<{width}}  {r.params:>12}  {r.macs:>16}\n")
    buf.write(f"{'TOTAL':<{width}}  {report.total_params:>12}  "
              f"{report.total_macs:>16}\n")
    buf.write(f"(norm running stats, excluded above: "
              f"{report.total_stat_params} params)\n")
    return buf.getvalue()


def render_csv(report: CostReport) -> str:
    lines = ["layer,params,macs"]
    lines.extend(f"{r.layer},{r.params},{r.macs}" for r in report.rows)
    lines.append(f"TOTAL,{report.total_params},{report.total_macs}")
    return "\n".join(lines) + "\n"
