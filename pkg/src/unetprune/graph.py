"""Computation-graph IR for U-Net style generator networks.

A generator is a flat DAG of typed nodes (convolutions, norms, activations,
channel concatenations, inputs, one output).  Everything downstream -- cost
counting, pruning rewrites, the inference engine -- works off this IR, so the
shape/channel rules are enforced in one place: :func:`validate`.

Conventions used throughout the package:

* tensors are (channels, height, width), channel-major;
* conv output size: out_h = (h + 2p - k)/s + 1, division must be exact;
* transposed-conv output size: out_h = (h - 1)*s - 2p + k;
* concat joins along the channel axis; the first input is the trunk path and
  every later input is a skip connection (this rule lets skip edges be
  reconstructed from plain topology JSON).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence, Union

NORM_EPS = 1e-5
LEAKY_SLOPE = 0.2

NORM_KINDS = ("batch", "instance", "none")
ACT_KINDS = ("relu", "leaky_relu", "tanh", "sigmoid")


class GraphError(Exception):
    """Base class for graph construction and validation failures."""


class CycleError(GraphError):
    pass


class DanglingInputError(GraphError):
    pass


class UnreachableError(GraphError):
    pass


class ShapeMismatchError(GraphError):
    """Shape or channel inconsistency, attributed to the first bad node."""

    def __init__(self, node: str, message: str):
        super().__init__(f"node '{node}': {message}")
        self.node = node


class FormatError(GraphError):
    """Malformed or non-conforming topology JSON."""


# --------------------------------------------------------------------------
# shapes and node kinds
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TensorShape:
    channels: int
    height: int
    width: int

    def __post_init__(self) -> None:
        for name in ("channels", "height", "width"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ValueError(f"TensorShape.{name} must be a positive int, got {value!r}")

    @property
    def numel(self) -> int:
        return self.channels * self.height * self.width

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.channels, self.height, self.width)


def _check_conv_fields(in_channels: int, out_channels: int, kernel_size: int,
                       stride: int, padding: int) -> None:
    if min(in_channels, out_channels, kernel_size) < 1:
        raise ValueError("channels and kernel_size must be positive")
    if stride not in (1, 2):
        raise ValueError(f"stride must be 1 or 2, got {stride}")
    if padding < 0:
        raise ValueError("padding must be non-negative")


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_size: int
    stride: int = 1
    padding: int = 0
    has_bias: bool = True

    def __post_init__(self) -> None:
        _check_conv_fields(self.in_channels, self.out_channels,
                           self.kernel_size, self.stride, self.padding)


@dataclass(frozen=True)
class ConvTransposeSpec:
    in_channels: int
    out_channels: int
    kernel_size: int
    stride: int = 1
    padding: int = 0
    has_bias: bool = True

    def __post_init__(self) -> None:
        _check_conv_fields(self.in_channels, self.out_channels,
                           self.kernel_size, self.stride, self.padding)


@dataclass(frozen=True)
class NormSpec:
    norm_kind: str
    channels: int

    def __post_init__(self) -> None:
        if self.norm_kind not in NORM_KINDS:
            raise ValueError(f"norm_kind must be one of {NORM_KINDS}, got {self.norm_kind!r}")
        if self.channels < 1:
            raise ValueError("norm channels must be positive")


@dataclass(frozen=True)
class ActSpec:
    act_kind: str

    def __post_init__(self) -> None:
        if self.act_kind not in ACT_KINDS:
            raise ValueError(f"act_kind must be one of {ACT_KINDS}, got {self.act_kind!r}")


@dataclass(frozen=True)
class ConcatSpec:
    pass


@dataclass(frozen=True)
class InputSpec:
    shape: TensorShape


@dataclass(frozen=True)
class OutputSpec:
    pass


NodeKind = Union[ConvSpec, ConvTransposeSpec, NormSpec, ActSpec,
                 ConcatSpec, InputSpec, OutputSpec]

_KIND_NAMES: dict[type, str] = {
    ConvSpec: "conv",
    ConvTransposeSpec: "conv_transpose",
    NormSpec: "norm",
    ActSpec: "act",
    ConcatSpec: "concat",
    InputSpec: "input",
    OutputSpec: "output",
}


@dataclass(frozen=True)
class LayerNode:
    id: str
    name: str
    kind: NodeKind
    inputs: tuple[str, ...] = ()

    @property
    def kind_name(self) -> str:
        return _KIND_NAMES[type(self.kind)]


@dataclass(frozen=True)
class GeneratorGraph:
    """A DAG of :class:`LayerNode` with named inputs and a single output.

    ``skip_edges`` annotates (encoder node id, consumer concat node id) pairs;
    the same information is recoverable from concat inputs (trunk first, skips
    after), so it is not serialized.
    """

    nodes: Mapping[str, LayerNode]
    input_ids: tuple[str, ...]
    output_id: str
    skip_edges: tuple[tuple[str, str], ...] = ()
    arch: str = "custom"

    def node(self, node_id: str) -> LayerNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise KeyError(f"no node with id '{node_id}'") from None

    def conv_node_ids(self) -> list[str]:
        """Ids of parameterized conv/transposed-conv nodes in topological order."""
        return [nid for nid in topological_order(self)
                if isinstance(self.nodes[nid].kind, (ConvSpec, ConvTransposeSpec))]

    def consumers(self, node_id: str) -> list[str]:
        return [nid for nid, node in self.nodes.items() if node_id in node.inputs]


# --------------------------------------------------------------------------
# validation and shape propagation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ValidationReport:
    """Per-node output shapes of a structurally sound graph."""

    shapes: Mapping[str, TensorShape]

    def shape(self, node_id: str) -> TensorShape:
        return self.shapes[node_id]


def topological_order(graph: GeneratorGraph) -> list[str]:
    """Kahn topological sort, stable with respect to node insertion order."""
    indeg = {nid: 0 for nid in graph.nodes}
    for node in graph.nodes.values():
        for src in node.inputs:
            if src not in graph.nodes:
                raise DanglingInputError(
                    f"node '{node.id}' consumes unknown node '{src}'")
            indeg[node.id] += 1
    ready = [nid for nid, d in indeg.items() if d == 0]
    order: list[str] = []
    while ready:
        nid = ready.pop(0)
        order.append(nid)
        for cid, cnode in graph.nodes.items():
            if nid in cnode.inputs:
                indeg[cid] -= cnode.inputs.count(nid)
                if indeg[cid] == 0:
                    ready.append(cid)
    if len(order) != len(graph.nodes):
        leftover = sorted(set(graph.nodes) - set(order))
        raise CycleError(f"cycle detected among nodes {leftover}")
    return order


def _conv_out_hw(node: LayerNode, h: int, w: int) -> tuple[int, int]:
    spec = node.kind
    k, s, p = spec.kernel_size, spec.stride, spec.padding
    out = []
    for dim in (h, w):
        span = dim + 2 * p - k
        if span < 0 or span % s != 0:
            raise ShapeMismatchError(
                node.id, f"non-integral output size for input {dim} with k={k} s={s} p={p}")
        out.append(span // s + 1)
    if min(out) < 1:
        raise ShapeMismatchError(node.id, "output size collapsed below 1")
    return out[0], out[1]


def _conv_transpose_out_hw(node: LayerNode, h: int, w: int) -> tuple[int, int]:
    spec = node.kind
    k, s, p = spec.kernel_size, spec.stride, spec.padding
    oh = (h - 1) * s - 2 * p + k
    ow = (w - 1) * s - 2 * p + k
    if min(oh, ow) < 1:
        raise ShapeMismatchError(node.id, "transposed output size collapsed below 1")
    return oh, ow


def validate(graph: GeneratorGraph) -> ValidationReport:
    """Check structural soundness and propagate shapes.

    Raises the subclass of :class:`GraphError` matching the first problem
    found; on success returns per-node output shapes.
    """
    if not graph.input_ids:
        raise GraphError("graph has no inputs")
    if graph.output_id not in graph.nodes:
        raise DanglingInputError(f"output id '{graph.output_id}' is not a node")
    for nid, node in graph.nodes.items():
        if nid != node.id:
            raise GraphError(f"node key '{nid}' does not match node id '{node.id}'")
    for iid in graph.input_ids:
        if iid not in graph.nodes:
            raise DanglingInputError(f"input id '{iid}' is not a node")
        if not isinstance(graph.nodes[iid].kind, InputSpec):
            raise GraphError(f"input id '{iid}' is not an input node")

    order = topological_order(graph)  # also checks dangling inputs / cycles

    # arity by kind
    for node in graph.nodes.values():
        n_in = len(node.inputs)
        kind = node.kind
        if isinstance(kind, InputSpec):
            if n_in != 0:
                raise GraphError(f"input node '{node.id}' must not consume anything")
        elif isinstance(kind, ConcatSpec):
            if n_in < 2:
                raise GraphError(f"concat node '{node.id}' needs at least 2 inputs")
        else:
            if n_in != 1:
                raise GraphError(f"node '{node.id}' must have exactly 1 input, has {n_in}")

    # the output must be reachable from every declared input
    ancestors: set[str] = set()
    stack = [graph.output_id]
    while stack:
        nid = stack.pop()
        if nid in ancestors:
            continue
        ancestors.add(nid)
        stack.extend(graph.nodes[nid].inputs)
    for iid in graph.input_ids:
        if iid not in ancestors:
            raise UnreachableError(f"output is not reachable from input '{iid}'")

    # skip edges must describe real concat wiring
    for src, cat in graph.skip_edges:
        if cat not in graph.nodes or not isinstance(graph.nodes[cat].kind, ConcatSpec):
            raise GraphError(f"skip edge targets non-concat node '{cat}'")
        if src not in graph.nodes[cat].inputs:
            raise GraphError(f"skip edge ({src}, {cat}) has no matching concat input")

    shapes: dict[str, TensorShape] = {}
    for nid in order:
        node = graph.nodes[nid]
        kind = node.kind
        if isinstance(kind, InputSpec):
            shapes[nid] = kind.shape
            continue
        ins = [shapes[src] for src in node.inputs]
        if isinstance(kind, (ConvSpec, ConvTransposeSpec)):
            got = ins[0].channels
            if got != kind.in_channels:
                raise ShapeMismatchError(
                    nid, f"expects {kind.in_channels} input channels but is fed {got}")
            if isinstance(kind, ConvSpec):
                oh, ow = _conv_out_hw(node, ins[0].height, ins[0].width)
            else:
                oh, ow = _conv_transpose_out_hw(node, ins[0].height, ins[0].width)
            shapes[nid] = TensorShape(kind.out_channels, oh, ow)
        elif isinstance(kind, NormSpec):
            if ins[0].channels != kind.channels:
                raise ShapeMismatchError(
                    nid, f"norm over {kind.channels} channels but is fed {ins[0].channels}")
            shapes[nid] = ins[0]
        elif isinstance(kind, ActSpec):
            shapes[nid] = ins[0]
        elif isinstance(kind, ConcatSpec):
            hw = {(s.height, s.width) for s in ins}
            if len(hw) != 1:
                raise ShapeMismatchError(
                    nid, f"concat inputs disagree on spatial size: {sorted(hw)}")
            shapes[nid] = TensorShape(sum(s.channels for s in ins),
                                      ins[0].height, ins[0].width)
        elif isinstance(kind, OutputSpec):
            shapes[nid] = ins[0]
        else:  # pragma: no cover - exhaustive over NodeKind
            raise GraphError(f"unknown node kind on '{nid}'")
    return ValidationReport(shapes=shapes)


def output_layer_ids(graph: GeneratorGraph) -> set[str]:
    """Conv nodes whose output channels are the graph output's channels.

    Walks backwards from the output through channel-preserving nodes (act,
    norm, output) and fans out through concats.  These layers must never lose
    output channels in a user pruning plan.
    """
    found: set[str] = set()
    stack = [graph.output_id]
    seen: set[str] = set()
    while stack:
        nid = stack.pop()
        if nid in seen:
            continue
        seen.add(nid)
        node = graph.nodes[nid]
        if isinstance(node.kind, (ConvSpec, ConvTransposeSpec)):
            found.add(nid)
        elif isinstance(node.kind, InputSpec):
            continue
        else:
            stack.extend(node.inputs)
    return found


# --------------------------------------------------------------------------
# topology JSON
# --------------------------------------------------------------------------

_TOP_KEYS = {"arch", "nodes", "inputs", "output"}
_NODE_BASE_KEYS = {"id", "name", "kind", "inputs"}
_KIND_PARAM_KEYS = {
    "conv": {"in_channels", "out_channels", "kernel_size", "stride", "padding", "has_bias"},
    "conv_transpose": {"in_channels", "out_channels", "kernel_size", "stride", "padding", "has_bias"},
    "norm": {"norm_kind", "channels"},
    "act": {"act_kind"},
    "concat": set(),
    "input": {"channels", "height", "width"},
    "output": set(),
}


def _node_to_dict(node: LayerNode) -> dict:
    out: dict = {"id": node.id, "name": node.name, "kind": node.kind_name}
    kind = node.kind
    if isinstance(kind, (ConvSpec, ConvTransposeSpec)):
        out.update(in_channels=kind.in_channels, out_channels=kind.out_channels,
                   kernel_size=kind.kernel_size, stride=kind.stride,
                   padding=kind.padding, has_bias=kind.has_bias)
    elif isinstance(kind, NormSpec):
        out.update(norm_kind=kind.norm_kind, channels=kind.channels)
    elif isinstance(kind, ActSpec):
        out.update(act_kind=kind.act_kind)
    elif isinstance(kind, InputSpec):
        out.update(channels=kind.shape.channels, height=kind.shape.height,
                   width=kind.shape.width)
    out["inputs"] = list(node.inputs)
    return out


def to_json_dict(graph: GeneratorGraph) -> dict:
    return {
        "arch": graph.arch,
        "nodes": [_node_to_dict(graph.nodes[nid]) for nid in graph.nodes],
        "inputs": list(graph.input_ids),
        "output": graph.output_id,
    }


def to_json(graph: GeneratorGraph, indent: int | None = 2) -> str:
    return json.dumps(to_json_dict(graph), indent=indent)


def _node_from_dict(raw: object) -> LayerNode:
    if not isinstance(raw, dict):
        raise FormatError(f"node entry must be an object, got {type(raw).__name__}")
    for key in ("id", "name", "kind", "inputs"):
        if key not in raw:
            raise FormatError(f"node entry missing required field '{key}'")
    kind_name = raw["kind"]
    if kind_name not in _KIND_PARAM_KEYS:
        raise FormatError(f"node '{raw['id']}': unknown kind '{kind_name}'")
    allowed = _NODE_BASE_KEYS | _KIND_PARAM_KEYS[kind_name]
    extra = set(raw) - allowed
    if extra:
        raise FormatError(f"node '{raw['id']}': unknown fields {sorted(extra)}")
    missing = _KIND_PARAM_KEYS[kind_name] - set(raw)
    if missing:
        raise FormatError(f"node '{raw['id']}': missing fields {sorted(missing)}")
    try:
        if kind_name == "conv":
            kind: NodeKind = ConvSpec(raw["in_channels"], raw["out_channels"],
                                      raw["kernel_size"], raw["stride"],
                                      raw["padding"], raw["has_bias"])
        elif kind_name == "conv_transpose":
            kind = ConvTransposeSpec(raw["in_channels"], raw["out_channels"],
                                     raw["kernel_size"], raw["stride"],
                                     raw["padding"], raw["has_bias"])
        elif kind_name == "norm":
            kind = NormSpec(raw["norm_kind"], raw["channels"])
        elif kind_name == "act":
            kind = ActSpec(raw["act_kind"])
        elif kind_name == "concat":
            kind = ConcatSpec()
        elif kind_name == "input":
            kind = InputSpec(TensorShape(raw["channels"], raw["height"], raw["width"]))
        else:
            kind = OutputSpec()
    except (ValueError, TypeError) as exc:
        raise FormatError(f"node '{raw['id']}': {exc}") from exc
    inputs = raw["inputs"]
    if not isinstance(inputs, list) or not all(isinstance(s, str) for s in inputs):
        raise FormatError(f"node '{raw['id']}': inputs must be a list of node ids")
    return LayerNode(id=raw["id"], name=raw["name"], kind=kind, inputs=tuple(inputs))


def from_json_dict(doc: object) -> GeneratorGraph:
    if not isinstance(doc, dict):
        raise FormatError("topology document must be a JSON object")
    extra = set(doc) - _TOP_KEYS
    if extra:
        raise FormatError(f"unknown top-level fields {sorted(extra)}")
    missing = _TOP_KEYS - set(doc)
    if missing:
        raise FormatError(f"missing top-level fields {sorted(missing)}")
    nodes: dict[str, LayerNode] = {}
    for raw in doc["nodes"]:
        node = _node_from_dict(raw)
        if node.id in nodes:
            raise FormatError(f"duplicate node id '{node.id}'")
        nodes[node.id] = node
    # skip edges are a derived annotation: every concat input after the first
    skips: list[tuple[str, str]] = []
    for node in nodes.values():
        if isinstance(node.kind, ConcatSpec):
            skips.extend((src, node.id) for src in node.inputs[1:])
    graph = GeneratorGraph(nodes=nodes, input_ids=tuple(doc["inputs"]),
                           output_id=doc["output"], skip_edges=tuple(skips),
                           arch=doc["arch"])
    validate(graph)
    return graph


def from_json(text: str) -> GeneratorGraph:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc}") from exc
    return from_json_dict(doc)
