"""Builders for the two supported generator families.

``build_pix2pix``
    The classic 8-down / 8-up image-to-image U-Net: every resolution stage
    halves (encoder) or doubles (decoder) the spatial size with k4 s2 p1
    convolutions, skip connections concatenate mirror stages, and the decoder
    path is always the *first* concat input.

``build_wav2lip``
    A two-encoder (face + audio) talking-head generator described by a
    declarative layer table.  Channel widths in the table are affine
    expressions in three width knobs (face/audio/decoder base filters), so the
    same table builds every model scale.

Both builders return a validated :class:`~unetprune.graph.GeneratorGraph`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from typing import Mapping, Sequence

from .graph import (ActSpec, ConcatSpec, ConvSpec, ConvTransposeSpec,
                    GeneratorGraph, GraphError, InputSpec, LayerNode, NormSpec,
                    OutputSpec, TensorShape, validate)

PIX2PIX_DEPTH = 8

# output-channel multiplier (in units of base_filters) per encoder stage C1..C8
PIX2PIX_ENCODER_MULT = (1, 2, 4, 8, 8, 8, 8, 8)
# per decoder stage U8..U1; U1 is overridden by the requested output channels
PIX2PIX_DECODER_MULT = (8, 8, 8, 8, 4, 2, 1, None)


class BuildError(GraphError):
    """Invalid architecture configuration or layer table."""


@dataclass(frozen=True)
class ArchConfig:
    """What to build.

    ``base_filters`` is an int for pix2pix and a (face, audio, decoder)
    triple for wav2lip (an int broadcasts to all three).  ``input_shapes``
    overrides the default input tensors, in the architecture's input order.
    """

    arch: str
    base_filters: int | tuple[int, int, int] = 64
    input_shapes: tuple[TensorShape, ...] | None = None
    norm_kind: str = "batch"
    out_channels: int = 3

    def __post_init__(self) -> None:
        if self.arch not in ("pix2pix", "wav2lip"):
            raise BuildError(f"unknown arch '{self.arch}'")
        if self.norm_kind not in ("batch", "instance", "none"):
            raise BuildError(f"unknown norm_kind '{self.norm_kind}'")
        bf = self.base_filters
        if isinstance(bf, int):
            if bf < 1:
                raise BuildError("base_filters must be positive")
        elif (isinstance(bf, tuple) and len(bf) == 3
              and all(isinstance(v, int) and v >= 1 for v in bf)):
            if self.arch != "wav2lip":
                raise BuildError("tuple base_filters is only valid for wav2lip")
        else:
            raise BuildError("base_filters must be a positive int or a triple of them")
        if self.out_channels < 1:
            raise BuildError("out_channels must be positive")


def build(cfg: ArchConfig, table: Mapping | None = None) -> GeneratorGraph:
    if cfg.arch == "pix2pix":
        if table is not None:
            raise BuildError("pix2pix does not take a layer table")
        return build_pix2pix(cfg)
    return build_wav2lip(cfg, table)


# --------------------------------------------------------------------------
# pix2pix
# --------------------------------------------------------------------------


def build_pix2pix(cfg: ArchConfig) -> GeneratorGraph:
    """8-down/8-up U-Net.

    Stage layout (conv nodes named C1..C8 down, U8..U1 up):

    * ``C1``: conv straight off the input, bias, no norm.
    * ``Ck`` (k>=2): leaky-ReLU -> conv -> norm; the innermost ``C8`` skips
      the norm.
    * ``U8``: ReLU -> transposed conv -> norm (no concat; it sits on the
      bottleneck).
    * ``Uk`` (k<=7): concat(decoder path, skip) -> ReLU -> transposed conv ->
      norm; ``U1`` swaps the norm for a tanh and carries a bias.

    Only ``C1`` and ``U1`` have biases.  Skip connections tap each encoder
    stage's final (post-norm) output.
    """
    if not isinstance(cfg.base_filters, int):
        raise BuildError("pix2pix base_filters must be an int")
    nf = cfg.base_filters
    if cfg.input_shapes is None:
        in_shape = TensorShape(3, 256, 256)
    elif len(cfg.input_shapes) == 1:
        in_shape = cfg.input_shapes[0]
    else:
        raise BuildError("pix2pix takes exactly one input shape")
    factor = 2 ** PIX2PIX_DEPTH
    if in_shape.height % factor or in_shape.width % factor:
        raise BuildError(
            f"pix2pix input size {in_shape.height}x{in_shape.width} must be "
            f"divisible by {factor} (8 halvings)")

    nodes: dict[str, LayerNode] = {}

    def add(node_id: str, kind, *inputs: str) -> str:
        nodes[node_id] = LayerNode(id=node_id, name=node_id, kind=kind,
                                   inputs=tuple(inputs))
        return node_id

    def maybe_norm(node_id: str, channels: int, src: str) -> str:
        if cfg.norm_kind == "none":
            return src
        return add(node_id, NormSpec(cfg.norm_kind, channels), src)

    add("in", InputSpec(in_shape))

    enc_out: dict[int, str] = {}   # stage -> final output node id
    enc_ch: dict[int, int] = {}
    prev, prev_ch = "in", in_shape.channels
    for k in range(1, PIX2PIX_DEPTH + 1):
        out_ch = nf * PIX2PIX_ENCODER_MULT[k - 1]
        name = f"C{k}"
        if k == 1:
            conv_src = prev
        else:
            conv_src = add(f"{name}.act", ActSpec("leaky_relu"), prev)
        add(name, ConvSpec(prev_ch, out_ch, 4, 2, 1, has_bias=(k == 1)), conv_src)
        if k in (1, PIX2PIX_DEPTH):
            stage_out = name                      # C1 and C8 carry no norm
        else:
            stage_out = maybe_norm(f"{name}.norm", out_ch, name)
        enc_out[k], enc_ch[k] = stage_out, out_ch
        prev, prev_ch = stage_out, out_ch

    for k in range(PIX2PIX_DEPTH, 0, -1):
        mult = PIX2PIX_DECODER_MULT[PIX2PIX_DEPTH - k]
        out_ch = cfg.out_channels if k == 1 else nf * mult
        name = f"U{k}"
        if k == PIX2PIX_DEPTH:
            trunk, in_ch = prev, prev_ch          # bottleneck: no skip
        else:
            skip, in_ch = enc_out[k], prev_ch + enc_ch[k]
            trunk = add(f"{name}.cat", ConcatSpec(), prev, skip)
        act = add(f"{name}.act", ActSpec("relu"), trunk)
        add(name, ConvTransposeSpec(in_ch, out_ch, 4, 2, 1, has_bias=(k == 1)), act)
        if k == 1:
            stage_out = add(f"{name}.out_act", ActSpec("tanh"), name)
        else:
            stage_out = maybe_norm(f"{name}.norm", out_ch, name)
        prev, prev_ch = stage_out, out_ch

    add("out", OutputSpec(), prev)

    skips = tuple((node.inputs[1], node.id) for node in nodes.values()
                  if isinstance(node.kind, ConcatSpec))
    graph = GeneratorGraph(nodes=nodes, input_ids=("in",), output_id="out",
                           skip_edges=skips, arch="pix2pix")
    validate(graph)
    return graph


# --------------------------------------------------------------------------
# wav2lip: declarative layer table
# --------------------------------------------------------------------------

_EXPR_KEYS = {"const", "nVF", "nAF", "nDF"}
_TABLE_KEYS = {"arch", "inputs", "layers", "output"}
_LAYER_KEYS = {"name", "op", "kernel_size", "stride", "padding",
               "in_channels", "out_channels", "trunk", "skip", "norm", "act"}


def load_default_table() -> dict:
    """The layer table shipped with the package."""
    text = resources.files("unetprune").joinpath("data/wav2lip_layers.json").read_text()
    return json.loads(text)


def _eval_expr(expr: Mapping, scale: tuple[int, int, int], where: str) -> int:
    if not isinstance(expr, Mapping):
        raise BuildError(f"{where}: channel expression must be an object")
    extra = set(expr) - _EXPR_KEYS
    if extra:
        raise BuildError(f"{where}: unknown channel terms {sorted(extra)}")
    weights = {"const": 1, "nVF": scale[0], "nAF": scale[1], "nDF": scale[2]}
    total = 0
    for key, coeff in expr.items():
        if not isinstance(coeff, int) or coeff < 0:
            raise BuildError(f"{where}: coefficient for '{key}' must be a non-negative int")
        total += coeff * weights[key]
    if total < 1:
        raise BuildError(f"{where}: channel expression evaluates to {total}")
    return total


def build_wav2lip(cfg: ArchConfig, table: Mapping | None = None) -> GeneratorGraph:
    """Two-encoder U-Net from a layer table.

    Every table layer is conv -> norm -> activation; a layer with a ``skip``
    first concatenates (trunk output, skip output) in that order.  Channel
    widths are affine in (nVF, nAF, nDF) = face/audio/decoder base filters.
    A table whose declared in_channels disagree with its own wiring at the
    chosen scale is rejected with the offending layer named.
    """
    bf = cfg.base_filters
    scale = (bf, bf, bf) if isinstance(bf, int) else bf
    if table is None:
        table = load_default_table()

    if not isinstance(table, Mapping):
        raise BuildError("layer table must be a JSON object")
    extra = set(table) - _TABLE_KEYS
    if extra:
        raise BuildError(f"layer table has unknown fields {sorted(extra)}")
    missing = _TABLE_KEYS - set(table)
    if missing:
        raise BuildError(f"layer table missing fields {sorted(missing)}")

    nodes: dict[str, LayerNode] = {}

    def add(node_id: str, kind, *inputs: str) -> str:
        if node_id in nodes:
            raise BuildError(f"duplicate node id '{node_id}' in layer table")
        nodes[node_id] = LayerNode(id=node_id, name=node_id, kind=kind,
                                   inputs=tuple(inputs))
        return node_id

    out_of: dict[str, str] = {}    # layer/input name -> its output node id
    ch_of: dict[str, int] = {}

    raw_inputs = table["inputs"]
    if not isinstance(raw_inputs, Sequence) or isinstance(raw_inputs, str) or not raw_inputs:
        raise BuildError("layer table 'inputs' must be a non-empty list")
    shapes = cfg.input_shapes
    if shapes is not None and len(shapes) != len(raw_inputs):
        raise BuildError(f"expected {len(raw_inputs)} input shapes, got {len(shapes)}")
    input_ids: list[str] = []
    for pos, raw in enumerate(raw_inputs):
        name = raw["name"]
        channels = _eval_expr(raw["channels"], scale, f"input '{name}'")
        if shapes is not None:
            if shapes[pos].channels != channels:
                raise BuildError(
                    f"input '{name}' must have {channels} channels, "
                    f"got {shapes[pos].channels}")
            shape = shapes[pos]
        else:
            shape = TensorShape(channels, raw["height"], raw["width"])
        add(name, InputSpec(shape))
        input_ids.append(name)
        out_of[name], ch_of[name] = name, channels

    raw_layers = table["layers"]
    if not isinstance(raw_layers, Sequence) or not raw_layers:
        raise BuildError("layer table 'layers' must be a non-empty list")
    for raw in raw_layers:
        if not isinstance(raw, Mapping):
            raise BuildError("layer entry must be an object")
        unknown = set(raw) - _LAYER_KEYS
        if unknown:
            raise BuildError(f"layer entry has unknown fields {sorted(unknown)}")
        lacking = _LAYER_KEYS - set(raw)
        if lacking:
            raise BuildError(f"layer entry missing fields {sorted(lacking)}")
        name = raw["name"]
        where = f"layer '{name}'"
        if raw["op"] not in ("conv", "conv_transpose"):
            raise BuildError(f"{where}: unknown op '{raw['op']}'")
        if raw["trunk"] not in out_of:
            raise BuildError(f"{where}: trunk '{raw['trunk']}' is not defined yet")
        declared_in = _eval_expr(raw["in_channels"], scale, where)
        out_ch = _eval_expr(raw["out_channels"], scale, where)

        wired_in = ch_of[raw["trunk"]]
        conv_src = out_of[raw["trunk"]]
        if raw["skip"] is not None:
            if raw["skip"] not in out_of:
                raise BuildError(f"{where}: skip '{raw['skip']}' is not defined yet")
            wired_in += ch_of[raw["skip"]]
            conv_src = add(f"{name}.cat", ConcatSpec(), conv_src, out_of[raw["skip"]])
        if declared_in != wired_in:
            raise BuildError(
                f"{where}: declares {declared_in} input channels but its wiring "
                f"provides {wired_in} at scale nVF={scale[0]} nAF={scale[1]} "
                f"nDF={scale[2]}")

        spec_cls = ConvSpec if raw["op"] == "conv" else ConvTransposeSpec
        try:
            kind = spec_cls(declared_in, out_ch, raw["kernel_size"],
                            raw["stride"], raw["padding"], has_bias=True)
        except (ValueError, TypeError) as exc:
            raise BuildError(f"{where}: {exc}") from exc
        add(name, kind, conv_src)
        stage_out = name
        if raw["norm"] and cfg.norm_kind != "none":
            stage_out = add(f"{name}.norm", NormSpec(cfg.norm_kind, out_ch), name)
        if raw["act"] is not None:
            try:
                act = ActSpec(raw["act"])
            except ValueError as exc:
                raise BuildError(f"{where}: {exc}") from exc
            stage_out = add(f"{name}.act", act, stage_out)
        out_of[name], ch_of[name] = stage_out, out_ch

    if table["output"] not in out_of:
        raise BuildError(f"layer table output '{table['output']}' is not a layer")
    add("out", OutputSpec(), out_of[table["output"]])

    skips = tuple((node.inputs[1], node.id) for node in nodes.values()
                  if isinstance(node.kind, ConcatSpec))
    graph = GeneratorGraph(nodes=nodes, input_ids=tuple(input_ids),
                           output_id="out", skip_edges=skips, arch="wav2lip")
    validate(graph)
    return graph
