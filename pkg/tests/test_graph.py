"""Graph IR: construction, validation, shape propagation, JSON round-trip."""

import json

import pytest

from unetprune import (ActSpec, ConcatSpec, ConvSpec, ConvTransposeSpec,
                       CycleError, DanglingInputError, FormatError, InputSpec,
                       NormSpec, OutputSpec, ShapeMismatchError, TensorShape,
                       UnreachableError, from_json, output_layer_ids, to_json,
                       topological_order, validate)
from conftest import chain_graph, make_graph, node, skip_graph


# --------------------------------------------------------------------------
# domain types
# --------------------------------------------------------------------------


def test_tensor_shape_positive_ints_only():
    assert TensorShape(3, 8, 8).numel == 192
    assert TensorShape(1, 2, 4).as_tuple() == (1, 2, 4)
    for bad in [(0, 8, 8), (3, -1, 8), (3, 8, 0)]:
        with pytest.raises(ValueError):
            TensorShape(*bad)
    with pytest.raises(ValueError):
        TensorShape(3.0, 8, 8)  # type: ignore[arg-type]
    with pytest.raises(ValueError):
        TensorShape(True, 8, 8)  # bools are not channel counts


def test_conv_spec_field_validation():
    spec = ConvSpec(3, 8, 4, 2, 1, has_bias=False)
    assert (spec.in_channels, spec.out_channels) == (3, 8)
    with pytest.raises(ValueError):
        ConvSpec(0, 8, 3)
    with pytest.raises(ValueError):
        ConvSpec(3, 8, 3, stride=3)
    with pytest.raises(ValueError):
        ConvTransposeSpec(3, 8, 3, padding=-1)
    with pytest.raises(ValueError):
        NormSpec("group", 8)
    with pytest.raises(ValueError):
        ActSpec("gelu")


# --------------------------------------------------------------------------
# topology checks
# --------------------------------------------------------------------------


def test_validate_reports_shapes_for_chain():
    g = chain_graph(in_ch=3, mid_ch=8, out_ch=5, k=3, spatial=8,
                    norm_kind="batch", act_kind="relu")
    report = validate(g)
    assert report.shape("conv1").as_tuple() == (8, 8, 8)
    assert report.shape("n1").as_tuple() == (8, 8, 8)
    assert report.shape("conv2").as_tuple() == (5, 8, 8)
    assert report.shape("out").as_tuple() == (5, 8, 8)


def test_validate_strided_shapes():
    g = skip_graph(spatial=8)
    report = validate(g)
    assert report.shape("enc").as_tuple()[1:] == (4, 4)
    assert report.shape("dec").as_tuple()[1:] == (8, 8)
    assert report.shape("cat").channels == 8  # 4 + 4


def test_cycle_detected():
    nodes = {
        "in": node("in", InputSpec(TensorShape(1, 4, 4))),
        "a": node("a", ConvSpec(1, 1, 1), "b"),
        "b": node("b", ConvSpec(1, 1, 1), "a"),
        "out": node("out", OutputSpec(), "a"),
    }
    g = make_graph(nodes, ["in"], "out")
    with pytest.raises(CycleError):
        validate(g)


def test_dangling_input_detected():
    nodes = {
        "in": node("in", InputSpec(TensorShape(1, 4, 4))),
        "c": node("c", ConvSpec(1, 1, 1), "ghost"),
        "out": node("out", OutputSpec(), "c"),
    }
    with pytest.raises(DanglingInputError):
        validate(make_graph(nodes, ["in"], "out"))


def test_unreachable_input_detected():
    nodes = {
        "in": node("in", InputSpec(TensorShape(1, 4, 4))),
        "in2": node("in2", InputSpec(TensorShape(1, 4, 4))),
        "c": node("c", ConvSpec(1, 1, 1), "in"),
        "out": node("out", OutputSpec(), "c"),
    }
    with pytest.raises(UnreachableError):
        validate(make_graph(nodes, ["in", "in2"], "out"))


def test_arity_errors():
    base = {
        "in": node("in", InputSpec(TensorShape(1, 4, 4))),
        "c": node("c", ConvSpec(1, 1, 1), "in"),
        "out": node("out", OutputSpec(), "c"),
    }
    two_in = dict(base)
    two_in["c"] = node("c", ConvSpec(1, 1, 1), "in", "in")
    with pytest.raises(Exception):
        validate(make_graph(two_in, ["in"], "out"))
    lone_cat = dict(base)
    lone_cat["cat"] = node("cat", ConcatSpec(), "c")
    lone_cat["out"] = node("out", OutputSpec(), "cat")
    with pytest.raises(Exception):
        validate(make_graph(lone_cat, ["in"], "out"))


def test_shape_mismatch_conv_division():
    nodes = {
        "in": node("in", InputSpec(TensorShape(1, 5, 5))),
        "c": node("c", ConvSpec(1, 2, 4, 2, 1), "in"),  # 5x5 not halvable
        "out": node("out", OutputSpec(), "c"),
    }
    with pytest.raises(ShapeMismatchError) as exc:
        validate(make_graph(nodes, ["in"], "out"))
    assert exc.value.node == "c"


def test_shape_mismatch_channel_count():
    nodes = {
        "in": node("in", InputSpec(TensorShape(3, 4, 4))),
        "c": node("c", ConvSpec(4, 2, 1), "in"),  # expects 4, gets 3
        "out": node("out", OutputSpec(), "c"),
    }
    with pytest.raises(ShapeMismatchError):
        validate(make_graph(nodes, ["in"], "out"))


def test_shape_mismatch_concat_spatial():
    nodes = {
        "in": node("in", InputSpec(TensorShape(1, 8, 8))),
        "a": node("a", ConvSpec(1, 2, 3, 1, 1), "in"),
        "b": node("b", ConvSpec(1, 2, 4, 2, 1), "in"),
        "cat": node("cat", ConcatSpec(), "a", "b"),
        "c": node("c", ConvSpec(4, 1, 1), "cat"),
        "out": node("out", OutputSpec(), "c"),
    }
    with pytest.raises(ShapeMismatchError):
        validate(make_graph(nodes, ["in"], "out"))


def test_shape_mismatch_norm_channels():
    g = chain_graph(mid_ch=8)
    nodes = dict(g.nodes)
    nodes["n1"] = node("n1", NormSpec("batch", 7), "conv1")
    nodes["conv2"] = node("conv2", ConvSpec(8, 5, 3, 1, 1), "n1")
    with pytest.raises(ShapeMismatchError):
        validate(make_graph(nodes, ["in"], "out"))


def test_transposed_conv_output_shape():
    nodes = {
        "in": node("in", InputSpec(TensorShape(2, 9, 9))),
        "up": node("up", ConvTransposeSpec(2, 4, 4, 2, 1), "in"),
        "out": node("out", OutputSpec(), "up"),
    }
    report = validate(make_graph(nodes, ["in"], "out"))
    # (9 - 1) * 2 - 2 * 1 + 4 = 18
    assert report.shape("up").as_tuple() == (4, 18, 18)


# --------------------------------------------------------------------------
# ordering and helpers
# --------------------------------------------------------------------------


def test_topological_order_respects_edges(pix_small):
    graph, _ = pix_small
    order = topological_order(graph)
    pos = {nid: i for i, nid in enumerate(order)}
    assert set(order) == set(graph.nodes)
    for nid, n in graph.nodes.items():
        for src in n.inputs:
            assert pos[src] < pos[nid], f"{src} must precede {nid}"


def test_topological_order_deterministic(pix_small):
    graph, _ = pix_small
    assert topological_order(graph) == topological_order(graph)


def test_conv_node_ids_pix2pix(pix_small):
    graph, _ = pix_small
    assert graph.conv_node_ids() == [
        "C1", "C2", "C3", "C4", "C5", "C6", "C7", "C8",
        "U8", "U7", "U6", "U5", "U4", "U3", "U2", "U1"]


def test_output_layer_ids(pix_small):
    graph, _ = pix_small
    assert output_layer_ids(graph) == {"U1"}
    # and when the output is fed by a concat of two convs, both are protected
    nodes = {
        "in": node("in", InputSpec(TensorShape(1, 4, 4))),
        "a": node("a", ConvSpec(1, 2, 1), "in"),
        "b": node("b", ConvSpec(1, 3, 1), "in"),
        "cat": node("cat", ConcatSpec(), "a", "b"),
        "out": node("out", OutputSpec(), "cat"),
    }
    g = make_graph(nodes, ["in"], "out")
    assert output_layer_ids(g) == {"a", "b"}


def test_consumers(pix_small):
    graph, _ = pix_small
    assert "U1" in graph.consumers("U1.act")


# --------------------------------------------------------------------------
# JSON round-trip and strictness
# --------------------------------------------------------------------------


def test_json_roundtrip_identity(pix_small, wav_small):
    for graph in (pix_small[0], wav_small[0], skip_graph()):
        text = to_json(graph)
        again = from_json(text)
        assert to_json(again) == text
        assert again.input_ids == graph.input_ids
        assert again.output_id == graph.output_id
        assert again.arch == graph.arch


def test_json_skip_edges_recovered():
    g = skip_graph()
    again = from_json(to_json(g))
    assert again.skip_edges == (("stem", "cat"),)


def test_json_rejects_unknown_top_key(pix_small):
    doc = json.loads(to_json(pix_small[0]))
    doc["extra"] = 1
    with pytest.raises(FormatError):
        from_json(json.dumps(doc))


def test_json_rejects_missing_top_key(pix_small):
    doc = json.loads(to_json(pix_small[0]))
    del doc["inputs"]
    with pytest.raises(FormatError):
        from_json(json.dumps(doc))


def test_json_rejects_unknown_node_param(pix_small):
    doc = json.loads(to_json(pix_small[0]))
    doc["nodes"][0]["dilation"] = 2
    with pytest.raises(FormatError):
        from_json(json.dumps(doc))


def test_json_rejects_bad_kind(pix_small):
    doc = json.loads(to_json(pix_small[0]))
    doc["nodes"][3]["kind"] = "pool"
    with pytest.raises(FormatError):
        from_json(json.dumps(doc))


def test_json_rejects_non_object():
    with pytest.raises(FormatError):
        from_json("[1, 2]")
