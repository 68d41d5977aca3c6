"""Shared fixtures and small graph-construction helpers."""

from __future__ import annotations

import numpy as np
import pytest

from unetprune import (ActSpec, ArchConfig, ConcatSpec, ConvSpec,
                       ConvTransposeSpec, GeneratorGraph, InputSpec, LayerNode,
                       NormSpec, OutputSpec, TensorShape, build, init_random)


def make_graph(nodes: dict[str, LayerNode], input_ids, output_id,
               skip_edges=(), arch="custom") -> GeneratorGraph:
    return GeneratorGraph(nodes=nodes, input_ids=tuple(input_ids),
                          output_id=output_id,
                          skip_edges=tuple(skip_edges), arch=arch)


def node(node_id: str, kind, *inputs: str) -> LayerNode:
    return LayerNode(id=node_id, name=node_id, kind=kind, inputs=tuple(inputs))


def chain_graph(*, in_ch=3, mid_ch=8, out_ch=5, k=3, spatial=8,
                norm_kind=None, act_kind=None) -> GeneratorGraph:
    """in -> conv1 (in_ch->mid_ch) [-> norm] [-> act] -> conv2 -> out."""
    pad = (k - 1) // 2
    nodes = {}
    nodes["in"] = node("in", InputSpec(TensorShape(in_ch, spatial, spatial)))
    nodes["conv1"] = node("conv1", ConvSpec(in_ch, mid_ch, k, 1, pad), "in")
    prev = "conv1"
    if norm_kind:
        nodes["n1"] = node("n1", NormSpec(norm_kind, mid_ch), prev)
        prev = "n1"
    if act_kind:
        nodes["a1"] = node("a1", ActSpec(act_kind), prev)
        prev = "a1"
    nodes["conv2"] = node("conv2", ConvSpec(mid_ch, out_ch, k, 1, pad), prev)
    nodes["out"] = node("out", OutputSpec(), "conv2")
    return make_graph(nodes, ["in"], "out")


def skip_graph(*, in_ch=3, enc_ch=6, dec_ch=4, out_ch=2,
               spatial=8) -> GeneratorGraph:
    """A one-level U: in -> enc (stride 2) -> dec (tconv) -> cat(dec, in-conv)
    -> head -> out.  Exercises concat offset bookkeeping."""
    nodes = {
        "in": node("in", InputSpec(TensorShape(in_ch, spatial, spatial))),
        "stem": node("stem", ConvSpec(in_ch, dec_ch, 3, 1, 1), "in"),
        "enc": node("enc", ConvSpec(dec_ch, enc_ch, 4, 2, 1), "stem"),
        "dec": node("dec", ConvTransposeSpec(enc_ch, dec_ch, 4, 2, 1), "enc"),
        "cat": node("cat", ConcatSpec(), "dec", "stem"),
        "head": node("head", ConvSpec(2 * dec_ch, out_ch, 3, 1, 1), "cat"),
        "out": node("out", OutputSpec(), "head"),
    }
    return make_graph(nodes, ["in"], "out", skip_edges=[("stem", "cat")])


def random_valid_graph(rng: np.random.Generator) -> GeneratorGraph:
    """A random small valid graph: varied conv kinds, norms, acts, bias,
    optional second input joined by concat, optional upsampling tail."""
    in_ch = int(rng.integers(1, 5))
    spatial = 16
    nodes = {"in0": node("in0", InputSpec(TensorShape(in_ch, spatial, spatial)))}
    inputs = ["in0"]
    prev, prev_ch, prev_sp = "in0", in_ch, spatial
    n_blocks = int(rng.integers(1, 4))
    for b in range(n_blocks):
        ch = int(rng.integers(1, 7))
        if rng.random() < 0.5 and prev_sp % 2 == 0 and prev_sp > 2:
            spec = ConvSpec(prev_ch, ch, 4, 2, 1, has_bias=bool(rng.random() < 0.5))
            prev_sp //= 2
        else:
            spec = ConvSpec(prev_ch, ch, 3, 1, 1, has_bias=bool(rng.random() < 0.5))
        cid = f"c{b}"
        nodes[cid] = node(cid, spec, prev)
        prev, prev_ch = cid, ch
        kind = ("batch", "instance", "none")[int(rng.integers(0, 3))]
        if kind != "none":
            nid = f"n{b}"
            nodes[nid] = node(nid, NormSpec(kind, ch), prev)
            prev = nid
        if rng.random() < 0.7:
            act = ("relu", "leaky_relu", "tanh", "sigmoid")[int(rng.integers(0, 4))]
            aid = f"a{b}"
            nodes[aid] = node(aid, ActSpec(act), prev)
            prev = aid
    if rng.random() < 0.4:  # dual input joined by concat
        ch2 = int(rng.integers(1, 4))
        nodes["in1"] = node("in1", InputSpec(TensorShape(ch2, prev_sp, prev_sp)))
        inputs.append("in1")
        nodes["join"] = node("join", ConcatSpec(), prev, "in1")
        nodes["mix"] = node("mix", ConvSpec(prev_ch + ch2, prev_ch, 1, 1, 0),
                            "join")
        prev = "mix"
    if rng.random() < 0.4:  # upsampling tail
        ch = int(rng.integers(1, 5))
        nodes["up"] = node("up", ConvTransposeSpec(
            prev_ch, ch, 4, 2, 1, has_bias=bool(rng.random() < 0.5)), prev)
        prev, prev_ch = "up", ch
    out_ch = int(rng.integers(1, 4))
    nodes["final"] = node("final", ConvSpec(prev_ch, out_ch, 1, 1, 0), prev)
    nodes["out"] = node("out", OutputSpec(), "final")
    return make_graph(nodes, inputs, "out")


@pytest.fixture(scope="session")
def pix_small():
    """nF=8 generator at 256x256 with seeded weights (shared, read-only)."""
    graph = build(ArchConfig(arch="pix2pix", base_filters=8))
    return graph, init_random(graph, seed=11)


@pytest.fixture(scope="session")
def pix_nf4():
    graph = build(ArchConfig(arch="pix2pix", base_filters=4))
    return graph, init_random(graph, seed=3)


@pytest.fixture(scope="session")
def wav_small():
    graph = build(ArchConfig(arch="wav2lip", base_filters=(8, 16, 16)))
    return graph, init_random(graph, seed=5)
