"""Architecture builders: stage layout, channel schedules, option handling."""

import copy

import pytest

from unetprune import (ActSpec, ArchConfig, BuildError, ConcatSpec, ConvSpec,
                       ConvTransposeSpec, NormSpec, TensorShape, build,
                       build_pix2pix, build_wav2lip, load_default_table,
                       validate)

ENC_OUT_64 = {"C1": 64, "C2": 128, "C3": 256, "C4": 512,
              "C5": 512, "C6": 512, "C7": 512, "C8": 512}
DEC_IN_OUT_64 = {"U8": (512, 512), "U7": (1024, 512), "U6": (1024, 512),
                 "U5": (1024, 512), "U4": (1024, 256), "U3": (512, 128),
                 "U2": (256, 64), "U1": (128, 3)}


@pytest.fixture(scope="module")
def pix64():
    return build(ArchConfig(arch="pix2pix", base_filters=64))


def test_pix2pix_has_sixteen_conv_layers(pix64):
    assert len(pix64.conv_node_ids()) == 16


def test_pix2pix_encoder_channels(pix64):
    for layer, out_ch in ENC_OUT_64.items():
        spec = pix64.node(layer).kind
        assert isinstance(spec, ConvSpec)
        assert spec.out_channels == out_ch
        assert (spec.kernel_size, spec.stride, spec.padding) == (4, 2, 1)


def test_pix2pix_decoder_channels(pix64):
    for layer, (in_ch, out_ch) in DEC_IN_OUT_64.items():
        spec = pix64.node(layer).kind
        assert isinstance(spec, ConvTransposeSpec)
        assert (spec.in_channels, spec.out_channels) == (in_ch, out_ch)
        assert (spec.kernel_size, spec.stride, spec.padding) == (4, 2, 1)


def test_pix2pix_bias_rules(pix64):
    for nid in pix64.conv_node_ids():
        expected = nid in ("C1", "U1")
        assert pix64.node(nid).kind.has_bias is expected, nid


def test_pix2pix_norm_placement(pix64):
    normed = {nid.split(".")[0] for nid, n in pix64.nodes.items()
              if isinstance(n.kind, NormSpec)}
    assert normed == {"C2", "C3", "C4", "C5", "C6", "C7",
                      "U8", "U7", "U6", "U5", "U4", "U3", "U2"}


def test_pix2pix_activations(pix64):
    acts = {nid: n.kind.act_kind for nid, n in pix64.nodes.items()
            if isinstance(n.kind, ActSpec)}
    for k in range(2, 9):
        assert acts[f"C{k}.act"] == "leaky_relu"
    for k in range(1, 9):
        assert acts[f"U{k}.act"] == "relu"
    assert acts["U1.out_act"] == "tanh"


def test_pix2pix_skip_wiring(pix64):
    # Uk's concat reads the decoder trunk first, then Ck's stage output
    cat_inputs = {nid: n.inputs for nid, n in pix64.nodes.items()
                  if isinstance(n.kind, ConcatSpec)}
    assert len(cat_inputs) == 7  # U7..U1 (U8 reads C8 directly)
    assert cat_inputs["U1.cat"][1] == "C1"        # C1 has no norm stage
    assert cat_inputs["U7.cat"][1] == "C7.norm"
    for nid, (trunk, skip) in cat_inputs.items():
        assert trunk.startswith("U"), f"{nid} trunk must be decoder-side"
    assert len(pix64.skip_edges) == 7


def test_pix2pix_bottleneck_is_1x1(pix64):
    assert validate(pix64).shape("C8").as_tuple() == (512, 1, 1)


def test_pix2pix_custom_input_size():
    g = build(ArchConfig(arch="pix2pix", base_filters=8,
                         input_shapes=(TensorShape(3, 512, 256),)))
    assert validate(g).shape("C8").as_tuple() == (64, 2, 1)


def test_pix2pix_rejects_indivisible_input():
    with pytest.raises(BuildError):
        build(ArchConfig(arch="pix2pix", base_filters=8,
                         input_shapes=(TensorShape(3, 100, 100),)))


def test_pix2pix_norm_kind_options():
    none = build(ArchConfig(arch="pix2pix", base_filters=8, norm_kind="none"))
    assert not any(isinstance(n.kind, NormSpec) for n in none.nodes.values())
    inst = build(ArchConfig(arch="pix2pix", base_filters=8,
                            norm_kind="instance"))
    kinds = {n.kind.norm_kind for n in inst.nodes.values()
             if isinstance(n.kind, NormSpec)}
    assert kinds == {"instance"}


def test_pix2pix_out_channels():
    g = build(ArchConfig(arch="pix2pix", base_filters=8, out_channels=1))
    assert g.node("U1").kind.out_channels == 1


def test_arch_config_validation():
    with pytest.raises(BuildError):
        ArchConfig(arch="resnet", base_filters=8)
    with pytest.raises(BuildError):
        ArchConfig(arch="pix2pix", base_filters=0)
    with pytest.raises(BuildError):
        ArchConfig(arch="pix2pix", base_filters=(8, 8, 8, 8))


def test_build_dispatch_matches_direct():
    cfg = ArchConfig(arch="pix2pix", base_filters=8)
    assert build(cfg).nodes.keys() == build_pix2pix(cfg).nodes.keys()


# --------------------------------------------------------------------------
# wav2lip
# --------------------------------------------------------------------------


def test_wav2lip_structure(wav_small):
    graph, _ = wav_small
    assert graph.arch == "wav2lip"
    assert set(graph.input_ids) == {"face_in", "audio_in"}
    shapes = validate(graph)
    assert shapes.shape("face_in").as_tuple() == (6, 96, 96)
    assert shapes.shape("audio_in").as_tuple() == (1, 24, 24)
    # full-resolution output, 3 channels, sigmoid head
    assert shapes.shape(graph.output_id).as_tuple() == (3, 96, 96)
    out_src = graph.node(graph.output_id).inputs[0]
    assert graph.node(out_src).kind.act_kind == "sigmoid"


def test_wav2lip_trunks_meet_at_1x1(wav_small):
    graph, _ = wav_small
    shapes = validate(graph)
    assert shapes.shape("CV8").as_tuple()[1:] == (1, 1)
    assert shapes.shape("CA7").as_tuple()[1:] == (1, 1)


def test_wav2lip_concat_widths_are_trunk_plus_skip(wav_small):
    graph, _ = wav_small
    shapes = validate(graph)
    for nid, n in graph.nodes.items():
        if isinstance(n.kind, ConcatSpec):
            total = sum(shapes.shape(src).channels for src in n.inputs)
            assert shapes.shape(nid).channels == total


def test_wav2lip_int_base_filters_broadcasts():
    a = build(ArchConfig(arch="wav2lip", base_filters=16))
    b = build(ArchConfig(arch="wav2lip", base_filters=(16, 16, 16)))
    assert a.node("CV2").kind.out_channels == b.node("CV2").kind.out_channels


def test_wav2lip_scale_halving_shrinks_widths():
    big = build(ArchConfig(arch="wav2lip", base_filters=(16, 32, 32)))
    small = build(ArchConfig(arch="wav2lip", base_filters=(8, 16, 16)))
    assert small.node("CV6").kind.out_channels * 2 == \
        big.node("CV6").kind.out_channels


def test_wav2lip_table_missing_key_rejected():
    table = copy.deepcopy(load_default_table())
    del table["layers"][0]["kernel_size"]
    with pytest.raises(BuildError):
        build_wav2lip(ArchConfig(arch="wav2lip", base_filters=(8, 16, 16)),
                      table=table)


def test_wav2lip_table_unknown_key_rejected():
    table = copy.deepcopy(load_default_table())
    table["layers"][0]["dilation"] = 2
    with pytest.raises(BuildError):
        build_wav2lip(ArchConfig(arch="wav2lip", base_filters=(8, 16, 16)),
                      table=table)


def test_wav2lip_table_width_mismatch_names_layer():
    table = copy.deepcopy(load_default_table())
    for layer in table["layers"]:
        if layer["name"] == "U5":
            layer["in_channels"] = {"const": 999}
    with pytest.raises(BuildError, match="U5"):
        build_wav2lip(ArchConfig(arch="wav2lip", base_filters=(8, 16, 16)),
                      table=table)


def test_wav2lip_input_override_must_match_channels():
    with pytest.raises(BuildError):
        build(ArchConfig(arch="wav2lip", base_filters=(8, 16, 16),
                         input_shapes=(TensorShape(3, 96, 96),
                                       TensorShape(1, 24, 24))))
