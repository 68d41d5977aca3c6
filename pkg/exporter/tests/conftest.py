import pytest
import torch

from unetprune import ArchConfig, build
from unpr_export import build_reference, export, seeded_state_dict

PIX8_CFG = ArchConfig(arch="pix2pix", base_filters=8)
WAV_CFG = ArchConfig(arch="wav2lip", base_filters=(8, 16, 16))


@pytest.fixture(scope="session")
def pix8_graph():
    return build(PIX8_CFG)


@pytest.fixture(scope="session")
def wav_graph():
    return build(WAV_CFG)


@pytest.fixture(scope="session")
def pix8_model():
    model = build_reference("pix2pix", nf=8)
    model.load_state_dict(seeded_state_dict(model, seed=3))
    return model.eval()


@pytest.fixture(scope="session")
def wav_model():
    model = build_reference("wav2lip", scales=(8, 16, 16))
    model.load_state_dict(seeded_state_dict(model, seed=4))
    return model.eval()


@pytest.fixture(scope="session")
def pix8_sd(pix8_model):
    return dict(pix8_model.state_dict())


@pytest.fixture(scope="session")
def wav_sd(wav_model):
    return dict(wav_model.state_dict())


@pytest.fixture(scope="session")
def pix8_ckpt(pix8_sd, tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "pix8.pth"
    torch.save(pix8_sd, path)
    return path


@pytest.fixture(scope="session")
def pix8_container(pix8_ckpt, tmp_path_factory):
    path = tmp_path_factory.mktemp("unpr") / "pix8.unpr"
    export(pix8_ckpt, PIX8_CFG, path)
    return path
