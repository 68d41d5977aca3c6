"""Reference PyTorch implementations of the two supported generators.

These reproduce the module nesting — and therefore the ``state_dict``
parameter paths — of the publicly available implementations, so that a
checkpoint saved from them exercises the exact naming the exporter maps.
Semantics follow the published code: the image-translation U-Net
concatenates (skip, trunk) inside each recursive block; the lip-sync
generator concatenates (trunk, skip) after each decoder block.

One deliberate deviation from the published image-translation code: the
first encoder conv carries a bias term (the engine's cost convention), where
the original omits it under batch norm.
"""

from __future__ import annotations

import torch
from torch import nn


# --------------------------------------------------------------------------
# image-translation U-Net (recursive skip blocks)
# --------------------------------------------------------------------------

class _UnetBlock(nn.Module):
    """One encoder/decoder shell of the recursively nested U-Net."""

    def __init__(self, outer_nc: int, inner_nc: int,
                 submodule: nn.Module | None = None, *,
                 input_nc: int | None = None,
                 outermost: bool = False, innermost: bool = False):
        super().__init__()
        self.outermost = outermost
        if input_nc is None:
            input_nc = outer_nc
        downconv = nn.Conv2d(input_nc, inner_nc, kernel_size=4, stride=2,
                             padding=1, bias=outermost)
        downrelu = nn.LeakyReLU(0.2, True)
        downnorm = nn.BatchNorm2d(inner_nc)
        uprelu = nn.ReLU(True)
        upnorm = nn.BatchNorm2d(outer_nc)

        if outermost:
            upconv = nn.ConvTranspose2d(inner_nc * 2, outer_nc,
                                        kernel_size=4, stride=2, padding=1,
                                        bias=True)
            model = [downconv, submodule, uprelu, upconv, nn.Tanh()]
        elif innermost:
            upconv = nn.ConvTranspose2d(inner_nc, outer_nc,
                                        kernel_size=4, stride=2, padding=1,
                                        bias=False)
            model = [downrelu, downconv, uprelu, upconv, upnorm]
        else:
            upconv = nn.ConvTranspose2d(inner_nc * 2, outer_nc,
                                        kernel_size=4, stride=2, padding=1,
                                        bias=False)
            model = [downrelu, downconv, downnorm, submodule,
                     uprelu, upconv, upnorm]
        self.model = nn.Sequential(*model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.outermost:
            return self.model(x)
        return torch.cat([x, self.model(x)], 1)


class ReferencePix2Pix(nn.Module):
    """8-stage U-Net generator, channel schedule nf,2nf,4nf,8nf,8nf,8nf,8nf,8nf."""

    def __init__(self, nf: int = 64, in_channels: int = 3,
                 out_channels: int = 3):
        super().__init__()
        block = _UnetBlock(nf * 8, nf * 8, innermost=True)
        for _ in range(3):
            block = _UnetBlock(nf * 8, nf * 8, submodule=block)
        block = _UnetBlock(nf * 4, nf * 8, submodule=block)
        block = _UnetBlock(nf * 2, nf * 4, submodule=block)
        block = _UnetBlock(nf, nf * 2, submodule=block)
        self.model = _UnetBlock(out_channels, nf, submodule=block,
                                input_nc=in_channels, outermost=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.model(x)


# --------------------------------------------------------------------------
# lip-sync generator (two encoders, concat-skip decoder)
# --------------------------------------------------------------------------

class _ConvBN(nn.Module):
    def __init__(self, cin, cout, kernel_size, stride, padding):
        super().__init__()
        self.conv_block = nn.Sequential(
            nn.Conv2d(cin, cout, kernel_size, stride, padding, bias=True),
            nn.BatchNorm2d(cout))
        self.act = nn.ReLU()

    def forward(self, x):
        return self.act(self.conv_block(x))


class _ConvTransposeBN(nn.Module):
    def __init__(self, cin, cout, kernel_size, stride, padding):
        super().__init__()
        self.conv_block = nn.Sequential(
            nn.ConvTranspose2d(cin, cout, kernel_size, stride, padding,
                               bias=True),
            nn.BatchNorm2d(cout))
        self.act = nn.ReLU()

    def forward(self, x):
        return self.act(self.conv_block(x))


class ReferenceWav2Lip(nn.Module):
    """Two-encoder lip-sync generator at the compressed stage table.

    ``scales = (face, audio, decoder)`` base widths; the default (16, 32, 32)
    is the published compressed variant.  Face input 6x96x96, audio input
    1x24x24, sigmoid RGB output at 96x96.
    """

    def __init__(self, scales: tuple[int, int, int] = (16, 32, 32)):
        super().__init__()
        fw, aw, dw = scales
        f = [fw, fw * 2, fw * 4, fw * 8, fw * 16, fw * 32, fw * 32, fw * 32]
        a = [aw, aw * 2, aw * 4, aw * 8, aw * 16, aw * 16, aw * 16]
        d = [dw * 16, dw * 16, dw * 8, dw * 8, dw * 4, dw * 2, dw]

        self.face_encoder_blocks = nn.ModuleList([
            nn.Sequential(_ConvBN(6, f[0], 7, 1, 3)),
            nn.Sequential(_ConvBN(f[0], f[1], 4, 2, 1)),
            nn.Sequential(_ConvBN(f[1], f[2], 4, 2, 1)),
            nn.Sequential(_ConvBN(f[2], f[3], 4, 2, 1)),
            nn.Sequential(_ConvBN(f[3], f[4], 4, 2, 1)),
            nn.Sequential(_ConvBN(f[4], f[5], 4, 2, 1)),
            nn.Sequential(_ConvBN(f[5], f[6], 3, 1, 0),
                          _ConvBN(f[6], f[7], 1, 1, 0)),
        ])
        self.audio_encoder = nn.Sequential(
            _ConvBN(1, a[0], 3, 1, 1),
            _ConvBN(a[0], a[1], 4, 2, 1),
            _ConvBN(a[1], a[2], 4, 2, 1),
            _ConvBN(a[2], a[3], 4, 2, 1),
            _ConvBN(a[3], a[4], 3, 1, 0),
            _ConvBN(a[4], a[5], 1, 1, 0),
            _ConvBN(a[5], a[6], 1, 1, 0),
        )
        self.face_decoder_blocks = nn.ModuleList([
            nn.Sequential(_ConvBN(a[6], d[0], 1, 1, 0)),
            nn.Sequential(_ConvTransposeBN(d[0] + f[7], d[1], 3, 1, 0)),
            nn.Sequential(_ConvTransposeBN(d[1] + f[5], d[2], 4, 2, 1)),
            nn.Sequential(_ConvTransposeBN(d[2] + f[4], d[3], 4, 2, 1)),
            nn.Sequential(_ConvTransposeBN(d[3] + f[3], d[4], 4, 2, 1)),
            nn.Sequential(_ConvTransposeBN(d[4] + f[2], d[5], 4, 2, 1)),
            nn.Sequential(_ConvTransposeBN(d[5] + f[1], d[6], 4, 2, 1)),
        ])
        self.output_block = nn.Sequential(
            _ConvBN(d[6] + f[0], d[6], 3, 1, 1),
            nn.Conv2d(d[6], 3, kernel_size=1, stride=1, padding=0),
            nn.Sigmoid(),
        )

    def forward(self, face: torch.Tensor, audio: torch.Tensor) -> torch.Tensor:
        feats = []
        x = face
        for block in self.face_encoder_blocks:
            x = block(x)
            feats.append(x)
        x = self.audio_encoder(audio)
        for block in self.face_decoder_blocks:
            x = block(x)
            x = torch.cat((x, feats.pop()), dim=1)
        return self.output_block(x)


def build_reference(arch: str, **kwargs) -> nn.Module:
    if arch == "pix2pix":
        return ReferencePix2Pix(**kwargs)
    if arch == "wav2lip":
        return ReferenceWav2Lip(**kwargs)
    raise ValueError(f"unknown arch '{arch}'")


def seeded_state_dict(model: nn.Module, seed: int = 0) -> dict:
    """Deterministically re-draw every parameter and running statistic, so test
    checkpoints have non-degenerate norms and asymmetric kernels."""
    gen = torch.Generator().manual_seed(seed)
    sd = model.state_dict()
    for key, tensor in sd.items():
        if not torch.is_floating_point(tensor):
            continue
        if key.endswith("running_var"):
            tensor.copy_(0.5 + torch.rand(tensor.shape, generator=gen))
        elif key.endswith("running_mean"):
            tensor.copy_(0.1 * torch.randn(tensor.shape, generator=gen))
        elif key.endswith(".weight") and tensor.dim() == 1:
            # norm scale: keep near 1 so signal survives the full depth
            tensor.copy_(1.0 + 0.1 * torch.randn(tensor.shape, generator=gen))
        else:
            tensor.copy_(0.05 * torch.randn(tensor.shape, generator=gen))
    return sd
