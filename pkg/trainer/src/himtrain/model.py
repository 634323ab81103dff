"""U-Net: encoder-decoder with skip connections, batch norm after every
convolution, ReLU activations, and a single-filter 1x1 output head.

Convolutions use replicate padding so the output matches the input size
(the skip connections need no cropping) and a constant input stays exactly
spatially constant through the network, which also keeps tiled inference
free of zero-padding border artifacts. The decoder upsamples (nearest) and
applies a 2x2 convolution rather than a strided transposed convolution,
avoiding checkerboard parity artifacts.
"""

from __future__ import annotations

import torch
import torch.nn as nn

_BASE_WIDTHS = (64, 128, 256, 512, 1024)


def _width(base: int, multiplier: float) -> int:
    return max(1, round(base * multiplier))


class _ConvBlock(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(cin, cout, 3, padding=1, padding_mode="replicate"),
            nn.BatchNorm2d(cout),
            nn.ReLU(inplace=True),
            nn.Conv2d(cout, cout, 3, padding=1, padding_mode="replicate"),
            nn.BatchNorm2d(cout),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        return self.net(x)


class _UpBlock(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.up = nn.Upsample(scale_factor=2, mode="nearest")
        self.reduce = nn.Sequential(
            nn.ReplicationPad2d((0, 1, 0, 1)),
            nn.Conv2d(cin, cout, 2),
            nn.BatchNorm2d(cout),
            nn.ReLU(inplace=True),
        )
        self.conv = _ConvBlock(cout * 2, cout)

    def forward(self, x, skip):
        x = self.reduce(self.up(x))
        return self.conv(torch.cat([skip, x], dim=1))


class UNet(nn.Module):
    """Output is a single-channel logit map the same size as the input."""

    downsample_factor = 16  # four 2x2 poolings

    def __init__(self, width_multiplier: float = 1.0):
        super().__init__()
        w = [_width(b, width_multiplier) for b in _BASE_WIDTHS]
        self.enc1 = _ConvBlock(1, w[0])
        self.enc2 = _ConvBlock(w[0], w[1])
        self.enc3 = _ConvBlock(w[1], w[2])
        self.enc4 = _ConvBlock(w[2], w[3])
        self.bottleneck = _ConvBlock(w[3], w[4])
        self.pool = nn.MaxPool2d(2)
        self.up4 = _UpBlock(w[4], w[3])
        self.up3 = _UpBlock(w[3], w[2])
        self.up2 = _UpBlock(w[2], w[1])
        self.up1 = _UpBlock(w[1], w[0])
        self.head = nn.Conv2d(w[0], 1, 1)
        self._init_weights()

    def _init_weights(self):
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
                if m.bias is not None:
                    nn.init.zeros_(m.bias)
            elif isinstance(m, nn.BatchNorm2d):
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)

    def forward(self, x):
        e1 = self.enc1(x)
        e2 = self.enc2(self.pool(e1))
        e3 = self.enc3(self.pool(e2))
        e4 = self.enc4(self.pool(e3))
        b = self.bottleneck(self.pool(e4))
        d4 = self.up4(b, e4)
        d3 = self.up3(d4, e3)
        d2 = self.up2(d3, e2)
        d1 = self.up1(d2, e1)
        return self.head(d1)


def build_model(width_multiplier: float = 1.0) -> UNet:
    if not (width_multiplier > 0):
        raise ValueError("width multiplier must be > 0")
    return UNet(width_multiplier)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
