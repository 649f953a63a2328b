"""Shallow densely connected backbone and the two-level feature pyramid.

The backbone taps two named feature maps: C2 after the second dense block
(stride 4) and C3 after the third (stride 8). The pyramid projects them to a
common channel width, P3 directly and P2 as lateral-plus-upsampled-P3 with a
3x3 smoothing convolution. Routing downstream is deliberately asymmetric:
the proposal network consumes both P2 and P3, the classification and box
heads consume P2 only, and the recognition head bypasses the pyramid and
reads C2 directly.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import autodiff as ad
from .autodiff import ParamStore, Tensor


@dataclass
class BackboneConfig:
    stem_channels: int = 16
    growth_rate: int = 8
    layers_per_block: int = 2
    fpn_channels: int = 64

    def __post_init__(self):
        for name in ("stem_channels", "growth_rate", "layers_per_block", "fpn_channels"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def c2_channels(self) -> int:
        # dense concatenation: the block output carries its input plus one
        # growth_rate worth of channels per layer; transitions compress back
        # to stem_channels, so every block output has the same width
        return self.stem_channels + self.layers_per_block * self.growth_rate

    @property
    def c3_channels(self) -> int:
        return self.c2_channels


@dataclass
class FeatureMap:
    level: str   # one of C2, C3, P2, P3
    stride: int  # input pixels per feature cell
    tensor: Tensor


class DenseBackbone:
    """Stem, three dense blocks, and stride-2 transitions between them."""

    def __init__(self, cfg: BackboneConfig, store: ParamStore):
        self.cfg = cfg
        g = cfg.growth_rate
        bneck = 4 * g
        self.stem = store.new("backbone.stem", (5, 5, 3, cfg.stem_channels))
        self.stem_b = store.new("backbone.stem.bias", (cfg.stem_channels,), init="zeros")
        self.layers = []
        for block in range(3):
            for layer in range(cfg.layers_per_block):
                cin = cfg.stem_channels + layer * g
                prefix = f"backbone.block{block + 1}.layer{layer + 1}"
                self.layers.append((
                    block,
                    store.new(f"{prefix}.conv1", (1, 1, cin, bneck)),
                    store.new(f"{prefix}.conv1.bias", (bneck,), init="zeros"),
                    store.new(f"{prefix}.conv2", (3, 3, bneck, g)),
                    store.new(f"{prefix}.conv2.bias", (g,), init="zeros"),
                ))
        self.transitions = []
        for t in range(2):
            cin = self.cfg.c2_channels
            self.transitions.append((
                store.new(f"backbone.transition{t + 1}", (2, 2, cin, cfg.stem_channels)),
                store.new(f"backbone.transition{t + 1}.bias", (cfg.stem_channels,), init="zeros"),
            ))

    def _dense_block(self, x: Tensor, block: int) -> Tensor:
        feats = x
        for b, k1, b1, k2, b2 in self.layers:
            if b != block:
                continue
            h = ad.relu(ad.conv2d(feats, k1.tensor) + b1.tensor)
            h = ad.relu(ad.conv2d(h, k2.tensor, padding=1) + b2.tensor)
            feats = ad.concat([feats, h], axis=2)
        return feats

    def forward(self, image: Tensor) -> tuple[FeatureMap, FeatureMap]:
        h, w, c = image.shape
        if c != 3:
            raise ValueError(f"expected an HxWx3 image, got {image.shape}")
        if h < 32 or w < 32 or h % 8 or w % 8:
            raise ValueError(
                f"image extents must be >= 32 and divisible by 8, got {h}x{w}")

        x = ad.relu(ad.conv2d(image, self.stem.tensor, stride=2, padding=2) + self.stem_b.tensor)
        x = self._dense_block(x, 0)
        tk, tb = self.transitions[0]
        x = ad.relu(ad.conv2d(x, tk.tensor, stride=2) + tb.tensor)
        c2 = self._dense_block(x, 1)
        tk, tb = self.transitions[1]
        x = ad.relu(ad.conv2d(c2, tk.tensor, stride=2) + tb.tensor)
        c3 = self._dense_block(x, 2)
        return (FeatureMap("C2", 4, c2), FeatureMap("C3", 8, c3))


class FeaturePyramid:
    """1x1 laterals plus top-down nearest-neighbor merge, smoothed at P2."""

    def __init__(self, cfg: BackboneConfig, store: ParamStore):
        self.cfg = cfg
        f = cfg.fpn_channels
        self.lat_c2 = store.new("fpn.lateral_c2", (1, 1, cfg.c2_channels, f))
        self.lat_c2_b = store.new("fpn.lateral_c2.bias", (f,), init="zeros")
        self.lat_c3 = store.new("fpn.lateral_c3", (1, 1, cfg.c3_channels, f))
        self.lat_c3_b = store.new("fpn.lateral_c3.bias", (f,), init="zeros")
        self.smooth = store.new("fpn.smooth_p2", (3, 3, f, f))
        self.smooth_b = store.new("fpn.smooth_p2.bias", (f,), init="zeros")

    def forward(self, c2: FeatureMap, c3: FeatureMap) -> tuple[FeatureMap, FeatureMap]:
        if c3.stride != 2 * c2.stride:
            raise ValueError(
                f"C3 stride ({c3.stride}) must be twice C2 stride ({c2.stride})")
        p3 = ad.conv2d(c3.tensor, self.lat_c3.tensor) + self.lat_c3_b.tensor
        lateral = ad.conv2d(c2.tensor, self.lat_c2.tensor) + self.lat_c2_b.tensor
        merged = lateral + ad.upsample2x(p3)
        p2 = ad.conv2d(merged, self.smooth.tensor, padding=1) + self.smooth_b.tensor
        return (FeatureMap("P2", c2.stride, p2), FeatureMap("P3", c3.stride, p3))
