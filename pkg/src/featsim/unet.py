"""U-Net encoder/decoder built on the autodiff ops.

Encoder level l outputs base_channels*2^l channels at H/2^l x W/2^l; the
deepest entry of the feature list is the bottleneck. Decoder blocks upsample
with nearest x2 + 3x3 conv, concatenate the skip, then run two 3x3 convs.
The decoder (up/conv blocks + 1x1 head) is transplantable between networks
that share depth, width, and class count.
"""

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import CheckpointError, ConfigError, ShapeError


@dataclass(frozen=True)
class UNetConfig:
    in_channels: int
    num_classes: int
    depth: int = 3
    base_channels: int = 8

    def validate(self):
        if self.in_channels < 1:
            raise ConfigError(f"in_channels must be >= 1, got {self.in_channels}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.base_channels < 4:
            raise ConfigError(f"base_channels must be >= 4, got {self.base_channels}")


def he_conv(rng, cout, cin, k, dtype):
    std = np.sqrt(2.0 / (cin * k * k))
    w = (rng.standard_normal((cout, cin, k, k)) * std).astype(dtype)
    b = np.zeros(cout, dtype=dtype)
    return w, b


class UNet:
    def __init__(self, config, params):
        self.config = config
        self.params = params  # name -> Parameter, insertion order = build order

    # -- construction -------------------------------------------------------

    @staticmethod
    def param_specs(config):
        """Ordered (name, cout, cin, k) for every conv in the network."""
        B, D = config.base_channels, config.depth
        ch = lambda l: B * (2 ** l)
        specs = []
        for l in range(D):
            cin = config.in_channels if l == 0 else ch(l - 1)
            specs.append((f"enc{l}.conv1", ch(l), cin, 3))
            specs.append((f"enc{l}.conv2", ch(l), ch(l), 3))
        specs.append(("bott.conv1", ch(D), ch(D - 1), 3))
        specs.append(("bott.conv2", ch(D), ch(D), 3))
        for l in range(D, 0, -1):
            specs.append((f"dec{l}.up", ch(l - 1), ch(l), 3))
            specs.append((f"dec{l}.conv1", ch(l - 1), 2 * ch(l - 1), 3))
            specs.append((f"dec{l}.conv2", ch(l - 1), ch(l - 1), 3))
        specs.append(("head", config.num_classes, B, 1))
        return specs

    @classmethod
    def build(cls, config, seed, dtype=np.float32):
        config.validate()
        rng = np.random.default_rng(seed)
        params = {}
        for name, cout, cin, k in cls.param_specs(config):
            w, b = he_conv(rng, cout, cin, k, dtype)
            params[name + ".w"] = ad.Parameter(w, name=name + ".w")
            params[name + ".b"] = ad.Parameter(b, name=name + ".b")
        return cls(config, params)

    # -- parameter access ----------------------------------------------------

    def parameters(self):
        return list(self.params.values())

    def named_arrays(self):
        return [(n, p.data) for n, p in self.params.items()]

    def decoder_names(self):
        return [n for n in self.params if n.startswith("dec") or n.startswith("head")]

    def encoder_names(self):
        return [n for n in self.params if n.startswith("enc") or n.startswith("bott")]

    def num_params(self):
        return sum(p.data.size for p in self.params.values())

    def set_requires_grad(self, names, flag):
        for n in names:
            self.params[n].requires_grad = flag

    # -- forward -------------------------------------------------------------

    def _conv(self, x, name, padding):
        return ad.conv2d(x, self.params[name + ".w"], self.params[name + ".b"], padding)

    def _double_conv(self, x, block):
        h = ad.relu(self._conv(x, block + ".conv1", 1))
        return ad.relu(self._conv(h, block + ".conv2", 1))

    def _check_input(self, x):
        cin = self.config.in_channels
        if x.data.ndim != 3 or x.shape[0] != cin:
            raise ShapeError(f"expected input ({cin},H,W), got {x.shape}")
        step = 2 ** self.config.depth
        if x.shape[1] % step or x.shape[2] % step:
            raise ShapeError(
                f"spatial size {x.shape[1]}x{x.shape[2]} not divisible by 2^depth={step}"
            )

    def forward_encoder(self, x):
        """Per-level features plus the bottleneck; length depth+1."""
        if not isinstance(x, ad.Tensor):
            x = ad.Tensor(x)
        self._check_input(x)
        feats = []
        h = x
        for l in range(self.config.depth):
            h = self._double_conv(h, f"enc{l}")
            feats.append(h)
            h = ad.maxpool2x2(h)
        feats.append(self._double_conv(h, "bott"))
        return feats

    def forward(self, x):
        feats = self.forward_encoder(x)
        h = feats[-1]
        for l in range(self.config.depth, 0, -1):
            up = ad.nearest_interpolate(h, h.shape[1] * 2, h.shape[2] * 2)
            up = ad.relu(self._conv(up, f"dec{l}.up", 1))
            h = self._double_conv(ad.concat_channels(up, feats[l - 1]), f"dec{l}")
        logits = self._conv(h, "head", 0)
        return ad.channel_softmax(logits), feats

    def predict(self, image):
        """Label map via argmax over class probabilities, no graph recorded."""
        with ad.no_grad():
            probs, _ = self.forward(ad.Tensor(image))
        return probs.data.argmax(axis=0).astype(np.uint8)

    # -- persistence ---------------------------------------------------------

    def save(self, path):
        save_checkpoint(path, "unet", asdict(self.config), self.named_arrays())

    @classmethod
    def load(cls, path):
        config_dict, arrays = load_checkpoint(path, "unet")
        try:
            config = UNetConfig(**config_dict)
            config.validate()
        except (TypeError, ConfigError) as e:
            raise CheckpointError(f"invalid config in {path}: {e}") from e
        net = cls.build(config, seed=0)
        if set(arrays) != set(net.params):
            raise CheckpointError(f"parameter names in {path} do not match the architecture")
        for name, p in net.params.items():
            arr = arrays[name]
            if arr.shape != p.data.shape or arr.dtype != p.data.dtype:
                raise CheckpointError(
                    f"{path}: parameter {name!r} has shape {arr.shape} {arr.dtype}, "
                    f"expected {p.data.shape} {p.data.dtype}"
                )
            p.data = arr
            p.grad = np.zeros_like(arr)
        return net


def transplant_decoder(dst, src):
    """Copy src's decoder + head into dst bitwise; dst keeps its encoder."""
    for field in ("depth", "base_channels", "num_classes"):
        if getattr(dst.config, field) != getattr(src.config, field):
            raise ShapeError(
                f"decoder transplant needs matching {field}: "
                f"{getattr(dst.config, field)} vs {getattr(src.config, field)}"
            )
    for name in dst.decoder_names():
        dst.params[name].data = src.params[name].data.copy()
        dst.params[name].grad = np.zeros_like(dst.params[name].data)
    return dst
