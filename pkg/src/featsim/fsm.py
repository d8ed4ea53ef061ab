"""Learned feature-similarity metric between two feature maps.

The CT-side map is resized (nearest) and recoded to the GT-side shape (A),
modulated by channel statistics S_c and spatial statistics S_s extracted
from the GT-side map, recombined by a reduction conv (R), and scored as
distance = mean((R - A)^2), similarity = 1/(1+distance). The GT-side map is
always treated as a constant: no gradient leaves through it.
"""

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import CheckpointError, ConfigError, ShapeError
from .unet import he_conv


@dataclass(frozen=True)
class FsmConfig:
    ct_channels: int
    ct_h: int
    ct_w: int
    gt_channels: int
    gt_h: int
    gt_w: int

    def validate(self):
        if any(v < 1 for v in asdict(self).values()):
            raise ConfigError(f"all FSM extents must be positive: {self}")

    @classmethod
    def from_feature_shapes(cls, ct_shape, gt_shape):
        if len(ct_shape) != 3 or len(gt_shape) != 3:
            raise ConfigError(f"feature shapes must be (C,H,W): {ct_shape}, {gt_shape}")
        return cls(ct_shape[0], ct_shape[1], ct_shape[2],
                   gt_shape[0], gt_shape[1], gt_shape[2])


# conv blocks: name -> (cout, cin) as functions of (C1, C); all 3x3 with bias
def _block_specs(c1, c):
    return [
        ("adjust", c, c1),
        ("chanstat", c, c),
        ("spatstat", 1, c),
        ("reduce", c, 2 * c),
    ]


class FsmParams:
    def __init__(self, config, params):
        self.config = config
        self.params = params

    @classmethod
    def build(cls, config, seed, dtype=np.float32):
        config.validate()
        rng = np.random.default_rng(seed)
        params = {}
        for name, cout, cin in _block_specs(config.ct_channels, config.gt_channels):
            w, b = he_conv(rng, cout, cin, 3, dtype)
            params[name + ".w"] = ad.Parameter(w, name="fsm." + name + ".w")
            params[name + ".b"] = ad.Parameter(b, name="fsm." + name + ".b")
        return cls(config, params)

    def parameters(self):
        return list(self.params.values())

    def named_arrays(self):
        return [(n, p.data) for n, p in self.params.items()]

    def num_params(self):
        return sum(p.data.size for p in self.params.values())

    def save(self, path):
        save_checkpoint(path, "fsm", asdict(self.config), self.named_arrays())

    @classmethod
    def load(cls, path):
        config_dict, arrays = load_checkpoint(path, "fsm")
        try:
            config = FsmConfig(**config_dict)
            config.validate()
        except (TypeError, ConfigError) as e:
            raise CheckpointError(f"invalid config in {path}: {e}") from e
        fsm = cls.build(config, seed=0)
        if set(arrays) != set(fsm.params):
            raise CheckpointError(f"parameter names in {path} do not match the FSM layout")
        for name, p in fsm.params.items():
            arr = arrays[name]
            if arr.shape != p.data.shape or arr.dtype != p.data.dtype:
                raise CheckpointError(
                    f"{path}: parameter {name!r} has shape {arr.shape}, expected {p.data.shape}"
                )
            p.data = arr
            p.grad = np.zeros_like(arr)
        return fsm


def build_fsm(config, seed, dtype=np.float32):
    return FsmParams.build(config, seed, dtype)


def fsm_forward(f_ct, f_gt, fsm, return_parts=False):
    """Scalar (distance Tensor, similarity float); distance backprops into
    f_ct and the FSM convs only. With return_parts, also returns the named
    intermediates for inspection."""
    cfg = fsm.config
    if not isinstance(f_ct, ad.Tensor):
        f_ct = ad.Tensor(f_ct)
    if not isinstance(f_gt, ad.Tensor):
        f_gt = ad.Tensor(f_gt)
    if f_ct.shape != (cfg.ct_channels, cfg.ct_h, cfg.ct_w):
        raise ShapeError(f"f_ct shape {f_ct.shape} does not match config {cfg}")
    if f_gt.shape != (cfg.gt_channels, cfg.gt_h, cfg.gt_w):
        raise ShapeError(f"f_gt shape {f_gt.shape} does not match config {cfg}")
    f_gt = f_gt.detach()
    p = fsm.params

    def conv(x, name, padding=1):
        return ad.conv2d(x, p[name + ".w"], p[name + ".b"], padding)

    a = ad.relu(conv(ad.nearest_interpolate(f_ct, cfg.gt_h, cfg.gt_w), "adjust"))
    s_c = ad.global_avg_pool(ad.relu(conv(f_gt, "chanstat")))
    s_s = ad.relu(conv(f_gt, "spatstat"))
    p_c = ad.mul(a, ad.reshape(s_c, (cfg.gt_channels, 1, 1)))
    p_s = ad.mul(a, s_s)
    r = ad.relu(conv(ad.concat_channels(p_c, p_s), "reduce"))
    diff = ad.sub(r, a)
    distance = ad.mean_all(ad.mul(diff, diff))
    similarity = 1.0 / (1.0 + distance.item())
    if return_parts:
        parts = {"a": a, "s_c": s_c, "s_s": s_s, "p_c": p_c, "p_s": p_s, "r": r}
        return distance, similarity, parts
    return distance, similarity
