"""Synthetic CT-like phantoms: three ellipse organs plus distractor blobs.

Distractors share organA's intensity up to distractor_intensity_delta and
appear only in the image, never in the mask, recreating the two hard cases
(look-alike objects, ambiguous borders). Masks are the crisp pre-blur
ellipses. Everything is a pure function of the seed.
"""

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ConfigError, GenerationError
from .tsr import read_tsr, write_pgm, write_tsr

NUM_CLASSES = 4  # background + 3 organs

# base gray levels; organA deliberately mid-range so distractors can imitate it
_BG_LEVEL = 0.08
_ORGAN_LEVELS = (0.55, 0.90, 0.40)


@dataclass(frozen=True)
class PhantomDifficulty:
    border_blur_sigma: float = 1.0
    distractor_intensity_delta: float = 0.0
    noise_sigma: float = 0.03
    min_distractors: int = 2
    max_distractors: int = 3

    def validate(self):
        if self.border_blur_sigma < 0 or self.noise_sigma < 0:
            raise ConfigError("blur and noise levels must be non-negative")
        if not 1 <= self.min_distractors <= self.max_distractors:
            raise ConfigError("need 1 <= min_distractors <= max_distractors")


DIFFICULTY_PRESETS = {
    "easy": PhantomDifficulty(border_blur_sigma=0.6, distractor_intensity_delta=0.25,
                              noise_sigma=0.01, min_distractors=1, max_distractors=2),
    "default": PhantomDifficulty(),
    "hard": PhantomDifficulty(border_blur_sigma=2.0, distractor_intensity_delta=0.0,
                              noise_sigma=0.05, min_distractors=3, max_distractors=5),
}


@dataclass
class PhantomSample:
    image: np.ndarray       # (1,H,W) float32 in [0,1]
    mask: np.ndarray        # (H,W) uint8, classes 0..3
    distractor_mask: np.ndarray  # (H,W) bool, image-only blobs
    seed: object
    difficulty: PhantomDifficulty = field(default_factory=PhantomDifficulty)


def _ellipse(h, w, cy, cx, ry, rx, theta):
    yy, xx = np.mgrid[0:h, 0:w]
    dy, dx = yy - cy, xx - cx
    ct, st = np.cos(theta), np.sin(theta)
    u = dy * ct + dx * st
    v = -dy * st + dx * ct
    return (u / ry) ** 2 + (v / rx) ** 2 <= 1.0


def _place_blob(rng, h, w, r_lo, r_hi, forbidden, tries=300):
    scale = min(h, w)
    for _ in range(tries):
        ry = rng.uniform(r_lo, r_hi) * scale
        rx = rng.uniform(r_lo, r_hi) * scale
        margin = max(ry, rx) + 2
        if 2 * margin >= min(h, w):
            continue
        cy = rng.uniform(margin, h - margin)
        cx = rng.uniform(margin, w - margin)
        theta = rng.uniform(0, np.pi)
        blob = _ellipse(h, w, cy, cx, ry, rx, theta)
        if not (blob & forbidden).any():
            return blob
    return None


def generate_phantom(seed, h, w, difficulty=None):
    if difficulty is None:
        difficulty = PhantomDifficulty()
    difficulty.validate()
    if h % 8 or w % 8:
        raise ConfigError(f"phantom size must be divisible by 8, got {h}x{w}")
    if h < 32 or w < 32:
        raise ConfigError(f"phantom size must be at least 32x32, got {h}x{w}")
    rng = np.random.default_rng(seed)

    levels = [lvl + rng.uniform(-0.03, 0.03) for lvl in _ORGAN_LEVELS]
    image = np.full((h, w), _BG_LEVEL, dtype=np.float64)
    mask = np.zeros((h, w), dtype=np.uint8)
    occupied = np.zeros((h, w), dtype=bool)

    for organ in range(3):
        forbidden = ndimage.binary_dilation(occupied, iterations=2)
        blob = _place_blob(rng, h, w, 0.12, 0.17, forbidden)
        if blob is None:
            raise GenerationError(f"seed {seed}: could not place organ {organ + 1}")
        image[blob] = levels[organ]
        mask[blob] = organ + 1
        occupied |= blob

    distractor_level = float(np.clip(
        levels[0] + difficulty.distractor_intensity_delta, 0.0, 1.0))
    n_distractors = int(rng.integers(difficulty.min_distractors,
                                     difficulty.max_distractors + 1))
    distractor_mask = np.zeros((h, w), dtype=bool)
    for _ in range(n_distractors):
        forbidden = ndimage.binary_dilation(occupied | distractor_mask, iterations=2)
        blob = _place_blob(rng, h, w, 0.05, 0.08, forbidden)
        if blob is None:
            raise GenerationError(f"seed {seed}: could not place a distractor")
        image[blob] = distractor_level
        distractor_mask |= blob

    if difficulty.border_blur_sigma > 0:
        image = ndimage.gaussian_filter(image, difficulty.border_blur_sigma)
    if difficulty.noise_sigma > 0:
        image = image + rng.normal(0.0, difficulty.noise_sigma, size=(h, w))
    image = np.clip(image, 0.0, 1.0).astype(np.float32)[None, :, :]
    return PhantomSample(image=image, mask=mask, distractor_mask=distractor_mask,
                         seed=seed, difficulty=difficulty)


def kfold_split(n_samples, k, seed):
    """Shuffled partition into k folds with sizes differing by at most 1."""
    if k < 2:
        raise ConfigError(f"k-fold split needs k >= 2, got {k}")
    if n_samples < k:
        raise ConfigError(f"cannot split {n_samples} samples into {k} folds")
    perm = np.random.default_rng(seed).permutation(n_samples)
    folds = np.empty(n_samples, dtype=np.int64)
    sizes = [n_samples // k + (1 if i < n_samples % k else 0) for i in range(k)]
    start = 0
    for fold, size in enumerate(sizes):
        folds[perm[start:start + size]] = fold
        start += size
    return folds


def mask_preview(mask):
    """uint8 rendering of a label map for PGM inspection."""
    return (np.asarray(mask, dtype=np.uint16) * 85).clip(0, 255).astype(np.uint8)


def generate_dataset(out_dir, count, seed, h, w, difficulty=None, k_folds=5,
                     previews=True):
    """Writes samples/*.tsr (+ previews/*.pgm) and manifest.json; returns the manifest."""
    if count < 1:
        raise ConfigError(f"dataset needs at least 1 sample, got {count}")
    if difficulty is None:
        difficulty = PhantomDifficulty()
    samples_dir = os.path.join(out_dir, "samples")
    os.makedirs(samples_dir, exist_ok=True)
    if previews:
        os.makedirs(os.path.join(out_dir, "previews"), exist_ok=True)

    children = np.random.SeedSequence(seed).spawn(count)
    splits = kfold_split(count, k_folds, seed)
    entries = []
    for i, child in enumerate(children):
        sample = generate_phantom(child, h, w, difficulty)
        img_rel = f"samples/img_{i:04d}.tsr"
        msk_rel = f"samples/msk_{i:04d}.tsr"
        write_tsr(sample.image, os.path.join(out_dir, img_rel))
        write_tsr(sample.mask, os.path.join(out_dir, msk_rel))
        if previews:
            write_pgm(sample.image, os.path.join(out_dir, f"previews/img_{i:04d}.pgm"))
            write_pgm(mask_preview(sample.mask),
                      os.path.join(out_dir, f"previews/msk_{i:04d}.pgm"))
        entries.append({"id": i, "image": img_rel, "mask": msk_rel})

    manifest = {
        "count": count, "h": h, "w": w, "k": NUM_CLASSES, "seed": seed,
        "k_folds": int(k_folds), "difficulty": asdict(difficulty),
        "splits": [int(s) for s in splits], "samples": entries,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return manifest


class Dataset:
    """In-memory dataset loaded from a manifest directory."""

    def __init__(self, manifest, images, masks, root):
        self.manifest = manifest
        self.images = images
        self.masks = masks
        self.root = root
        self.splits = np.asarray(manifest["splits"], dtype=np.int64)
        self.k = int(manifest["k"])
        self.h = int(manifest["h"])
        self.w = int(manifest["w"])
        self.k_folds = int(manifest["k_folds"])

    def __len__(self):
        return len(self.images)

    def fold_indices(self, fold):
        if not 0 <= fold < self.k_folds:
            raise ConfigError(f"fold {fold} out of range [0, {self.k_folds})")
        held = np.flatnonzero(self.splits == fold)
        train = np.flatnonzero(self.splits != fold)
        return train, held


def load_dataset(manifest_path):
    if os.path.isdir(manifest_path):
        manifest_path = os.path.join(manifest_path, "manifest.json")
    if not os.path.isfile(manifest_path):
        raise ConfigError(f"dataset manifest not found: {manifest_path}")
    with open(manifest_path) as f:
        try:
            manifest = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"unparseable manifest {manifest_path}: {e}") from e
    for key in ("count", "h", "w", "k", "k_folds", "splits", "samples"):
        if key not in manifest:
            raise ConfigError(f"manifest {manifest_path} missing key {key!r}")
    root = os.path.dirname(os.path.abspath(manifest_path))
    images, masks = [], []
    for entry in manifest["samples"]:
        img_path = os.path.join(root, entry["image"])
        msk_path = os.path.join(root, entry["mask"])
        if not (os.path.isfile(img_path) and os.path.isfile(msk_path)):
            raise ConfigError(f"manifest references missing files for sample {entry['id']}")
        images.append(read_tsr(img_path))
        masks.append(read_tsr(msk_path))
    if len(images) != manifest["count"] or len(manifest["splits"]) != manifest["count"]:
        raise ConfigError(f"manifest {manifest_path} is inconsistent with its sample list")
    return Dataset(manifest, images, masks, root)
