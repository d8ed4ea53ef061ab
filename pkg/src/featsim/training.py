"""Three-stage training pipeline and its ablations.

Stage 1 trains the mask autoencoder N_GT on noise-corrupted one-hot masks.
Stage 2 trains the segmenter N_CT plus the feature-similarity module against
the frozen N_GT bottleneck (total = dice + xi * distance). Stage 3
transplants N_GT's decoder into N_CT and fine-tunes decoder + head with the
encoder frozen. Ablations: plain (dice-only segmenter), joint (everything
at once), no_refine (skip stage 3), no_noise (p = 0 in stage 1).

Seeds: every stage derives its streams from SeedSequence([seed, fold, stage])
with fixed spawn slots (net init, fsm init, shuffle loop), so a plain run and
a xi=0 stage-2 run consume identical streams and produce identical weights.
"""

import csv
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .checkpoint import params_digest
from .errors import ConfigError, TrainingError
from .fsm import FsmConfig, FsmParams, build_fsm, fsm_forward
from .metrics import aggregate, evaluate_case, overall_means, write_case_csv, write_summary_csv
from .optim import Adam
from .unet import UNet, UNetConfig, transplant_decoder

STAGE_IDX = {"1": 1, "2": 2, "3": 3, "joint": 4, "plain": 2}


@dataclass
class TrainConfig:
    lr: float = 0.0003
    epochs: int = 100
    noise_p: float = 0.2
    xi: float = 0.3
    batch_size: int = 4
    seed: int = 0
    k_folds: int = 5
    dice_eps: float = 1.0
    joint_train: bool = False
    no_refine: bool = False
    no_noise: bool = False

    def validate(self):
        if not 0.0 <= self.noise_p < 1.0:
            raise ConfigError(f"noise_p must be in [0,1), got {self.noise_p}")
        if self.xi < 0:
            raise ConfigError(f"xi must be >= 0, got {self.xi}")
        if self.k_folds < 2:
            raise ConfigError(f"k_folds must be >= 2, got {self.k_folds}")
        if self.lr <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("lr, epochs, and batch_size must be positive")
        if self.dice_eps <= 0:
            raise ConfigError(f"dice_eps must be positive, got {self.dice_eps}")


def one_hot(mask, k, dtype=np.float32):
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ConfigError(f"label map must be 2D, got shape {mask.shape}")
    if mask.min() < 0 or mask.max() >= k:
        raise ConfigError(f"label map holds ids outside [0,{k}): {np.unique(mask)}")
    h, w = mask.shape
    out = np.zeros((k, h, w), dtype=dtype)
    out[mask.astype(np.int64), np.arange(h)[:, None], np.arange(w)[None, :]] = 1
    return out


def corrupt_gt(mask, p, rng):
    """Foreground pixels flip to background independently with probability p."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"corruption probability must be in [0,1), got {p}")
    mask = np.asarray(mask)
    flips = (mask > 0) & (rng.random(mask.shape) < p)
    out = mask.copy()
    out[flips] = 0
    return out


def dice_loss(probs, target, eps=1.0):
    """1 - mean_k (2*sum(p_k g_k) + eps) / (sum p_k + sum g_k + eps)."""
    if probs.shape != target.shape:
        raise ConfigError(f"dice shapes differ: {probs.shape} vs {target.shape}")
    k = probs.shape[0]
    inter = ad.tensor_sum(ad.mul(probs, target), axis=(1, 2))
    sums = ad.add(ad.tensor_sum(probs, axis=(1, 2)), ad.tensor_sum(target, axis=(1, 2)))
    frac = ad.div(ad.affine(inter, 2.0, eps), ad.affine(sums, 1.0, eps))
    return ad.affine(ad.affine(ad.tensor_sum(frac), 1.0 / k), -1.0, 1.0)


def combine_losses(dice_term, distance_term, xi):
    """Eq.-style total: dice + xi * distance."""
    return ad.add(dice_term, ad.affine(distance_term, xi))


def _check_finite(value, stage, epoch, sample):
    if not np.isfinite(value):
        raise TrainingError(
            f"stage {stage}: non-finite loss {value!r} at epoch {epoch}, sample {sample}"
        )


def _batches(order, batch_size):
    for start in range(0, len(order), batch_size):
        yield order[start:start + batch_size]


def _streams(seed_key):
    """Fixed spawn slots: (net init, fsm/second init, loop rng)."""
    children = np.random.SeedSequence(list(seed_key)).spawn(3)
    return children[0], children[1], np.random.default_rng(children[2])


def train_stage1(masks, gt_cfg, cfg, seed_key):
    """Denoising autoencoder over one-hot masks; returns (net, loss rows)."""
    init_child, _, rng = _streams(seed_key)
    net = UNet.build(gt_cfg, init_child)
    opt = Adam(net.parameters(), cfg.lr)
    k = gt_cfg.num_classes
    p = 0.0 if cfg.no_noise else cfg.noise_p
    targets = [one_hot(m, k) for m in masks]
    rows = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(masks))
        losses = []
        for batch in _batches(order, cfg.batch_size):
            opt.zero_grad()
            for i in batch:
                x = one_hot(corrupt_gt(masks[i], p, rng), k)
                probs, _ = net.forward(ad.Tensor(x))
                loss = dice_loss(probs, ad.Tensor(targets[i]), cfg.dice_eps)
                v = loss.item()
                _check_finite(v, "1", epoch, int(i))
                losses.append(v)
                ad.backward(ad.affine(loss, 1.0 / len(batch)))
            opt.step()
        rows.append((epoch, "1", float(np.mean(losses)), 0.0))
    return net, rows


def train_segmenter(images, masks, ct_cfg, cfg, seed_key, n_gt=None):
    """Stage 2 when n_gt is given (dice + xi * fsm distance against the frozen
    N_GT bottleneck); plain dice-only training when n_gt is None.
    Returns (n_ct, fsm or None, loss rows)."""
    init_child, fsm_child, rng = _streams(seed_key)
    n_ct = UNet.build(ct_cfg, init_child)
    k = ct_cfg.num_classes
    stage = "2" if n_gt is not None else "plain"

    fsm = None
    gt_bott = None
    gt_digest = None
    if n_gt is not None:
        for p in n_gt.parameters():
            p.requires_grad = False
        gt_digest = params_digest(n_gt.named_arrays())
        with ad.no_grad():
            gt_bott = [n_gt.forward_encoder(one_hot(m, k))[-1].data for m in masks]
        h, w = images[0].shape[1], images[0].shape[2]
        step = 2 ** ct_cfg.depth
        ct_shape = (ct_cfg.base_channels * step, h // step, w // step)
        fsm = build_fsm(FsmConfig.from_feature_shapes(ct_shape, gt_bott[0].shape), fsm_child)
        opt = Adam(n_ct.parameters() + fsm.parameters(), cfg.lr)
    else:
        opt = Adam(n_ct.parameters(), cfg.lr)

    targets = [one_hot(m, k) for m in masks]
    rows = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(images))
        losses, dists = [], []
        for batch in _batches(order, cfg.batch_size):
            opt.zero_grad()
            for i in batch:
                probs, feats = n_ct.forward(ad.Tensor(images[i]))
                dice = dice_loss(probs, ad.Tensor(targets[i]), cfg.dice_eps)
                if fsm is not None and cfg.xi > 0:
                    dist, _ = fsm_forward(feats[-1], ad.Tensor(gt_bott[i]), fsm)
                    total = combine_losses(dice, dist, cfg.xi)
                    dists.append(dist.item())
                elif fsm is not None:
                    with ad.no_grad():
                        dist, _ = fsm_forward(feats[-1], ad.Tensor(gt_bott[i]), fsm)
                    dists.append(dist.item())
                    total = dice
                else:
                    dists.append(0.0)
                    total = dice
                v = total.item()
                _check_finite(v, stage, epoch, int(i))
                losses.append(v)
                ad.backward(ad.affine(total, 1.0 / len(batch)))
            opt.step()
        rows.append((epoch, stage, float(np.mean(losses)), float(np.mean(dists))))

    if n_gt is not None and params_digest(n_gt.named_arrays()) != gt_digest:
        raise TrainingError("stage 2 mutated the frozen mask autoencoder")
    return n_ct, fsm, rows


def train_stage3(n_ct, n_gt, images, masks, cfg, seed_key):
    """Transplant N_GT's decoder into n_ct, freeze the encoder, fine-tune
    decoder + head with dice. Mutates n_ct; returns loss rows."""
    _, _, rng = _streams(seed_key)
    transplant_decoder(n_ct, n_gt)
    n_ct.set_requires_grad(n_ct.encoder_names(), False)
    encoder_digest = params_digest(
        [(n, n_ct.params[n].data) for n in n_ct.encoder_names()])
    opt = Adam([n_ct.params[n] for n in n_ct.decoder_names()], cfg.lr)
    k = n_ct.config.num_classes
    targets = [one_hot(m, k) for m in masks]
    rows = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(images))
        losses = []
        for batch in _batches(order, cfg.batch_size):
            opt.zero_grad()
            for i in batch:
                probs, _ = n_ct.forward(ad.Tensor(images[i]))
                loss = dice_loss(probs, ad.Tensor(targets[i]), cfg.dice_eps)
                v = loss.item()
                _check_finite(v, "3", epoch, int(i))
                losses.append(v)
                ad.backward(ad.affine(loss, 1.0 / len(batch)))
            opt.step()
        rows.append((epoch, "3", float(np.mean(losses)), 0.0))
    after = params_digest([(n, n_ct.params[n].data) for n in n_ct.encoder_names()])
    if after != encoder_digest:
        raise TrainingError("stage 3 mutated the frozen encoder")
    n_ct.set_requires_grad(n_ct.encoder_names(), True)
    return rows


def train_joint(images, masks, gt_cfg, ct_cfg, cfg, seed_key):
    """Single phase: dice(N_GT recon) + dice(N_CT seg) + xi * fsm distance,
    all of N_GT, N_CT, and the FSM updated together."""
    ss = np.random.SeedSequence(list(seed_key)).spawn(4)
    gt_child, ct_child, fsm_child = ss[0], ss[1], ss[2]
    rng = np.random.default_rng(ss[3])
    n_gt = UNet.build(gt_cfg, gt_child)
    n_ct = UNet.build(ct_cfg, ct_child)
    k = ct_cfg.num_classes
    h, w = images[0].shape[1], images[0].shape[2]
    step = 2 ** ct_cfg.depth
    bott = lambda c: (c.base_channels * step, h // step, w // step)
    fsm = build_fsm(FsmConfig.from_feature_shapes(bott(ct_cfg), bott(gt_cfg)), fsm_child)
    opt = Adam(n_gt.parameters() + n_ct.parameters() + fsm.parameters(), cfg.lr)
    p = 0.0 if cfg.no_noise else cfg.noise_p
    targets = [one_hot(m, k) for m in masks]
    rows = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(images))
        losses, dists = [], []
        for batch in _batches(order, cfg.batch_size):
            opt.zero_grad()
            for i in batch:
                y_oh = targets[i]
                x_gt = one_hot(corrupt_gt(masks[i], p, rng), k)
                probs_gt, _ = n_gt.forward(ad.Tensor(x_gt))
                recon = dice_loss(probs_gt, ad.Tensor(y_oh), cfg.dice_eps)
                probs_ct, feats_ct = n_ct.forward(ad.Tensor(images[i]))
                seg = dice_loss(probs_ct, ad.Tensor(y_oh), cfg.dice_eps)
                total = ad.add(recon, seg)
                if cfg.xi > 0:
                    with ad.no_grad():
                        f_gt = n_gt.forward_encoder(ad.Tensor(y_oh))[-1]
                    dist, _ = fsm_forward(feats_ct[-1], f_gt, fsm)
                    total = combine_losses(total, dist, cfg.xi)
                    dists.append(dist.item())
                else:
                    dists.append(0.0)
                v = total.item()
                _check_finite(v, "joint", epoch, int(i))
                losses.append(v)
                ad.backward(ad.affine(total, 1.0 / len(batch)))
            opt.step()
        rows.append((epoch, "joint", float(np.mean(losses)), float(np.mean(dists))))
    return n_gt, n_ct, fsm, rows


def mean_dice_loss(net, images, masks, eps=1.0):
    """Dataset-mean dice loss without recording a graph."""
    k = net.config.num_classes
    vals = []
    with ad.no_grad():
        for img, msk in zip(images, masks):
            probs, _ = net.forward(ad.Tensor(img))
            vals.append(dice_loss(probs, ad.Tensor(one_hot(msk, k)), eps).item())
    return float(np.mean(vals))


def write_loss_csv(path, rows):
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["epoch", "stage", "loss", "fsm_distance"])
        for epoch, stage, loss, dist in rows:
            wr.writerow([epoch, stage, f"{loss:.8f}", f"{dist:.8f}"])


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class PipelineArtifacts:
    out_dir: str
    mode: str
    stages: list
    folds: list
    checkpoints: dict = field(default_factory=dict)   # (fold, name) -> path
    case_ids: list = field(default_factory=list)
    case_reports: list = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)
    mean_dsc: float = None
    mean_assd: float = None


def _default_stages(mode, cfg):
    if mode == "full":
        return ["1", "2"] + ([] if cfg.no_refine else ["3"])
    if mode == "joint":
        return ["joint"] + ([] if cfg.no_refine else ["3"])
    if mode == "plain":
        return ["plain"]
    raise ConfigError(f"unknown pipeline mode {mode!r}")


def _load_unet(path, what, fold):
    if not os.path.isfile(os.path.join(path, "manifest.json")):
        raise ConfigError(
            f"fold {fold}: missing {what} checkpoint under {path}; run that stage first")
    return UNet.load(path)


def evaluate_net(net, dataset, indices, spacing=(1.0, 1.0)):
    classes = tuple(range(1, dataset.k))
    ids, reports = [], []
    for i in indices:
        pred = net.predict(dataset.images[i])
        reports.append(evaluate_case(pred, dataset.masks[i], spacing, classes))
        ids.append(int(i))
    return ids, reports


def run_pipeline(dataset, cfg, out_dir, depth=3, base_channels=8, mode="full",
                 stages=None, folds=None, spacing=(1.0, 1.0), verbose=False):
    cfg.validate()
    if dataset.k_folds != cfg.k_folds:
        raise ConfigError(
            f"config k_folds={cfg.k_folds} but the manifest was split into "
            f"{dataset.k_folds} folds")
    step = 2 ** depth
    if dataset.h % step or dataset.w % step:
        raise ConfigError(
            f"dataset size {dataset.h}x{dataset.w} not divisible by 2^depth={step}")
    if mode == "full" and cfg.joint_train:
        mode = "joint"
    stages = list(stages) if stages is not None else _default_stages(mode, cfg)
    folds = list(range(cfg.k_folds)) if folds is None else sorted(set(folds))
    for f in folds:
        if not 0 <= f < cfg.k_folds:
            raise ConfigError(f"fold {f} out of range [0, {cfg.k_folds})")

    os.makedirs(out_dir, exist_ok=True)
    k = dataset.k
    gt_cfg = UNetConfig(k, k, depth, base_channels)
    ct_cfg = UNetConfig(1, k, depth, base_channels)
    terminal = stages[-1] if stages else None

    with open(os.path.join(out_dir, "config.json"), "w") as f:
        json.dump({"mode": mode, "stages": stages, "folds": folds,
                   "train": asdict(cfg),
                   "unet": {"depth": depth, "base_channels": base_channels},
                   "dataset": {"root": dataset.root,
                               "seed": dataset.manifest.get("seed")}},
                  f, indent=1, sort_keys=True)

    def log(msg):
        if verbose:
            print(msg, flush=True)

    art = PipelineArtifacts(out_dir=out_dir, mode=mode, stages=stages, folds=folds)
    for fold in folds:
        fold_dir = os.path.join(out_dir, f"fold_{fold}")
        os.makedirs(fold_dir, exist_ok=True)
        train_idx, held_idx = dataset.fold_indices(fold)
        images = [dataset.images[i] for i in train_idx]
        masks = [dataset.masks[i] for i in train_idx]
        key = lambda s: (cfg.seed, fold, STAGE_IDX[s])

        n_gt = n_ct = None
        final_net = None
        for stage in stages:
            if stage == "1":
                n_gt, rows = train_stage1(masks, gt_cfg, cfg, key("1"))
                path = os.path.join(fold_dir, "stage1")
                n_gt.save(path)
                art.checkpoints[(fold, "stage1")] = path
            elif stage == "2":
                if n_gt is None:
                    n_gt = _load_unet(os.path.join(fold_dir, "stage1"), "stage-1", fold)
                n_ct, fsm, rows = train_segmenter(images, masks, ct_cfg, cfg,
                                                  key("2"), n_gt=n_gt)
                path = os.path.join(fold_dir, "stage2")
                n_ct.save(path)
                fsm.save(os.path.join(fold_dir, "fsm"))
                art.checkpoints[(fold, "stage2")] = path
                art.checkpoints[(fold, "fsm")] = os.path.join(fold_dir, "fsm")
                final_net = n_ct
            elif stage == "3":
                if n_gt is None:
                    n_gt = _load_unet(os.path.join(fold_dir, "stage1"), "stage-1", fold)
                if n_ct is None:
                    src = "joint" if mode == "joint" else "stage2"
                    n_ct = _load_unet(os.path.join(fold_dir, src), f"{src}", fold)
                rows = train_stage3(n_ct, n_gt, images, masks, cfg, key("3"))
                path = os.path.join(fold_dir, "stage3")
                n_ct.save(path)
                art.checkpoints[(fold, "stage3")] = path
                final_net = n_ct
            elif stage == "plain":
                n_ct, _, rows = train_segmenter(images, masks, ct_cfg, cfg,
                                                key("plain"), n_gt=None)
                path = os.path.join(fold_dir, "plain")
                n_ct.save(path)
                art.checkpoints[(fold, "plain")] = path
                final_net = n_ct
            elif stage == "joint":
                n_gt, n_ct, fsm, rows = train_joint(images, masks, gt_cfg, ct_cfg,
                                                    cfg, key("joint"))
                for name, obj in (("joint_gt", n_gt), ("joint", n_ct)):
                    p = os.path.join(fold_dir, name)
                    obj.save(p)
                    art.checkpoints[(fold, name)] = p
                fsm.save(os.path.join(fold_dir, "joint_fsm"))
                art.checkpoints[(fold, "joint_fsm")] = os.path.join(fold_dir, "joint_fsm")
                final_net = n_ct
            else:
                raise ConfigError(f"unknown stage {stage!r}")
            write_loss_csv(os.path.join(fold_dir, f"losses_{stage}.csv"), rows)
            log(f"fold {fold} stage {stage}: final loss {rows[-1][2]:.4f}")

        if terminal in (None, "1"):
            continue
        if final_net is None:
            raise ConfigError(f"fold {fold}: nothing to evaluate for stages {stages}")
        ids, reports = evaluate_net(final_net, dataset, held_idx, spacing)
        classes = tuple(range(1, k))
        write_case_csv(os.path.join(fold_dir, "metrics.csv"), ids, reports, classes)
        fold_dsc, _ = overall_means(reports, classes)
        log(f"fold {fold}: held-out mean DSC {100 * fold_dsc:.1f}%")
        art.case_ids.extend(ids)
        art.case_reports.extend(reports)

    if art.case_reports:
        classes = tuple(range(1, k))
        art.aggregate = aggregate(art.case_reports, classes)
        art.mean_dsc, art.mean_assd = overall_means(art.case_reports, classes)
        write_summary_csv(os.path.join(out_dir, "metrics_summary.csv"), art.aggregate)
    return art


def evaluate_run(dataset, out_dir, checkpoint_name, folds=None, spacing=(1.0, 1.0)):
    """Evaluate saved per-fold checkpoints on their held-out folds; used to
    score a stage other than the terminal one (e.g. stage 2 as the no-refine
    ablation of an existing full run)."""
    folds = list(range(dataset.k_folds)) if folds is None else sorted(set(folds))
    classes = tuple(range(1, dataset.k))
    ids, reports = [], []
    for fold in folds:
        path = os.path.join(out_dir, f"fold_{fold}", checkpoint_name)
        net = _load_unet(path, checkpoint_name, fold)
        _, held_idx = dataset.fold_indices(fold)
        i, r = evaluate_net(net, dataset, held_idx, spacing)
        ids.extend(i)
        reports.extend(r)
    agg = aggregate(reports, classes)
    mean_dsc, mean_assd = overall_means(reports, classes)
    return {"case_ids": ids, "case_reports": reports, "aggregate": agg,
            "mean_dsc": mean_dsc, "mean_assd": mean_assd}
