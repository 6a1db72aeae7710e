"""Training and inference for the two sub-networks.

The MRE model is a backbone plus the pooled mid-level branch, trained on
``sum_i loss(high_i) + lambda * loss(branch(mixed mid_i))``.

The GUS model is a second backbone whose high-level embedding feeds the GCN
head. Its backbone is first warmed up with its own linear head (the stand-in
for a pretrained feature extractor), then the GCN layers are trained on
per-batch similarity graphs at the GUS learning rate.
"""

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from fermech import NUM_CLASSES
from fermech.backbone import BackboneConfig, BackboneState, backward, forward, init_backbone, sgd_step
from fermech.errors import ConfigError, TrainingError
from fermech.gus import GusConfig, gus_head, gus_head_backward, init_gus_layers, layers_from_params
from fermech.losses import LossConfig, mixed_loss, mixed_loss_grad, mixed_loss_terms
from fermech.mre import (
    MreConfig,
    choose_partners,
    init_branch,
    mix_batch,
    mix_batch_grad,
    mre_branch,
    mre_branch_grad,
    sample_batch_masks,
)
from fermech.numerics import softmax
from fermech.pipeline.data import AugmentConfig, augment, oversample
from fermech.pipeline.metrics import macro_f1

log = logging.getLogger(__name__)


@dataclass
class Settings:
    backbone: BackboneConfig
    gus_backbone: BackboneConfig
    mre: MreConfig
    gus: GusConfig
    loss: LossConfig
    augment: AugmentConfig
    epochs: int = 40
    gus_pretrain_epochs: int = 20
    gus_epochs: int = 100
    gus_finetune_backbone: bool = False
    batch_size: int = 32
    eval_batch_size: int = 32
    oversample: bool = True
    use_augment: bool = False
    seed: int = 7


@dataclass
class Models:
    mre: dict
    gus: dict
    settings: Settings
    history: list = field(default_factory=list)


def settings_from_config(cfg, input_shape):
    input_shape = tuple(int(d) for d in input_shape)
    b = cfg.backbone
    g = cfg.gus
    a = cfg.augment
    if g.embedding not in ("signed", "relu"):
        raise ConfigError(f"config key gus.embedding: expected signed or relu, got {g.embedding!r}")
    for key, value in (("train.batch_size", cfg.train.batch_size), ("eval.batch_size", cfg.eval.batch_size)):
        if value < 1:
            raise ConfigError(f"config key {key}: must be >= 1")
    for key, value in (("train.epochs", cfg.train.epochs), ("gus.epochs", g.epochs),
                       ("gus.pretrain_epochs", g.pretrain_epochs)):
        if value < 0:
            raise ConfigError(f"config key {key}: must be >= 0")
    bcfg = BackboneConfig(
        input_kind="vector" if len(input_shape) == 1 else "image",
        input_shape=input_shape,
        mid_channels=b.mid_channels,
        mid_spatial=(b.mid_h, b.mid_w),
        high_dim=b.high_dim,
        seed=cfg.run.seed,
        lr=b.lr,
    )
    gbcfg = dataclasses.replace(bcfg, high_activation="identity" if g.embedding == "signed" else "relu")
    return Settings(
        backbone=bcfg,
        gus_backbone=gbcfg,
        mre=MreConfig(cfg.mre.lam, cfg.mre.noise_ratio, cfg.run.seed),
        gus=GusConfig(tuple(g.layers), g.clamp_negative_sim, g.degrees_from, g.lr, cfg.run.seed),
        loss=LossConfig(cfg.loss.omega1, cfg.loss.omega2, cfg.loss.omega3, cfg.loss.gamma, cfg.loss.tau),
        augment=AugmentConfig(
            a.flip_p, a.crop_p, a.crop_ratio, a.blur_p, (a.blur_sigma_min, a.blur_sigma_max), a.resize
        ),
        epochs=cfg.train.epochs,
        gus_pretrain_epochs=g.pretrain_epochs,
        gus_epochs=g.epochs,
        gus_finetune_backbone=g.finetune_backbone,
        batch_size=cfg.train.batch_size,
        eval_batch_size=cfg.eval.batch_size,
        oversample=cfg.train.oversample,
        use_augment=cfg.train.augment,
        seed=cfg.run.seed,
    )


def init_models(s):
    ss = np.random.SeedSequence(s.seed)
    r_mre, r_gus = (np.random.default_rng(c) for c in ss.spawn(2))
    mre = dict(init_backbone(s.backbone, r_mre).params)
    mre.update(init_branch(s.backbone.mid_channels, NUM_CLASSES, r_mre))
    gus = dict(init_backbone(s.gus_backbone, r_gus).params)
    if s.gus.layers and s.gus_backbone.high_dim:
        gus.update(init_gus_layers(s.gus_backbone.high_dim, s.gus, r_gus))
    return mre, gus


def mre_objective(params, x, y, partners, masks, s):
    """Summed batch loss and parameter gradients of the MRE model."""
    state = BackboneState(params)
    taps = forward(state, x, s.backbone)
    mixed = mix_batch(taps.mid, partners, masks)
    branch_logits = mre_branch(mixed, params["w_branch"], params["b_branch"])
    l_high = mixed_loss(taps.logits, y, s.loss)
    l_branch = mixed_loss(branch_logits, y, s.loss)
    total = float(np.sum(l_high) + s.mre.lam * np.sum(l_branch))
    d_branch = s.mre.lam * mixed_loss_grad(branch_logits, y, s.loss)
    dw, db, d_mixed = mre_branch_grad(mixed, params["w_branch"], d_branch)
    d_mid = mix_batch_grad(d_mixed, partners, masks)
    grads = backward(state, taps, s.backbone, d_logits=mixed_loss_grad(taps.logits, y, s.loss), d_mid=d_mid)
    grads["w_branch"] = dw
    grads["b_branch"] = db
    info = {"high": float(np.sum(l_high)), "branch": float(np.sum(l_branch)), "logits": taps.logits}
    return total, grads, info


def plain_objective(params, x, y, cfg, loss_cfg):
    """Backbone with its own linear head; used to warm up the GUS backbone."""
    state = BackboneState(params)
    taps = forward(state, x, cfg)
    total = float(np.sum(mixed_loss(taps.logits, y, loss_cfg)))
    grads = backward(state, taps, cfg, d_logits=mixed_loss_grad(taps.logits, y, loss_cfg))
    return total, grads, {"logits": taps.logits}


def gus_objective(params, x, y, s):
    state = BackboneState(params)
    taps = forward(state, x, s.gus_backbone)
    layers = layers_from_params(params, s.gus)
    logits, cache = gus_head(taps.high, layers, s.gus)
    total = float(np.sum(mixed_loss(logits, y, s.loss)))
    dws, d_high = gus_head_backward(layers, cache, mixed_loss_grad(logits, y, s.loss))
    grads = {}
    if s.gus_finetune_backbone:
        grads = backward(state, taps, s.gus_backbone, d_high=d_high)
        for k in ("w_out", "b_out"):
            del grads[k]
    grads.update({f"gcn{k}": dw for k, dw in enumerate(dws)})
    return total, grads, {"logits": logits}


def _step(params, grads, lr, name):
    try:
        return sgd_step(BackboneState(params), grads, lr).params
    except TrainingError as exc:
        raise TrainingError(f"{name} model: {exc}") from None


def _epoch(params, ds, s, rng, objective, lr, name, mix_rng=None, aug_rng=None):
    n = len(ds)
    order = rng.permutation(n)
    sums = {}
    preds = np.empty(n, dtype=np.int64)
    for start in range(0, n, s.batch_size):
        idx = order[start:start + s.batch_size]
        x, y = ds.x[idx], ds.y[idx]
        if s.use_augment and x.ndim > 2:
            x = np.stack([augment(xi, aug_rng, s.augment) for xi in x])
        total, grads, info = objective(params, x, y)
        if not np.isfinite(total):
            raise TrainingError(f"{name}: non-finite loss")
        params = _step(params, grads, lr, name)
        parts = {"total": total}
        parts.update(mixed_loss_terms(info["logits"], y, s.loss))
        for k in ("high", "branch"):
            if k in info:
                parts[k] = info[k]
        for k, v in parts.items():
            sums[k] = sums.get(k, 0.0) + v
        preds[start:start + len(idx)] = np.argmax(info["logits"], axis=1)
    record = {k: v / n for k, v in sums.items()}
    record["train_f1"] = macro_f1(ds.y[order], preds)
    return params, record


def train(ds, s, on_epoch=None):
    """Train both sub-networks; returns ``Models`` with a per-epoch history.

    Each history record carries the phase name (``mre``, ``gus_warmup``,
    ``gus``), the epoch number, mean per-sample losses and the training
    macro F1 of that epoch's pre-update predictions.
    """
    ss = np.random.SeedSequence([s.seed, 1])
    r_over, r_mre, r_mix, r_aug, r_warm, r_gus = (np.random.default_rng(c) for c in ss.spawn(6))
    if s.oversample:
        ds = oversample(ds, r_over)
    mre, gus = init_models(s)
    history = []

    def emit(phase, epoch, record):
        rec = {"phase": phase, "epoch": epoch}
        rec.update(record)
        history.append(rec)
        if on_epoch is not None:
            on_epoch(rec)

    grid = s.backbone.mid_spatial

    def mre_obj(params, x, y):
        partners = choose_partners(y, r_mix)
        masks = sample_batch_masks(len(y), grid, s.mre.noise_ratio, r_mix)
        return mre_objective(params, x, y, partners, masks, s)

    for epoch in range(1, s.epochs + 1):
        mre, rec = _epoch(mre, ds, s, r_mre, mre_obj, s.backbone.lr, "mre", aug_rng=r_aug)
        emit("mre", epoch, rec)

    def warm_obj(params, x, y):
        return plain_objective(params, x, y, s.gus_backbone, s.loss)

    for epoch in range(1, s.gus_pretrain_epochs + 1):
        gus, rec = _epoch(gus, ds, s, r_warm, warm_obj, s.gus_backbone.lr, "gus_warmup", aug_rng=r_aug)
        emit("gus_warmup", epoch, rec)

    def gus_obj(params, x, y):
        return gus_objective(params, x, y, s)

    for epoch in range(1, s.gus_epochs + 1):
        gus, rec = _epoch(gus, ds, s, r_gus, gus_obj, s.gus.lr, "gus", aug_rng=r_aug)
        emit("gus", epoch, rec)
    return Models(mre, gus, s, history)


def infer(models, x):
    """Post-softmax scores of both sub-networks plus MRE high-level embeddings.

    The GCN graph is built per consecutive block of ``eval_batch_size`` rows.
    """
    s = models.settings
    x = np.asarray(x, dtype=np.float64)
    taps = forward(BackboneState(models.mre), x, s.backbone)
    g_taps = forward(BackboneState(models.gus), x, s.gus_backbone)
    layers = layers_from_params(models.gus, s.gus)
    blocks = [
        gus_head(g_taps.high[start:start + s.eval_batch_size], layers, s.gus)[0]
        for start in range(0, len(x), s.eval_batch_size)
    ]
    gus_logits = np.concatenate(blocks) if blocks else np.zeros((0, NUM_CLASSES))
    return {"mre": softmax(taps.logits), "gus": softmax(gus_logits), "embeddings": taps.high}
