"""Single-image SGD training loop with seeded shuffling and checkpoints."""

import csv
import io
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import data, gt, network, skt
from . import tensor as T
from .util import atomic_write_bytes, rng_stream

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    iterations: int = 20000
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 2e-4
    fusion_lr_mult: float = 5.0
    lam: float = 1.0
    model: str = "lmsds"
    rho: float = 1.2
    seed: int = 0
    checkpoint_every: int = 1000
    augment: bool = True
    aug_rotate: bool = True
    aug_flip: bool = True
    aug_resize: bool = True

    @staticmethod
    def from_run_config(cfg):
        opt = cfg["optimizer"]
        aug = cfg["augment"]
        return TrainConfig(
            iterations=opt["iterations"], lr=opt["lr"],
            momentum=opt["momentum"], weight_decay=opt["weight_decay"],
            fusion_lr_mult=opt["fusion_lr_mult"], lam=cfg["lambda"],
            model=cfg["model"], rho=cfg["rho"], seed=cfg["seed"],
            checkpoint_every=opt["checkpoint_every"],
            augment=aug["enabled"], aug_rotate=aug["rotate"],
            aug_flip=aug["flip"], aug_resize=aug["resize"])


@dataclass
class TrainState:
    net: network.NetworkParams
    history: list = field(default_factory=list)
    iteration: int = 0


def save_checkpoint(path, net, iteration, config_echo):
    tensors = {p.id: p.value for p in net.parameters()}
    meta = {
        "iteration": int(iteration),
        "model": net.model,
        "backbone": net.spec.to_config(),
        "config": config_echo,
    }
    skt.write_container(path, tensors, meta)


def load_checkpoint(path, fusion_lr_mult=None):
    tensors, meta = skt.read_container(path)
    spec = T.BackboneSpec.from_config(meta["backbone"])
    mult = fusion_lr_mult
    if mult is None:
        mult = meta.get("config", {}).get("fusion_lr_mult", 1.0)
    net = network.init_params(spec, model=meta["model"],
                              fusion_lr_mult=mult)
    for pid, p in net.params.items():
        if pid not in tensors:
            raise skt.FormatError(f"checkpoint missing tensor {pid}")
        if tensors[pid].shape != p.value.shape:
            raise skt.FormatError(f"checkpoint tensor {pid} has shape "
                                  f"{tensors[pid].shape}, expected "
                                  f"{p.value.shape}")
        p.value[...] = tensors[pid]
    return net, meta


def history_csv(history, num_stages):
    out = io.StringIO()
    cols = (["iteration"] + [f"cls_{i}" for i in range(1, num_stages + 1)]
            + [f"reg_{i}" for i in range(1, num_stages + 1)]
            + ["fusion", "total"])
    w = csv.writer(out, lineterminator="\n")
    w.writerow(cols)
    for row in history:
        w.writerow([row["iteration"]]
                   + [repr(v) for v in row["cls"]]
                   + [repr(v) for v in row["reg"]]
                   + [repr(row["fusion"]), repr(row["total"])])
    return out.getvalue()


def _sample_index(seed, iteration, count):
    """Position in a per-epoch seeded shuffle; random-access for resume."""
    epoch, pos = divmod(iteration, count)
    perm = rng_stream(seed, f"shuffle:{epoch}").permutation(count)
    return int(perm[pos])


def _draw_transform(seed, iteration, cfg):
    if not cfg.augment:
        return gt.Transform()
    rng = rng_stream(seed, f"aug:{iteration}")
    choices = gt.all_transforms(rotate=cfg.aug_rotate, flip=cfg.aug_flip,
                                resize=cfg.aug_resize)
    return choices[int(rng.integers(len(choices)))]


def train(root, manifest, spec, cfg, run_dir=None, net=None, start_iter=0,
          callback=None, callback_every=500, limit_train=None):
    """Train on the manifest's train split; returns the final TrainState.

    Single-image minibatches in a per-epoch seeded shuffle, optional
    per-iteration augmentation, rolling checkpoints. A non-finite loss or
    gradient aborts with TrainingDiverged; the last checkpoint survives.
    `callback(net, iteration)` may return True to stop early.
    """
    samples = manifest.split("train")
    if limit_train:
        samples = samples[:limit_train]
    if not samples:
        raise ValueError("no training samples")
    if net is None:
        net = network.init_params(spec, seed=cfg.seed, model=cfg.model,
                                  fusion_lr_mult=cfg.fusion_lr_mult)
    rf = spec.receptive_fields()
    opt = T.SgdMomentum(cfg.lr, cfg.momentum, cfg.weight_decay)
    state = TrainState(net=net, iteration=start_iter)
    ckpt_path = os.path.join(run_dir, "checkpoint.skc") if run_dir else None
    config_echo = vars(cfg).copy()

    arrays = {}  # per-sample cache of (image, skeleton, scale)

    def load(s):
        if s.id not in arrays:
            image, _, skel, scale = data.sample_arrays(root, s)
            arrays[s.id] = (image, skel, scale)
        return arrays[s.id]

    for t in range(start_iter, cfg.iterations):
        s = samples[_sample_index(cfg.seed, t, len(samples))]
        image, skel, scale = load(s)
        tr = _draw_transform(cfg.seed, t, cfg)
        image_t, skel_t, scale_t = gt.augment(image, skel, scale, tr)
        z = gt.quantize_scale_map(scale_t, rf, cfg.rho)
        targets = [gt.stage_targets(z, scale_t, i, rf, cfg.rho)
                   for i in range(1, len(rf) + 1)]
        for p in net.parameters():
            p.zero_grad()
        try:
            bd, _ = network.total_objective(net, data.to_input(image_t),
                                            targets, z, cfg.lam)
            if not np.isfinite(bd.total):
                raise T.NonFiniteError(f"loss became {bd.total}")
            opt.step(net.parameters())
        except T.NonFiniteError as e:
            raise TrainingDiverged(
                f"iteration {t}: {e}; last checkpoint retained") from e
        state.history.append({
            "iteration": t, "cls": bd.cls, "reg": bd.reg,
            "fusion": bd.fusion, "total": bd.total,
        })
        state.iteration = t + 1
        done = state.iteration == cfg.iterations
        if ckpt_path and (state.iteration % cfg.checkpoint_every == 0 or done):
            save_checkpoint(ckpt_path, net, state.iteration, config_echo)
            atomic_write_bytes(
                os.path.join(run_dir, "losses.csv"),
                history_csv(state.history, net.num_stages).encode())
        if callback and (state.iteration % callback_every == 0 or done):
            if callback(net, state.iteration):
                log.info("early stop requested at iteration %d",
                         state.iteration)
                break
    if ckpt_path:
        save_checkpoint(ckpt_path, net, state.iteration, config_echo)
        atomic_write_bytes(
            os.path.join(run_dir, "losses.csv"),
            history_csv(state.history, net.num_stages).encode())
    return state
