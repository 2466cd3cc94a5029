"""Targeted, mask-constrained Basic Iterative Method.

Each iteration descends the cross-entropy toward the target label by a
signed-gradient step applied only inside the mask, then clips to [0, 1]
(and to the ball_eps box around the original, when set). Success is
judged on the 8-bit-quantized image that will be stored on disk, so the
recorded status can be re-verified from the written PPM alone.

Off-mask pixels are never written to, which keeps them bit-identical to
the original by construction.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import net as network
from .errors import InputError, NumericError
from .ppm import read_mask, read_ppm, write_mask, write_ppm
from .segmentation import largest_regions, segment

STALL_TOLERANCE = 1e-6


class AttackStatus(Enum):
    SUCCESS = "success"
    STALLED = "stalled"
    MAX_ITERS = "max_iters"
    ALREADY_TARGET = "already_target"


@dataclass
class AttackConfig:
    target_label: int = 0
    step_eps: float = 1.0 / 255.0
    max_iters: int = 200
    patience: int = 25
    ball_eps: float | None = None

    def validate(self):
        if self.step_eps <= 0:
            raise InputError("step_eps must be > 0")
        if self.max_iters < 1 or self.patience < 1:
            raise InputError("max_iters and patience must be >= 1")


@dataclass
class AdversarialRecord:
    original: np.ndarray
    adversarial: np.ndarray
    mask: np.ndarray
    original_label: int
    adversarial_label: int
    target_label: int
    iterations: int
    status: AttackStatus
    image_index: int = -1
    region_rank: int = -1

    @property
    def record_id(self) -> str:
        return f"{self.image_index:04d}_r{self.region_rank}"


def _quantize_into(x_adv, mask3, original):
    """Snap masked pixels to the 8-bit grid, keep the rest bit-identical."""
    return np.where(mask3, np.round(x_adv * 255.0) / 255.0, original)


def bim_attack(net, x, mask, cfg: AttackConfig) -> AdversarialRecord:
    cfg.validate()
    x = np.asarray(x, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape[1:]:
        raise InputError(f"mask shape {mask.shape} != image plane {x.shape[1:]}")
    if not mask.any():
        raise InputError("attack mask is empty")

    original_label = network.predict(net, x)
    if original_label == cfg.target_label:
        return AdversarialRecord(
            original=x,
            adversarial=x.copy(),
            mask=mask,
            original_label=original_label,
            adversarial_label=original_label,
            target_label=cfg.target_label,
            iterations=0,
            status=AttackStatus.ALREADY_TARGET,
        )

    mask3 = np.broadcast_to(mask, x.shape)
    x_adv = x.copy()
    best_loss = np.inf
    stall = 0
    steps = 0
    status = AttackStatus.MAX_ITERS

    while steps < cfg.max_iters:
        scores = network.forward(net, x_adv)
        loss, dscores = network.cross_entropy(scores, cfg.target_label)
        if loss < best_loss - STALL_TOLERANCE:
            best_loss = loss
            stall = 0
        else:
            stall += 1
            if stall >= cfg.patience:
                status = AttackStatus.STALLED
                break
        grad = net.backward_batch(dscores[None], network.BackwardMode.STANDARD)[0]
        if not np.all(np.isfinite(grad)):
            raise NumericError("non-finite gradient during attack")
        # sign(0) == 0: exactly-zero components leave their pixels untouched
        cand = x_adv - cfg.step_eps * np.sign(grad)
        if cfg.ball_eps is not None:
            cand = np.clip(cand, x - cfg.ball_eps, x + cfg.ball_eps)
        np.clip(cand, 0.0, 1.0, out=cand)
        x_adv = np.where(mask3, cand, x_adv)
        steps += 1
        stored = _quantize_into(x_adv, mask3, x)
        if network.predict(net, stored) == cfg.target_label:
            status = AttackStatus.SUCCESS
            break

    adversarial = _quantize_into(x_adv, mask3, x)
    return AdversarialRecord(
        original=x,
        adversarial=adversarial,
        mask=mask,
        original_label=original_label,
        adversarial_label=network.predict(net, adversarial),
        target_label=cfg.target_label,
        iterations=steps,
        status=status,
    )


def attack_image_regions(net, x, image_index, seg_params, cfg: AttackConfig, m=10):
    """All per-region attacks for one image, each restarted from the
    original. Images already predicted as the target are skipped (no
    records), mirroring a setup where the target differs from every true
    label."""
    if network.predict(net, x) == cfg.target_label:
        return []
    seg = segment(x, k=seg_params["k"], min_size=seg_params["min_size"],
                  sigma=seg_params.get("sigma", 0.0))
    records = []
    for rank, mask in enumerate(largest_regions(seg, m)):
        rec = bim_attack(net, x, mask, cfg)
        rec.image_index = image_index
        rec.region_rank = rank
        records.append(rec)
    return records


def generate_examples(net, images, seg_params, cfg: AttackConfig, m=10, log=None):
    """Attack the m largest segments of every image independently.

    Failed records are kept; a per-record error is logged and skipped
    without aborting the batch. Returns records ordered by
    (image_index, region_rank).
    """
    records = []
    for image_index, img in enumerate(images):
        try:
            records.extend(attack_image_regions(net, img, image_index, seg_params, cfg, m))
        except (InputError, NumericError) as exc:
            if log is not None:
                log(f"image {image_index}: attack failed: {exc}")
    return records


def save_records(records, out_dir) -> str:
    """Write adversarial/original PPMs, mask PGMs, and attacks.json."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    originals_written = set()
    for rec in records:
        orig_name = f"orig_{rec.image_index:04d}.ppm"
        if rec.image_index not in originals_written:
            write_ppm(os.path.join(out_dir, orig_name), rec.original)
            originals_written.add(rec.image_index)
        adv_name = f"adv_{rec.record_id}.ppm"
        mask_name = f"mask_{rec.record_id}.pgm"
        write_ppm(os.path.join(out_dir, adv_name), rec.adversarial)
        write_mask(os.path.join(out_dir, mask_name), rec.mask)
        entries.append(
            {
                "id": rec.record_id,
                "image_index": rec.image_index,
                "region_rank": rec.region_rank,
                "original": orig_name,
                "adversarial": adv_name,
                "mask": mask_name,
                "original_label": rec.original_label,
                "adversarial_label": rec.adversarial_label,
                "target_label": rec.target_label,
                "iterations": rec.iterations,
                "status": rec.status.value,
                "mask_pixels": int(rec.mask.sum()),
            }
        )
    manifest = os.path.join(out_dir, "attacks.json")
    with open(manifest, "w") as f:
        json.dump({"records": entries}, f, indent=1)
    return manifest


def load_records(out_dir, success_only=False):
    manifest = os.path.join(out_dir, "attacks.json")
    with open(manifest) as f:
        doc = json.load(f)
    records = []
    for e in doc["records"]:
        status = AttackStatus(e["status"])
        if success_only and status is not AttackStatus.SUCCESS:
            continue
        records.append(
            AdversarialRecord(
                original=read_ppm(os.path.join(out_dir, e["original"])),
                adversarial=read_ppm(os.path.join(out_dir, e["adversarial"])),
                mask=read_mask(os.path.join(out_dir, e["mask"])),
                original_label=e["original_label"],
                adversarial_label=e["adversarial_label"],
                target_label=e["target_label"],
                iterations=e["iterations"],
                status=status,
                image_index=e["image_index"],
                region_rank=e["region_rank"],
            )
        )
    return records
