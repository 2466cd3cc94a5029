"""The three local explanation strategies: classic salience, guided
backpropagation, and a LIME-style superpixel surrogate.

All three explain the class the network predicts for the given image.
Gradient methods differentiate that class's pre-softmax score with
respect to the input (score gradients point toward evidence for the
prediction), discard negative components at the input, and aggregate
channels per pixel by the l1 norm. LIME fits a weighted ridge regression
over binary superpixel indicators and keeps the positive coefficients.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import net as network
from .errors import InputError, NumericError
from .ppm import read_pgm, write_pgm
from .segmentation import SegmentMap, load_segment_map, save_segment_map, segment

# coefficients below this are numerical dust, not positive evidence
POSITIVE_COEF_TOL = 1e-9

# batch size for surrogate-sample forwards; small batches keep conv
# scratch buffers cache-resident
LIME_FORWARD_CHUNK = 25


def _gradient_pixel_scores(net, x, mode) -> np.ndarray:
    scores = network.forward(net, x)
    predicted = int(np.argmax(scores))
    _, grad = network.score_gradients(net, x, predicted, mode)
    return np.clip(grad, 0.0, None).sum(axis=0)


def salience(net, x) -> np.ndarray:
    """Per-pixel influence from the plain score gradient."""
    return _gradient_pixel_scores(net, x, network.BackwardMode.STANDARD)


def guided_backprop(net, x) -> np.ndarray:
    """Per-pixel influence with negative gradients truncated at ReLUs."""
    return _gradient_pixel_scores(net, x, network.BackwardMode.GUIDED)


@dataclass
class LimeConfig:
    num_samples: int = 1000
    kernel_width: float = 0.25
    ridge_lambda: float = 1e-3
    on_probability: float = 0.5
    baseline: str = "superpixel_mean"  # or "global_mean"
    seed: int | list = 0  # anything SeedSequence accepts as entropy

    def validate(self):
        if self.num_samples < 10:
            raise InputError("num_samples must be >= 10")
        if self.kernel_width <= 0:
            raise InputError("kernel_width must be > 0")
        if self.ridge_lambda < 0:
            raise InputError("ridge_lambda must be >= 0")
        if self.baseline not in ("superpixel_mean", "global_mean"):
            raise InputError(f"unknown baseline {self.baseline!r}")


@dataclass
class SuperpixelRanking:
    segments: SegmentMap
    ranked: list  # [(superpixel id, coefficient)], coefficient > 0, descending


def rank_binary_features(predict, num_features, cfg: LimeConfig):
    """Core surrogate fit over binary on/off feature vectors.

    `predict` maps a (num_samples, num_features) boolean matrix to a float
    per row. Samples are weighted by exp(-(1 - a)^2 / kernel_width^2)
    where a is the fraction of active features; a weighted ridge
    regression (intercept unpenalized) is solved on the normal equations.
    Returns [(feature id, coefficient)] for strictly positive
    coefficients, descending.
    """
    cfg.validate()
    if num_features < 2:
        raise InputError("need at least 2 features to fit a surrogate")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed)))
    z = rng.random((cfg.num_samples, num_features)) < cfg.on_probability
    z[0, :] = True  # the unperturbed sample is always included
    y = np.asarray(predict(z), dtype=np.float64)
    if y.shape != (cfg.num_samples,):
        raise InputError("predict must return one value per sample")

    active = z.mean(axis=1)
    weights = np.exp(-((1.0 - active) ** 2) / cfg.kernel_width**2)

    design = np.empty((cfg.num_samples, num_features + 1))
    design[:, 0] = 1.0
    design[:, 1:] = z
    lhs = design.T @ (design * weights[:, None])
    lhs[1:, 1:] += cfg.ridge_lambda * np.eye(num_features)
    rhs = design.T @ (weights * y)
    try:
        beta = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericError(
            "singular surrogate regression; use a positive ridge_lambda"
        ) from exc
    coefs = beta[1:]
    ranked = [(i, float(c)) for i, c in enumerate(coefs) if c > POSITIVE_COEF_TOL]
    ranked.sort(key=lambda item: (-item[1], item[0]))
    return ranked


def _baseline_image(x, seg: SegmentMap, kind):
    base = np.empty_like(x)
    if kind == "global_mean":
        base[:] = x.mean(axis=(1, 2))[:, None, None]
        return base
    for sid in range(seg.num_segments):
        mask = seg.mask(sid)
        base[:, mask] = x[:, mask].mean(axis=1)[:, None]
    return base


def _render_predictor(net, x, seg, base, explained):
    """Generic sample labeler: render each z as an image, forward it."""
    labels_flat = seg.labels.ravel()
    x_flat = x.reshape(3, -1)
    base_flat = base.reshape(3, -1)
    h, w = seg.labels.shape

    def predict(z):
        probs = np.empty(len(z))
        for i0 in range(0, len(z), LIME_FORWARD_CHUNK):
            chunk = z[i0 : i0 + LIME_FORWARD_CHUNK]
            on_pix = chunk[:, labels_flat]  # (B, H*W)
            batch = np.where(on_pix[:, None, :], x_flat[None], base_flat[None])
            scores = net.forward_batch(
                batch.reshape(len(chunk), 3, h, w), cache=False
            )
            probs[i0 : i0 + len(chunk)] = network.softmax(scores)[:, explained]
        return probs

    return predict


def _linear_head_predictor(net, x, seg, base, explained):
    """Fast sample labeler for networks whose first layer is a convolution.

    Superpixels partition the pixels and the first layer is linear, so the
    layer's response to any rendered sample decomposes additively:
    conv(render(z)) = conv(base) + sum over on superpixels of
    conv((x - base) restricted to that superpixel). One GEMM combines the
    precomputed per-superpixel responses for all samples; only the layers
    after the convolution run per sample. Exact in exact arithmetic.
    """
    conv = net.layers[0]
    deltas = np.zeros((seg.num_segments,) + x.shape)
    diff = x - base
    for sid in range(seg.num_segments):
        mask = seg.mask(sid)
        deltas[sid][:, mask] = diff[:, mask]
    contrib = conv.forward(deltas, cache=False) - conv.bias[None, :, None, None]
    base_pre = conv.forward(base[None], cache=False)[0]
    out_shape = base_pre.shape
    contrib_mat = contrib.reshape(seg.num_segments, -1)
    base_flat = base_pre.ravel()

    def predict(z):
        probs = np.empty(len(z))
        for i0 in range(0, len(z), LIME_FORWARD_CHUNK):
            chunk = z[i0 : i0 + LIME_FORWARD_CHUNK].astype(np.float64)
            pre = chunk @ contrib_mat + base_flat
            scores = net.forward_tail(
                pre.reshape((len(chunk),) + out_shape), start=1, cache=False
            )
            probs[i0 : i0 + len(chunk)] = network.softmax(scores)[:, explained]
        return probs

    return predict


def lime_explain(net, x, cfg: LimeConfig, seg_params) -> SuperpixelRanking:
    """Rank the superpixels of x by their positive influence on the
    network's prediction for x."""
    cfg.validate()
    seg = segment(x, k=seg_params["k"], min_size=seg_params["min_size"],
                  sigma=seg_params.get("sigma", 0.0))
    if seg.num_segments < 2:
        raise InputError("segmentation yielded fewer than 2 superpixels")
    explained = network.predict(net, x)
    base = _baseline_image(x, seg, cfg.baseline)
    if isinstance(net.layers[0], network.Conv2d):
        predict = _linear_head_predictor(net, x, seg, base, explained)
    else:
        predict = _render_predictor(net, x, seg, base, explained)
    ranked = rank_binary_features(predict, seg.num_segments, cfg)
    return SuperpixelRanking(segments=seg, ranked=ranked)


def pixel_budget_mask(scores, budget: int) -> np.ndarray:
    """Mask of the `budget` highest-scoring pixels; ties resolved in
    row-major pixel order."""
    scores = np.asarray(scores)
    n = scores.size
    if not 1 <= budget <= n:
        raise InputError(f"budget {budget} out of range [1, {n}]")
    order = np.argsort(-scores.ravel(), kind="stable")
    mask = np.zeros(n, dtype=bool)
    mask[order[:budget]] = True
    return mask.reshape(scores.shape)


def partial_union(ranking: SuperpixelRanking, n: int) -> np.ndarray:
    """Union of the top-min(n, available) ranked superpixels."""
    if n < 1:
        raise InputError("n must be >= 1")
    if not ranking.ranked:
        raise InputError("ranking is empty")
    ids = [sid for sid, _ in ranking.ranked[:n]]
    return np.isin(ranking.segments.labels, ids)


def save_scores(scores, path_base) -> None:
    """PixelScores as 16-bit PGM with the scale factor in a JSON sidecar."""
    peak = float(scores.max())
    quantized = (
        np.round(scores / peak * 65535).astype(np.int64) if peak > 0
        else np.zeros(scores.shape, dtype=np.int64)
    )
    write_pgm(f"{path_base}.pgm", quantized, maxval=65535)
    with open(f"{path_base}.json", "w") as f:
        json.dump({"peak": peak}, f)


def load_scores(path_base) -> np.ndarray:
    values, _ = read_pgm(f"{path_base}.pgm")
    with open(f"{path_base}.json") as f:
        peak = json.load(f)["peak"]
    return values.astype(np.float64) / 65535.0 * peak


def save_ranking(ranking: SuperpixelRanking, path_base) -> None:
    save_segment_map(ranking.segments, f"{path_base}_seg")
    with open(f"{path_base}.json", "w") as f:
        json.dump({"ranked": [[int(i), c] for i, c in ranking.ranked]}, f)


def load_ranking(path_base) -> SuperpixelRanking:
    seg = load_segment_map(f"{path_base}_seg")
    with open(f"{path_base}.json") as f:
        ranked = [(int(i), float(c)) for i, c in json.load(f)["ranked"]]
    return SuperpixelRanking(segments=seg, ranked=ranked)
