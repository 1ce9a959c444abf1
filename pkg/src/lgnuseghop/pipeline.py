"""End-to-end tile segmentation plus the evaluation driver.

Stage chain: stain separation -> equalization -> p-value map -> multiscale
threshold -> morphology -> LAIR (pseudolabel) -> pixel classifier fit +
heatmap -> confidence split -> LoG seeds -> watershed -> binarize/merge ->
instance filter. Every stage honors its toggle; timings are contiguous so
they sum to the wall clock.
"""

import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import globalproc, localproc, metrics, preprocess
from .config import PipelineConfig
from .core import connected_components, rgb_to_hsi
from .globalproc import SeedSet
from .nuseghop import DegeneratePseudolabel, EmptyKernel, fit_model, predict_heatmap


@dataclass
class PipelineResult:
    mask: np.ndarray
    heatmap: np.ndarray
    pseudolabel: np.ndarray
    timings: dict
    seeds: SeedSet
    p_prime: np.ndarray
    fallbacks: list = field(default_factory=list)
    parameter_count: int = 0
    model: object = None


class _StageClock:
    def __init__(self):
        self.timings = {}
        self._t = time.perf_counter()
        self._start = self._t

    def mark(self, name):
        now = time.perf_counter()
        self.timings[name] = self.timings.get(name, 0.0) + (now - self._t)
        self._t = now

    def finish(self):
        self.timings["total"] = time.perf_counter() - self._start
        return self.timings


def threads_from(cfg):
    env = os.environ.get("LGNH_THREADS")
    if env:
        return max(1, int(env))
    return max(1, cfg.threads)


def run_pipeline(tile, cfg=None):
    """Segment one RGB tile; returns every intermediate artifact."""
    cfg = cfg or PipelineConfig()
    tile = np.asarray(tile, dtype=np.float64)
    threads = threads_from(cfg)
    clock = _StageClock()
    fallbacks = []

    try:
        h_img, _ = preprocess.stain_separate(tile)
    except preprocess.ConstantTile:
        h_img = tile
        fallbacks.append("constant-tile: stain separation skipped")
    h_eq = preprocess.hist_equalize(h_img)
    h_hsi = rgb_to_hsi(h_eq)
    clock.mark("preprocess")

    thresh_src = h_eq if cfg.threshold_on_equalized else h_img
    if cfg.use_pqr:
        pmap = preprocess.pvalue_map(thresh_src, patch=cfg.pqr_patch)
    else:
        pmap = preprocess.intensity_map(thresh_src, patch=cfg.pqr_patch)
    clock.mark("pvalue")

    binary = localproc.threshold_multiscale(
        pmap, cfg.lam, patch=cfg.pqr_patch, use_adaptive=cfg.use_adaptive,
        fallback_order=cfg.fallback_order, smooth_width=cfg.smooth_width,
        prominence=cfg.peak_prominence, separation=cfg.peak_separation,
        valley_max=cfg.valley_max)
    clock.mark("threshold")

    if cfg.use_morph:
        pseudolabel = localproc.morph_refine(
            binary, min_area=cfg.min_area, solidity_cutoff=cfg.solidity_cutoff,
            min_depth=cfg.split_min_depth, max_splits=cfg.max_splits)
    else:
        pseudolabel = connected_components(binary)
    clock.mark("morph")

    if cfg.use_lair:
        pseudolabel = localproc.lair_filter(pseudolabel, h_hsi,
                                            cfg.lair_config())
    clock.mark("lair")

    model = None
    if cfg.use_nuseghop:
        try:
            model = fit_model(h_hsi, pseudolabel, cfg.nuseghop_config(),
                              rng_seed=cfg.seed)
        except (DegeneratePseudolabel, EmptyKernel) as exc:
            fallbacks.append(f"pixel classifier skipped: {exc}")
    clock.mark("nuseghop_fit")

    if model is not None:
        heatmap = predict_heatmap(h_hsi, model, threads=threads)
        param_count = model.parameter_count()
    else:
        heatmap = (pseudolabel > 0).astype(np.float32)
        param_count = 0
    clock.mark("nuseghop_predict")

    gcfg = cfg.global_config()
    nsh_mask = connected_components((heatmap >= 0.5).astype(np.uint8))
    confident, p_prime = globalproc.filter_confident(
        heatmap, nsh_mask, gcfg.confident_mean_prob)
    clock.mark("global_confident")

    seeds = globalproc.detect_log_maxima(p_prime, gcfg) if cfg.use_lmd \
        else SeedSet.empty()
    clock.mark("global_lmd")

    basins = globalproc.watershed_refine(p_prime, seeds, gcfg) \
        if cfg.use_watershed else None
    clock.mark("global_watershed")

    merged = globalproc.binarize_merge(p_prime, basins, confident,
                                       t_p=gcfg.t_p, min_area=gcfg.min_area)
    clock.mark("global_merge")

    if cfg.use_instance_filter:
        final = globalproc.instance_classify_filter(merged, h_hsi, gcfg,
                                                    rng_seed=cfg.seed)
    else:
        final = merged
    clock.mark("global_filter")

    return PipelineResult(
        mask=final, heatmap=np.asarray(heatmap, dtype=np.float32),
        pseudolabel=pseudolabel, timings=clock.finish(), seeds=seeds,
        p_prime=np.asarray(p_prime, dtype=np.float32), fallbacks=fallbacks,
        parameter_count=param_count, model=model)


class EvalPairError(ValueError):
    def __init__(self, missing):
        self.missing = missing
        super().__init__("missing prediction/ground-truth pairs: "
                         + ", ".join(missing))


def evaluate_dirs(pred_dir, gt_dir):
    """Per-tile reports plus a mean/std aggregate over matching filenames."""
    from . import io

    pred_names = {f for f in os.listdir(pred_dir) if f.endswith(".png")}
    gt_names = {f for f in os.listdir(gt_dir) if f.endswith(".png")}
    missing = sorted(gt_names - pred_names) + sorted(pred_names - gt_names)
    if missing:
        raise EvalPairError(missing)
    if not gt_names:
        raise EvalPairError(["<no .png masks found>"])
    per_tile = {}
    for name in sorted(gt_names):
        gt = io.load_mask(os.path.join(gt_dir, name))
        pred = io.load_mask(os.path.join(pred_dir, name))
        per_tile[name] = metrics.evaluate(gt, pred)
    keys = ["dice", "f1", "aji", "pq", "dq", "sq"]
    agg = {}
    for key in keys:
        vals = np.array([getattr(r, key) for r in per_tile.values()])
        agg[key] = (float(vals.mean()), float(vals.std()))
    return per_tile, agg
