"""Every pipeline knob in one serializable record.

The file format is plain ``key = value`` lines with ``#`` comments. A bare
default instance reproduces the published hyperparameter table; stage
toggles mirror the ablation rows.
"""

from dataclasses import dataclass, fields

from .globalproc import GlobalConfig
from .localproc import LairConfig
from .nuseghop import NuSegHopConfig


@dataclass
class PipelineConfig:
    # preprocessing
    use_pqr: bool = True
    pqr_patch: int = 50
    # equalization boosts feature contrast but flattens the thresholding
    # histograms (it redistributes value range by mass); the p-value path
    # therefore defaults to the raw stain-separated image
    threshold_on_equalized: bool = False
    # local thresholding
    use_adaptive: bool = True
    lam: float = 0.2
    smooth_width: int = 5
    peak_prominence: float = 0.05
    peak_separation: int = 16
    valley_max: float = 0.5
    fallback_order: str = "sub-first"  # or "context-first"
    # morphology
    use_morph: bool = True
    min_area: int = 30
    solidity_cutoff: float = 0.85
    split_min_depth: float = 1.5
    max_splits: int = 2
    # LAIR
    use_lair: bool = True
    lair_patch: int = 200
    lair_nu: float = 0.1
    lair_similarity: float = 0.7
    lair_size_split: float = 0.6
    # pixel classifier
    use_nuseghop: bool = True
    window: int = 9
    energy_threshold: float = 1e-3
    max_spectral_dims: int = 10
    n_selected_features: int = 100
    n_train_pixels: int = 50_000
    trees: int = 100
    tree_depth: int = 4
    learning_rate: float = 0.075
    # global processing
    use_lmd: bool = True
    use_watershed: bool = True
    use_instance_filter: bool = True
    confident_mean_prob: float = 0.95
    log_blob_threshold: float = 0.05
    log_sigma_min: float = 2.0
    log_sigma_max: float = 10.0
    log_sigma_steps: int = 8
    t_p: float = 0.35
    rbf_gamma: float = 0.0
    rbf_regularization: float = 1.0
    removal_prob_cutoff: float = 0.5
    elevation: str = "complement"
    # run control
    seed: int = 0
    threads: int = 1

    def lair_config(self):
        return LairConfig(patch_size=self.lair_patch, nu=self.lair_nu,
                          similarity_threshold=self.lair_similarity,
                          size_percentile_split=self.lair_size_split)

    def nuseghop_config(self):
        return NuSegHopConfig(
            window=self.window, energy_threshold=self.energy_threshold,
            max_spectral_dims=self.max_spectral_dims,
            n_selected_features=self.n_selected_features,
            n_train_pixels=self.n_train_pixels, trees=self.trees,
            tree_depth=self.tree_depth, learning_rate=self.learning_rate)

    def global_config(self):
        return GlobalConfig(
            confident_mean_prob=self.confident_mean_prob,
            log_blob_threshold=self.log_blob_threshold,
            log_sigma_min=self.log_sigma_min, log_sigma_max=self.log_sigma_max,
            log_sigma_steps=self.log_sigma_steps, t_p=self.t_p,
            rbf_gamma=self.rbf_gamma,
            rbf_regularization=self.rbf_regularization,
            removal_prob_cutoff=self.removal_prob_cutoff,
            elevation=self.elevation, min_area=self.min_area)


class ConfigError(ValueError):
    pass


def _parse_value(raw, default):
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def save_config(path, cfg):
    with open(path, "w", encoding="utf-8") as fh:
        for f in fields(cfg):
            fh.write(f"{f.name} = {getattr(cfg, f.name)!r}\n")


def load_config(path):
    defaults = PipelineConfig()
    known = {f.name for f in fields(defaults)}
    kwargs = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, eq, raw = line.partition("=")
            key = key.strip()
            raw = raw.strip().strip("'\"")
            if not eq or not key:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            if key not in known:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            if key in kwargs:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            kwargs[key] = _parse_value(raw, getattr(defaults, key))
    return PipelineConfig(**kwargs)
