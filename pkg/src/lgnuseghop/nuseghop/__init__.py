"""Two-layer Saab feature extraction and the self-supervised pixel classifier."""

from .model import (DegeneratePseudolabel, NuSegHopConfig, NuSegHopModel,
                    featurize_pixels, fit_model, predict_heatmap,
                    select_discriminant)
from .saab import (EmptyKernel, PcaBasis, SaabKernel, apply_pca, apply_saab,
                   fit_pca, fit_saab)
from .serialize import load_model, save_model

__all__ = [
    "DegeneratePseudolabel", "NuSegHopConfig", "NuSegHopModel",
    "featurize_pixels", "fit_model", "predict_heatmap", "select_discriminant",
    "EmptyKernel", "PcaBasis", "SaabKernel", "apply_pca", "apply_saab",
    "fit_pca", "fit_saab", "load_model", "save_model",
]
