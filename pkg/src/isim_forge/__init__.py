"""Layout synthesis toolkit.

Fits a class co-occurrence / geometry knowledge graph from detection
annotations, samples object layouts from it, and exports condition bundles
(iso-spacing instance map, structured prompt, label manifest).
"""

__version__ = "0.1.0"

from .dataset import DatasetSummary, InstanceAnnotation, load_json_labels, load_voc_xml
from .density import (
    Categorical,
    EmpiricalDensity1D,
    EmpiricalDensity2D,
    fit_1d,
    fit_2d,
    sample_1d,
    sample_2d,
    sample_categorical,
)
from .scdkg import ClassGeometry, FitConfig, Scdkg, fit_scdkg, load_scdkg, save_scdkg
from .sampler import Layout, LayoutObject, SamplerConfig, sample_batch, sample_layout, split_seed
from .isim import IsimRaster, decode_isim, gray_value, render_isim
from .sodi import SodiPrompt, format_sodi, generate_sodi, parse_sodi
from .bundle import Bundle, VerifyReport, export_batch, export_bundle, verify_bundle
from .fidelity import FidelityReport, ablate, evaluate_fidelity

__all__ = [
    "Bundle",
    "Categorical",
    "ClassGeometry",
    "DatasetSummary",
    "EmpiricalDensity1D",
    "EmpiricalDensity2D",
    "FidelityReport",
    "FitConfig",
    "InstanceAnnotation",
    "IsimRaster",
    "Layout",
    "LayoutObject",
    "SamplerConfig",
    "Scdkg",
    "SodiPrompt",
    "VerifyReport",
    "ablate",
    "decode_isim",
    "evaluate_fidelity",
    "export_batch",
    "export_bundle",
    "fit_1d",
    "fit_2d",
    "fit_scdkg",
    "format_sodi",
    "generate_sodi",
    "gray_value",
    "load_json_labels",
    "load_scdkg",
    "load_voc_xml",
    "parse_sodi",
    "render_isim",
    "sample_1d",
    "sample_2d",
    "sample_batch",
    "sample_categorical",
    "sample_layout",
    "save_scdkg",
    "split_seed",
    "verify_bundle",
]
