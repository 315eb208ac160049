"""Dementia-stage MRI classification pipeline (C++ core)."""

from ._mristage import (
    CommandResult,
    ConfigError,
    DatasetError,
    DatasetManifest,
    NumericError,
    ShapeError,
    Split,
    assign_paper_splits,
    audit,
    audit_leakage,
    classification_report,
    default_config,
    early_stopping,
    evaluate,
    head_parameter_summary,
    load_manifest,
    scan_dataset,
    stratified_split,
    train,
)

CLASS_NAMES = ("MildDemented", "ModerateDemented", "NonDemented", "VeryMildDemented")

__all__ = [name for name in dir() if not name.startswith("_")]
