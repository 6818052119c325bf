"""Siamese acquisition-invariant patch features for MRI tissue classification."""

from ._mrai import (
    FormatError,
    PatchList,
    Scanner,
    Tissue,
    TissueExhaustedError,
    count_pairs_paper,
    count_pairs_unordered,
    cross_val_error,
    curve_csv,
    default_config,
    generate_phantom,
    l1_distance,
    proxy_a_distance,
    proxy_a_distance_from_error,
    run_cell,
    sample_pairs,
    siamese_loss,
    siamese_loss_grad,
    signal,
    simulate_patches,
    svm_fit_predict,
)

__all__ = [name for name in dir() if not name.startswith("_")]
