"""Criss-cross attention lung-field segmentation on synthetic phantoms.

The heavy lifting lives in the _xlsor C++ extension; this package re-exports
its surface.
"""

try:
    from ._xlsor import *  # noqa: F401,F403  (installed layout)
except ImportError:  # development layout: extension on PYTHONPATH
    from _xlsor import *  # noqa: F401,F403

__all__ = [
    "poly_lr",
    "crisscross_set",
    "attention_cost",
    "make_cca_weights",
    "cca_forward",
    "rcca_forward",
    "nonlocal_forward",
    "influence_map",
    "generate_phantom",
    "synthesize_abnormal",
    "style_names",
    "binarize",
    "evaluate_masks",
    "averaged_hausdorff",
    "evaluate_dataset",
    "gradcheck",
    "Segmentor",
    "train_segmentor",
]
