"""Desk-scale chest X-ray pneumonia classification with explainability.

Subpackages/modules:
    tensor    reverse-mode autodiff over dense numpy arrays
    kernels   convolution backends (compiled extension or numpy fallback)
    data      dataset scanning, decoding, preprocessing, augmentation
    models    CNN block families, presets, checkpointing
    training  Adam + early stopping + LR-on-plateau protocol
    metrics   confusion-matrix and curve-based evaluation suite
    gradcam   gradient-weighted class activation maps
    lime      superpixel surrogate explanations
    synthetic planted-blob dataset generator
    cli       command-line entry points
"""

__version__ = "0.1.0"
