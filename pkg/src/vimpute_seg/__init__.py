"""Lung-field segmentation with a variational data-imputation branch."""

__version__ = "0.1.0"
