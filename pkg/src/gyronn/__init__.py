"""Gyrovector-space neural network building blocks on matrix manifolds.

Subpackages and modules
-----------------------
linalg, autodiff
    Batched matrix functions and a reverse-mode tape.
spd, grassmann, spsd
    Gyro operations, hypergyroplanes and distances on SPD matrices, the
    Grassmannian and SPSD structure spaces.
nn
    Layers, losses, optimizers and estimators.
data, io
    Input pipelines, synthetic datasets and file formats.
checks, cli
    Property suites and the ``gyronn`` command.
"""
from . import exceptions, grassmann, io, linalg, spd, spsd, validation
from . import data, nn
from .autodiff import Tensor, grad, gradcheck
from .nn import GrassmannGCNClassifier, GyroSpdClassifier, GyroSpsdClassifier

__version__ = "0.1.0"

__all__ = ["Tensor", "grad", "gradcheck", "linalg", "exceptions", "validation", "spd",
           "grassmann", "spsd", "nn", "data", "io", "GyroSpdClassifier", "GyroSpsdClassifier",
           "GrassmannGCNClassifier"]
