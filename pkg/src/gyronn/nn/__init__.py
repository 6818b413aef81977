"""Trainable layers, heads, losses, optimizer and reference models."""
from .layers import (GcnEmbed, GcnHead, GcnLayer, SkewBParam, SpdConv, SpdFC, SpdMLR, SpsdMLR,
                     SymParam, normalized_adjacency)
from .losses import cross_entropy, softmax
from .models import (GrassmannGCNClassifier, GyroSpdClassifier, GyroSpsdClassifier,
                     flatten_params, unflatten_params)
from .optim import Adam, adam_step

__all__ = ["GcnEmbed", "GcnHead", "GcnLayer", "SkewBParam", "SpdConv", "SpdFC", "SpdMLR",
           "SpsdMLR", "SymParam", "normalized_adjacency", "cross_entropy", "softmax",
           "GrassmannGCNClassifier", "GyroSpdClassifier", "GyroSpsdClassifier",
           "flatten_params", "unflatten_params", "Adam", "adam_step"]
