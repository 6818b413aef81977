"""Configuration files, checkpoints and metric streams.

Config
    Flat ``key=value`` lines; ``#`` starts a comment, blank lines are
    ignored.
Checkpoint
    Directory holding ``manifest.txt`` (``key=value`` lines) and one CSV per
    parameter array named ``<param>.csv``.  Arrays are stored as 2-D
    matrices of shape ``(prod(shape[:-1]), shape[-1])``; the manifest keeps
    the original shape under ``shape.<param>``.
Metrics
    CSV with header ``epoch,split,loss,accuracy``; floats use ``repr``
    formatting so that repeated runs produce identical bytes.
"""
from __future__ import annotations

import csv
import os

import numpy as np

from .exceptions import ConfigError, ParseError
from .linalg import read_matrix_csv, write_matrix_csv

__all__ = ["read_config", "write_config", "save_checkpoint", "load_checkpoint",
           "write_metrics", "read_metrics"]


def read_config(path) -> dict:
    """Parse a ``key=value`` config file into a dict of strings.

    Raises
    ------
    ConfigError
        On lines without ``=``, empty keys or repeated keys.
    """
    out: dict = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = (t.strip() for t in line.split("=", 1))
            if not key:
                raise ConfigError(f"{path}:{lineno}: empty key")
            if key in out:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            out[key] = value
    return out


def write_config(path, cfg: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in cfg.items():
            fh.write(f"{k}={v}\n")


def save_checkpoint(directory, params: dict, manifest: dict | None = None) -> None:
    """Write parameter arrays and a manifest to ``directory``.

    Parameters
    ----------
    directory : str
    params : dict of str -> ndarray
        Flat parameter dictionary; keys may contain dots.
    manifest : dict, optional
        Extra ``key=value`` metadata (model kind, hyperparameters, ...).
    """
    os.makedirs(directory, exist_ok=True)
    lines = dict(manifest or {})
    lines["params"] = ",".join(params)
    for name, arr in params.items():
        arr = np.asarray(arr, dtype=float)
        lines[f"shape.{name}"] = ",".join(str(s) for s in arr.shape)
        mat = arr.reshape(1, 1) if arr.ndim == 0 else arr.reshape(-1, arr.shape[-1])
        write_matrix_csv(os.path.join(directory, f"{name}.csv"), mat)
    write_config(os.path.join(directory, "manifest.txt"), lines)


def load_checkpoint(directory):
    """Read a checkpoint written by :func:`save_checkpoint`.

    Returns
    -------
    params : dict of str -> ndarray
    manifest : dict of str -> str
    """
    path = os.path.join(directory, "manifest.txt")
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no manifest.txt in {directory}")
    manifest = read_config(path)
    names = [n for n in manifest.pop("params", "").split(",") if n]
    params = {}
    for name in names:
        key = f"shape.{name}"
        if key not in manifest:
            raise ParseError(f"{path}: missing {key}", line=0)
        shape = tuple(int(s) for s in manifest.pop(key).split(",") if s)
        mat = read_matrix_csv(os.path.join(directory, f"{name}.csv"))
        if mat.size != int(np.prod(shape)):
            raise ParseError(f"{name}.csv holds {mat.size} values, expected shape {shape}",
                             line=0)
        params[name] = mat.reshape(shape)
    return params, manifest


def write_metrics(path, records) -> None:
    """Write ``epoch,split,loss,accuracy`` rows."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "split", "loss", "accuracy"])
        for r in records:
            w.writerow([int(r["epoch"]), r["split"], repr(float(r["loss"])),
                        repr(float(r["accuracy"]))])


def read_metrics(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [{"epoch": int(r["epoch"]), "split": r["split"], "loss": float(r["loss"]),
             "accuracy": float(r["accuracy"])} for r in rows]
