"""Command-line interface: ``gyronn {check,train,eval,gradcheck,bench}``.

Exit codes are 0 on success, 1 on runtime failures (missing data, numerical
errors, failed checks) and 2 on usage or configuration errors.

Seeds
-----
One root seed (``seed=`` in the config, overridden by ``--seed``) drives
everything.  A component named ``name`` receives the integer seed
``derive_seed(root, name)``, the first draw of
``numpy.random.default_rng([root, crc32(name)])``.  Components are
``"model"`` (initialization and minibatch order) and ``"split"`` (the
train/test split of loaded data).  Synthetic datasets keep their own
``data_seed`` so that a dataset stays fixed while the model seed varies.

Outputs of ``train``
--------------------
``<out-dir>/metrics.csv``
    ``epoch,split,loss,accuracy`` rows, byte-identical across repeated runs.
``<out-dir>/timing.csv``
    Wall-clock seconds, kept apart from the metrics.
``<out-dir>/checkpoint/``
    Parameters and a manifest that records the resolved config.

Nothing is written when data loading or training fails.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
import time
import traceback
import zlib

import numpy as np

from . import checks, data
from .exceptions import ConfigError
from .io import load_checkpoint, read_config, save_checkpoint, write_metrics
from .nn.models import GrassmannGCNClassifier, GyroSpdClassifier, GyroSpsdClassifier

__all__ = ["main", "derive_seed", "resolve_config", "PRESETS", "SCHEMA"]

MODELS = ("spd", "spsd", "gr-gcn", "gr-gcn-onb")

# key -> (parser, default, models using it); None default means required or unset
SCHEMA: dict = {
    "model": (str, None, MODELS),
    "seed": (int, 0, MODELS),
    "lr": (float, None, MODELS),
    "epochs": (int, None, MODELS),
    "data": (str, "synthetic", MODELS),
    "data_seed": (int, None, MODELS),
    # SPD pipelines
    "conv_metric": (str, "ai", ("spd", "spsd")),
    "mlr_metric": (str, "le", ("spd",)),
    "spd_metric": (str, "ai", ("spsd",)),
    "beta": (float, 0.0, ("spd", "spsd")),
    "lam": (float, 1.0, ("spsd",)),
    "gamma": (float, 0.1, ("spsd",)),
    "m": (int, 6, ("spd", "spsd")),
    "p": (int, 3, MODELS[1:]),
    "window": (int, 1, ("spd", "spsd")),
    "stride": (int, 1, ("spd", "spsd")),
    "batch_size": (int, 32, ("spd", "spsd")),
    "subspace_offset": (float, 2.0, ("spsd",)),
    "classes": (int, 3, ("spd", "spsd", "gr-gcn", "gr-gcn-onb")),
    "per_class": (int, 100, ("spd", "spsd")),
    "n": (int, None, MODELS),
    "sigma": (float, 0.1, ("spd", "spsd")),
    "n_train": (int, 200, ("spd", "spsd")),
    "sequences": (str, None, ("spd", "spsd")),
    # graph models
    "n_layers": (int, 2, ("gr-gcn", "gr-gcn-onb")),
    "patience": (int, 200, ("gr-gcn", "gr-gcn-onb")),
    "embed_std": (float, 0.05, ("gr-gcn", "gr-gcn-onb")),
    "nodes": (int, 100, ("gr-gcn", "gr-gcn-onb")),
    "p_in": (float, 0.3, ("gr-gcn", "gr-gcn-onb")),
    "p_out": (float, 0.02, ("gr-gcn", "gr-gcn-onb")),
    "edges": (str, None, ("gr-gcn", "gr-gcn-onb")),
    "features": (str, None, ("gr-gcn", "gr-gcn-onb")),
    "labels": (str, None, ("gr-gcn", "gr-gcn-onb")),
}

_MODEL_DEFAULTS = {
    "spd": {"lr": 1e-3, "epochs": 300, "n": 8, "data_seed": 42},
    "spsd": {"lr": 1e-3, "epochs": 300, "n": 8, "data_seed": 42},
    "gr-gcn": {"lr": 1e-2, "epochs": 500, "n": 6, "data_seed": 7},
    "gr-gcn-onb": {"lr": 1e-2, "epochs": 500, "n": 6, "data_seed": 7},
}

PRESETS: dict = {
    "spd": "model=spd\nconv_metric=ai\nmlr_metric=le\nm=6\nlr=1e-3\nepochs=300\n"
           "data=synthetic\nclasses=3\nper_class=100\nn=8\nsigma=0.1\nn_train=200\n"
           "data_seed=42\nseed=0\n",
    "spsd": "model=spsd\nconv_metric=ai\nspd_metric=ai\nm=6\np=3\nlam=1.0\ngamma=0.1\n"
            "lr=1e-3\nepochs=300\ndata=synthetic\nclasses=3\nper_class=100\nn=8\n"
            "sigma=0.1\nn_train=200\ndata_seed=42\nseed=0\n",
    "gr-gcn": "model=gr-gcn\nn=6\np=3\nn_layers=2\nlr=1e-2\nepochs=500\npatience=200\n"
              "data=synthetic\nnodes=100\nclasses=3\np_in=0.3\np_out=0.02\ndata_seed=7\n"
              "seed=0\n",
    "gr-gcn-onb": "model=gr-gcn-onb\nn=6\np=3\nn_layers=2\nlr=1e-2\nepochs=500\n"
                  "patience=200\ndata=synthetic\nnodes=100\nclasses=3\np_in=0.3\n"
                  "p_out=0.02\ndata_seed=7\nseed=0\n",
}


def derive_seed(root: int, name: str) -> int:
    """Integer seed of component ``name`` under the root seed ``root``."""
    rng = np.random.default_rng([int(root), zlib.crc32(name.encode("utf-8"))])
    return int(rng.integers(2**31 - 1))


class _Usage(Exception):
    """Configuration problem reported with exit code 2."""


def _read_raw_config(spec: str) -> dict:
    if spec.startswith("preset:"):
        name = spec.split(":", 1)[1]
        if name not in PRESETS:
            raise _Usage(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
        out = {}
        for line in PRESETS[name].splitlines():
            k, v = line.split("=", 1)
            out[k] = v
        return out
    if not os.path.isfile(spec):
        raise _Usage(f"config file not found: {spec}")
    try:
        return read_config(spec)
    except ConfigError as e:
        raise _Usage(str(e))


def resolve_config(raw: dict, seed: int | None = None) -> dict:
    """Validate ``key=value`` strings against the per-model schema and fill defaults.

    Raises
    ------
    ConfigError
        On unknown keys, keys not used by the model, unparsable values or
        missing data paths in the config.
    """
    model = raw.get("model")
    if model not in MODELS:
        raise ConfigError(f"model must be one of {', '.join(MODELS)}, got {model!r}")
    cfg = {}
    for key, text in raw.items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        typ, _, used = SCHEMA[key]
        if model not in used:
            raise ConfigError(f"key {key!r} does not apply to model {model!r}")
        try:
            cfg[key] = typ(text)
        except ValueError:
            raise ConfigError(f"{key}={text!r} is not a valid {typ.__name__}")
    for key, (_, default, used) in SCHEMA.items():
        if model in used and key not in cfg:
            value = _MODEL_DEFAULTS[model].get(key, default)
            if value is not None:
                cfg[key] = value
    if seed is not None:
        cfg["seed"] = int(seed)
    if cfg["data"] not in ("synthetic", "files"):
        raise ConfigError(f"data must be 'synthetic' or 'files', got {cfg['data']!r}")
    if cfg["data"] == "files":
        need = ("sequences",) if model in ("spd", "spsd") else ("edges", "features", "labels")
        for k in need:
            if k not in cfg:
                raise ConfigError(f"data=files needs {k}=<path>")
    if cfg["epochs"] < 0 or cfg["lr"] <= 0:
        raise ConfigError("need epochs >= 0 and lr > 0")
    if model in ("spd", "spsd") and cfg["mlr_metric" if model == "spd" else "spd_metric"] \
            not in ("ai", "le", "lc"):
        raise ConfigError("SPD metric tags are ai, le or lc")
    if model in ("spd", "spsd") and cfg["conv_metric"] not in ("ai", "le", "lc"):
        raise ConfigError("SPD metric tags are ai, le or lc")
    return cfg


# data and models

def _load_data(cfg: dict):
    """Return ``(train, test, extra)`` for the configured model."""
    model = cfg["model"]
    if model in ("spd", "spsd"):
        if cfg["data"] == "synthetic":
            X, y = data.synth_spd_classes(cfg["classes"], cfg["per_class"], cfg["n"],
                                          cfg["sigma"], seed=cfg["data_seed"])
        else:
            X, y = data.load_sequences(cfg["sequences"])
        tr, te = data.train_test_split_stratified(y, min(cfg["n_train"], len(y) - 1),
                                                  seed=derive_seed(cfg["seed"], "split"))
        return (X[tr], y[tr]), (X[te], y[te])
    if cfg["data"] == "synthetic":
        g = data.synth_sbm_graph(cfg["nodes"], cfg["classes"], cfg["p_in"], cfg["p_out"],
                                 seed=cfg["data_seed"])
    else:
        g = data.load_graph(cfg["edges"], cfg["features"], cfg["labels"],
                            seed=derive_seed(cfg["seed"], "split"))
    return g, g


def _check_paths(cfg: dict) -> None:
    if cfg["data"] != "files":
        return
    keys = ("sequences",) if cfg["model"] in ("spd", "spsd") else ("edges", "features", "labels")
    for k in keys:
        if not os.path.exists(cfg[k]):
            raise FileNotFoundError(f"{k} path not found: {cfg[k]}")


def _make_model(cfg: dict):
    model, seed = cfg["model"], derive_seed(cfg["seed"], "model")
    if model == "spd":
        return GyroSpdClassifier(conv_metric=cfg["conv_metric"], mlr_metric=cfg["mlr_metric"],
                                 beta=cfg["beta"], m=cfg["m"], window=cfg["window"],
                                 stride=cfg["stride"], lr=cfg["lr"], epochs=cfg["epochs"],
                                 batch_size=cfg["batch_size"], seed=seed)
    if model == "spsd":
        return GyroSpsdClassifier(conv_metric=cfg["conv_metric"], spd_metric=cfg["spd_metric"],
                                  beta=cfg["beta"], m=cfg["m"], p=cfg["p"], lam=cfg["lam"],
                                  gamma=cfg["gamma"], subspace_offset=cfg["subspace_offset"],
                                  window=cfg["window"], stride=cfg["stride"], lr=cfg["lr"],
                                  epochs=cfg["epochs"], batch_size=cfg["batch_size"], seed=seed)
    return GrassmannGCNClassifier(perspective="onb" if model == "gr-gcn-onb" else "projector",
                                  n=cfg["n"], p=cfg["p"], n_layers=cfg["n_layers"], lr=cfg["lr"],
                                  epochs=cfg["epochs"], patience=cfg["patience"],
                                  embed_std=cfg["embed_std"], seed=seed)


def _test_accuracy(est, cfg, test) -> float:
    if cfg["model"] in ("spd", "spsd"):
        return float(est.score(*test))
    return est.score(test, split="test")


# subcommands

def _cmd_check(args) -> int:
    results = checks.run_suite(args.suite, seed=args.seed, n_samples=args.samples)
    width = max(len(f"{r.suite}/{r.name}") for r in results)
    for r in results:
        flag = "PASS" if r.passed else "FAIL"
        print(f"{flag}  {r.suite + '/' + r.name:<{width}}  residual={r.residual:.3e}  "
              f"tol={r.tol:.1e}")
    n_pass = sum(r.passed for r in results)
    print(f"{n_pass}/{len(results)} properties passed")
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        path = os.path.join(args.out_dir, f"check_{args.suite}.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["suite", "name", "residual", "tol", "passed"])
            for r in results:
                w.writerow([r.suite, r.name, repr(r.residual), repr(r.tol), int(r.passed)])
    return 0 if n_pass == len(results) else 1


def _cmd_train(args) -> int:
    cfg = resolve_config(_read_raw_config(args.config), args.seed)
    _check_paths(cfg)
    train, test = _load_data(cfg)
    est = _make_model(cfg)
    t0 = time.perf_counter()
    if cfg["model"] in ("spd", "spsd"):
        est.fit(*train, eval_set=[("test", *test)])
    else:
        est.fit(train)
    seconds = time.perf_counter() - t0
    acc = _test_accuracy(est, cfg, test)
    out = args.out_dir
    os.makedirs(out, exist_ok=True)
    write_metrics(os.path.join(out, "metrics.csv"), est.history_)
    with open(os.path.join(out, "timing.csv"), "w", encoding="utf-8") as fh:
        fh.write(f"phase,seconds\nfit,{seconds!r}\n")
    manifest = {f"config.{k}": v for k, v in cfg.items()}
    manifest["classes"] = ",".join(str(c) for c in est.classes_)
    if cfg["model"] in ("spd", "spsd"):
        X = np.asarray(train[0])
        manifest["input_n"], manifest["input_T"] = X.shape[-1], (X.shape[1] if X.ndim == 4 else 1)
        manifest["epochs_run"] = est.n_epochs_
    else:
        manifest["input_d"] = train.features.shape[1]
        manifest["best_epoch"] = est.best_epoch_
    save_checkpoint(os.path.join(out, "checkpoint"), est.checkpoint_params(), manifest)
    print(f"test accuracy: {acc:.4f}")
    return 0


def _cmd_eval(args) -> int:
    cfg = resolve_config(_read_raw_config(args.config), args.seed)
    ckpt = os.path.join(args.out_dir, "checkpoint")
    params, manifest = load_checkpoint(ckpt)
    _check_paths(cfg)
    _, test = _load_data(cfg)
    est = _make_model(cfg)
    classes = np.array([int(c) for c in manifest["classes"].split(",")])
    if cfg["model"] in ("spd", "spsd"):
        est.restore(params, classes, int(manifest["input_n"]), int(manifest["input_T"]))
    else:
        est.restore(params, classes, int(manifest["input_d"]))
    print(f"test accuracy: {_test_accuracy(est, cfg, test):.4f}")
    return 0


def _cmd_gradcheck(args) -> int:
    err = checks.run_gradcheck(args.target, seed=args.seed)
    ok = err < 1e-3
    print(f"{args.target}: max relative error {err:.3e} ({'PASS' if ok else 'FAIL'})")
    return 0 if ok else 1


def _cmd_bench(args) -> int:
    from . import grassmann as gr
    from . import spd
    rng = checks.derive_rng(args.seed, "bench")
    X = spd.random_spd(rng, 8, (256,), scale=0.5)
    Y = spd.random_spd(rng, 8, (256,), scale=0.5)
    U, V = checks.random_subspace_pair(rng, 8, 3, 1.2, 256)
    P, W = checks.identity_fc_params("ai", 8)
    cases = [(f"spd_add_{m}", lambda m=m: spd.spd_add(m, X, Y)) for m in ("ai", "le", "lc")]
    cases += [("spd_fc_ai_8x8", lambda: spd.spd_fc_forward("ai", X, P, W)),
              ("gr_log_onb", lambda: gr.gr_log_onb(U, V)),
              ("gr_log_projector", lambda: gr.gr_log_projector(gr.tau(U), gr.tau(V)))]
    rows = []
    for name, fn in cases:
        fn()
        t0 = time.perf_counter()
        reps = 5
        for _ in range(reps):
            fn()
        ms = (time.perf_counter() - t0) / reps * 1e3
        rows.append((name, ms))
        print(f"{name:<20} {ms:9.3f} ms / batch of 256")
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        with open(os.path.join(args.out_dir, "bench.csv"), "w", encoding="utf-8") as fh:
            fh.write("case,ms_per_batch\n")
            fh.writelines(f"{n},{ms!r}\n" for n, ms in rows)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gyronn", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="run property suites")
    p.add_argument("--suite", default="all", choices=["all", *checks.SUITES])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=100, help="batch size per property")
    p.add_argument("--out-dir", default=None, help="also write check_<suite>.csv here")
    p.set_defaults(func=_cmd_check)

    for name, func, hlp in (("train", _cmd_train, "train a model from a config"),
                            ("eval", _cmd_eval, "evaluate a saved checkpoint")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("--config", required=True,
                       help="key=value config file or preset:<name> "
                            f"({', '.join(PRESETS)})")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out-dir", default="runs/latest")
        p.set_defaults(func=func)

    p = sub.add_parser("gradcheck", help="finite-difference check of a layer")
    p.add_argument("target", choices=list(checks.GRADCHECK_TARGETS))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("bench", help="time core operations")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=_cmd_bench)
    return parser


def _where(exc: BaseException) -> str:
    """Innermost package module in the traceback of ``exc``."""
    pkg = os.path.dirname(os.path.abspath(__file__))
    mod = __name__.rsplit(".", 1)[0]
    for frame in reversed(traceback.extract_tb(exc.__traceback__)):
        path = os.path.abspath(frame.filename)
        if path.startswith(pkg):
            rel = os.path.splitext(os.path.relpath(path, pkg))[0].replace(os.sep, ".")
            return f"{mod}.{rel}"
    return mod


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (_Usage, ConfigError) as e:
        print(f"gyronn: config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        print(f"gyronn: error in {_where(e)}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
