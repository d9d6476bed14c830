"""Command-line entry point: dataset I/O, run configuration, and dispatch.

Subcommands: ``synth-images``, ``synth-cat``, ``gibbs``, ``vi``, ``analyze``.
Every run reads a JSON config, writes its outputs plus a ``manifest.json``
listing them and a ``run_record.json`` with the full config, seed, package
version, and wall-clock time.  Exit codes: 0 success, 1 usage or config
error, 2 runtime failure.

Dataset CSV format: a header line ``R:<r1>,<r2>,...`` declaring the
per-dimension cardinalities, then one comma-separated line of 1-based
categories per observation.  Missing data is NOT supported; the model has
no missingness mechanism, so every cell must hold a category.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import emit_reports
from .core import Hyperparams, LatentFeatureState, ObservationMatrix, WeightStack
from .gibbs import GibbsConfig, load_z_csv, run_chain, save_trace_csv, save_z_csv
from .laplace import fit_weights
from .synthgen import DEFAULT_BASE_IMAGES, ImageGenConfig, generate_categorical, generate_images
from .vi import VISchedule, binarize, run_vi, save_state

log = logging.getLogger("ibpcat")


class ConfigError(ValueError):
    """Invalid or missing configuration values."""


class DatasetError(ValueError):
    """Malformed dataset file; messages carry line numbers."""


def load_dataset(path) -> ObservationMatrix:
    """Parse the dataset CSV, validating every entry against its cardinality."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("R:"):
        raise DatasetError(f"{path}:1: expected a header line 'R:<r1>,<r2>,...'")
    try:
        cards = [int(tok) for tok in lines[0][2:].split(",")]
    except ValueError as exc:
        raise DatasetError(f"{path}:1: unparseable cardinality header: {exc}") from exc
    if any(c < 2 for c in cards):
        raise DatasetError(f"{path}:1: cardinalities must be >= 2")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        toks = line.split(",")
        if len(toks) != len(cards):
            raise DatasetError(
                f"{path}:{lineno}: expected {len(cards)} columns, found {len(toks)}"
            )
        try:
            row = [int(t) for t in toks]
        except ValueError as exc:
            raise DatasetError(f"{path}:{lineno}: non-integer entry: {exc}") from exc
        for col, (value, card) in enumerate(zip(row, cards), start=1):
            if not 1 <= value <= card:
                raise DatasetError(
                    f"{path}:{lineno}: column {col} holds {value}, outside 1..{card}"
                )
        rows.append(row)
    if not rows:
        raise DatasetError(f"{path}: dataset holds no observation rows")
    return ObservationMatrix(np.array(rows, dtype=np.int64), cards)


def save_dataset(X: ObservationMatrix, path):
    with open(path, "w") as fh:
        fh.write("R:" + ",".join(str(int(c)) for c in X.cardinalities) + "\n")
        for row in X.data:
            fh.write(",".join(str(int(v)) for v in row) + "\n")


def save_weights_json(weights: WeightStack, path):
    payload = {
        "format_version": 1,
        "matrices": [{"shape": list(m.shape), "data": m.ravel().tolist()} for m in weights.mats],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_weights_json(path) -> WeightStack:
    with open(path) as fh:
        payload = json.load(fh)
    return WeightStack(
        [np.array(m["data"], dtype=float).reshape(m["shape"]) for m in payload["matrices"]]
    )


# -- config plumbing ---------------------------------------------------------


def _expect(cond, message):
    if not cond:
        raise ConfigError(message)


def _field(cfg, key, types, default=None, required=False):
    if key not in cfg:
        _expect(not required, f"config is missing required field '{key}'")
        return default
    value = cfg[key]
    _expect(isinstance(value, types), f"config field '{key}' has the wrong type")
    return value


def load_config(path, seed_override=None) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    _expect(isinstance(cfg, dict), "config root must be a JSON object")
    if seed_override is not None:
        cfg["seed"] = seed_override
    _field(cfg, "seed", int, required=True)
    _field(cfg, "alpha", (int, float), default=1.0)
    _field(cfg, "sigma_b_sq", (int, float), default=1.0)
    return cfg


def _hyper(cfg) -> Hyperparams:
    return Hyperparams(
        alpha=float(cfg.get("alpha", 1.0)),
        sigma_b_sq=float(cfg.get("sigma_b_sq", 1.0)),
        seed=int(cfg["seed"]),
    )


class RunWriter:
    """Collects output paths and finalizes the manifest and run record."""

    def __init__(self, out_dir, command, cfg):
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.cfg = cfg
        self.files = []
        self.started = time.time()

    def path(self, name) -> Path:
        self.files.append(name)
        return self.out / name

    def finalize(self, extra=None):
        manifest = {"command": self.command, "files": sorted(set(self.files))}
        if extra:
            manifest.update(extra)
        with open(self.out / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2)
        record = {
            "command": self.command,
            "config": self.cfg,
            "seed": self.cfg.get("seed"),
            "artifact_version": __version__,
            "wall_clock_seconds": time.time() - self.started,
        }
        with open(self.out / "run_record.json", "w") as fh:
            json.dump(record, fh, indent=2)


# -- subcommands ---------------------------------------------------------------


def _cmd_synth_images(cfg, writer):
    section = cfg.get("images", {})
    _expect(isinstance(section, dict), "'images' section must be an object")
    bases = section.get("base_images")
    if bases is not None:
        bases = tuple(np.array(b, dtype=bool) for b in bases)
    else:
        bases = DEFAULT_BASE_IMAGES
    gen = ImageGenConfig(
        n_samples=int(_field(section, "n_samples", int, default=200)),
        base_images=bases,
        presence_prob=float(_field(section, "presence_prob", (int, float), default=0.3)),
        noise_flip_prob=float(_field(section, "noise_flip_prob", (int, float), default=0.5)),
        seed=int(cfg["seed"]),
    )
    X, true_z = generate_images(gen)
    save_dataset(X, writer.path("dataset.csv"))
    save_z_csv(LatentFeatureState(true_z), writer.path("true_z.csv"))
    writer.finalize({"n_samples": X.n_rows, "n_dims": X.n_cols})


def _cmd_synth_cat(cfg, writer):
    section = cfg.get("categorical", {})
    _expect(isinstance(section, dict), "'categorical' section must be an object")
    n_rows = _field(section, "n_rows", int, required=True)
    n_cols = _field(section, "n_cols", int, required=True)
    k_true = _field(section, "k_true", int, required=True)
    cards = section.get("cardinality", 2)
    p_active = section.get("p_active", 0.3)
    hyper = _hyper(cfg)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(hyper.seed)))
    X, true_z, weights = generate_categorical(n_rows, n_cols, k_true, cards, hyper, rng,
                                              p_active=p_active)
    save_dataset(X, writer.path("dataset.csv"))
    save_z_csv(LatentFeatureState(true_z), writer.path("true_z.csv"))
    save_weights_json(weights, writer.path("true_weights.json"))
    writer.finalize({"n_samples": n_rows, "n_dims": n_cols, "k_true": k_true})


def _gibbs_config(cfg) -> GibbsConfig:
    section = cfg.get("gibbs", {})
    _expect(isinstance(section, dict), "'gibbs' section must be an object")
    baseline = section.get("baseline_categories", 1)
    if isinstance(baseline, list):
        baseline = tuple(baseline)
    return GibbsConfig(
        n_iterations=int(_field(section, "n_iterations", int, required=True)),
        hyper=_hyper(cfg),
        burn_in=int(_field(section, "burn_in", int, default=0)),
        k_init=int(_field(section, "k_init", int, default=2)),
        p_init=float(_field(section, "p_init", (int, float), default=0.5)),
        max_new_features_per_step=int(
            _field(section, "max_new_features_per_step", int, default=4)
        ),
        skip_all_baseline_rows=bool(section.get("skip_all_baseline_rows", False)),
        baseline_categories=baseline,
        k_max=section.get("k_max"),
        freeze_columns=bool(section.get("freeze_columns", False)),
        fixed_rows=tuple(section.get("fixed_rows", ())),
        memoize_states=bool(section.get("memoize_states", False)),
    )


def _cmd_gibbs(cfg, writer, threads):
    _expect("dataset" in cfg, "config is missing required field 'dataset'")
    X = load_dataset(cfg["dataset"])
    config = _gibbs_config(cfg)
    trace = run_chain(X, config)
    save_trace_csv(trace, writer.path("trace.csv"))
    save_z_csv(trace.final_state, writer.path("z_final.csv"))
    weights, marginals = fit_weights(X, trace.final_state, config.hyper, n_threads=threads)
    save_weights_json(weights, writer.path("b_map.json"))
    writer.finalize({
        "k_active_final": trace.final_state.k_active,
        "log_marginal_final": trace.log_marginal[-1],
    })


def _cmd_vi(cfg, writer, threads):
    _expect("dataset" in cfg, "config is missing required field 'dataset'")
    X = load_dataset(cfg["dataset"])
    section = cfg.get("vi", {})
    _expect(isinstance(section, dict), "'vi' section must be an object")
    k = int(_field(section, "k", int, required=True))
    schedule = VISchedule(
        max_cycles=int(_field(section, "max_cycles", int, default=200)),
        rel_tol=float(_field(section, "rel_tol", (int, float), default=1e-8)),
    )
    hyper = _hyper(cfg)
    init = None
    warm = section.get("warm_start_dir")
    if warm:
        from .vi import warm_start_from_gibbs

        z = load_z_csv(Path(warm) / "z_final.csv")
        weights = load_weights_json(Path(warm) / "b_map.json")
        init = warm_start_from_gibbs(X, k, hyper, z, weights)
    state, bounds = run_vi(X, k, hyper, init=init, schedule=schedule)
    with open(writer.path("bound_trace.csv"), "w") as fh:
        fh.write("cycle,bound\n")
        for i, b in enumerate(bounds):
            fh.write(f"{i},{format(b, '.12g')}\n")
    save_state(state, writer.path("state.json"))
    save_z_csv(LatentFeatureState(binarize(state.nu)), writer.path("z_binarized.csv"))
    writer.finalize({"k_truncation": k, "n_cycles": len(bounds), "final_bound": bounds[-1]})


def _cmd_analyze(cfg, writer, threads):
    _expect("dataset" in cfg, "config is missing required field 'dataset'")
    X = load_dataset(cfg["dataset"])
    section = cfg.get("analysis", {})
    _expect(isinstance(section, dict), "'analysis' section must be an object")
    run_dir = _field(section, "run_dir", str, required=True)
    z = load_z_csv(Path(run_dir) / "z_final.csv")
    weights_path = Path(run_dir) / "b_map.json"
    weights = load_weights_json(weights_path) if weights_path.exists() else None
    manifest = emit_reports(
        writer.out,
        X,
        z,
        weights,
        _hyper(cfg),
        target_categories=section.get("target_categories"),
        top_m=int(section.get("top_m", 20)),
        flip_threshold=section.get("flip_threshold"),
    )
    writer.files.extend(manifest["files"])
    writer.finalize({
        "flipped_features": manifest["flipped_features"],
        "weights_refit": manifest["weights_refit"],
    })


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ibpcat",
        description="Latent-feature inference for categorical data (IBP + multinomial logit)",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("synth-images", "generate the composite binary-image benchmark"),
        ("synth-cat", "generate planted-feature categorical data"),
        ("gibbs", "run the collapsed Gibbs sampler"),
        ("vi", "run truncated variational inference"),
        ("analyze", "emit report tables for a finished run"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=1, help="worker thread cap")
    return parser


_HANDLERS = {
    "synth-images": lambda cfg, writer, threads: _cmd_synth_images(cfg, writer),
    "synth-cat": lambda cfg, writer, threads: _cmd_synth_cat(cfg, writer),
    "gibbs": _cmd_gibbs,
    "vi": _cmd_vi,
    "analyze": _cmd_analyze,
}


def dispatch(argv) -> int:
    logging.basicConfig(level=os.environ.get("IBPCAT_LOG", "WARNING").upper())
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        cfg = load_config(args.config, seed_override=args.seed)
    except (ConfigError, FileNotFoundError) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    writer = RunWriter(args.out, args.command, cfg)
    try:
        _HANDLERS[args.command](cfg, writer, args.threads)
    except (ConfigError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        log.exception("run failed")
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
