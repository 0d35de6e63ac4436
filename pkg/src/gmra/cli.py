"""Command-line front end: ``gmra <subcommand> [options]``.

Every subcommand writes into ``--out DIR`` and records its full
configuration in ``DIR/run.json``. All flags may also be given in a JSON
file via ``--config`` (keys are the flag names with dashes replaced by
underscores); flags on the command line win. Output files contain no
timestamps, so rerunning a command reproduces them byte for byte.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure. The environment variable ``GMRA_THREADS`` caps the number of BLAS
threads.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import errors
from .datasets import GeneratorSpec, KINDS, PointCloud, generate, load_cloud, save_cloud
from .genmodel import fit_scale_model, hausdorff, sample
from .io import load_coefficients, load_model, save_coefficients, save_model
from .model import DimensionPolicy, construct_gmra, project_to_scale, scale_stats
from .oos import expand_oos_batch
from .ortho import (OrthoGmraModel, construct_ortho, ortho_fgwt_batch, ortho_igwt_batch,
                    ortho_scale_errors)
from .pruning import (forest_encode, gmra_cost, ortho_cost, prune, rms_error, svd_baseline)
from .transforms import (fgwt_batch, igwt_batch, scale_magnitudes, threshold_blocks,
                         threshold_coefficients)
from .tree import StoppingRule, build_tree

ENV_THREADS = "GMRA_THREADS"
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

DATA_ERRORS = (errors.ParseError, errors.DimMismatch, errors.ModelMismatch, errors.EmptyInput,
               errors.EmptyCell, errors.NodeNotFound, errors.NotApplicable,
               errors.DimensionExceedsCell, FileNotFoundError, IsADirectoryError)
NUMERIC_ERRORS = (np.linalg.LinAlgError, FloatingPointError, errors.AsymmetricInput,
                  errors.CostModelViolation)


# -- parsing helpers ---------------------------------------------------------

def parse_policy(text: str | None) -> DimensionPolicy | None:
    """``fixed:D``, ``relative[:EPS]`` or ``absolute:EPS``."""
    if text is None:
        return None
    kind, _, value = text.partition(":")
    try:
        if kind == "fixed":
            return DimensionPolicy.fixed(int(value))
        if kind == "relative":
            return DimensionPolicy.relative(float(value) if value else None)
        if kind == "absolute":
            return DimensionPolicy.absolute(float(value))
    except ValueError as exc:
        raise errors.ConfigError(f"bad policy {text!r}: {exc}") from None
    raise errors.ConfigError(f"unknown policy {text!r} (use fixed:D, relative[:EPS], absolute:EPS)")


def parse_grid(text: str | None) -> list[float]:
    """``LO:HI:N`` (log-spaced, inclusive) or a comma-separated list."""
    if text is None:
        return []
    try:
        if ":" in text:
            lo, hi, num = text.split(":")
            return [float(v) for v in np.logspace(np.log10(float(lo)), np.log10(float(hi)), int(num))]
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise errors.ConfigError(f"bad grid {text!r} (use LO:HI:N or a,b,c)") from None


def _require(args, *names):
    for name in names:
        if getattr(args, name, None) is None:
            raise errors.ConfigError(f"--{name.replace('_', '-')} is required for '{args.command}'")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _write_json(path: Path, data):
    with open(path, "w") as fh:
        json.dump(data, fh, sort_keys=True, indent=1, default=_fmt)
        fh.write("\n")


def _out_dir(args) -> Path:
    _require(args, "out")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _record_run(out: Path, args, summary: dict | None = None):
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}
    data = {
        "command": args.command,
        "config": config,
        "seed": getattr(args, "seed", None),
        "versions": {"gmra": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
        "threads": os.environ.get(ENV_THREADS),
    }
    if summary:
        data["summary"] = summary
    _write_json(out / "run.json", data)


def _tree_from_args(cloud, args):
    stop = StoppingRule(min_cell_size=args.min_cell_size, max_scale=args.max_scale,
                        homogeneity=args.homogeneity, dim=args.stop_dim)
    return build_tree(cloud, args.method, stop, args.seed,
                      levels_per_scale=args.levels_per_scale,
                      split_component=args.split_component)


def _policy_from_args(args) -> DimensionPolicy:
    policy = parse_policy(args.policy) or DimensionPolicy.fixed(2)
    leaf = parse_policy(args.leaf_policy)
    if leaf is not None:
        policy.leaf = leaf
    return policy


def _load_input(path) -> PointCloud:
    if path is None:
        raise errors.ConfigError("an input cloud is required")
    return load_cloud(path)


# -- subcommands -------------------------------------------------------------

def cmd_gen(args):
    out = _out_dir(args)
    spec = GeneratorSpec(args.kind, args.n, args.D, args.sigma, args.seed, args.dim,
                         args.band_width, args.n_bands, args.alpha, args.embed_seed)
    cloud = generate(spec)
    name = "cloud.bin" if args.format == "binary" else "cloud.csv"
    save_cloud(cloud, out / name, args.format)
    _record_run(out, args, {"file": name, "n": cloud.n, "D": cloud.ambient_dim})


def _build_model(cloud, args):
    tree = _tree_from_args(cloud, args)
    policy = _policy_from_args(args)
    if args.variant == "ortho":
        return construct_ortho(cloud, tree, policy, args.precision or 1e-3, args.ortho_norm)
    return construct_gmra(cloud, tree, policy, args.precision,
                          tangential_corrections=not args.no_tangent,
                          split_shared_wavelets=args.split_shared, strict_dims=args.strict_dims)


def _build_pruned(cloud, args, out):
    tree = _tree_from_args(cloud, args)
    eps = args.precision or 1e-3
    forest = prune(cloud, tree, eps)
    rows = []
    for key, node in forest.nodes.items():
        strategy = node.cost.strategy if node.children else "Leaf"
        perp = "" if node.specific_wavelet is None else node.specific_wavelet.shape[1]
        rows.append((key[0], key[1], node.size, strategy, node.d_eps, node.dim, perp,
                     node.cost.coefficient_cost, node.cost.dictionary_cost))
    _write_csv(out / "pruned_nodes.csv", ["j", "k", "size", "strategy", "d_eps", "dim",
                                          "d_perp", "coefficient_cost", "dictionary_cost"], rows)
    recon, _ = forest_encode(forest, cloud)
    c = forest.cost
    _record_run(out, args, {"roots": len(forest.roots), "leaves": len(forest.leaves()),
                            "coefficient_cost": c.coefficient_cost,
                            "dictionary_cost": c.dictionary_cost,
                            "rms_error": rms_error(cloud.coords, recon),
                            "strategies": forest.strategy_histogram()})


def cmd_build(args):
    out = _out_dir(args)
    cloud = _load_input(args.input)
    if args.variant == "pruned":
        return _build_pruned(cloud, args, out)
    model = _build_model(cloud, args)
    save_model(model, out / "model")
    if isinstance(model, OrthoGmraModel):
        errs = ortho_scale_errors(model, cloud)
        rows = []
        for j in range(model.max_scale + 1):
            at_j = [n for k, n in model.nodes.items() if k[0] == j]
            rows.append((j, len(at_j), float(np.mean([n.dim for n in at_j])),
                         max(n.cum_dim for n in at_j), errs[j]))
        _write_csv(out / "scale_stats.csv", ["scale", "cells", "mean_new_dim", "max_cum_dim",
                                             "error_rms"], rows)
    else:
        stats = scale_stats(model, cloud)
        mags = scale_magnitudes(fgwt_batch(model, cloud.coords))
        rows = [(s["scale"], s["cells"], s["mean_dim"], s["mean_wavelet_dim"],
                 mags.get(s["scale"], 0.0), s["error_abs"], s["error_rel"]) for s in stats]
        _write_csv(out / "scale_stats.csv", ["scale", "cells", "mean_dim", "mean_wavelet_dim",
                                             "mean_coefficient_magnitude", "error_abs",
                                             "error_rel"], rows)
    _record_run(out, args, {"model_id": model.model_id, "finest_scale": model.max_scale,
                            "nodes": len(model.nodes)})


def _transform(model, X):
    if isinstance(model, OrthoGmraModel):
        return ortho_fgwt_batch(model, X)
    return fgwt_batch(model, X)


def _inverse(model, coeffs, max_scale=None):
    if isinstance(model, OrthoGmraModel):
        return ortho_igwt_batch(model, coeffs, max_scale)
    return igwt_batch(model, coeffs, max_scale)


def cmd_transform(args):
    out = _out_dir(args)
    _require(args, "model")
    model = load_model(Path(args.model) / "model")
    cloud = _load_input(args.input)
    coeffs = _transform(model, cloud.coords)
    name = "coefficients.bin" if args.format == "binary" else "coefficients.csv"
    save_coefficients(coeffs, out / name, args.format)
    X = cloud.coords
    recon = _inverse(model, coeffs)
    rows = []
    if not isinstance(model, OrthoGmraModel):
        XJ = project_to_scale(model, X, model.max_scale, [c.leaf for c in coeffs])
        for j in range(model.max_scale + 1):
            R = project_to_scale(model, X, j, [c.leaf for c in coeffs])
            sq = ((X - R) ** 2).sum(axis=1)
            rows.append((j, float(np.sqrt(sq.mean())),
                         float(np.sqrt((sq / np.maximum((X**2).sum(axis=1), 1e-300)).mean()))))
    else:
        errs = ortho_scale_errors(model, X) if X.shape[0] == model.tree.n_points else []
        rows = [(j, e, float("nan")) for j, e in enumerate(errs)]
        XJ = recon
    _write_csv(out / "scale_errors.csv", ["scale", "error_abs", "error_rel"], rows)
    roundtrip = float(np.max(np.linalg.norm(recon - XJ, axis=1) / (1 + np.linalg.norm(X, axis=1))))
    _record_run(out, args, {"points": len(coeffs), "file": name,
                            "max_roundtrip_relative": roundtrip})


def cmd_reconstruct(args):
    out = _out_dir(args)
    _require(args, "model", "coefficients")
    model = load_model(Path(args.model) / "model")
    coeffs = load_coefficients(args.coefficients, model)
    recon = _inverse(model, coeffs, args.max_scale)
    save_cloud(recon, out / "reconstruction.csv")
    summary = {"points": len(coeffs)}
    if args.input is not None:
        X = load_cloud(args.input).coords
        if X.shape != recon.shape:
            raise errors.DimMismatch(f"input shape {X.shape} differs from {recon.shape}")
        summary["rms_error"] = rms_error(X, recon)
        summary["max_error"] = float(np.linalg.norm(X - recon, axis=1).max())
    _record_run(out, args, summary)


def cmd_compress(args):
    out = _out_dir(args)
    _require(args, "model")
    model = load_model(Path(args.model) / "model")
    if isinstance(model, OrthoGmraModel):
        raise errors.ConfigError("compress works on plain GMRA models")
    cloud = _load_input(args.input)
    coeffs = fgwt_batch(model, cloud.coords)
    reference = igwt_batch(model, coeffs)
    rows = []
    for delta in parse_grid(args.deltas):
        kept, report = threshold_coefficients(model, coeffs, delta, args.mode, reference)
        cost = gmra_cost(model, kept)
        rows.append((delta, report.kept, report.total, report.ratio, report.mean_error,
                     report.max_error, cost.coefficient_cost, cost.dictionary_cost))
    _write_csv(out / "threshold_sweep.csv",
               ["delta", "kept", "total", "ratio", "rms_error", "max_error",
                "coefficient_cost", "dictionary_cost"], rows)
    if args.emit_delta is not None:
        kept, report = threshold_coefficients(model, coeffs, args.emit_delta, args.mode, reference)
        save_coefficients(kept, out / "thresholded_coefficients.csv")
        save_cloud(igwt_batch(model, kept), out / "reconstruction.csv")
    _record_run(out, args, {"points": len(coeffs)})


def _threshold_curve(name, model, coeffs, X, deltas, cost_fn, scale):
    rows = []
    for delta in deltas:
        kept, _, _ = threshold_blocks(coeffs, delta)
        err = rms_error(X, _inverse(model, kept))
        cost = cost_fn(model, kept)
        rows.append((name, delta, cost.coefficient_cost, cost.dictionary_cost, cost.total,
                     err, err / scale, ""))
    return rows


def cmd_compare(args):
    out = _out_dir(args)
    cloud = _load_input(args.input)
    X = cloud.coords
    scale = float(np.sqrt(((X - X.mean(axis=0)) ** 2).sum(axis=1).mean())) or 1.0
    tree = _tree_from_args(cloud, args)
    policy = _policy_from_args(args)
    deltas = parse_grid(args.deltas)
    rows = []
    base_eps = args.precision or 1e-3
    gm = construct_gmra(cloud, tree, policy, base_eps, tangential_corrections=False,
                        split_shared_wavelets=True)
    rows += _threshold_curve("gmra", gm, fgwt_batch(gm, X), X, deltas, gmra_cost, scale)
    om = construct_ortho(cloud, tree, policy, base_eps)
    rows += _threshold_curve("ortho", om, ortho_fgwt_batch(om, X), X, deltas, ortho_cost, scale)
    for eps in parse_grid(args.eps):
        forest = prune(cloud, tree, eps)
        recon, _ = forest_encode(forest, cloud)
        err = rms_error(X, recon)
        c = forest.cost
        hist = ";".join(f"{k}={v}" for k, v in forest.strategy_histogram().items())
        rows.append(("pruned", eps, c.coefficient_cost, c.dictionary_cost, c.total, err,
                     err / scale, hist))
    for p in svd_baseline(cloud, deltas=deltas):
        rows.append((p.method, p.param, p.coefficient_cost, p.dictionary_cost, p.total,
                     p.error, p.error / scale, ""))
    _write_csv(out / "compare.csv", ["method", "param", "coefficient_cost", "dictionary_cost",
                                     "total_cost", "error", "relative_error", "strategies"], rows)
    _record_run(out, args, {"rows": len(rows)})


def cmd_oos(args):
    out = _out_dir(args)
    _require(args, "model")
    model = load_model(Path(args.model) / "model")
    if isinstance(model, OrthoGmraModel):
        raise errors.ConfigError("oos works on plain GMRA models")
    queries = _load_input(args.queries)
    exps = expand_oos_batch(model, queries.coords)
    blocks, resid = [], []
    for pid, e in enumerate(exps):
        path = e.path
        for j, key in enumerate(path):
            for b, v in enumerate(e.coefficients.block_at(j)):
                blocks.append((pid, e.leaf[0], e.leaf[1], "model", key[0], key[1], b, v))
        for key, block in zip(reversed(path), e.normal_blocks):
            for b, v in enumerate(block):
                blocks.append((pid, e.leaf[0], e.leaf[1], "normal", key[0], key[1], b, v))
        resid.append((pid, e.leaf[0], e.leaf[1], e.residual_norms[0], e.residual_norms[-1]))
    _write_csv(out / "oos_blocks.csv", ["point_id", "leaf_j", "leaf_k", "kind", "j", "k",
                                        "block_index", "value"], blocks)
    _write_csv(out / "oos_residuals.csv", ["point_id", "leaf_j", "leaf_k", "off_model_norm",
                                           "final_residual"], resid)
    _record_run(out, args, {"queries": len(exps)})


def cmd_sample(args):
    out = _out_dir(args)
    _require(args, "model")
    model = load_model(Path(args.model) / "model")
    if isinstance(model, OrthoGmraModel):
        raise errors.ConfigError("sample works on plain GMRA models")
    cloud = _load_input(args.input)
    j = model.max_scale if args.scale is None else args.scale
    sm = fit_scale_model(model, cloud, j, args.covariance)
    samples = sample(sm, args.m, args.seed)
    save_cloud(samples, out / "samples.csv")
    _record_run(out, args, {"scale": j, "cells": len(sm.cells)})


def cmd_evaluate(args):
    out = _out_dir(args)
    _require(args, "a", "b")
    a, b = load_cloud(args.a), load_cloud(args.b)
    if a.ambient_dim != b.ambient_dim:
        raise errors.DimMismatch("clouds live in different dimensions")
    rows = [(mode, hausdorff(a, b, mode)) for mode in ("max", "median")]
    _write_csv(out / "distances.csv", ["mode", "value"], rows)
    _record_run(out, args, dict(rows))


# -- parser ----------------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", help="JSON file with default values for any flag")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, default=0, help="random seed")


def _add_tree(p):
    g = p.add_argument_group("tree")
    g.add_argument("--method", choices=["pca", "kmeans"], default="pca")
    g.add_argument("--min-cell-size", type=int, default=None)
    g.add_argument("--max-scale", type=int, default=64)
    g.add_argument("--levels-per-scale", type=int, default=1,
                   help="bisection rounds per scale (2 for a 4-adic tree)")
    g.add_argument("--split-component", type=int, default=0)
    g.add_argument("--homogeneity", type=float, default=0.0,
                   help="stop splitting once the mean squared residual is this small")
    g.add_argument("--stop-dim", type=int, default=2,
                   help="dimension used by the homogeneity stopping test")


def _add_model(p):
    g = p.add_argument_group("model")
    g.add_argument("--policy", default="fixed:2", help="fixed:D | relative[:EPS] | absolute:EPS")
    g.add_argument("--leaf-policy", default=None)
    g.add_argument("--precision", type=float, default=None,
                   help="target RMS precision; cells within it become leaves")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gmra", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic cloud")
    _add_common(p)
    p.add_argument("--kind", choices=KINDS, default="swissroll")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--D", type=int, default=50)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--dim", type=int, default=2, help="sphere dimension")
    p.add_argument("--band-width", type=int, default=4)
    p.add_argument("--n-bands", type=int, default=4)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--embed-seed", type=int, default=0)
    p.add_argument("--format", choices=["csv", "binary"], default="csv")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("build", help="build a GMRA model and per-scale statistics")
    _add_common(p)
    _add_tree(p)
    _add_model(p)
    p.add_argument("--input", help="point cloud (CSV or binary)")
    p.add_argument("--variant", choices=["gmra", "ortho", "pruned"], default="gmra",
                   help="pruned writes a node table instead of a model file")
    p.add_argument("--no-tangent", action="store_true",
                   help="omit tangential corrections")
    p.add_argument("--split-shared", action="store_true",
                   help="split children wavelets into shared and specific parts")
    p.add_argument("--strict-dims", action="store_true")
    p.add_argument("--ortho-norm", choices=["rms", "max"], default="rms")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("transform", help="forward transform a cloud")
    _add_common(p)
    p.add_argument("--model", help="directory written by 'build'")
    p.add_argument("--input")
    p.add_argument("--format", choices=["csv", "binary"], default="csv")
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("reconstruct", help="inverse transform stored coefficients")
    _add_common(p)
    p.add_argument("--model")
    p.add_argument("--coefficients")
    p.add_argument("--input", help="original cloud, for error reporting")
    p.add_argument("--max-scale", type=int, default=None)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("compress", help="threshold sweep over wavelet coefficients")
    _add_common(p)
    p.add_argument("--model")
    p.add_argument("--input")
    p.add_argument("--deltas", default="1e-5:1:11")
    p.add_argument("--mode", choices=["entry", "block"], default="entry")
    p.add_argument("--emit-delta", type=float, default=None,
                   help="also write thresholded coefficients and reconstruction at this level")
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("compare", help="cost-error curves: GMRA, orthogonal, pruned, SVD")
    _add_common(p)
    _add_tree(p)
    _add_model(p)
    p.add_argument("--input")
    p.add_argument("--deltas", default="1e-4:10:11")
    p.add_argument("--eps", default="1e-2:3:8")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("oos", help="expand query points outside the training set")
    _add_common(p)
    p.add_argument("--model")
    p.add_argument("--queries")
    p.set_defaults(func=cmd_oos)

    p = sub.add_parser("sample", help="draw points from the scale-j generative model")
    _add_common(p)
    p.add_argument("--model")
    p.add_argument("--input", help="training cloud the model was built on")
    p.add_argument("--scale", type=int, default=None)
    p.add_argument("--m", type=int, default=1000)
    p.add_argument("--covariance", choices=["diag", "full"], default="diag")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("evaluate", help="Hausdorff distances between two clouds")
    _add_common(p)
    p.add_argument("--a")
    p.add_argument("--b")
    p.set_defaults(func=cmd_evaluate)
    return parser


def _apply_config(parser, argv):
    """Second parsing pass with defaults taken from ``--config``."""
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    try:
        with open(args.config) as fh:
            config = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise errors.ConfigError(f"cannot read config {args.config}: {exc}") from None
    if not isinstance(config, dict):
        raise errors.ConfigError("config file must hold a JSON object")
    known = set(vars(args))
    unknown = sorted(set(config) - known)
    if unknown:
        raise errors.ConfigError(f"unknown config keys for '{args.command}': {', '.join(unknown)}")
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    subparser.set_defaults(**config)
    return parser.parse_args(argv)


def _limit_threads():
    value = os.environ.get(ENV_THREADS)
    if not value:
        return None
    try:
        n = int(value)
    except ValueError:
        raise errors.ConfigError(f"{ENV_THREADS} must be an integer, got {value!r}") from None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        _limit_threads()
        with np.errstate(invalid="raise", divide="raise", over="raise"):
            args.func(args)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_CONFIG
    except (errors.ConfigError, errors.SpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
