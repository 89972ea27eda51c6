"""Command-line entry points: study runners, training, and prediction."""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import edmd
from .dictionary import build_poly_dictionary
from .edmd import SnapshotSet
from .experiments import (
    StudyConfig,
    emit_outputs,
    run_tracking_study,
    run_vdp_study,
)
from .pipeline import load_artifacts, save_artifacts, step_online, train_offline
from .sensitivity import NoiseSpec

FULL_GRID_M = 200000


def _add_study_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file with study settings")
    parser.add_argument("--outdir", help="output directory override")
    parser.add_argument("--seed", type=int, help="master seed override")
    parser.add_argument("--trials", type=int, help="trials per case override")
    parser.add_argument("--degree", type=int, help="dictionary degree override")
    parser.add_argument(
        "--m-list", help="comma-separated snapshot-pair counts, e.g. 2000,20000"
    )
    parser.add_argument(
        "--levels", help="comma-separated noise levels, e.g. 0.1,0.2,0.4"
    )
    parser.add_argument(
        "--workers", type=int, help="parallel case workers (default 1)"
    )
    parser.add_argument(
        "--deterministic",
        action="store_true",
        help="force single-worker, fixed-order execution",
    )
    parser.add_argument(
        "--noise-sign",
        choices=("one-sided", "symmetric"),
        dest="noise_sign",
        help="one-sided keeps the nonnegative perturbation draws the "
        "studies default to; symmetric flips each draw's sign at random",
    )
    parser.add_argument(
        "--substitution",
        choices=("realized", "resample", "mean"),
        help="how operator sensitivity consumes the noise "
        "(injected draws, resampled draws, or the distribution mean)",
    )


def _study_overrides(args: argparse.Namespace) -> dict:
    overrides = {}
    for name in ("outdir", "seed", "trials", "degree", "workers"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if args.m_list:
        overrides["m_list"] = [int(v) for v in args.m_list.split(",")]
    if args.levels:
        overrides["noise_levels"] = [float(v) for v in args.levels.split(",")]
    if args.noise_sign:
        overrides["one_sided"] = args.noise_sign == "one-sided"
    if args.substitution:
        overrides["substitution"] = args.substitution
    return overrides


def _build_config(args: argparse.Namespace, study: str) -> StudyConfig:
    overrides = _study_overrides(args)
    if args.config:
        config = StudyConfig.from_json(args.config, study, **overrides)
    else:
        defaults = (
            StudyConfig.vdp_defaults if study == "vdp" else StudyConfig.tracking_defaults
        )
        config = defaults(**overrides)
    if args.deterministic:
        config.workers = 1
    return config


def _finish_study(results, config: StudyConfig) -> int:
    emit_outputs(results, config.outdir, config)
    failures = [r for r in results if not r.ok]
    for r in failures:
        print(f"case {r.keys} failed: {r.error}", file=sys.stderr)
    print(
        f"wrote {config.outdir}: {len(results)} trial rows, {len(failures)} failures"
    )
    return 1 if failures else 0


def _cmd_vdp_study(args: argparse.Namespace) -> int:
    config = _build_config(args, "vdp")
    if args.full_grid and FULL_GRID_M not in config.m_list:
        config.m_list = list(config.m_list) + [FULL_GRID_M]
    return _finish_study(run_vdp_study(config), config)


def _cmd_tracking_study(args: argparse.Namespace) -> int:
    config = _build_config(args, "tracking")
    return _finish_study(run_tracking_study(config), config)


def _cmd_train(args: argparse.Namespace) -> int:
    snapshots = SnapshotSet.from_csv(args.data)
    dictionary = build_poly_dictionary(
        snapshots.n_state, snapshots.n_input, args.degree
    )
    if args.noise:
        with open(args.noise) as fh:
            noise = NoiseSpec.from_dict(json.load(fh))
    else:
        noise = NoiseSpec.zero(snapshots.n_state)
    artifacts = train_offline(snapshots, dictionary, noise, svd_tol=args.svd_tol)
    save_artifacts(artifacts, args.out)
    print(
        f"trained model: Q={artifacts.model.size}, M={snapshots.M} -> {args.out}"
    )
    return 0


def _parse_vector(text: str) -> np.ndarray:
    text = text.strip()
    if not text:
        return np.zeros(0)
    return np.array([float(v) for v in text.split(",")])


def _cmd_predict(args: argparse.Namespace) -> int:
    artifacts = load_artifacts(args.artifact)
    x = _parse_vector(args.state)
    u = _parse_vector(args.input)
    x_pred, delta = step_online(artifacts, x, u)
    print("predicted_state: " + ",".join(repr(float(v)) for v in x_pred))
    print("estimated_noise_error: " + ",".join(repr(float(v)) for v in delta))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="koopman-robust",
        description=(
            "Koopman-operator models from noisy snapshot data with analytic "
            "noise-sensitivity estimates, plus reproducible benchmark studies."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    vdp = sub.add_parser("vdp-study", help="Van der Pol error-estimation study")
    _add_study_args(vdp)
    vdp.add_argument(
        "--full-grid",
        action="store_true",
        help=f"also run the M={FULL_GRID_M} cases",
    )
    vdp.set_defaults(fn=_cmd_vdp_study)

    tracking = sub.add_parser(
        "tracking-study", help="unicycle semicircle tracking study"
    )
    _add_study_args(tracking)
    tracking.set_defaults(fn=_cmd_tracking_study)

    train = sub.add_parser("train", help="train artifacts from a snapshot CSV")
    train.add_argument("--data", required=True, help="snapshot CSV (m, x*, u* columns)")
    train.add_argument("--out", required=True, help="artifact file to write")
    train.add_argument("--degree", type=int, default=2, help="dictionary degree")
    train.add_argument("--noise", help="JSON file describing the measurement noise")
    train.add_argument(
        "--svd-tol", type=float, default=edmd.DEFAULT_SVD_TOL, dest="svd_tol"
    )
    train.set_defaults(fn=_cmd_train)

    pred = sub.add_parser("predict", help="one-step prediction from saved artifacts")
    pred.add_argument("--artifact", required=True)
    pred.add_argument("--state", required=True, help="comma-separated state")
    pred.add_argument("--input", default="", help="comma-separated input")
    pred.set_defaults(fn=_cmd_predict)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
