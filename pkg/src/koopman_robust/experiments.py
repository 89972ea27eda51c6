"""Reproducible desk-scale studies of noise-aware Koopman prediction.

Two studies are provided:

* Van der Pol parametric study: sweep training-set size and noise level,
  train a clean and a noisy model on the same trajectory, then advance
  both along a shared randomly driven trajectory and compare the noisy
  model's per-step analytic error estimate against the measured gap
  between the two models' one-step outputs.
* Unicycle tracking study: train clean and noisy models of a
  differential-drive robot, then drive it along a semicircle with three
  controllers that differ only in the model they consult ("nominal" uses
  the clean model, "noisy" the corrupted one, "proposed" the corrupted
  one minus the estimated noise-induced error) and compare tracking MSE.

Every case derives its RNG streams from the master seed plus its own
coordinates, so runs reproduce byte-identically and cases can execute in
any order or in parallel.  Wall-clock numbers are kept out of cases.csv
(they go to timings.csv) so reruns diff clean.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import edmd
from .dictionary import build_poly_dictionary
from .edmd import fit_koopman, predict
from .errors import NonFiniteDataError
from .pipeline import run_closed_loop, step_online, train_offline
from .sensitivity import NoiseSpec
from .systems import (
    UNICYCLE,
    VAN_DER_POL,
    TrainingConfig,
    generate_training_data,
    rk4_step,
)

Array = np.ndarray

# fixed stream tags keeping the two studies' RNG streams disjoint
VDP_STREAM = 101
TRACKING_STREAM = 202

DENOM_GUARD = 1e-12

VDP_KEYS = ["M", "level", "trial"]
VDP_METRICS = [
    "D_abs_x1",
    "D_abs_x2",
    "D_r_x1",
    "D_r_x2",
    "excluded_x1",
    "excluded_x2",
    "sign_match_x1",
    "sign_match_x2",
]
TRACKING_KEYS = ["level", "trial"]
TRACKING_METRICS = [
    "mse_traj_nominal",
    "mse_traj_noisy",
    "mse_traj_proposed",
    "mse_input_abs",
    "mse_input_true",
    "mse_input_rel",
]
ARMS = ("nominal", "noisy", "proposed")


@dataclass
class StudyConfig:
    """All knobs of one study run.

    Build with vdp_defaults()/tracking_defaults() and override fields as
    needed, or load from a JSON file.  noise levels are fractions of the
    per-study amplitude scale (initial state for the oscillator, peak
    reference magnitude for the tracking robot); level 0 is allowed as a
    sanity case.  one_sided draws perturbations from the nonnegative
    interval [0, level*scale] per coordinate, which biases the corrupted
    data upward and is what the studies default to; disabling it draws
    the magnitude from the same interval with an independent random
    sign, removing the bias.
    """

    study: str
    m_list: list
    noise_levels: list
    trials: int
    horizon: int
    degree: int
    seed: int
    outdir: str
    ts: float
    x0: list
    input_low: list
    input_high: list
    one_sided: bool = True
    n_samples: int = 5
    substitution: str = "resample"
    svd_tol: float = edmd.DEFAULT_SVD_TOL
    degeneracy_tol: float = edmd.DEFAULT_DEGENERACY_TOL
    workers: int = 1
    period: float = 40.0
    hold: int = 10
    k_v: float = 2.0
    k_h: float = 2.0
    lookahead: int = 8

    @classmethod
    def vdp_defaults(cls, **overrides) -> "StudyConfig":
        base = dict(
            study="vdp",
            m_list=[2000, 10000, 20000],
            noise_levels=[0.1, 0.2, 0.4],
            trials=5,
            horizon=50,
            degree=3,
            seed=2026,
            outdir="results_vdp",
            ts=0.01,
            x0=[0.5, 0.5],
            input_low=[-1.0],
            input_high=[1.0],
            one_sided=True,
            substitution="realized",
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def tracking_defaults(cls, **overrides) -> "StudyConfig":
        base = dict(
            study="tracking",
            m_list=[2000],
            noise_levels=[0.25, 0.5, 0.75, 1.0],
            trials=10,
            horizon=0,  # derived from period/ts, see n_steps()
            degree=2,
            seed=2026,
            outdir="results_tracking",
            ts=0.05,
            x0=[0.0, 0.0, 0.0],
            input_low=[0.0, -1.0],
            input_high=[0.5, 1.0],
            one_sided=False,
            substitution="realized",
            k_v=2.0,
            k_h=2.0,
            lookahead=8,
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_json(cls, path, study: str, **overrides) -> "StudyConfig":
        with open(path) as fh:
            data = json.load(fh)
        if "study" in data and data["study"] != study:
            raise ValueError(
                f"config file is for study {data['study']!r}, expected {study!r}"
            )
        defaults = cls.vdp_defaults if study == "vdp" else cls.tracking_defaults
        known = set(defaults().__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        data.update(overrides)
        data["study"] = study
        return defaults(**data)

    def validate(self) -> None:
        if self.study not in ("vdp", "tracking"):
            raise ValueError(f"unknown study {self.study!r}")
        if not self.m_list or any(m < 1 for m in self.m_list):
            raise ValueError("m_list must hold positive snapshot counts")
        if not self.noise_levels or any(not 0.0 <= lv <= 2.0 for lv in self.noise_levels):
            raise ValueError("noise levels must lie in [0, 2]")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.study == "vdp" and self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.degree < 1:
            raise ValueError("degree must be at least 1")
        if self.ts <= 0 or self.period <= 0:
            raise ValueError("ts and period must be positive")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if self.substitution not in ("realized", "resample", "mean"):
            raise ValueError(f"unknown substitution mode {self.substitution!r}")

    def n_steps(self) -> int:
        """Closed-loop step count for the tracking study (half a period)."""
        return int(round((self.period / 2.0) / self.ts))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CaseResult:
    """Outcome of one (case, trial) run."""

    study: str
    keys: dict
    metrics: dict
    ok: bool = True
    error: str = ""
    runtime: float = 0.0
    extra: dict = field(default_factory=dict)


def _level_key(level: float) -> int:
    return int(round(level * 1_000_000))


def _spawn_seeds(entropy: list, n: int) -> list:
    state = np.random.SeedSequence(entropy).generate_state(n, np.uint64)
    return [int(s) for s in state]


def _level_noise(scale: Array, level: float, config: StudyConfig, seed: int) -> NoiseSpec:
    # "realized" is a study-harness mode (the injected draws are passed
    # through explicitly); the NoiseSpec falls back to resampling so the
    # artifacts stay usable where realizations are unknown.
    substitution = config.substitution if config.substitution != "realized" else "resample"
    common = dict(n_samples=config.n_samples, substitution=substitution, seed=seed)
    if level == 0.0:
        return NoiseSpec.zero(scale.shape[0], **common)
    high = level * scale
    low = np.zeros_like(high) if config.one_sided else -high
    return NoiseSpec.uniform(low=low, high=high, **common)


# ---------------------------------------------------------------------------
# Van der Pol parametric study
# ---------------------------------------------------------------------------

def _vdp_case_inner(config: StudyConfig, M: int, level: float, trial: int):
    entropy = [config.seed, VDP_STREAM, M, _level_key(level), trial]
    data_seed, noise_seed, eval_seed = _spawn_seeds(entropy, 3)

    scale = np.abs(np.asarray(config.x0, dtype=float))
    noise = _level_noise(scale, level, config, noise_seed)
    train_cfg = TrainingConfig(
        M=M,
        Ts=config.ts,
        noise=noise,
        seed=data_seed,
        x0=np.asarray(config.x0, dtype=float),
        input_policy="uniform",
        input_low=np.asarray(config.input_low, dtype=float),
        input_high=np.asarray(config.input_high, dtype=float),
    )
    clean, noisy = generate_training_data(VAN_DER_POL, train_cfg)
    dictionary = build_poly_dictionary(2, 1, config.degree)
    clean_model = fit_koopman(clean, dictionary, config.svd_tol, config.degeneracy_tol)
    realization = noisy.X - clean.X if config.substitution == "realized" else None
    artifacts = train_offline(
        noisy, dictionary, noise, config.svd_tol, config.degeneracy_tol,
        realization=realization,
    )

    rng = np.random.default_rng(eval_seed)
    low = np.broadcast_to(np.asarray(config.input_low, dtype=float), (1,))
    high = np.broadcast_to(np.asarray(config.input_high, dtype=float), (1,))
    u_eval = rng.uniform(low[:, None], high[:, None], size=(1, config.horizon))

    # Both trained models are advanced along one shared trajectory driven
    # by the same random inputs; each step compares their one-step outputs
    # against the first-order estimate at the same lifted point.
    horizon = config.horizon
    estimated = np.empty((2, horizon))
    measured = np.empty((2, horizon))
    z = np.asarray(config.x0, dtype=float)
    for t in range(horizon):
        u_t = u_eval[:, t]
        x_pred, delta = step_online(artifacts, z, u_t)
        measured[:, t] = x_pred - predict(clean_model, z, u_t)
        estimated[:, t] = delta
        z = rk4_step(VAN_DER_POL, z, u_t, config.ts)
        if not np.all(np.isfinite(z)):
            raise NonFiniteDataError(f"evaluation rollout diverged at step {t + 1}")

    metrics = {}
    for i, tag in enumerate(("x1", "x2")):
        est, true = estimated[i], measured[i]
        gap = np.abs(np.abs(est) - np.abs(true))
        keep = np.abs(true) >= DENOM_GUARD
        metrics[f"D_abs_{tag}"] = float(gap.sum())
        metrics[f"D_r_{tag}"] = float((gap[keep] / np.abs(true[keep])).sum())
        metrics[f"excluded_{tag}"] = float(horizon - int(keep.sum()))
        metrics[f"sign_match_{tag}"] = float(np.mean(np.sign(est) == np.sign(true)))
    extra = {
        "abs_estimated_x2": np.abs(estimated[1]).copy(),
        "abs_measured_x2": np.abs(measured[1]).copy(),
    }
    return metrics, extra


def _run_vdp_case(config: StudyConfig, M: int, level: float, trial: int) -> CaseResult:
    keys = {"M": M, "level": level, "trial": trial}
    start = time.perf_counter()
    try:
        metrics, extra = _vdp_case_inner(config, M, level, trial)
        result = CaseResult("vdp", keys, metrics, extra=extra)
    except Exception as exc:
        metrics = {name: float("nan") for name in VDP_METRICS}
        result = CaseResult(
            "vdp", keys, metrics, ok=False, error=f"{type(exc).__name__}: {exc}"
        )
    result.runtime = time.perf_counter() - start
    return result


def _vdp_star(args) -> CaseResult:
    return _run_vdp_case(*args)


def run_vdp_study(config: StudyConfig) -> list:
    """Run every (M, level, trial) case; failures are recorded, not raised."""
    config.validate()
    if config.study != "vdp":
        raise ValueError("config is not for the vdp study")
    cases = [
        (config, M, level, trial)
        for M in config.m_list
        for level in config.noise_levels
        for trial in range(config.trials)
    ]
    results = _run_cases(_vdp_star, cases, config.workers)
    results.sort(key=lambda r: (r.keys["M"], r.keys["level"], r.keys["trial"]))
    return results


# ---------------------------------------------------------------------------
# unicycle tracking study
# ---------------------------------------------------------------------------

def semicircle_reference(period: float, ts: float, n_steps: int) -> Array:
    """Reference for the tracking study, shape (3, n+1).

    Rows: x and y of a unit semicircle traversed over half a period, and
    the constant angular rate of that traversal.  Only the position rows
    enter the tracking error; the rate row documents the commanded turn.
    """
    t = np.arange(n_steps + 1) * ts
    w = 2.0 * np.pi / period
    return np.vstack([np.sin(w * t), 1.0 - np.cos(w * t), np.full(t.shape, w)])


def _wrap_angle(a: float) -> float:
    return (a + np.pi) % (2.0 * np.pi) - np.pi


class TrackingController:
    """Proportional pursuit of a lookahead point on the reference.

    Feedback acts on the model's one-step prediction of the current state
    rather than the raw measurement, so model quality shows up directly in
    closed-loop behavior.  With `compensate` set, the estimated
    noise-induced prediction error from the previous step is subtracted
    from that prediction first.  Commands saturate at the training input
    ranges.
    """

    def __init__(
        self,
        k_v: float = 2.0,
        k_h: float = 2.0,
        u_x_max: float = 0.5,
        u_z_max: float = 1.0,
        lookahead: int = 8,
        compensate: bool = False,
    ):
        self.k_v = k_v
        self.k_h = k_h
        self.u_x_max = u_x_max
        self.u_z_max = u_z_max
        self.lookahead = lookahead
        self.compensate = compensate

    def __call__(self, x, ref_window, x_pred_prev, delta_prev) -> Array:
        est = np.asarray(x_pred_prev, dtype=float)
        if self.compensate:
            est = est - delta_prev
        target = ref_window[:, min(self.lookahead, ref_window.shape[1]) - 1]
        dx = target[0] - est[0]
        dy = target[1] - est[1]
        dist = float(np.hypot(dx, dy))
        u_x = min(self.k_v * dist, self.u_x_max)
        heading_err = 0.0 if dist < 1e-9 else _wrap_angle(np.arctan2(dy, dx) - est[2])
        u_z = float(np.clip(self.k_h * heading_err, -self.u_z_max, self.u_z_max))
        return np.array([u_x, u_z])


def _tracking_case_inner(config: StudyConfig, level: float, trial: int):
    entropy = [config.seed, TRACKING_STREAM, _level_key(level), trial]
    data_seed, noise_seed = _spawn_seeds(entropy, 2)

    n_steps = config.n_steps()
    reference = semicircle_reference(config.period, config.ts, n_steps)
    ref_scale = float(np.max(np.abs(reference[:2])))
    scale = np.array([ref_scale, ref_scale, 0.0])  # positions only; heading exact
    noise = _level_noise(scale, level, config, noise_seed)

    train_cfg = TrainingConfig(
        M=config.m_list[0],
        Ts=config.ts,
        noise=noise,
        seed=data_seed,
        x0=np.asarray(config.x0, dtype=float),
        input_policy="chattering",
        input_low=np.asarray(config.input_low, dtype=float),
        input_high=np.asarray(config.input_high, dtype=float),
        hold=config.hold,
    )
    clean, noisy = generate_training_data(UNICYCLE, train_cfg)
    dictionary = build_poly_dictionary(3, 2, config.degree)
    realization = noisy.X - clean.X if config.substitution == "realized" else None
    artifacts = {
        "nominal": train_offline(
            clean, dictionary, NoiseSpec.zero(3), config.svd_tol, config.degeneracy_tol
        ),
        "noisy": train_offline(
            noisy, dictionary, noise, config.svd_tol, config.degeneracy_tol,
            realization=realization,
        ),
    }
    artifacts["proposed"] = artifacts["noisy"]
    compensate = {"nominal": False, "noisy": False, "proposed": True}

    def make_controller(arm: str) -> TrackingController:
        return TrackingController(
            k_v=config.k_v,
            k_h=config.k_h,
            u_x_max=float(config.input_high[0]),
            u_z_max=float(config.input_high[1]),
            lookahead=config.lookahead,
            compensate=compensate[arm],
        )

    x0 = np.asarray(config.x0, dtype=float)
    metrics = {}
    logs = {}
    for arm in ARMS:
        log = run_closed_loop(
            artifacts[arm],
            UNICYCLE,
            make_controller(arm),
            reference,
            n_steps,
            config.ts,
            x0,
        )
        logs[arm] = log
        err = log.x[:2, 1:] - reference[:2, 1:]
        metrics[f"mse_traj_{arm}"] = float(np.mean(np.sum(err * err, axis=0)))

    # Counterfactual commands along the noisy run: what the clean-model and
    # compensated controllers would have commanded at the very same states.
    noisy_log = logs["noisy"]
    counter = {arm: make_controller(arm) for arm in ("nominal", "proposed")}
    pred_prev = {arm: x0.copy() for arm in counter}
    delta_prev = {arm: np.zeros(3) for arm in counter}
    last = reference.shape[1] - 1
    sq_gap = 0.0
    sq_true = 0.0
    for t in range(n_steps):
        ref_pair = reference[:, [min(t + 1, last), min(t + 2, last)]]
        x_t = noisy_log.x[:, t]
        u_applied = noisy_log.u[:, t]
        u_arm = {}
        for arm, controller in counter.items():
            u_arm[arm] = controller(x_t, ref_pair, pred_prev[arm], delta_prev[arm])
            pred_prev[arm], delta_prev[arm] = step_online(
                artifacts[arm], x_t, u_applied
            )
        gap = u_arm["proposed"] - u_arm["nominal"]
        true_gap = u_applied - u_arm["nominal"]
        sq_gap += float(gap @ gap)
        sq_true += float(true_gap @ true_gap)
    metrics["mse_input_abs"] = sq_gap / n_steps
    metrics["mse_input_true"] = sq_true / n_steps
    metrics["mse_input_rel"] = (
        metrics["mse_input_abs"] / metrics["mse_input_true"]
        if metrics["mse_input_true"] > 0.0
        else 0.0
    )

    extra = {}
    if trial == 0:
        extra["reference"] = reference[:2].copy()
        for arm in ARMS:
            extra[f"path_{arm}"] = logs[arm].x[:2].copy()
    return metrics, extra


def _run_tracking_case(config: StudyConfig, level: float, trial: int) -> CaseResult:
    keys = {"level": level, "trial": trial}
    start = time.perf_counter()
    try:
        metrics, extra = _tracking_case_inner(config, level, trial)
        result = CaseResult("tracking", keys, metrics, extra=extra)
    except Exception as exc:
        metrics = {name: float("nan") for name in TRACKING_METRICS}
        result = CaseResult(
            "tracking", keys, metrics, ok=False, error=f"{type(exc).__name__}: {exc}"
        )
    result.runtime = time.perf_counter() - start
    return result


def _tracking_star(args) -> CaseResult:
    return _run_tracking_case(*args)


def run_tracking_study(config: StudyConfig) -> list:
    """Run every (level, trial) tracking case; failures recorded, not raised."""
    config.validate()
    if config.study != "tracking":
        raise ValueError("config is not for the tracking study")
    cases = [
        (config, level, trial)
        for level in config.noise_levels
        for trial in range(config.trials)
    ]
    results = _run_cases(_tracking_star, cases, config.workers)
    results.sort(key=lambda r: (r.keys["level"], r.keys["trial"]))
    return results


def _run_cases(star, cases, workers: int) -> list:
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(star, cases))
    return [star(case) for case in cases]


# ---------------------------------------------------------------------------
# output emission
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _schema(study: str):
    if study == "vdp":
        return VDP_KEYS, VDP_METRICS
    return TRACKING_KEYS, TRACKING_METRICS


def _group_cases(results, key_names):
    """Group trial rows by case key (every key except the trial index)."""
    groups = {}
    for r in results:
        case_key = tuple(r.keys[k] for k in key_names[:-1])
        groups.setdefault(case_key, []).append(r)
    return groups


def _aggregate(rows, metric_names, fn) -> dict:
    out = {}
    for name in metric_names:
        values = [r.metrics[name] for r in rows]
        out[name] = float(fn(values)) if values else float("nan")
    return out


def emit_outputs(results, outdir, config: Optional[StudyConfig] = None) -> list:
    """Write cases.csv, summary.csv, timings.csv, and the study's plots.

    Refuses an empty result list before touching the filesystem.  Returns
    the list of written paths.
    """
    if not results:
        raise ValueError("no case results to emit")
    study = results[0].study
    if any(r.study != study for r in results):
        raise ValueError("mixed studies in one result list")
    key_names, metric_names = _schema(study)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    written = [
        _write_cases_csv(results, outdir / "cases.csv", key_names, metric_names),
        _write_summary_csv(results, outdir / "summary.csv", key_names, metric_names),
        _write_timings_csv(results, outdir / "timings.csv", key_names),
    ]
    if config is not None:
        path = outdir / "config_used.json"
        path.write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
        written.append(path)
    if study == "vdp":
        written.append(_plot_vdp_error_per_step(results, outdir / "error_per_step.png"))
        written.append(_plot_vdp_difference_bars(results, outdir / "difference_bars.png"))
    else:
        written.append(_plot_tracking_trajectories(results, outdir / "trajectories.png"))
        written.append(_plot_tracking_mse_bars(results, outdir / "mse_bars.png"))
    return written


def _write_cases_csv(results, path, key_names, metric_names):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(key_names + metric_names + ["ok", "error"])
        for case_key, rows in _group_cases(results, key_names).items():
            for r in rows:
                writer.writerow(
                    [_fmt(r.keys[k]) for k in key_names]
                    + [_fmt(r.metrics[m]) for m in metric_names]
                    + [str(r.ok), r.error]
                )
            ok_rows = [r for r in rows if r.ok]
            for stat, fn in (("mean", np.mean), ("std", np.std)):
                agg = _aggregate(ok_rows, metric_names, fn)
                writer.writerow(
                    [_fmt(k) for k in case_key]
                    + [stat]
                    + [_fmt(agg[m]) for m in metric_names]
                    + [str(len(ok_rows) == len(rows)), ""]
                )
    return path


def _write_summary_csv(results, path, key_names, metric_names):
    header = key_names[:-1] + ["n_trials", "n_ok"]
    for name in metric_names:
        header += [f"{name}_mean", f"{name}_std"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for case_key, rows in _group_cases(results, key_names).items():
            ok_rows = [r for r in rows if r.ok]
            mean = _aggregate(ok_rows, metric_names, np.mean)
            std = _aggregate(ok_rows, metric_names, np.std)
            row = [_fmt(k) for k in case_key] + [str(len(rows)), str(len(ok_rows))]
            for name in metric_names:
                row += [_fmt(mean[name]), _fmt(std[name])]
            writer.writerow(row)
    return path


def _write_timings_csv(results, path, key_names):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(key_names + ["seconds"])
        for r in results:
            writer.writerow([_fmt(r.keys[k]) for k in key_names] + [_fmt(r.runtime)])
    return path


# ---------------------------------------------------------------------------
# plots
# ---------------------------------------------------------------------------

def _pyplot():
    import matplotlib

    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    return plt


def _plot_vdp_error_per_step(results, path):
    plt = _pyplot()
    groups = _group_cases(results, VDP_KEYS)
    n = len(groups)
    n_cols = min(3, n)
    n_rows = -(-n // n_cols)
    fig, axes = plt.subplots(
        n_rows, n_cols, figsize=(4.2 * n_cols, 3.2 * n_rows), squeeze=False
    )
    flat = axes.ravel()
    for ax in flat[n:]:
        ax.set_visible(False)
    for ax, (case_key, rows) in zip(flat, groups.items()):
        ok = [r for r in rows if r.ok and "abs_estimated_x2" in r.extra]
        if ok:
            est = np.mean([r.extra["abs_estimated_x2"] for r in ok], axis=0)
            true = np.mean([r.extra["abs_measured_x2"] for r in ok], axis=0)
            steps = np.arange(1, est.shape[0] + 1)
            ax.plot(steps, est, "o", ms=3, label="estimated")
            ax.plot(steps, true, "*", ms=4, label="measured")
            ax.legend(fontsize=8)
        ax.set_title(f"M={case_key[0]}, level={case_key[1]:g}", fontsize=9)
        ax.set_xlabel("step")
        ax.set_ylabel("|coordinate-2 error|")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _plot_vdp_difference_bars(results, path):
    plt = _pyplot()
    m_values = sorted({r.keys["M"] for r in results})
    levels = sorted({r.keys["level"] for r in results})
    fig, axes = plt.subplots(1, 2, figsize=(9.0, 3.6))
    for ax, metric, title in zip(
        axes, ("D_abs_x2", "D_r_x2"), ("absolute difference", "relative difference")
    ):
        width = 0.8 / len(levels)
        for j, level in enumerate(levels):
            values = []
            for M in m_values:
                rows = [
                    r
                    for r in results
                    if r.ok and r.keys["M"] == M and r.keys["level"] == level
                ]
                values.append(
                    np.mean([r.metrics[metric] for r in rows]) if rows else np.nan
                )
            ax.bar(
                np.arange(len(m_values)) + j * width,
                values,
                width,
                label=f"level {level:g}",
            )
        ax.set_xticks(np.arange(len(m_values)) + 0.4 - width / 2)
        ax.set_xticklabels([str(m) for m in m_values])
        ax.set_xlabel("training pairs M")
        ax.set_title(title, fontsize=10)
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _plot_tracking_trajectories(results, path):
    plt = _pyplot()
    levels = sorted({r.keys["level"] for r in results})
    n = len(levels)
    fig, axes = plt.subplots(1, n, figsize=(4.0 * n, 3.8), squeeze=False)
    styles = {"nominal": "g-", "noisy": "r-", "proposed": "b-"}
    for ax, level in zip(axes.ravel(), levels):
        rows = [
            r for r in results if r.keys["level"] == level and "reference" in r.extra
        ]
        if rows:
            r = rows[0]
            ref = r.extra["reference"]
            ax.plot(ref[0], ref[1], "k--", label="reference")
            for arm in ARMS:
                p = r.extra.get(f"path_{arm}")
                if p is not None:
                    ax.plot(p[0], p[1], styles[arm], lw=1.0, label=arm)
            ax.legend(fontsize=7)
        ax.set_title(f"level {level:g}", fontsize=10)
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        ax.set_aspect("equal", adjustable="datalim")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _plot_tracking_mse_bars(results, path):
    plt = _pyplot()
    levels = sorted({r.keys["level"] for r in results})
    fig, axes = plt.subplots(1, 2, figsize=(9.0, 3.6))
    width = 0.8 / len(ARMS)
    for j, arm in enumerate(ARMS):
        values = []
        for level in levels:
            rows = [r for r in results if r.ok and r.keys["level"] == level]
            values.append(
                np.mean([r.metrics[f"mse_traj_{arm}"] for r in rows])
                if rows
                else np.nan
            )
        axes[0].bar(np.arange(len(levels)) + j * width, values, width, label=arm)
    axes[0].set_xticks(np.arange(len(levels)) + 0.4 - width / 2)
    axes[0].set_xticklabels([f"{lv:g}" for lv in levels])
    axes[0].set_xlabel("noise level")
    axes[0].set_title("trajectory MSE", fontsize=10)
    axes[0].legend(fontsize=8)
    rel = []
    for level in levels:
        rows = [r for r in results if r.ok and r.keys["level"] == level]
        rel.append(
            np.mean([r.metrics["mse_input_rel"] for r in rows]) if rows else np.nan
        )
    axes[1].bar(np.arange(len(levels)), rel, 0.6)
    axes[1].set_xticks(np.arange(len(levels)))
    axes[1].set_xticklabels([f"{lv:g}" for lv in levels])
    axes[1].set_xlabel("noise level")
    axes[1].set_title("relative command-correction MSE", fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
