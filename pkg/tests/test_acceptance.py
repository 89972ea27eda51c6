"""End-to-end acceptance checks.

Each test exercises one acceptance criterion at its stated tolerance and
prints a single PASS/FAIL line with the measured numbers (the lines are
emitted outside pytest's capture so they always reach the terminal).
Criteria 5-7 drive the real command-line entry point and read back the
emitted CSV files.
"""

import csv
import time

import numpy as np
import pytest

from conftest import fit_random_model, linear_snapshots, make_operator
from koopman_robust import (
    VAN_DER_POL,
    NoiseSpec,
    SnapshotSet,
    TrainingConfig,
    build_identity_dictionary,
    build_poly_dictionary,
    delta_K,
    eigen_sensitivities,
    eigendecompose,
    evaluate,
    fit_koopman,
    generate_training_data,
    load_artifacts,
    mode_term_derivative,
    partial_A,
    partial_G,
    pinv_derivative,
    predict,
    predict_mode_sum,
    prediction_error,
    save_artifacts,
    step_online,
    train_offline,
)
from koopman_robust.cli import main
from test_sensitivity import (
    fd_gram,
    match_index,
    mode_sum_with_operator,
    model_from_K,
    rel_err,
)

EPS = 1e-6


def _report(capsys, num, label, ok, detail):
    with capsys.disabled():
        status = "PASS" if ok else "FAIL"
        print(f"\nacceptance criterion {num} [{status}] {label}: {detail}")
    assert ok, f"criterion {num} failed: {detail}"


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# criterion 1: every analytic derivative matches central finite differences
# ---------------------------------------------------------------------------

def crit1_gram_derivatives():
    worst_G = worst_A = 0.0
    d = build_poly_dictionary(2, 1, 1)
    rng = np.random.default_rng(1001)
    for t in range(20):
        snaps, _, _ = linear_snapshots(1100 + t, n_state=2, M=40)
        coord = int(rng.integers(2))
        m_G = int(rng.integers(0, snaps.M))        # the last snapshot never enters G
        m_A = int(rng.integers(0, snaps.M + 1))
        dG_fd, _ = fd_gram(snaps, d, m_G, coord, h=EPS)
        _, dA_fd = fd_gram(snaps, d, m_A, coord, h=EPS)
        worst_G = max(worst_G, rel_err(partial_G(snaps, d, m_G, coord), dG_fd))
        worst_A = max(worst_A, rel_err(partial_A(snaps, d, m_A, coord), dA_fd))
    return {"dG": worst_G, "dA": worst_A}


def crit1_pinv_derivative():
    worst = 0.0
    for t in range(20):
        rng = np.random.default_rng(1200 + t)
        R = rng.standard_normal((5, 5))
        G = R @ R.T + 2.0 * np.eye(5)
        dG = rng.standard_normal((5, 5))
        dG = dG + dG.T
        got = pinv_derivative(G, np.linalg.inv(G), dG)
        fd = (np.linalg.pinv(G + EPS * dG) - np.linalg.pinv(G - EPS * dG)) / (2 * EPS)
        worst = max(worst, rel_err(got, fd))
    return {"pinv": worst}


def crit1_spectral_derivatives():
    worst = {"lam": 0.0, "xi": 0.0, "w": 0.0}
    rng = np.random.default_rng(1300)
    for t in range(20):
        Q = int(rng.integers(4, 9))
        K = make_operator(Q, 1400 + t)
        model = model_from_K(K)
        sens = eigen_sensitivities(model)
        lam, Xi, W = model.eigvals, model.right_vecs, model.left_vecs
        q, a, b = (int(rng.integers(Q)) for _ in range(3))
        E = np.zeros((Q, Q))
        E[a, b] = EPS
        lp, Xp, Wp = eigendecompose(K + E)
        lm, Xm, Wm = eigendecompose(K - E)
        jp, jm = match_index(lam[q], lp), match_index(lam[q], lm)

        fd_lam = (lp[jp] - lm[jm]) / (2 * EPS)
        worst["lam"] = max(worst["lam"], abs(sens.c_lambda[q, a, b] - fd_lam) / abs(fd_lam))

        wq, xq = W[:, q], Xi[:, q]
        xi_p = Xp[:, jp] / (wq.conj() @ Xp[:, jp])
        xi_m = Xm[:, jm] / (wq.conj() @ Xm[:, jm])
        worst["xi"] = max(worst["xi"], rel_err(sens.c_xi(q, a, b), (xi_p - xi_m) / (2 * EPS)))

        yp = Wp[:, jp].conj() / (Wp[:, jp].conj() @ xq)
        ym = Wm[:, jm].conj() / (Wm[:, jm].conj() @ xq)
        worst["w"] = max(worst["w"], rel_err(sens.c_w(q, a, b), (yp - ym) / (2 * EPS)))
    return worst


def crit1_mode_term():
    worst = 0.0
    rng = np.random.default_rng(1500)
    for t in range(20):
        model = fit_random_model(1600 + t, n_state=2, degree=1, M=80)
        sens = eigen_sensitivities(model)
        psi = evaluate(
            model.dictionary, rng.uniform(-1, 1, size=2), rng.uniform(-1, 1, size=1)
        )
        a = int(rng.integers(model.size))
        b = int(rng.integers(2))  # rows of B beyond the state block are zero
        E = np.zeros_like(model.K)
        E[a, b] = EPS
        fd = (
            mode_sum_with_operator(model.K + E, model, psi)
            - mode_sum_with_operator(model.K - E, model, psi)
        ) / (2 * EPS)
        worst = max(worst, rel_err(mode_term_derivative(model, sens, psi, a, b), fd))
    return {"mode": worst}


def crit1_operator_perturbation():
    from koopman_robust import compute_g_a, estimate_koopman

    worst = 0.0
    d = build_poly_dictionary(2, 1, 1)
    for t in range(20):
        snaps, _, _ = linear_snapshots(1700 + t, n_state=2, M=50)
        model = fit_koopman(snaps, d)
        rng = np.random.default_rng(1800 + t)
        R = rng.uniform(-1, 1, size=(2, 51))

        def retrain(s):
            G, A = compute_g_a(SnapshotSet(X=snaps.X + s * R, U=snaps.U), d)
            return estimate_koopman(G, A)

        fd = (retrain(EPS) - retrain(-EPS)) / (2 * EPS)
        worst = max(worst, rel_err(delta_K(snaps, d, model, R).sum(axis=0), fd))
    return {"dK": worst}


def test_criterion_1_derivative_oracles(capsys):
    t0 = time.perf_counter()
    worst = {}
    for part in (
        crit1_gram_derivatives,
        crit1_pinv_derivative,
        crit1_spectral_derivatives,
        crit1_mode_term,
        crit1_operator_perturbation,
    ):
        worst.update(part())
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-3 and elapsed < 60.0
    detail = (
        "20 random trials each, worst relative errors "
        + ", ".join(f"{k}={v:.2e}" for k, v in sorted(worst.items()))
        + f" (tol 1e-3), runtime {elapsed:.1f}s (limit 60s)"
    )
    _report(capsys, 1, "derivative oracles vs finite differences", ok, detail)


# ---------------------------------------------------------------------------
# criterion 2: all-zero noise collapses the whole estimate to exact zeros
# ---------------------------------------------------------------------------

def test_criterion_2_zero_noise_degeneracy(capsys):
    cases = []
    snaps2, _, _ = linear_snapshots(210, n_state=2, M=150)
    cases.append((snaps2, build_poly_dictionary(2, 1, 2)))
    snaps3, _, _ = linear_snapshots(211, n_state=3, M=150)
    cases.append((snaps3, build_poly_dictionary(3, 1, 2)))
    cfg = TrainingConfig(M=800, Ts=0.01, noise=NoiseSpec.zero(2), seed=9)
    vdp_clean, _ = generate_training_data(VAN_DER_POL, cfg)
    cases.append((vdp_clean, build_poly_dictionary(2, 1, 3)))

    rng = np.random.default_rng(212)
    ok = True
    for snaps, d in cases:
        art = train_offline(snaps, d, NoiseSpec.zero(snaps.n_state))
        ok &= not np.any(art.sens.delta_K)
        for _ in range(5):
            x = rng.uniform(-0.5, 0.5, size=snaps.n_state)
            u = rng.uniform(-1, 1, size=snaps.n_input)
            psi = evaluate(d, x, u)
            ok &= np.array_equal(
                prediction_error(art.model, art.sens, psi),
                np.zeros(snaps.n_state),
            )
            _, delta = step_online(art, x, u)
            ok &= np.array_equal(delta, np.zeros(snaps.n_state))
    detail = "3 trained models, delta_K and per-step error bit-exactly zero"
    _report(capsys, 2, "zero-noise degeneracy", ok, detail)


# ---------------------------------------------------------------------------
# criterion 3: fast prediction path vs mode sum, and serialization
# ---------------------------------------------------------------------------

def test_criterion_3_offline_online_equivalence(capsys, tmp_path):
    rng = np.random.default_rng(31)
    worst = 0.0
    for t in range(50):
        n_state = 2 if t % 2 == 0 else 3
        model = fit_random_model(3100 + t, n_state=n_state, degree=1 + t % 2)
        for _ in range(3):
            x = rng.uniform(-1, 1, size=n_state)
            u = rng.uniform(-1, 1, size=1)
            gap = np.abs(predict(model, x, u) - predict_mode_sum(model, x, u)).max()
            worst = max(worst, gap)
    ok = worst <= 1e-12

    snaps, _, _ = linear_snapshots(320, n_state=2, M=120)
    art = train_offline(
        snaps,
        build_poly_dictionary(2, 1, 2),
        NoiseSpec.uniform(low=np.zeros(2), high=0.02 * np.ones(2), seed=3),
    )
    path = tmp_path / "model.npz"
    save_artifacts(art, path)
    back = load_artifacts(path)
    bit_identical = True
    for _ in range(5):
        x = rng.uniform(-0.5, 0.5, size=2)
        u = rng.uniform(-1, 1, size=1)
        p1, d1 = step_online(art, x, u)
        p2, d2 = step_online(back, x, u)
        bit_identical &= np.array_equal(p1, p2) and np.array_equal(d1, d2)
    ok = ok and bit_identical
    detail = (
        f"50 random models, worst prediction gap {worst:.2e} (tol 1e-12); "
        f"serialized round-trip bit-identical: {bit_identical}"
    )
    _report(capsys, 3, "offline/online equivalence", ok, detail)


# ---------------------------------------------------------------------------
# criterion 4: exactness on a linear plant
# ---------------------------------------------------------------------------

def test_criterion_4_linear_system_exactness(capsys):
    snaps, A, B = linear_snapshots(41, n_state=3, n_input=1, M=500)
    model = fit_koopman(snaps, build_poly_dictionary(3, 1, 2))
    rng = np.random.default_rng(42)
    worst_pred = 0.0
    for _ in range(20):
        x = rng.uniform(-0.5, 0.5, size=3)
        u = rng.uniform(-1, 1, size=1)
        gap = np.abs(predict(model, x, u) - (A @ x + B @ u)).max()
        worst_pred = max(worst_pred, gap)

    dmd = fit_koopman(snaps, build_identity_dictionary(3, 1))
    Z = np.vstack([snaps.X[:, :-1], snaps.U[:, :-1]]).T
    theta, _, _, _ = np.linalg.lstsq(Z, snaps.X[:, 1:].T, rcond=None)
    worst_dmd = np.abs(dmd.K[:, :3] - theta).max()

    ok = worst_pred <= 1e-8 and worst_dmd <= 1e-10
    detail = (
        f"one-step prediction error {worst_pred:.2e} (tol 1e-8); "
        f"identity-dictionary rows vs direct least squares {worst_dmd:.2e} (tol 1e-10)"
    )
    _report(capsys, 4, "linear-system exactness", ok, detail)


# ---------------------------------------------------------------------------
# criteria 5-7: the two studies through the command-line entry point
# ---------------------------------------------------------------------------

VDP_ARGS = [
    "vdp-study", "--m-list", "2000,20000", "--levels", "0.1,0.2,0.4",
    "--trials", "5", "--deterministic",
]
TRACKING_ARGS = ["tracking-study", "--trials", "10", "--deterministic"]


def run_study(args, outdir):
    t0 = time.perf_counter()
    rc = main(args + ["--outdir", str(outdir)])
    elapsed = time.perf_counter() - t0
    assert rc == 0, f"study exited with code {rc}"
    return elapsed


@pytest.fixture(scope="session")
def vdp_study(tmp_path_factory):
    outdir = tmp_path_factory.mktemp("acceptance_vdp")
    elapsed = run_study(VDP_ARGS, outdir)
    return outdir, elapsed


@pytest.fixture(scope="session")
def tracking_study(tmp_path_factory):
    outdir = tmp_path_factory.mktemp("acceptance_tracking")
    elapsed = run_study(TRACKING_ARGS, outdir)
    return outdir, elapsed


def test_criterion_5_vdp_study(capsys, vdp_study):
    outdir, elapsed = vdp_study
    summary = {
        (r["M"], r["level"]): float(r["D_r_x2_mean"])
        for r in read_rows(outdir / "summary.csv")
    }
    trend = {
        M: (summary[(M, "0.1")], summary[(M, "0.4")]) for M in ("2000", "20000")
    }
    trend_ok = all(d40 < d10 for d10, d40 in trend.values())

    trial_rows = [
        r for r in read_rows(outdir / "cases.csv")
        if r["trial"].isdigit() and r["level"] == "0.4"
    ]
    signs = [float(r["sign_match_x2"]) for r in trial_rows]
    sign_ok = len(signs) == 10 and np.mean(signs) >= 0.70

    time_ok = elapsed < 900.0
    ok = trend_ok and sign_ok and time_ok
    detail = (
        "D_r(x2) mean 10%->40%: "
        + "; ".join(f"M={M}: {d10:.1f}->{d40:.1f}" for M, (d10, d40) in trend.items())
        + f"; pooled sign agreement at 40%: {np.mean(signs):.3f} (need >=0.70)"
        + f"; runtime {elapsed:.1f}s (limit 900s)"
    )
    _report(capsys, 5, "oscillator noise study", ok, detail)


def test_criterion_6_tracking_study(capsys, tracking_study):
    outdir, elapsed = tracking_study
    rows = {r["level"]: r for r in read_rows(outdir / "summary.csv")}
    pairs = {
        lv: (
            float(rows[lv]["mse_traj_noisy_mean"]),
            float(rows[lv]["mse_traj_proposed_mean"]),
        )
        for lv in ("0.5", "0.75")
    }
    mse_ok = all(prop <= noisy for noisy, prop in pairs.values())
    complete_ok = all(r["n_ok"] == r["n_trials"] for r in rows.values())
    time_ok = elapsed < 600.0
    ok = mse_ok and complete_ok and time_ok
    detail = (
        "trajectory MSE noisy vs compensated: "
        + "; ".join(
            f"{float(lv) * 100:.0f}%: {n:.2f} vs {p:.2f}" for lv, (n, p) in pairs.items()
        )
        + f"; runtime {elapsed:.1f}s (limit 600s)"
    )
    _report(capsys, 6, "tracking study", ok, detail)


def test_criterion_7_determinism(capsys, tmp_path, vdp_study, tracking_study):
    identical = {}
    for name, args, (first_dir, _) in (
        ("vdp", VDP_ARGS, vdp_study),
        ("tracking", TRACKING_ARGS, tracking_study),
    ):
        rerun_dir = tmp_path / f"rerun_{name}"
        run_study(args, rerun_dir)
        identical[name] = (
            (first_dir / "cases.csv").read_bytes()
            == (rerun_dir / "cases.csv").read_bytes()
        )
    ok = all(identical.values())
    detail = "byte-identical cases.csv on rerun: " + ", ".join(
        f"{k}={v}" for k, v in identical.items()
    )
    _report(capsys, 7, "deterministic reruns", ok, detail)
