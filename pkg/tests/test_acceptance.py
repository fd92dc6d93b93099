"""Acceptance gate: each criterion runs at its stated tolerance and records one line."""

import math
import time

import numpy as np

from qbmtrain.densemath import random_density_matrix, trace_distance
from qbmtrain.estimator.emulators import (
    SUCCESS_PROB,
    ShotModel,
    ae_error_bound,
    amplitude_estimate,
    exact_unitary_factor,
    lmr_evolve,
)
from qbmtrain.estimator.general import grad_general, term_value
from qbmtrain.estimator.stencil import stencil_weights
from qbmtrain.harness.config import InstanceSpec, OptimizerSpec, RunConfig
from qbmtrain.harness.runs import run_train
from qbmtrain.model import (
    grad_exact,
    grad_fd,
    grad_visible_closed,
    objective,
    random_instance,
    visible_marginal,
)
from qbmtrain.series import identity_fourier, log_fourier
from qbmtrain.variational import grad_variational, grad_variational_sampled, variational_bound

from conftest import record_acceptance


def _shapes(n, rng, max_v=3, max_h=2, max_D=12):
    out = []
    while len(out) < n:
        n_v, n_h = int(rng.integers(1, max_v + 1)), int(rng.integers(0, max_h + 1))
        pool = 4**n_v * 2**n_h - 1 if n_h else 4**n_v - 1
        D = int(rng.integers(1, min(max_D, pool) + 1))
        out.append((n_v, n_h, D))
    return out


def test_acceptance_01_oracle_agreement():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for i, (n_v, n_h, D) in enumerate(_shapes(50, rng)):
        inst = random_instance(n_v, n_h, D, 1000 + i, restricted=bool(i % 2))
        ge = grad_exact(inst.rho_target, inst.model, inst.theta).values
        fd = grad_fd(inst.rho_target, inst.model, inst.theta).values
        worst = max(worst, float(np.max(np.abs(ge - fd))))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-5 and dt <= 60
    record_acceptance(1, ok, f"grad_exact vs grad_fd, 50 instances: max dev {worst:.2e} (<= 1e-5), {dt:.1f}s (<= 60s)")
    assert ok


def test_acceptance_02_closed_form():
    worst = 0.0
    for i in range(50):
        n_v = 1 + i % 3
        inst = random_instance(n_v, 0, min(12, 4**n_v - 1), 2000 + i)
        ge = grad_exact(inst.rho_target, inst.model, inst.theta).values
        gc = grad_visible_closed(inst.rho_target, inst.model, inst.theta).values
        worst = max(worst, float(np.max(np.abs(ge - gc))))
    ok = worst <= 1e-9
    record_acceptance(2, ok, f"n_h=0 grad_exact vs closed form, 50 instances: max dev {worst:.2e} (<= 1e-9)")
    assert ok


def test_acceptance_03_variational_dominance():
    rng = np.random.default_rng(303)
    worst_gap = math.inf
    for i, (n_v, n_h, D) in enumerate(_shapes(100, rng, max_h=3)):
        n_h = max(n_h, 1)
        D = min(D, 4**n_v * 2**n_h - 1)
        inst = random_instance(n_v, n_h, D, 3000 + i, restricted=True)
        gap = variational_bound(inst.rho_target, inst.model, inst.theta) - objective(inst.rho_target, inst.model, inst.theta)
        worst_gap = min(worst_gap, gap)
    tight = 0.0
    for i in range(20):
        inst = random_instance(1 + i % 3, 0, 3, 3500 + i)
        tight = max(tight, abs(variational_bound(inst.rho_target, inst.model, inst.theta) - objective(inst.rho_target, inst.model, inst.theta)))
    ok = worst_gap >= -1e-9 and tight <= 1e-12
    record_acceptance(3, ok, f"S~ - S over 100 restricted instances: min {worst_gap:.2e} (>= -1e-9); n_h=0 |S~ - S| max {tight:.1e}")
    assert ok


def test_acceptance_04_variational_gradient():
    rng = np.random.default_rng(404)
    worst = 0.0
    h = 1e-5
    for i, (n_v, n_h, D) in enumerate(_shapes(50, rng)):
        inst = random_instance(n_v, n_h, D, 4000 + i, restricted=True)
        rho, m, th = inst.rho_target, inst.model, inst.theta
        g = grad_variational(rho, m, th).values
        fd = np.array([
            (variational_bound(rho, m, th + h * e) - variational_bound(rho, m, th - h * e)) / (2 * h)
            for e in np.eye(m.D)
        ])
        worst = max(worst, float(np.max(np.abs(g - fd))))
    ok = worst <= 1e-5
    record_acceptance(4, ok, f"variational gradient vs FD of S~, 50 instances: max dev {worst:.2e} (<= 1e-5)")
    assert ok


def test_acceptance_05_sampled_variational():
    inst = random_instance(2, 1, 6, 0)
    ref = grad_variational(inst.rho_target, inst.model, inst.theta).values
    t0 = time.perf_counter()
    rates = {}
    for mode in ("ae", "bernoulli"):
        hits = 0
        for seed in range(200):
            g = grad_variational_sampled(inst.rho_target, inst.model, inst.theta, 0.1, ShotModel(mode), seed)
            hits += np.max(np.abs(g.values - ref)) <= 0.1
        rates[mode] = hits / 200
    dt = time.perf_counter() - t0
    ok = all(r >= 2 / 3 for r in rates.values()) and dt <= 300
    record_acceptance(
        5, ok,
        f"eps=0.1, 200 seeds: within eps ae {rates['ae']:.3f}, bernoulli {rates['bernoulli']:.3f} (>= 2/3), {dt:.1f}s (<= 300s)",
    )
    assert ok


def test_acceptance_06_series_certification():
    x = np.random.default_rng(606).uniform(0.1, 0.3, 100_000)
    lg = log_fourier(0.1, 0.3, 1e-3)
    ident = identity_fourier(0.1, 0.3, 1e-3)
    e_log = float(np.max(np.abs(lg(x) - np.log(x))))
    e_id = float(np.max(np.abs(ident(x) - x)))
    a_l1 = sum(1.0 / k for k in range(1, lg.meta["K1"] + 1))
    ok = e_log <= 1e-3 and e_id <= 1e-3 and lg.l1_norm <= a_l1 and ident.l1_norm <= 1.0
    record_acceptance(
        6, ok,
        f"[0.1,0.3], 1e5 points: log err {e_log:.2e}, identity err {e_id:.2e} (<= 1e-3); "
        f"|c|_1 {lg.l1_norm:.3f} <= |a|_1 {a_l1:.3f}, |c~|_1 {ident.l1_norm:.3f} <= 1",
    )
    assert ok


def test_acceptance_07_stencil():
    worst_exact = worst_sum = 0.0
    norm_ok = True
    for mu in range(5, 22, 2):
        for Delta in (0.25, 0.5, 1.0):
            st = stencil_weights(mu, Delta, 0.3)
            worst_sum = max(worst_sum, abs(st.dweights.sum()) * Delta / mu)
            for deg in range(mu):
                exact = deg * 0.3 ** (deg - 1) if deg else 0.0
                worst_exact = max(worst_exact, abs(st.apply(st.nodes**deg) - exact) / max(1.0, abs(exact)))
            norm_ok &= float(np.max(np.abs(st.dweights))) <= st.norm_bound()
    ok = worst_exact <= 1e-8 and worst_sum <= 1e-12 and norm_ok
    record_acceptance(
        7, ok,
        f"mu in 5..21: poly exactness rel err {worst_exact:.1e}, |sum w| {worst_sum:.1e}, "
        f"|L'|_inf bound {'holds' if norm_ok else 'VIOLATED'}",
    )
    assert ok


def test_acceptance_08_general_estimator():
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(20):
        inst = random_instance(2, 1, 6, 8000 + i, spectrum=(0.1, 0.3))
        g = grad_general(inst.rho_target, inst.model, inst.theta, 0.05)
        ref = grad_exact(inst.rho_target, inst.model, inst.theta).values
        worst = max(worst, float(np.max(np.abs(g.values - ref))))
    monotone = True
    sweeps = []
    for i in range(3):
        inst = random_instance(2, 1, 6, 8000 + i, spectrum=(0.1, 0.3))
        ref = grad_exact(inst.rho_target, inst.model, inst.theta).values
        M1, Delta, errs = None, 0.5, []
        for _ in range(3):
            g = grad_general(inst.rho_target, inst.model, inst.theta, 0.05, M1=M1, Delta=Delta)
            errs.append(float(np.max(np.abs(g.values - ref))))
            M1, Delta = 2 * g.diagnostics["log_series"]["M"], Delta / 2
        monotone &= all(b <= a for a, b in zip(errs, errs[1:]))
        sweeps.append(errs)
    dt = time.perf_counter() - t0
    ok = worst <= 0.05 and monotone and dt <= 600
    sweep_txt = " | ".join(" > ".join(f"{e:.1e}" for e in s) for s in sweeps)
    record_acceptance(
        8, ok,
        f"20 instances: max err {worst:.2e} (<= 0.05); refinement {sweep_txt} "
        f"({'monotone' if monotone else 'NOT monotone'}); {dt:.1f}s (<= 600s)",
    )
    assert ok


def test_acceptance_09_subroutines():
    rng = np.random.default_rng(909)
    amps = [0.0, 1.0, 0.02, 0.1, 0.25, 0.3, 0.5, 0.66, 0.9, 0.99]
    worst_cov, certain_ok = 1.0, True
    for N in (16, 64, 256, 1024):
        for a in amps:
            est = amplitude_estimate(a, N, rng, size=100_000)
            cov = float(np.mean(np.abs(est - a) <= ae_error_bound(a, N) + 1e-15))
            if a in (0.0, 1.0):
                certain_ok &= bool(np.all(est == a))
            else:
                worst_cov = min(worst_cov, cov)
    worst_lmr = 0.0
    lmr_ok = True
    for t in (1.0, 2.0, 4.0):
        for eps_h in (0.01, 0.02, 0.05):
            for _ in range(3):
                rho, sig = random_density_matrix(2, rng), random_density_matrix(2, rng)
                u = exact_unitary_factor(sig, t)
                d = trace_distance(lmr_evolve(rho, sig, t, eps_h), u @ rho @ u.conj().T)
                worst_lmr = max(worst_lmr, d / eps_h)
                lmr_ok &= d <= eps_h
    inst = random_instance(2, 1, 6, 0, spectrum=(0.1, 0.3))
    s0 = visible_marginal(inst.model, inst.theta)
    th = inst.theta.copy()
    th[1] += 0.04
    s1 = visible_marginal(inst.model, th)
    term_ok, worst_term = True, 0.0
    for eps_h in (0.01, 0.02, 0.05):
        bound = eps_h * (1 + eps_h) ** 2 + eps_h * (1 + eps_h) + eps_h
        sm = ShotModel("exact", lmr=True, eps_h=eps_h)
        for _ in range(20):
            m, mp, s = int(rng.integers(-40, 41)), int(rng.integers(-40, 41)), float(rng.uniform())
            dev = abs(term_value(inst.rho_target, s0, s1, m, mp, s, sm) - term_value(inst.rho_target, s0, s1, m, mp, s))
            worst_term = max(worst_term, dev / bound)
            term_ok &= dev <= bound
    ok = worst_cov >= SUCCESS_PROB and certain_ok and lmr_ok and term_ok
    record_acceptance(
        9, ok,
        f"AE min coverage {worst_cov:.4f} (>= {SUCCESS_PROB:.4f}), a=0/1 certain {certain_ok}; "
        f"LMR max dist/eps_h {worst_lmr:.2f} (<= 1); term dev/bound max {worst_term:.2f} (<= 1)",
    )
    assert ok


def _train(mode, seed, shot_mode="exact"):
    cfg = RunConfig(mode=mode, seed=seed, instance=InstanceSpec(seed=seed),
                    optimizer=OptimizerSpec(learning_rate=0.1, iterations=500))
    cfg.shot_model.mode = shot_mode
    return run_train(cfg)


def test_acceptance_10_training():
    exact = _train("train-exact", 0).final_objective
    var = _train("train-variational", 0).final_objective
    exact_seeds = [_train("train-exact", s).final_objective for s in range(1, 6)]
    # informational: the variational minimizer is not the objective minimizer on every target
    var_seeds = [_train("train-variational", s).final_objective for s in range(1, 8)]
    a = _train("train-variational", 0, "bernoulli")
    b = _train("train-variational", 0, "bernoulli")
    repro = a.metrics == b.metrics and a.theta_final == b.theta_final
    ok = exact <= 1e-2 and var <= 1e-2 and all(e <= 1e-2 for e in exact_seeds) and repro
    n_var = sum(v <= 1e-2 for v in var_seeds)
    record_acceptance(
        10, ok,
        f"default instance: exact {exact:.1e}, variational {var:.1e} (<= 1e-2); exact seeds 1-5 max "
        f"{max(exact_seeds):.1e}; bit-reproducible {repro}; [info] variational seeds 1-7 reaching 1e-2: {n_var}/7",
    )
    assert ok
