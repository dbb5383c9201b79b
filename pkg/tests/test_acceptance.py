"""Acceptance criteria 1-8, one PASS/FAIL line each.

Run ``pytest tests/test_acceptance.py -s`` to see the lines, or execute the
file directly for a plain summary.
"""

import json
import time
import warnings

import numpy as np

import oracles as o
from hyperstab import catalog
from hyperstab.certify import (CERTIFIED_RELAXED, CERTIFIED_STRICT, REJECTED, RELAXED, STRICT,
                               RelaxationWarning, WeightSpec, boundary_matrix, certify, check_interior, iss_gains,
                               sample_weights)
from hyperstab.linalg import jacobi_eigenvalues, sym
from hyperstab.model import Grid, spec_from_dict
from hyperstab.sim import (DisturbanceSpec, check_iss_bound, convergence_study, fit_decay_rate, simulate,
                           v_dissipation_violations)
from hyperstab.synth import synthesize
from test_linalg import analytic_2x2, analytic_3x3

G512 = Grid(512, 1.0)
RESULTS = {}


def report(n, ok, elapsed, limit, detail):
    ok = bool(ok) and elapsed < limit
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  ({elapsed:.2f}s / {limit:g}s)  {detail}"
    print(line)
    RESULTS[n] = line
    assert ok, line


def relaxed(spec, weights):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RelaxationWarning)
        return certify(spec, weights, mode=RELAXED)


def test_criterion_1_parameter_pipeline():
    t0 = time.perf_counter()
    eps = catalog.exchange_epsilon(0.25, 1.0)
    k_design = catalog.exchange_design_gain(0.25, 1.0)
    f = sample_weights(catalog.exchange_system(), catalog.exchange_weights(), G512)
    rel = check_interior(f, 0.25, RELAXED).threshold
    strict = check_interior(f, 0.25, STRICT).threshold
    n_err = 0.0
    for k in (0.0, 0.25, 0.5, 0.75, k_design, 1.0):
        spec = catalog.exchange_system(k=k)
        N = boundary_matrix(spec, sample_weights(spec, catalog.exchange_weights(), G512))
        n_err = max(n_err, np.max(np.abs(N - np.diag([1.5 - 3.5 * (1 - k) ** 2, 0.0]))))
    errs = [abs(eps - 1.5), abs(rel - 2 / 7), abs(strict - 1 / 7), abs(k_design - np.sqrt(3 / 7)), n_err]
    report(1, max(errs) <= 1e-9, time.perf_counter() - t0, 1.0,
           f"eps={eps:.6f} relaxed={rel:.6f} strict={strict:.6f} k={k_design:.6f} max err={max(errs):.1e}")


def test_criterion_2_verdict_matrix():
    t0 = time.perf_counter()
    w = catalog.exchange_weights()
    verdicts = {k: relaxed(catalog.exchange_system(k=k), w).verdict for k in (0.5, 0.75, o.K_DESIGN, 0.0)}
    strict = certify(catalog.exchange_system(), w, mode=STRICT)
    ok = (all(verdicts[k] == CERTIFIED_RELAXED for k in (0.5, 0.75, o.K_DESIGN)) and verdicts[0.0] == REJECTED
          and strict.verdict == REJECTED and abs(strict.interior_margin + 0.107143) <= 1e-6)
    report(2, ok, time.perf_counter() - t0, 1.0,
           f"relaxed {[verdicts[k] for k in (0.5, 0.75, o.K_DESIGN, 0.0)]}, strict margin "
           f"{strict.interior_margin:.6f}")


def test_criterion_3_traveling_wave():
    t0 = time.perf_counter()
    tr = simulate(catalog.exchange_system(k=0.0), catalog.traveling_wave_initial(), 5.0, Grid(200, 1.0), cfl=1.0)
    drift = float(np.max(np.abs(tr.l2 / tr.l2[0] - 1)))
    report(3, drift <= 1e-8, time.perf_counter() - t0, 5.0, f"max relative norm drift {drift:.2e}")


def test_criterion_4_closed_loop_decay():
    t0 = time.perf_counter()
    ratio = {}
    for k in (0.75, 0.5, 0.0):
        tr = simulate(catalog.exchange_system(k=k), catalog.exchange_initial(), 30.0, Grid(200, 1.0))
        ratio[k] = tr.l2[-1] / tr.l2[0]
    ok = ratio[0.75] <= 0.05 and ratio[0.5] <= 0.05 and ratio[0.0] >= 0.5
    report(4, ok, time.perf_counter() - t0, 30.0,
           "||u(30)||/||u0||: " + ", ".join(f"k={k}: {r:.4g}" for k, r in ratio.items()))


def test_criterion_5_strict_certificate_simulated():
    t0 = time.perf_counter()
    spec, w = catalog.damped_exchange(), catalog.damped_exchange_weights()
    cert = certify(spec, w)
    g = Grid(200, 1.0)
    tr = simulate(spec, ["sin(pi*x)", "cos(pi*x)"], 60.0, g, J2=sample_weights(spec, w, g).J2)
    fit = fit_decay_rate(tr)
    bad = v_dissipation_violations(tr, cert.decay_rate_norm, g.dx)
    ok = (cert.verdict == CERTIFIED_STRICT and abs(cert.decay_rate_norm - 0.041970) <= 1e-5
          and abs(cert.gain - np.exp(0.5)) <= 1e-6 and fit.rate >= 0.95 * 0.041970 and not bad)
    report(5, ok, time.perf_counter() - t0, 30.0,
           f"rate={cert.decay_rate_norm:.6f} gain={cert.gain:.6f} fitted={fit.rate:.4f} "
           f"V violations={len(bad)}")


def test_criterion_6_iss():
    t0 = time.perf_counter()
    spec = catalog.damped_exchange()
    cert = iss_gains(spec, catalog.damped_exchange_weights())
    g = cert.iss
    dist = DisturbanceSpec.from_strings(["0.1*sin(t)", "0"], ["0.05*sin(2*t)", "0"])
    tr = simulate(spec, ["sin(pi*x)", "cos(pi*x)"], 40.0, Grid(200, 1.0), disturbances=dist)
    check = check_iss_bound(tr, cert)
    # epsilon is checked against the independent oracle (4.886071); the
    # hand-derived 4.885554 is off by 5e-4, see the decisions ledger
    ok = (abs(g.epsilon - o.DAMPED_EPS) <= 1e-4 and abs(g.C1 - 1.648721) <= 1e-5
          and abs(g.C2 - 6.268088) <= 1e-3 and abs(g.C2 - o.C2) <= 1e-6 and check.max_ratio <= 1.05)
    report(6, ok, time.perf_counter() - t0, 60.0,
           f"eps={g.epsilon:.6f} C1={g.C1:.6f} C2={g.C2:.6f} max_ratio={check.max_ratio:.4f}")


def test_criterion_7_synthesis():
    t0 = time.perf_counter()
    spec = catalog.damped_exchange()
    r = synthesize(spec, seed=0)
    elapsed = time.perf_counter() - t0
    ok = r.success and r.certificate.verdict == CERTIFIED_STRICT and r.certificate.decay_rate_norm >= 0.035
    again = certify(spec, WeightSpec.from_dict(json.loads(json.dumps(r.weights.to_dict())))) if r.success else None
    ok = ok and again.verdict == r.certificate.verdict
    rate = r.certificate.decay_rate_norm if r.certificate else float("nan")
    report(7, ok, elapsed, 30.0, f"{r.message}, rate={rate:.4f}, family={r.family}, check agrees={ok}")


def test_criterion_8_property_suites():
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    eig_err = 0.0
    for _ in range(1000):
        a, b, c = rng.uniform(-10, 10, 3)
        eig_err = max(eig_err, np.max(np.abs(jacobi_eigenvalues([[a, b], [b, c]]) - analytic_2x2(a, b, c))))
        A = sym(rng.uniform(-10, 10, (3, 3)))
        eig_err = max(eig_err, np.max(np.abs(jacobi_eigenvalues(A) - analytic_3x3(A))))

    spec, w = catalog.damped_exchange(), catalog.damped_exchange_weights()
    base = certify(spec, w).verdict
    scaling = all(certify(spec, WeightSpec.from_strings([f"{c!r}*exp(-0.5*x)", f"{c!r}*exp(0.5*x)"])).verdict
                  == base for c in (1e-3, 1.0, 1e3))

    def with_K(K):
        d = catalog.damped_exchange_dict()
        d["boundary"] = {"G": ["0", "0"], "K": K.tolist()}
        return spec_from_dict(d)

    loewner = True
    for _ in range(100):
        K = rng.uniform(0, 1.2, (2, 2))
        K2 = K + rng.uniform(0, 0.5, (2, 2)) * (rng.random((2, 2)) < 0.5)
        a, b = certify(with_K(K), w), certify(with_K(K2), w)
        loewner &= b.boundary_min_eig <= a.boundary_min_eig + 1e-12 and (a.boundary_psd or not b.boundary_psd)

    g = Grid(200, 1.0)
    J2 = sample_weights(spec, w, g).J2
    tr = simulate(spec, ["sin(pi*x)", "cos(pi*x)"], 20.0, g, J2=J2)
    n2 = tr.l2 ** 2
    equiv = bool(np.all(J2.min() * n2 <= tr.V * (1 + 1e-12)) and np.all(tr.V <= J2.max() * n2 * (1 + 1e-12)))

    d = catalog.damped_exchange_dict()
    d["lambda"] = ["1+0.5*x", "-(1+0.5*sin(x))"]
    conv = convergence_study(spec_from_dict(d), ["sin(pi*x)^2", "sin(2*pi*x)^2"], 0.5,
                             [Grid(n, 1.0) for n in (100, 200, 400, 800)])
    order_ok = conv.order is not None and 0.8 <= conv.order <= 1.2

    ok = eig_err <= 1e-10 and scaling and loewner and equiv and order_ok
    report(8, ok, time.perf_counter() - t0, 60.0,
           f"eig err={eig_err:.1e} scaling={scaling} loewner={loewner} norm-equiv={equiv} "
           f"order={conv.order:.3f}")


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_criterion_"):
            try:
                fn()
            except AssertionError:
                pass
