"""Search for Lyapunov weights when none are supplied.

Two diagonal families are searched, each with a constant diagonal D:

* affine: J_i^2 linear in x, parametrized by log J_i^2 at both ends;
* exponential: J_i^2 = a_i exp(s_i mu x), s_i = -1 for rightward
  components and +1 for leftward ones.

The objective is invariant under J^2 -> c J^2 and D -> c D, so J_1^2(0)
(or a_1) is pinned to 1 and D is normalized to max_i d_i = 1.  The second
normalization matters: the reported decay rate is not invariant under
D -> c D, and with D <= I it stays a valid (conservative) rate.

The search is multistart coordinate ascent with golden-section line
searches on ``margin_objective``; each cycle ends with one extra line
search along the displacement of the cycle, which lets the ascent slide
along the ridges where two eigenvalue terms of the objective meet.  All
parameters except mu live in log space, so positivity is automatic.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .certify import (CERT_GRID, RELAXED, STRICT, Certificate, LipschitzValue, WeightSpec, boundary_matrix,
                      boundary_weights, certify, check_interior, resolve_cg, sample_weights)
from .linalg import frobenius, smallest_eigenvalue
from .model import CoefficientSampler, Grid, SampledFields, SystemSpec

AFFINE = "affine"
EXPONENTIAL = "exponential"
FAMILIES = (AFFINE, EXPONENTIAL)

INIT_LOG_RANGE = (math.log(1e-2), math.log(1e2))
INIT_MU_RANGE = (0.0, 5.0)
LOG_BOUNDS = (math.log(1e-6), math.log(1e6))
MU_BOUNDS = (-20.0, 20.0)
LINE_HALF_WIDTH = 2.0
GOLDEN_STEPS = 18
IMPROVE_TOL = 1e-8
CG_FLOOR = 1e-6
INVGOLD = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class Budget:
    multistarts: int = 16
    iterations: int = 12

    def __post_init__(self):
        if self.multistarts < 1 or self.iterations < 1:
            raise ValueError("budget entries must be positive")


@dataclass
class SynthesisResult:
    success: bool
    weights: WeightSpec | None
    objective: float
    certificate: Certificate | None
    family: str | None
    trace: list = field(default_factory=list)  # (start, iteration, evaluations, objective)
    evaluations: int = 0
    message: str = ""

    def trace_to_csv(self, path) -> None:
        lines = ["start,iteration,evaluations,objective"]
        lines += [f"{s},{i},{e},{o:.17g}" for s, i, e, o in self.trace]
        Path(path).write_text("\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# Objective

def objective_from_fields(spec: SystemSpec, fields: SampledFields, C_g: float, mode: str = STRICT) -> float:
    interior = check_interior(fields, C_g, mode)
    W_in, _ = boundary_weights(spec, fields)
    N = boundary_matrix(spec, fields)
    boundary = smallest_eigenvalue(N) / max(frobenius(W_in), 1e-300)
    return float(min(interior.margin / max(C_g, CG_FLOOR), boundary))


def margin_objective(spec: SystemSpec, weights: WeightSpec, C_g: float | LipschitzValue,
                     mode: str = STRICT, grid: Grid | None = None) -> float:
    """min(interior margin / C_g, lambda_min(N) / ||W_in||_F).

    Positive iff both certificate conditions hold strictly; unchanged when
    J^2 is multiplied by a constant.
    """
    if isinstance(C_g, LipschitzValue):
        C_g = C_g.value
    fields = sample_weights(spec, weights, grid or Grid(CERT_GRID, spec.L))
    return objective_from_fields(spec, fields, float(C_g), mode)


# --------------------------------------------------------------------------
# Families

class _Family:
    """Maps a parameter vector to weight functions and expressions.

    Layout: free J^2 parameters (the first scale is pinned), then mu for the
    exponential family, then log d_2..d_n.
    """

    def __init__(self, kind: str, spec: SystemSpec):
        if kind not in FAMILIES:
            raise ValueError(f"unknown weight family {kind!r}")
        self.kind, self.n, self.m, self.L = kind, spec.n, spec.m, spec.L
        self.n_j = 2 * self.n - 1 if kind == AFFINE else self.n
        self.size = self.n_j + self.n - 1
        self.is_mu = np.zeros(self.size, dtype=bool)
        if kind == EXPONENTIAL:
            self.is_mu[self.n - 1] = True
        self.signs = np.array([-1.0 if i < self.m else 1.0 for i in range(self.n)])

    def initial(self, rng: np.random.Generator) -> np.ndarray:
        p = rng.uniform(*INIT_LOG_RANGE, size=self.size)
        p[self.is_mu] = rng.uniform(*INIT_MU_RANGE, size=int(self.is_mu.sum()))
        return p

    def bounds(self, k: int) -> tuple[float, float]:
        return MU_BOUNDS if self.is_mu[k] else LOG_BOUNDS

    def clip(self, p: np.ndarray) -> np.ndarray:
        lo = np.where(self.is_mu, MU_BOUNDS[0], LOG_BOUNDS[0])
        hi = np.where(self.is_mu, MU_BOUNDS[1], LOG_BOUNDS[1])
        return np.clip(p, lo, hi)

    def _D(self, p):
        d = np.exp(np.concatenate([[0.0], p[self.n_j:]]))
        return d / np.max(d)

    def _params(self, p):
        n = self.n
        if self.kind == AFFINE:
            ends = np.exp(np.concatenate([[0.0], p[:2 * n - 1]]))
            return ends[:n], ends[n:]
        return np.exp(np.concatenate([[0.0], p[:n - 1]])), p[n - 1]

    def functions(self, p: np.ndarray):
        n, L = self.n, self.L
        if self.kind == AFFINE:
            left, right = self._params(p)

            def J2(x):
                return left[:, None] + (right - left)[:, None] * (x[None, :] / L)
        else:
            a, mu = self._params(p)

            def J2(x):
                return a[:, None] * np.exp(np.outer(self.signs * mu, x))
        d = self._D(p)
        return J2, (lambda x: np.broadcast_to(d[:, None], (n, x.size)))

    def weights(self, p: np.ndarray) -> WeightSpec:
        n, L = self.n, self.L
        if self.kind == AFFINE:
            left, right = self._params(p)
            J2 = [f"{_lit(left[i])}+{_lit((right[i] - left[i]) / L)}*x" for i in range(n)]
        else:
            a, mu = self._params(p)
            J2 = [f"{_lit(a[i])}*exp({_lit(self.signs[i] * mu)}*x)" for i in range(n)]
        return WeightSpec.from_strings(J2, [_lit(v) for v in self._D(p)])


def _lit(v) -> str:
    v = float(v)
    return repr(v) if v >= 0 else f"(-{-v!r})"


# --------------------------------------------------------------------------
# Search

def _golden_max(f, lo: float, hi: float, steps: int) -> tuple[float, float]:
    a, b = lo, hi
    c = b - INVGOLD * (b - a)
    d = a + INVGOLD * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(steps):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - INVGOLD * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INVGOLD * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


def _ascend(start: int, family: _Family, score, p0: np.ndarray, iterations: int,
            rng: np.random.Generator):
    p = family.clip(p0)
    best = score(p)
    evals = 1
    trace = [(start, 0, evals, best)]

    def line(direction, lo, hi):
        base = p.copy()
        return _golden_max(lambda t: score(family.clip(base + t * direction)), lo, hi, GOLDEN_STEPS)

    for it in range(1, iterations + 1):
        before, p_start = best, p.copy()
        for k in range(family.size):
            lo_b, hi_b = family.bounds(k)
            e = np.zeros(family.size)
            e[k] = 1.0
            t, ft = line(e, max(lo_b, p[k] - LINE_HALF_WIDTH) - p[k], min(hi_b, p[k] + LINE_HALF_WIDTH) - p[k])
            evals += GOLDEN_STEPS + 2
            if ft > best:
                p, best = family.clip(p + t * e), ft
        step = p - p_start
        if np.any(step != 0):
            t, ft = line(step, -0.5, 2.0)
            evals += GOLDEN_STEPS + 2
            if ft > best:
                p, best = family.clip(p + t * step), ft
        # random directions escape corners where several terms of the min meet
        for _ in range(family.size):
            u = rng.standard_normal(family.size)
            u /= np.linalg.norm(u)
            t, ft = line(u, -LINE_HALF_WIDTH, LINE_HALF_WIDTH)
            evals += GOLDEN_STEPS + 2
            if ft > best:
                p, best = family.clip(p + t * u), ft
        trace.append((start, it, evals, best))
        if best - before < IMPROVE_TOL:
            break
    return p, best, evals, trace


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("HYPERSTAB_THREADS", "1")))
    except ValueError:
        return 1


def synthesize(spec: SystemSpec, C_g: float | LipschitzValue | None = None, mode: str = STRICT,
               budget: Budget | None = None, seed: int = 0,
               families: Sequence[str] = FAMILIES) -> SynthesisResult:
    """Multistart coordinate ascent over the weight families.

    Starts are spread round-robin over ``families``.  The result is a pure
    function of (spec, C_g, mode, budget, seed); ties go to the lowest
    start index.
    """
    if mode not in (STRICT, RELAXED):
        raise ValueError(f"unknown mode {mode!r}")
    budget = budget or Budget()
    if C_g is None:
        C_g = resolve_cg(spec, seed=seed)
    elif not isinstance(C_g, LipschitzValue):
        C_g = LipschitzValue(float(C_g), "certified")
    grid = Grid(CERT_GRID, spec.L)
    sampler = CoefficientSampler(spec, grid)
    fams = [_Family(k, spec) for k in families]
    seeds = np.random.SeedSequence(seed).spawn(budget.multistarts)

    def run(s: int):
        fam = fams[s % len(fams)]

        def score(p):
            J2, D = fam.functions(p)
            fields = sampler.sample(J2, D)
            if not np.all(fields.J2 > 0) or not np.all(fields.J2_ends > 0):
                return -math.inf
            return objective_from_fields(spec, fields, C_g.value, mode)

        rng = np.random.default_rng(seeds[s])
        return (fam,) + _ascend(s, fam, score, fam.initial(rng), budget.iterations, rng)

    workers = min(_threads(), budget.multistarts)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, range(budget.multistarts)))
    else:
        results = [run(s) for s in range(budget.multistarts)]

    # each result is (family, params, objective, evaluations, trace)
    trace = [row for r in results for row in r[4]]
    evaluations = sum(r[3] for r in results)
    best = max(range(len(results)), key=lambda s: (results[s][2], -s))
    fam, p, obj, _, _ = results[best]
    if not obj > 0:
        return SynthesisResult(False, None, float(obj), None, None, trace, evaluations,
                               f"no certificate found (best objective {obj:.6g})")
    weights = fam.weights(p)
    cert = certify(spec, weights, C_g, mode=mode, grid=grid, seed=seed)
    obj = margin_objective(spec, weights, C_g, mode, grid)
    if not cert.certified:
        return SynthesisResult(False, weights, obj, cert, fam.kind, trace, evaluations,
                               "best weights failed re-certification")
    return SynthesisResult(True, weights, obj, cert, fam.kind, trace, evaluations, cert.verdict)
