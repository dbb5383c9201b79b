"""Quadratic Lyapunov certificates for exponential stability and ISS.

The candidate is V(u) = int_0^L sum_i J_i^2(x) u_i^2 dx.  A certificate
combines

* an interior condition on -D (J^2 Lambda)' D + D J^2 M D + D M^T J^2 D and
  the Lipschitz constant C_g of g = B - M u, and
* a boundary condition: N = W_in - K^T W_out K must be positive
  semidefinite (definite for ISS), where W_in / W_out hold the weighted
  speeds at the outgoing / incoming ends.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import jsonschema
import numpy as np

from . import __version__
from .expr import Expression, VariableContext
from .linalg import congruence, is_pd, is_psd, smallest_eigenvalue
from .model import (CoefficientSampler, Grid, SampledFields, SpecError, SystemSpec, estimate_lipschitz,
                    load_schema)

CERT_GRID = 512
EPS_CAP = 1e6
WEIGHT_FLOOR = 1e-10

STRICT = "strict"
RELAXED = "relaxed"
CERTIFIED_STRICT = "certified-strict"
CERTIFIED_RELAXED = "certified-relaxed"
REJECTED = "rejected"

NONLOCAL_RELAXED_WARNING = "pointwise (local-source) interior bound applied to a nonlocal source"


class RelaxationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class WeightSpec:
    """Diagonal Lyapunov weights J^2(x), D(x) and optional linear split M(x)."""

    J2: tuple
    D: Optional[tuple] = None
    M: Optional[tuple] = None

    @classmethod
    def from_strings(cls, J2: Sequence[str], D: Sequence[str] | None = None,
                     M: Sequence[Sequence[str]] | None = None) -> "WeightSpec":
        ctx = VariableContext.coefficient()
        return cls(
            tuple(Expression(t, ctx) for t in J2),
            None if D is None else tuple(Expression(t, ctx) for t in D),
            None if M is None else tuple(tuple(Expression(t, ctx) for t in row) for row in M),
        )

    @classmethod
    def from_dict(cls, data: dict) -> "WeightSpec":
        try:
            jsonschema.validate(data, load_schema("weights"))
        except jsonschema.ValidationError as exc:
            raise SpecError(f"invalid weights file: {exc.message}") from None
        return cls.from_strings(data["J2"], data.get("D"), data.get("M"))

    @classmethod
    def load(cls, path) -> "WeightSpec":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise SpecError(f"{path}: not valid JSON ({exc})") from None

    def to_dict(self) -> dict:
        return {
            "J2": [e.text for e in self.J2],
            "D": None if self.D is None else [e.text for e in self.D],
            "M": None if self.M is None else [[e.text for e in row] for row in self.M],
        }

    def check_dims(self, n: int):
        if len(self.J2) != n or (self.D is not None and len(self.D) != n):
            raise SpecError(f"weights must have {n} components")
        if self.M is not None and (len(self.M) != n or any(len(r) != n for r in self.M)):
            raise SpecError("weights M must be n x n")

    def J2_fn(self, xx):
        return np.array([e.on_grid(xx) for e in self.J2])

    def D_fn(self):
        if self.D is None:
            return None
        return lambda xx: np.array([e.on_grid(xx) for e in self.D])

    def M_array(self, x: np.ndarray) -> np.ndarray | None:
        if self.M is None:
            return None
        n = len(self.M)
        return np.array([[self.M[i][j].on_grid(x) for j in range(n)] for i in range(n)])


def sample_weights(spec: SystemSpec, weights: WeightSpec, grid: Grid,
                   sampler: CoefficientSampler | None = None) -> SampledFields:
    weights.check_dims(spec.n)
    if sampler is None:
        sampler = CoefficientSampler(spec, grid, _effective_M(spec, weights, grid.x))
    fields = sampler.sample(weights.J2_fn, weights.D_fn())
    if np.any(fields.J2 < WEIGHT_FLOOR) or np.any(fields.J2_ends < WEIGHT_FLOOR):
        raise SpecError("J^2 weights must be >= 1e-10 on the grid")
    if np.any(fields.D < WEIGHT_FLOOR):
        raise SpecError("D weights must be >= 1e-10 on the grid")
    return fields


def _effective_M(spec: SystemSpec, weights: WeightSpec, x: np.ndarray) -> np.ndarray:
    M = weights.M_array(x)
    return spec.source.linear_part(x) if M is None else M


# --------------------------------------------------------------------------
# C_g

@dataclass(frozen=True)
class LipschitzValue:
    value: float
    provenance: str  # "certified" (user-supplied) or "estimated"


def resolve_cg(spec: SystemSpec, weights: WeightSpec | None = None, grid: Grid | None = None,
               seed: int = 0, n_samples: int = 400) -> LipschitzValue:
    """Lipschitz constant of g = B - M u for the M in use.

    A numeric constant from the system file is used when it refers to the
    same M; otherwise the constant is estimated by sampling.
    """
    src = spec.source
    grid = grid or Grid(128, spec.L)
    own_M = weights is not None and weights.M is not None
    same_M = not own_M or (src.M is not None and weights.M == src.M)
    if not own_M and src.M is None:
        declared = src.C_B
    elif same_M:
        declared = src.C_g
    else:
        declared = "estimate"
    if declared != "estimate":
        return LipschitzValue(float(declared), "certified")
    M = weights.M_array(grid.x) if own_M else (None if src.M is None else src.linear_part(grid.x))
    return LipschitzValue(estimate_lipschitz(src, grid, n_samples=n_samples, seed=seed, M=M), "estimated")


# --------------------------------------------------------------------------
# Interior condition

def interior_matrices(fields: SampledFields, use_D: bool = True) -> np.ndarray:
    """Interior matrices at every node, shape (nodes, n, n).

    With ``use_D`` this is -D(J^2 L)'D + D J^2 M D + D M^T J^2 D, otherwise
    the D-free form -(J^2 L)' + J^2 M + M^T J^2.
    """
    n = fields.J2.shape[0]
    J2M = fields.J2[:, None, :] * fields.M
    A = J2M + np.swapaxes(J2M, 0, 1)
    A[np.arange(n), np.arange(n), :] -= fields.dJ2lam
    if use_D:
        A = fields.D[:, None, :] * A * fields.D[None, :, :]
    A = np.moveaxis(A, -1, 0)
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def interior_matrix(fields: SampledFields, node: int, use_D: bool = True) -> np.ndarray:
    return interior_matrices(fields, use_D)[node]


@dataclass
class InteriorCheck:
    mode: str
    lambda_m: float
    threshold: float
    margin: float
    passed: bool


def check_interior(fields: SampledFields, C_g: float, mode: str = STRICT) -> InteriorCheck:
    if mode == STRICT:
        lam = smallest_eigenvalue(interior_matrices(fields, use_D=True))
        lambda_m = float(np.min(lam))
        threshold = lambda_m / (2.0 * np.max(fields.D) * np.max(fields.D * fields.J2))
        margin = threshold - C_g
        return InteriorCheck(mode, lambda_m, float(threshold), float(margin), bool(lambda_m > 0 and margin > 0))
    if mode == RELAXED:
        lam = smallest_eigenvalue(interior_matrices(fields, use_D=False))
        pointwise = lam / np.max(fields.J2, axis=0)
        threshold = float(np.min(pointwise))
        margin = threshold - C_g
        return InteriorCheck(mode, float(np.min(lam)), threshold, float(margin),
                             bool(np.min(lam) > 0 and margin > 0))
    raise ValueError(f"unknown mode {mode!r}")


# --------------------------------------------------------------------------
# Boundary condition

def boundary_weights(spec: SystemSpec, fields: SampledFields) -> tuple[np.ndarray, np.ndarray]:
    """(W_in, W_out): weighted |speeds| where components leave / enter."""
    n, m = spec.n, spec.m
    w = fields.J2_ends * np.abs(fields.lam_ends)  # columns: x=0, x=L
    leave = np.array([w[i, 1] if i < m else w[i, 0] for i in range(n)])
    enter = np.array([w[i, 0] if i < m else w[i, 1] for i in range(n)])
    return np.diag(leave), np.diag(enter)


def boundary_matrix(spec: SystemSpec, fields: SampledFields) -> np.ndarray:
    W_in, W_out = boundary_weights(spec, fields)
    return W_in - congruence(spec.boundary.K, W_out)


# --------------------------------------------------------------------------
# Certificates

@dataclass
class ISSGains:
    C1: float
    C2: float
    epsilon: float
    epsilon_capped: bool
    mu: float
    fade_rate: float       # e^{-fade_rate (t-s)} weights |d(s)|^2
    norm_decay_rate: float  # decay of the initial-data term


@dataclass
class Certificate:
    verdict: str
    mode: str
    interior_mode: str
    label: str
    lambda_m: float
    lambda_m_refined: Optional[float]
    C_g: float
    C_g_provenance: str
    interior_threshold: float
    interior_margin: float
    interior_strict: dict
    interior_relaxed: dict
    boundary_matrix: list
    boundary_min_eig: float
    boundary_psd: bool
    boundary_pd: bool
    decay_rate_norm: Optional[float]
    gain: float
    iss: Optional[ISSGains] = None
    grid: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    explanation: str = ""
    tool_version: str = __version__

    @property
    def certified(self) -> bool:
        return self.verdict != REJECTED

    def to_dict(self) -> dict:
        d = asdict(self)
        return _jsonable(d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def gain_of(fields: SampledFields) -> float:
    J = np.sqrt(fields.J2)
    return float(np.max(1.0 / J) * np.max(J))


def decay_rate_of(fields: SampledFields, lambda_m: float, C_g: float) -> float:
    return float(lambda_m / (2.0 * np.max(fields.D * fields.J2)) - C_g * np.max(fields.D))


def certify_fields(spec: SystemSpec, fields: SampledFields, C_g: LipschitzValue, mode: str = STRICT,
                   tol: float = 1e-9) -> Certificate:
    """Certificate from pre-sampled fields (no grid-sensitivity pass)."""
    if mode not in (STRICT, RELAXED):
        raise ValueError(f"unknown mode {mode!r}")
    strict = check_interior(fields, C_g.value, STRICT)
    relaxed = check_interior(fields, C_g.value, RELAXED)
    N = boundary_matrix(spec, fields)
    n_min = smallest_eigenvalue(N)
    psd, pd = is_psd(N, tol), is_pd(N, tol)
    notes = []
    if mode == RELAXED and spec.source.is_nonlocal:
        notes.append(NONLOCAL_RELAXED_WARNING)
    if strict.passed and psd:
        verdict = CERTIFIED_STRICT
    elif mode == RELAXED and relaxed.passed and psd:
        verdict = CERTIFIED_RELAXED
    else:
        verdict = REJECTED
    used = strict if mode == STRICT else relaxed
    reasons = []
    if not used.passed:
        reasons.append(f"interior condition fails ({mode}): margin {used.margin:.6g}")
    if not psd:
        reasons.append(f"boundary matrix not positive semidefinite: min eigenvalue {n_min:.6g}")
    return Certificate(
        verdict=verdict,
        mode="stability",
        interior_mode=mode,
        label="certified" if C_g.provenance == "certified" else "heuristic",
        lambda_m=strict.lambda_m,
        lambda_m_refined=None,
        C_g=C_g.value,
        C_g_provenance=C_g.provenance,
        interior_threshold=used.threshold,
        interior_margin=used.margin,
        interior_strict=asdict(strict),
        interior_relaxed=asdict(relaxed),
        boundary_matrix=N.tolist(),
        boundary_min_eig=float(n_min),
        boundary_psd=psd,
        boundary_pd=pd,
        decay_rate_norm=decay_rate_of(fields, strict.lambda_m, C_g.value) if verdict == CERTIFIED_STRICT else None,
        gain=gain_of(fields),
        grid={"N_x": int(fields.x.size - 1), "L": float(spec.L)},
        warnings=notes,
        explanation="; ".join(reasons),
    )


def certify(spec: SystemSpec, weights: WeightSpec, C_g: LipschitzValue | float | None = None,
            mode: str = STRICT, grid: Grid | None = None, seed: int = 0) -> Certificate:
    """Check the stability conditions for ``weights`` on ``spec``.

    ``C_g`` defaults to the constant declared in the system (or a sampled
    estimate when it says "estimate").  λ_m is also reported on a grid twice
    as fine as a discretization-sensitivity indicator.
    """
    grid = grid or Grid(CERT_GRID, spec.L)
    if C_g is None:
        C_g = resolve_cg(spec, weights, seed=seed)
    elif not isinstance(C_g, LipschitzValue):
        C_g = LipschitzValue(float(C_g), "certified")
    fields = sample_weights(spec, weights, grid)
    cert = certify_fields(spec, fields, C_g, mode)
    fine = sample_weights(spec, weights, grid.refined(2))
    cert.lambda_m_refined = float(np.min(smallest_eigenvalue(interior_matrices(fine))))
    cert.grid["N_x_refined"] = grid.N * 2
    for note in cert.warnings:
        warnings.warn(note, RelaxationWarning, stacklevel=2)
    return cert


# --------------------------------------------------------------------------
# ISS

def find_epsilon(N: np.ndarray, P: np.ndarray, cap: float = EPS_CAP, rel_width: float = 1e-6) -> tuple[float, bool]:
    """Largest eps in (0, cap] with N - eps P positive semidefinite.

    ``N`` must be positive definite.  Doubling from 1, then bisection to the
    given relative width.  Returns (eps, capped).
    """

    def ok(eps):
        return smallest_eigenvalue(N - eps * P) >= 0.0

    lo, hi = 0.0, 1.0
    while ok(hi):
        lo = hi
        if hi >= cap:
            return cap, True
        hi = min(2.0 * hi, cap)
    while hi - lo > rel_width * hi:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo, False


def iss_gains_from_fields(spec: SystemSpec, fields: SampledFields, C_g: LipschitzValue,
                          tol: float = 1e-9) -> Certificate:
    cert = certify_fields(spec, fields, C_g, STRICT, tol)
    cert.mode = "iss"
    if cert.verdict != CERTIFIED_STRICT or not cert.boundary_pd:
        cert.verdict = REJECTED
        cert.decay_rate_norm = None
        why = []
        if not cert.interior_strict["passed"]:
            why.append("interior condition fails (strict)")
        if not cert.boundary_pd:
            why.append(f"boundary matrix not strictly positive definite (min eigenvalue {cert.boundary_min_eig:.6g})")
        cert.explanation = "; ".join(why)
        return cert
    N = np.asarray(cert.boundary_matrix)
    _, W_out = boundary_weights(spec, fields)
    P = congruence(spec.boundary.K, W_out)
    eps, capped = find_epsilon(N, P)
    mu = cert.lambda_m - 2.0 * C_g.value * np.max(fields.D * fields.J2) * np.max(fields.D)
    lam_inf = float(np.max(np.abs(fields.lam)))
    C1 = cert.gain
    C2 = C1 * np.sqrt((2.0 / mu) * max(1.0, (mu / 2.0) * (1.0 + 1.0 / eps) * lam_inf))
    cert.iss = ISSGains(C1=float(C1), C2=float(C2), epsilon=float(eps), epsilon_capped=capped,
                        mu=float(mu), fade_rate=float(mu / 2.0), norm_decay_rate=float(mu / 4.0))
    if capped:
        cert.warnings.append(f"epsilon search capped at {EPS_CAP:g}")
    return cert


def iss_gains(spec: SystemSpec, weights: WeightSpec, C_g: LipschitzValue | float | None = None,
              grid: Grid | None = None, seed: int = 0) -> Certificate:
    grid = grid or Grid(CERT_GRID, spec.L)
    if C_g is None:
        C_g = resolve_cg(spec, weights, seed=seed)
    elif not isinstance(C_g, LipschitzValue):
        C_g = LipschitzValue(float(C_g), "certified")
    return iss_gains_from_fields(spec, sample_weights(spec, weights, grid), C_g)


def validate_certificate_dict(data: dict):
    jsonschema.validate(data, load_schema("certificate"))


__all__ = [
    "WeightSpec", "Certificate", "ISSGains", "LipschitzValue", "InteriorCheck",
    "certify", "certify_fields", "iss_gains", "iss_gains_from_fields", "check_interior",
    "interior_matrix", "interior_matrices", "boundary_matrix", "boundary_weights",
    "resolve_cg", "sample_weights", "find_epsilon", "gain_of", "decay_rate_of",
]
