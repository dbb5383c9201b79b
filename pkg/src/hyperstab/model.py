"""System description for 1-D semilinear hyperbolic systems.

    u_t + Lambda(x) u_x + B(u, x) = 0,   x in [0, L]
    (u_+(t,0), u_-(t,L)) = G(u_+(t,L), u_-(t,0))

Components 1..m travel right (Lambda_i > 0), m+1..n travel left.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence, Union

import jsonschema
import numpy as np

from .expr import Expression, VariableContext

SPEED_FLOOR = 1e-8
ZERO_TOL = 1e-12


class SpecError(ValueError):
    """Malformed or inconsistent system description."""


def load_schema(name: str) -> dict:
    text = resources.files("hyperstab").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def _lipschitz_field(value) -> Union[float, str]:
    if value == "estimate":
        return "estimate"
    value = float(value)
    if value < 0:
        raise SpecError("Lipschitz constants must be >= 0")
    return value


@dataclass(frozen=True)
class SourceSpec:
    B: tuple
    C_B: Union[float, str] = "estimate"
    M: tuple | None = None
    C_g: Union[float, str] = "estimate"

    @property
    def n(self) -> int:
        return len(self.B)

    @property
    def is_nonlocal(self) -> bool:
        return any(v.startswith("I[") for b in self.B for v in b.variables)

    def evaluate(self, U: np.ndarray, x: np.ndarray) -> np.ndarray:
        """B(u, x) on the grid; ``U`` has shape (n, len(x))."""
        bindings = {"x": x}
        integrals = np.trapezoid(U, x, axis=1)
        for j in range(U.shape[0]):
            bindings[f"u[{j + 1}]"] = U[j]
            bindings[f"I[{j + 1}]"] = integrals[j]
        out = np.empty_like(U, dtype=float)
        for i, b in enumerate(self.B):
            out[i] = b(bindings)
        return out

    def linear_part(self, x: np.ndarray) -> np.ndarray:
        """M(x) sampled, shape (n, n, len(x)); zero when M is absent."""
        n = self.n
        out = np.zeros((n, n, len(x)))
        if self.M is not None:
            for i in range(n):
                for j in range(n):
                    out[i, j] = self.M[i][j].on_grid(x)
        return out

    def residual(self, U: np.ndarray, x: np.ndarray, M: np.ndarray | None = None) -> np.ndarray:
        """g(u, x) = B(u, x) - M(x) u."""
        B = self.evaluate(U, x)
        if M is None:
            if self.M is None:
                return B
            M = self.linear_part(x)
        return B - np.einsum("ijk,jk->ik", M, U)


@dataclass(frozen=True)
class BoundarySpec:
    G: tuple
    K: np.ndarray

    def evaluate(self, out) -> np.ndarray:
        """Incoming traces from outgoing traces ``out`` (length n)."""
        bindings = {f"out[{j + 1}]": out[j] for j in range(len(out))}
        return np.array([float(g(bindings)) for g in self.G])


@dataclass(frozen=True)
class SystemSpec:
    name: str
    n: int
    m: int
    L: float
    lam: tuple
    source: SourceSpec
    boundary: BoundarySpec
    raw: dict = field(default=None, repr=False, compare=False)

    def incoming_side(self, i: int) -> float:
        """Position of the inflow boundary of component i (0-based)."""
        return 0.0 if i < self.m else self.L

    def outgoing_side(self, i: int) -> float:
        return self.L if i < self.m else 0.0

    def speeds(self, x: np.ndarray) -> np.ndarray:
        return np.array([lam.on_grid(np.asarray(x, dtype=float)) for lam in self.lam])

    def speed_at(self, i: int, x: float) -> float:
        return float(self.lam[i].on_grid(np.array([x]))[0])

    def to_dict(self) -> dict:
        src = self.source
        return {
            "name": self.name,
            "n": self.n,
            "m": self.m,
            "L": self.L,
            "lambda": [e.text for e in self.lam],
            "source": {
                "B": [e.text for e in src.B],
                "C_B": src.C_B,
                "M": None if src.M is None else [[e.text for e in row] for row in src.M],
                "C_g": src.C_g,
            },
            "boundary": {
                "G": [e.text for e in self.boundary.G],
                "K": self.boundary.K.tolist(),
            },
        }


def spec_from_dict(data: dict) -> SystemSpec:
    try:
        jsonschema.validate(data, load_schema("system"))
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SpecError(f"invalid system config at {path}: {exc.message}") from None
    n, m, L = int(data["n"]), int(data["m"]), float(data["L"])
    if not 0 <= m <= n:
        raise SpecError(f"need 0 <= m <= n, got m={m}, n={n}")
    src, bnd = data["source"], data["boundary"]

    def exprs(items, ctx, what):
        if len(items) != n:
            raise SpecError(f"{what}: expected {n} expressions, got {len(items)}")
        return tuple(Expression(t, ctx) for t in items)

    lam = exprs(data["lambda"], VariableContext.coefficient(), "lambda")
    B = exprs(src["B"], VariableContext.source(n), "source.B")
    M = src.get("M")
    if M is not None:
        if len(M) != n or any(len(row) != n for row in M):
            raise SpecError("source.M must be n x n")
        M = tuple(tuple(Expression(t, VariableContext.coefficient()) for t in row) for row in M)
    G = exprs(bnd["G"], VariableContext.boundary(n), "boundary.G")
    K = np.asarray(bnd["K"], dtype=float)
    if K.shape != (n, n):
        raise SpecError(f"boundary.K must be {n}x{n}, got {K.shape}")
    if np.any(K < 0):
        raise SpecError("boundary.K entries must be nonnegative")
    source = SourceSpec(B, _lipschitz_field(src.get("C_B", "estimate")), M,
                        _lipschitz_field(src.get("C_g", "estimate")))
    return SystemSpec(data.get("name", "system"), n, m, L, lam, source, BoundarySpec(G, K), raw=data)


def load_spec(path: str | Path) -> SystemSpec:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SpecError(f"{path}: not valid JSON ({exc})") from None
    return spec_from_dict(data)


# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Grid:
    N: int
    L: float

    def __post_init__(self):
        if self.N < 8:
            raise ValueError("grid needs at least 8 cells")
        if self.L <= 0:
            raise ValueError("domain length must be positive")

    @property
    def dx(self) -> float:
        return self.L / self.N

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, self.L, self.N + 1)

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(self.N * factor, self.L)


@dataclass
class ValidationReport:
    ok: bool
    failures: list = field(default_factory=list)

    def __bool__(self):
        return self.ok


def validate_spec(spec: SystemSpec) -> ValidationReport:
    failures = []
    x = np.linspace(0.0, spec.L, 256)
    for i, lam in enumerate(spec.lam):
        try:
            v = lam.on_grid(x)
        except Exception as exc:
            failures.append(f"lambda[{i + 1}]: {exc}")
            continue
        sign = 1.0 if i < spec.m else -1.0
        bad = np.flatnonzero(~(sign * v >= SPEED_FLOOR))
        if bad.size:
            kind = "positive" if sign > 0 else "negative"
            pts = ", ".join(f"{x[k]:.4g}" for k in bad[:5])
            failures.append(f"lambda[{i + 1}] must be {kind} and nonvanishing; violated at x = {pts}")
    xs = np.linspace(0.0, spec.L, 32)
    try:
        B0 = spec.source.evaluate(np.zeros((spec.n, xs.size)), xs)
        for i in range(spec.n):
            bad = np.flatnonzero(np.abs(B0[i]) > ZERO_TOL)
            if bad.size:
                failures.append(f"source B[{i + 1}](0, x) != 0 at x = {xs[bad[0]]:.4g} (value {B0[i, bad[0]]:.3g})")
    except Exception as exc:
        failures.append(f"source: {exc}")
    try:
        G0 = spec.boundary.evaluate(np.zeros(spec.n))
        for i in np.flatnonzero(np.abs(G0) > ZERO_TOL):
            failures.append(f"boundary G[{i + 1}](0) = {G0[i]:.3g}, expected 0")
    except Exception as exc:
        failures.append(f"boundary: {exc}")
    return ValidationReport(not failures, failures)


# --------------------------------------------------------------------------
# Sampling

@dataclass
class SampledFields:
    """Coefficients and weights sampled at the grid nodes.

    Arrays are indexed (component, node) or (row, col, node).
    """

    x: np.ndarray
    lam: np.ndarray
    J2: np.ndarray
    D: np.ndarray
    dJ2lam: np.ndarray
    M: np.ndarray
    # endpoint values of J^2 and Lambda, exact rather than interpolated
    J2_ends: np.ndarray
    lam_ends: np.ndarray


WeightFn = Callable[[np.ndarray], np.ndarray]


def derivative_on_refined(f: WeightFn, grid: Grid, refine: int = 4) -> np.ndarray:
    """d/dx of f at the grid nodes, central differences on a refined grid.

    ``f`` maps an x-array to an array whose last axis runs over x.
    One-sided second-order stencils at the endpoints.
    """
    xf = np.linspace(0.0, grid.L, grid.N * refine + 1)
    h = xf[1] - xf[0]
    v = f(xf)
    d = np.empty_like(v)
    d[..., 1:-1] = (v[..., 2:] - v[..., :-2]) / (2 * h)
    d[..., 0] = (-3 * v[..., 0] + 4 * v[..., 1] - v[..., 2]) / (2 * h)
    d[..., -1] = (3 * v[..., -1] - 4 * v[..., -2] + v[..., -3]) / (2 * h)
    return d[..., ::refine]


class CoefficientSampler:
    """Samples the fixed system coefficients once, then weights on demand."""

    def __init__(self, spec: SystemSpec, grid: Grid, M: np.ndarray | None = None):
        self.spec = spec
        self.grid = grid
        self.x = grid.x
        self.lam = spec.speeds(self.x)
        self.M = spec.source.linear_part(self.x) if M is None else M
        ends = np.array([0.0, spec.L])
        self.lam_ends = spec.speeds(ends)

    def sample(self, J2: WeightFn, D: WeightFn | None = None) -> SampledFields:
        spec, x = self.spec, self.x
        J2x = np.broadcast_to(J2(x), (spec.n, x.size)).astype(float)
        Dx = np.ones_like(J2x) if D is None else np.broadcast_to(D(x), (spec.n, x.size)).astype(float)
        if not np.all(np.isfinite(J2x)) or not np.all(np.isfinite(Dx)):
            raise ValueError("weights must be finite on the grid")

        def product(xx):
            return np.broadcast_to(J2(xx), (spec.n, xx.size)) * spec.speeds(xx)

        dJ2lam = derivative_on_refined(product, self.grid)
        J2_ends = np.broadcast_to(J2(np.array([0.0, spec.L])), (spec.n, 2)).astype(float)
        return SampledFields(x, self.lam, J2x, Dx, dJ2lam, self.M, J2_ends, self.lam_ends)


def sample_coefficients(spec: SystemSpec, grid: Grid, J2: Sequence[Expression],
                        D: Sequence[Expression] | None = None, M: np.ndarray | None = None) -> SampledFields:
    def stack(exprs):
        return lambda xx: np.array([e.on_grid(xx) for e in exprs])

    return CoefficientSampler(spec, grid, M).sample(stack(J2), None if D is None else stack(D))


# --------------------------------------------------------------------------
# Lipschitz estimation and reflection-bound checks

def _fourier_field(rng: np.random.Generator, n: int, x: np.ndarray, L: float,
                   amplitude: float, modes: int = 6) -> np.ndarray:
    k = np.arange(modes)
    a = rng.uniform(-1, 1, size=(n, modes))
    b = rng.uniform(-1, 1, size=(n, modes))
    arg = np.pi * np.outer(k, x) / L
    field = a @ np.cos(arg) + b @ np.sin(arg)
    scale = rng.uniform(0, amplitude) / max(np.max(np.abs(field)), 1e-300)
    return scale * field


def _l2(U: np.ndarray, x: np.ndarray) -> float:
    return float(np.sqrt(np.trapezoid(np.sum(U * U, axis=0), x)))


def lipschitz_ratios(source: SourceSpec, grid: Grid, n_samples: int = 400, amplitude: float = 1.0,
                     seed: int = 0, M: np.ndarray | None = None) -> np.ndarray:
    """Per-pair ratios ||B(u)-B(v)|| / ||u-v||, in draw order.

    Pairs cycle through three families: two independent random fields; a
    random field and a small random perturbation of it; a random field and a
    small single-mode perturbation of one component.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    x, L, n = grid.x, grid.L, source.n
    rng = np.random.default_rng(seed)
    if M is None:
        op = lambda U: source.evaluate(U, x)  # noqa: E731
    else:
        op = lambda U: source.residual(U, x, M)  # noqa: E731
    ratios = np.zeros(n_samples)
    for s in range(n_samples):
        u = _fourier_field(rng, n, x, L, amplitude)
        kind = s % 3
        if kind == 0:
            v = _fourier_field(rng, n, x, L, amplitude)
        elif kind == 1:
            v = u + 1e-6 * _fourier_field(rng, n, x, L, 1.0)
        else:
            comp = rng.integers(n)
            mode = rng.integers(6)
            delta = np.zeros_like(u)
            delta[comp] = np.cos(np.pi * mode * x / L)
            v = u + 1e-6 * rng.choice([-1.0, 1.0]) * delta
        den = _l2(u - v, x)
        if den == 0:
            continue
        ratios[s] = _l2(op(u) - op(v), x) / den
    return ratios


def estimate_lipschitz(source: SourceSpec, grid: Grid, n_samples: int = 400, amplitude: float = 1.0,
                       seed: int = 0, M: np.ndarray | None = None) -> float:
    """Sampled lower bound on the L2 Lipschitz constant of B, or of B - M u
    when ``M`` (shape (n, n, nodes)) is given."""
    if n_samples < 100:
        raise ValueError("n_samples must be at least 100")
    return float(np.max(lipschitz_ratios(source, grid, n_samples, amplitude, seed, M)))


@dataclass
class KReport:
    ok: bool
    worst_ratio: float
    violations: list = field(default_factory=list)


def verify_K(boundary: BoundarySpec, n_samples: int = 2000, amplitude: float = 10.0, seed: int = 0) -> KReport:
    """Sample outgoing traces and check |G_i(out)| <= sum_j K_ij |out_j|."""
    K = np.asarray(boundary.K, dtype=float)
    n = K.shape[0]
    rng = np.random.default_rng(seed)
    worst = 0.0
    violations = []
    for _ in range(n_samples):
        scale = amplitude * 10.0 ** rng.uniform(-6, 0)
        out = rng.uniform(-scale, scale, size=n)
        g = np.abs(boundary.evaluate(out))
        bound = K @ np.abs(out)
        for i in range(n):
            slack = 1e-12 * max(1.0, bound[i])
            if bound[i] > 0:
                worst = max(worst, g[i] / bound[i])
            elif g[i] > slack:
                worst = np.inf
            if g[i] > bound[i] + slack and len(violations) < 10:
                violations.append({"component": i + 1, "out": out.tolist(),
                                   "G": float(g[i]), "bound": float(bound[i])})
    return KReport(not violations, float(worst), violations)
