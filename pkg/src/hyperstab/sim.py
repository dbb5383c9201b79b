"""First-order upwind simulation with explicit-Euler sources.

Each component is transported in its own flow direction; the source (and
distributed disturbance) uses time-level-t values, with the integrals
I[j] taken by the trapezoid rule.  After the update the incoming boundary
nodes are overwritten from G(outgoing traces) + d2.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import jsonschema
import numpy as np

from .expr import Expression, VariableContext
from .model import Grid, SpecError, SystemSpec, load_schema

CSV_HEADER = "t,l2_norm,lyapunov_v,d1_l2,d2_abs"
ISS_ALLOWANCE = 0.05


class BlowUpError(RuntimeError):
    def __init__(self, t: float, trajectory: "Trajectory"):
        self.t = t
        self.trajectory = trajectory
        super().__init__(f"non-finite state after t = {t:.6g}")


@dataclass(frozen=True)
class DisturbanceSpec:
    d1: tuple  # interior, functions of (t, x)
    d2: tuple  # boundary, functions of t

    @classmethod
    def zero(cls, n: int) -> "DisturbanceSpec":
        return cls.from_strings(["0"] * n, ["0"] * n)

    @classmethod
    def from_strings(cls, d1: Sequence[str], d2: Sequence[str]) -> "DisturbanceSpec":
        return cls(tuple(Expression(t, VariableContext.disturbance_interior()) for t in d1),
                   tuple(Expression(t, VariableContext.disturbance_boundary()) for t in d2))

    @classmethod
    def from_dict(cls, data: dict, n: int) -> "DisturbanceSpec":
        try:
            jsonschema.validate(data, load_schema("disturbance"))
        except jsonschema.ValidationError as exc:
            raise SpecError(f"invalid disturbance file: {exc.message}") from None
        d1 = data.get("d1") or ["0"] * n
        d2 = data.get("d2") or ["0"] * n
        if len(d1) != n or len(d2) != n:
            raise SpecError(f"disturbances must have {n} components")
        return cls.from_strings(d1, d2)

    @classmethod
    def load(cls, path, n: int) -> "DisturbanceSpec":
        return cls.from_dict(json.loads(Path(path).read_text()), n)

    def to_dict(self) -> dict:
        return {"d1": [e.text for e in self.d1], "d2": [e.text for e in self.d2]}

    @property
    def is_zero(self) -> bool:
        return all(e.ast == Expression("0").ast for e in self.d1 + self.d2)

    def interior(self, t: float, x: np.ndarray) -> np.ndarray:
        return np.array([e.on_grid(x, t=t) for e in self.d1])

    def boundary(self, t: float) -> np.ndarray:
        return np.array([float(e({"t": t})) for e in self.d2])

    def scaled(self, d1_factor: float = 1.0, d2_factor: float = 1.0) -> "DisturbanceSpec":
        return DisturbanceSpec.from_strings([f"{d1_factor!r}*({e.text})" for e in self.d1],
                                            [f"{d2_factor!r}*({e.text})" for e in self.d2])


@dataclass
class State:
    t: float
    U: np.ndarray  # (n, N+1)


@dataclass
class Trajectory:
    t: np.ndarray
    l2: np.ndarray
    V: np.ndarray
    dVdt: np.ndarray
    d1_l2: np.ndarray
    d2_abs: np.ndarray
    x: np.ndarray
    dt: float
    cfl: float
    snapshots: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        lines = [CSV_HEADER]
        for row in zip(self.t, self.l2, self.V, self.d1_l2, self.d2_abs):
            lines.append(",".join(f"{v:.17g}" for v in row))
        Path(path).write_text("\n".join(lines) + "\n")

    def snapshots_to_csv(self, path) -> None:
        n = next(iter(self.snapshots.values())).shape[0] if self.snapshots else 0
        lines = []
        for t, U in sorted(self.snapshots.items()):
            lines.append(f"# t={t:.17g}")
            lines.append("x," + ",".join(f"u_{i + 1}" for i in range(n)))
            for j, xj in enumerate(self.x):
                lines.append(",".join(f"{v:.17g}" for v in (xj, *U[:, j])))
        Path(path).write_text("\n".join(lines) + "\n")


def read_trajectory_csv(path) -> dict:
    rows = Path(path).read_text().strip().splitlines()
    if rows[0] != CSV_HEADER:
        raise ValueError(f"unexpected header {rows[0]!r}")
    data = np.array([[float(v) for v in r.split(",")] for r in rows[1:]])
    return dict(zip(CSV_HEADER.split(","), data.T))


def l2_norm(U: np.ndarray, x: np.ndarray) -> float:
    return float(np.sqrt(np.trapezoid(np.sum(U * U, axis=0), x)))


def lyapunov_value(U: np.ndarray, x: np.ndarray, J2: np.ndarray) -> float:
    """Trapezoid value of int sum_i J_i^2 u_i^2 dx; ``J2`` is (n, N+1)."""
    return float(np.trapezoid(np.sum(J2 * U * U, axis=0), x))


class Simulator:
    """Holds the per-grid precomputation for one system."""

    def __init__(self, spec: SystemSpec, grid: Grid, disturbances: DisturbanceSpec | None = None,
                 J2: np.ndarray | None = None, cfl: float | None = None):
        self.spec = spec
        self.grid = grid
        self.x = grid.x
        self.lam = spec.speeds(self.x)
        self.dist = disturbances or DisturbanceSpec.zero(spec.n)
        if len(self.dist.d1) != spec.n or len(self.dist.d2) != spec.n:
            raise SpecError(f"disturbances must have {spec.n} components")
        self.J2 = np.ones_like(self.lam) if J2 is None else np.asarray(J2, dtype=float)
        amax = float(np.max(np.abs(self.lam)))
        constant = all(np.ptp(row) <= 1e-14 * max(1.0, np.max(np.abs(row))) for row in self.lam)
        self.cfl = (1.0 if constant else 0.9) if cfl is None else float(cfl)
        if not 0 < self.cfl <= 1:
            raise ValueError("CFL number must be in (0, 1]")
        self.dt_max = self.cfl * grid.dx / amax
        self._zero_dist = self.dist.is_zero

    def step(self, state: State, dt: float) -> State:
        if dt > self.dt_max * (1 + 1e-12):
            raise ValueError(f"time step {dt:g} violates CFL (max {self.dt_max:g})")
        spec, U, t = self.spec, state.U, state.t
        r = dt / self.grid.dx
        new = U.copy()
        m = spec.m
        if m:
            new[:m, 1:] = U[:m, 1:] - r * self.lam[:m, 1:] * (U[:m, 1:] - U[:m, :-1])
        if m < spec.n:
            new[m:, :-1] = U[m:, :-1] - r * self.lam[m:, :-1] * (U[m:, 1:] - U[m:, :-1])
        src = spec.source.evaluate(U, self.x)
        if not self._zero_dist:
            src = src + self.dist.interior(t, self.x)
        new -= dt * src
        t_new = t + dt
        self.apply_boundary(new, t_new)
        return State(t_new, new)

    def outgoing(self, U: np.ndarray) -> np.ndarray:
        m = self.spec.m
        return np.concatenate([U[:m, -1], U[m:, 0]])

    def apply_boundary(self, U: np.ndarray, t: float) -> None:
        m = self.spec.m
        incoming = self.spec.boundary.evaluate(self.outgoing(U))
        if not self._zero_dist:
            incoming = incoming + self.dist.boundary(t)
        U[:m, 0] = incoming[:m]
        U[m:, -1] = incoming[m:]

    def disturbance_norms(self, t: float) -> tuple[float, float]:
        if self._zero_dist:
            return 0.0, 0.0
        d1 = self.dist.interior(t, self.x)
        return l2_norm(d1, self.x), float(np.linalg.norm(self.dist.boundary(t)))

    def run(self, U0: np.ndarray, T: float, n_out: int = 500, snapshot_times: Sequence[float] = ()) -> Trajectory:
        if T <= 0:
            raise ValueError("horizon must be positive")
        nsteps = max(1, math.ceil(T / self.dt_max - 1e-9))
        dt = T / nsteps
        n_out = max(1, min(n_out, nsteps))
        out_steps = sorted({round(k * nsteps / n_out) for k in range(n_out + 1)})
        snap_steps = {round(ts / dt): ts for ts in snapshot_times if 0 <= ts <= T}
        rec_t, rec_l2, rec_V, rec_d1, rec_d2 = [], [], [], [], []
        snaps = {}

        def record(k, st):
            rec_t.append(st.t)
            rec_l2.append(l2_norm(st.U, self.x))
            rec_V.append(lyapunov_value(st.U, self.x, self.J2))
            d1, d2 = self.disturbance_norms(st.t)
            rec_d1.append(d1)
            rec_d2.append(d2)
            if k in snap_steps:
                snaps[snap_steps[k]] = st.U.copy()

        def build():
            t = np.array(rec_t)
            V = np.array(rec_V)
            dV = np.gradient(V, t) if len(t) > 1 else np.zeros_like(V)
            return Trajectory(t, np.array(rec_l2), V, dV, np.array(rec_d1), np.array(rec_d2),
                              self.x, dt, self.cfl, snaps)

        state = State(0.0, np.array(U0, dtype=float))
        if state.U.shape != (self.spec.n, self.x.size):
            raise ValueError(f"initial state must have shape {(self.spec.n, self.x.size)}")
        if not np.all(np.isfinite(state.U)):
            raise ValueError("initial state is not finite on the grid")
        record(0, state)
        outs = set(out_steps)
        with np.errstate(over="ignore", invalid="ignore"):
            for k in range(1, nsteps + 1):
                state = self.step(state, dt)
                state.t = k * dt
                if not np.all(np.isfinite(state.U)):
                    raise BlowUpError(rec_t[-1], build())
                if k in outs:
                    record(k, state)
                elif k in snap_steps:
                    snaps[snap_steps[k]] = state.U.copy()
        return build()


def initial_state(exprs: Sequence[str | Expression], x: np.ndarray) -> np.ndarray:
    ctx = VariableContext.initial()
    return np.array([(e if isinstance(e, Expression) else Expression(e, ctx)).on_grid(x) for e in exprs])


def step(state: State, spec: SystemSpec, grid: Grid, dt: float,
         disturbances: DisturbanceSpec | None = None) -> State:
    return Simulator(spec, grid, disturbances).step(state, dt)


def simulate(spec: SystemSpec, initial: Sequence[str | Expression], T: float, grid: Grid,
             disturbances: DisturbanceSpec | None = None, J2: np.ndarray | None = None,
             cfl: float | None = None, n_out: int = 500, snapshot_times: Sequence[float] = ()) -> Trajectory:
    """Run to time T; ``J2`` (sampled weights) defines the recorded V."""
    if len(initial) != spec.n:
        raise SpecError(f"need {spec.n} initial expressions")
    sim = Simulator(spec, grid, disturbances, J2, cfl)
    return sim.run(initial_state(initial, grid.x), T, n_out, snapshot_times)


# --------------------------------------------------------------------------
# Diagnostics

@dataclass
class DecayFit:
    rate: float
    r_squared: float
    samples: int


def fit_decay_rate(traj: Trajectory, window: tuple[float, float] | None = None) -> DecayFit:
    """Least-squares slope of log ||u(t)||; rate = -slope.

    Without a window the whole trace is used up to the point where the norm
    falls below 1e-12 of its maximum.
    """
    t, y = traj.t, traj.l2
    if window is None:
        floor = 1e-12 * np.max(y)
        below = np.flatnonzero(y <= floor)
        end = below[0] if below.size else len(y)
        t, y = t[:end], y[:end]
    else:
        sel = (t >= window[0]) & (t <= window[1])
        t, y = t[sel], y[sel]
        if np.any(y <= 1e-14):
            raise ValueError("norm too small inside the fit window")
    if len(t) < 10:
        raise ValueError(f"fit window holds {len(t)} samples, need at least 10")
    ly = np.log(y)
    A = np.vstack([t, np.ones_like(t)]).T
    (slope, icept), *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - (slope * t + icept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - float(np.sum(resid ** 2)) / ss_tot
    return DecayFit(float(-slope), r2, len(t))


def _faded_integral(t: np.ndarray, g: np.ndarray, rate: float) -> np.ndarray:
    """F(t_k) = int_0^{t_k} exp(-rate (t_k - s)) g(s) ds by the trapezoid rule."""
    F = np.zeros_like(g)
    for k in range(1, len(t)):
        h = t[k] - t[k - 1]
        decay = math.exp(-rate * h)
        F[k] = decay * F[k - 1] + 0.5 * h * (decay * g[k - 1] + g[k])
    return F


@dataclass
class ISSCheck:
    max_ratio: float
    passed: bool
    ratios: np.ndarray
    envelope: np.ndarray


def iss_envelope(traj: Trajectory, C1: float, C2: float, mu: float) -> np.ndarray:
    """C1 e^{-mu t/4} ||u0|| + C2 (sqrt(F1) + sqrt(F2)), F faded at rate mu/2."""
    F1 = _faded_integral(traj.t, traj.d1_l2 ** 2, mu / 2)
    F2 = _faded_integral(traj.t, traj.d2_abs ** 2, mu / 2)
    return C1 * np.exp(-mu * traj.t / 4) * traj.l2[0] + C2 * (np.sqrt(F1) + np.sqrt(F2))


def check_iss_bound(traj: Trajectory, certificate, allowance: float = ISS_ALLOWANCE) -> ISSCheck:
    iss = certificate.iss
    if iss is None:
        raise ValueError("certificate carries no ISS gains")
    if traj.d1_l2 is None or traj.d2_abs is None:
        raise ValueError("trajectory has no disturbance records")
    env = iss_envelope(traj, iss.C1, iss.C2, iss.mu)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(env > 0, traj.l2 / env, np.where(traj.l2 > 0, np.inf, 0.0))
    mr = float(np.max(ratios))
    return ISSCheck(mr, mr <= 1 + allowance, ratios, env)


def v_dissipation_violations(traj: Trajectory, decay_rate_norm: float, dx: float) -> list[int]:
    """Output steps where V(t_{k+1}) > V(t_k) e^{-2 rate dt} (1 + 10 dx)."""
    bad = []
    for k in range(len(traj.t) - 1):
        h = traj.t[k + 1] - traj.t[k]
        if traj.V[k + 1] > traj.V[k] * math.exp(-2 * decay_rate_norm * h) * (1 + 10 * dx):
            bad.append(k)
    return bad


@dataclass
class ConvergenceResult:
    order: float | None
    orders: list
    errors: list
    regime: str  # "asymptotic", "exact", "non-monotone"
    warnings: list = field(default_factory=list)


def convergence_study(spec: SystemSpec, initial: Sequence[str], T: float, grids: Sequence[Grid],
                      cfl: float | None = None) -> ConvergenceResult:
    """Observed order from successive differences between nested grids."""
    if len(grids) < 3:
        raise ValueError("need at least three grids")
    for a, b in zip(grids, grids[1:]):
        if b.N != 2 * a.N:
            raise ValueError("each grid must double the previous cell count")
    finals = []
    for g in grids:
        sim = Simulator(spec, g, cfl=cfl)
        U0 = initial_state(initial, g.x)
        nsteps = max(1, math.ceil(T / sim.dt_max - 1e-9))
        st = State(0.0, U0)
        for _ in range(nsteps):
            st = sim.step(st, T / nsteps)
        finals.append((g, st.U))
    errors = []
    for (g, U), (_, Uf) in zip(finals, finals[1:]):
        errors.append(l2_norm(U - Uf[:, ::2], g.x))
    scale = max(l2_norm(U, g.x) for g, U in finals)
    if max(errors) <= 1e-12 * max(scale, 1e-300):
        return ConvergenceResult(None, [], errors, "exact")
    if any(e2 >= e1 for e1, e2 in zip(errors, errors[1:])):
        return ConvergenceResult(None, [], errors, "non-monotone", ["errors do not decrease under refinement"])
    orders = [math.log2(e1 / e2) for e1, e2 in zip(errors, errors[1:])]
    order = orders[-1]
    notes = []
    if order < 0.8:
        notes.append(f"observed order {order:.3g} < 0.8: solution appears non-smooth")
    return ConvergenceResult(order, orders, errors, "asymptotic", notes)
