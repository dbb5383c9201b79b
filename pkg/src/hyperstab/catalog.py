"""Built-in systems.

``exchange``: two counter-propagating waves coupled through the integral of
the other component,

    u1_t + u1_x = (c/L) sin(int u2),   u2_t - u2_x = (c/L) sin(int u1),
    u1(t,0) = u2(t,0),                 u2(t,L) = (1-k) u1(t,L),

stabilized by the boundary gain k.  ``damped-exchange`` is a local variant
with partially reflecting ends that admits a strict certificate.
"""

from __future__ import annotations

import math

from .certify import WeightSpec
from .model import SystemSpec, spec_from_dict


def _num(v: float) -> str:
    return repr(float(v)) if v >= 0 else f"(-{repr(-float(v))})"


def exchange_epsilon(c: float = 0.25, L: float = 1.0) -> float:
    """Weight offset eps = 3(1/|c| - 2L)/4; needs |c| L < 1/2."""
    if abs(c) * L >= 0.5:
        raise ValueError("the exchange design needs |c| L < 1/2")
    return 3.0 * (1.0 / abs(c) - 2.0 * L) / 4.0


def exchange_design_gain(c: float = 0.25, L: float = 1.0) -> float:
    """Boundary gain k = sqrt(1 / (1 + 2L/eps))."""
    eps = exchange_epsilon(c, L)
    return math.sqrt(1.0 / (1.0 + 2.0 * L / eps))


def exchange_system_dict(c: float = 0.25, L: float = 1.0, k: float = 0.75) -> dict:
    a = c / L
    r = 1.0 - k
    return {
        "name": f"exchange(c={c:g}, L={L:g}, k={k:g})",
        "n": 2,
        "m": 1,
        "L": L,
        "lambda": ["1", "-1"],
        "source": {
            "B": [f"-{_num(a)}*sin(I[2])", f"-{_num(a)}*sin(I[1])"],
            "C_B": abs(c),
            "M": None,
            "C_g": abs(c),
        },
        "boundary": {
            "G": ["out[2]", f"{_num(r)}*out[1]"],
            "K": [[0.0, 1.0], [abs(r), 0.0]],
        },
    }


def exchange_system(c: float = 0.25, L: float = 1.0, k: float = 0.75) -> SystemSpec:
    return spec_from_dict(exchange_system_dict(c, L, k))


def exchange_weights(c: float = 0.25, L: float = 1.0) -> WeightSpec:
    eps = exchange_epsilon(c, L)
    return WeightSpec.from_strings([f"{_num(L + eps)}-x", f"{_num(L + eps)}+x"])


def exchange_initial() -> list[str]:
    return ["sqrt(2*pi*x)", "exp(-2*pi*x)"]


def traveling_wave_initial(amplitude: float = 0.3, L: float = 1.0) -> list[str]:
    w = 2 * math.pi / L
    return [f"{_num(amplitude)}*cos({_num(w)}*x)", f"{_num(amplitude)}*cos({_num(w)}*x)"]


def damped_exchange_dict() -> dict:
    return {
        "name": "damped-exchange",
        "n": 2,
        "m": 1,
        "L": 1.0,
        "lambda": ["1", "-1"],
        "source": {
            "B": ["0.05*sin(u[2])", "0.05*sin(u[1])"],
            "C_B": 0.05,
            "M": None,
            "C_g": 0.05,
        },
        "boundary": {
            "G": ["0.25*out[2]", "0.25*out[1]"],
            "K": [[0.0, 0.25], [0.25, 0.0]],
        },
    }


def damped_exchange() -> SystemSpec:
    return spec_from_dict(damped_exchange_dict())


def damped_exchange_weights() -> WeightSpec:
    return WeightSpec.from_strings(["exp(-0.5*x)", "exp(0.5*x)"])


BUILTINS = {
    "exchange": exchange_system_dict,
    "damped-exchange": damped_exchange_dict,
}
BUILTIN_WEIGHTS = {
    "exchange": lambda: exchange_weights().to_dict(),
    "damped-exchange": lambda: damped_exchange_weights().to_dict(),
}
