"""Interaction kernels and dynamics presets.

A Kernel bundles the pairwise interaction K together with the norms the
error estimates need (Lipschitz constant, sup norm, L1 norm, sup of the
divergence) and the state-space geometry.  K acts on difference vectors of
shape (..., dim).  An optional self_drift carries uncoupled per-agent
dynamics (used by the neuron preset); it plays no role in the interaction
bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class Domain:
    kind: str                  # "line" | "torus"
    period: float | None = None

    def __post_init__(self):
        if self.kind not in ("line", "torus"):
            raise ValueError("domain kind must be 'line' or 'torus'")
        if self.kind == "torus" and not (self.period and self.period > 0):
            raise ValueError("torus domain needs a positive period")


LINE = Domain("line")


@dataclass(frozen=True)
class Kernel:
    dim: int
    eval: Callable[[np.ndarray], np.ndarray]
    lipschitz: float
    sup_norm: float
    l1_norm: float            # may be math.inf
    div_sup: float
    zero_at_origin: bool
    domain: Domain = LINE
    self_drift: Callable[[np.ndarray], np.ndarray] | None = field(default=None)
    name: str = "custom"

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        for fname in ("lipschitz", "sup_norm", "l1_norm", "div_sup"):
            if getattr(self, fname) < 0:
                raise ValueError(f"{fname} must be >= 0")
        if self.zero_at_origin:
            z = np.asarray(self.eval(np.zeros((1, self.dim))))
            if not np.allclose(z, 0.0, atol=1e-15):
                raise ValueError("kernel flagged zero_at_origin but K(0) != 0")

    @property
    def w1inf_norm(self) -> float:
        """max(|K|_inf, |grad K|_inf), the scale entering the drift bounds."""
        return max(self.sup_norm, self.lipschitz)


def kuramoto(coupling: float = 1.0, period: float = 2.0 * math.pi) -> Kernel:
    """Phase-oscillator coupling K(x) = -coupling * sin(x) on the circle.

    With drift sum_j w_ij K(theta_i - theta_j) this pulls each phase toward
    its neighbours (the synchronizing sign).  Per-oscillator natural
    frequencies enter as the steppers' additive omega term, zero by default.
    """
    c = float(coupling)

    def k_eval(x):
        return -c * np.sin(x)

    return Kernel(
        dim=1,
        eval=k_eval,
        lipschitz=c,
        sup_norm=c,
        l1_norm=4.0 * c,      # integral of |sin| over one period
        div_sup=c,
        zero_at_origin=True,
        domain=Domain("torus", period),
        name="kuramoto",
    )


def linear_attraction(amplitude: float = 1.0) -> Kernel:
    """K(x) = -amplitude * x * exp(-x^2) on the line.

    Attractive near the origin, exponentially screened at distance; smooth,
    globally Lipschitz with constant = amplitude and sup norm
    amplitude / sqrt(2 e).
    """
    a = float(amplitude)

    def k_eval(x):
        return -a * x * np.exp(-(x * x))

    return Kernel(
        dim=1,
        eval=k_eval,
        lipschitz=a,
        sup_norm=a / math.sqrt(2.0 * math.e),
        l1_norm=a,
        div_sup=a,
        zero_at_origin=True,
        domain=LINE,
        name="linear_attraction",
    )


def hodgkin_huxley(constants: dict, alpha: dict, beta: dict) -> Kernel:
    """Conductance-based neuron state (V, n, m, h) with potential coupling.

    constants supplies c_m, g_k, g_na, g_l, v_k, v_na, v_l; alpha and beta
    supply the gating rate functions for 'n', 'm', 'h' (callables of V).
    None of these carry defaults: the model is only defined once they are
    chosen.  The gating variables follow their own relaxation dynamics and
    the membrane potentials couple through K(x) = (-x_V / c_m, 0, 0, 0),
    which vanishes at the origin.  Particle-only: dim = 4 keeps this preset
    out of the grid-based solvers.
    """
    required = ("c_m", "g_k", "g_na", "g_l", "v_k", "v_na", "v_l")
    missing = [k for k in required if k not in constants]
    if missing:
        raise ValueError(f"missing constants: {missing}")
    for gate in ("n", "m", "h"):
        if gate not in alpha or gate not in beta:
            raise ValueError(f"missing rate functions for gate {gate!r}")
    c_m = float(constants["c_m"])
    if c_m <= 0:
        raise ValueError("c_m must be positive")
    g_k, g_na, g_l = (float(constants[k]) for k in ("g_k", "g_na", "g_l"))
    v_k, v_na, v_l = (float(constants[k]) for k in ("v_k", "v_na", "v_l"))

    def k_eval(x):
        out = np.zeros_like(x)
        out[..., 0] = -x[..., 0] / c_m
        return out

    def self_drift(state):
        v, n, m, h = state[..., 0], state[..., 1], state[..., 2], state[..., 3]
        out = np.empty_like(state)
        ionic = g_k * n**4 * (v - v_k) + g_na * m**3 * h * (v - v_na) + g_l * (v - v_l)
        out[..., 0] = -ionic / c_m
        out[..., 1] = alpha["n"](v) * (1.0 - n) - beta["n"](v) * n
        out[..., 2] = alpha["m"](v) * (1.0 - m) - beta["m"](v) * m
        out[..., 3] = alpha["h"](v) * (1.0 - h) - beta["h"](v) * h
        return out

    return Kernel(
        dim=4,
        eval=k_eval,
        lipschitz=1.0 / c_m,
        sup_norm=math.inf,
        l1_norm=math.inf,
        div_sup=1.0 / c_m,
        zero_at_origin=True,
        domain=LINE,
        self_drift=self_drift,
        name="hodgkin_huxley",
    )


PRESETS = {
    "kuramoto": kuramoto,
    "linear_attraction": linear_attraction,
    "hodgkin_huxley": hodgkin_huxley,
}
