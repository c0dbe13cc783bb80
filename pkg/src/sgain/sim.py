"""Time integration of finite truncations and empirical validation.

Trajectories are produced by the classical fixed-step fourth-order
Runge-Kutta scheme with inputs sampled from their closed-form
descriptors at the stage times (no zero-order hold).  Along each
trajectory the block-wise lp norm, the composite Lyapunov value (when a
certificate is attached), and the instantaneous input norm are recorded,
so that the dissipation inequality and the exponential envelopes can be
checked sample by sample with a step-proportional tolerance.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .certificate import CompositeLyapunov, iss_trajectory_bound
from .errors import InsufficientDataError, NumericInputError, ParameterError, ShapeError
from .network import NetworkGenerator, TruncatedNetwork, truncate

# --------------------------------------------------------------------------
# Input signals
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Zero:
    """No external forcing."""

    def values(self, net: TruncatedNetwork, t: float) -> np.ndarray:
        return np.zeros(net.input_dim)

    def sup_norm_q(self, net: TruncatedNetwork, q: float) -> float:
        return 0.0

    def to_dict(self) -> dict:
        return {"kind": "zero"}


def _channel_subsystems(net: TruncatedNetwork) -> np.ndarray:
    return np.repeat(np.arange(1, net.n_subsystems + 1), net.input_dims)


@dataclass(frozen=True)
class ConstantOnFirstK:
    """Constant amplitude on every channel of the first K subsystems."""

    k: int
    amplitude: float

    def _mask(self, net: TruncatedNetwork) -> np.ndarray:
        return _channel_subsystems(net) <= self.k

    def values(self, net: TruncatedNetwork, t: float) -> np.ndarray:
        return np.where(self._mask(net), float(self.amplitude), 0.0)

    def sup_norm_q(self, net: TruncatedNetwork, q: float) -> float:
        count = int(self._mask(net).sum())
        return abs(float(self.amplitude)) * count ** (1.0 / q)

    def to_dict(self) -> dict:
        return {"kind": "constant-first-k", "k": self.k, "amplitude": self.amplitude}


@dataclass(frozen=True)
class GeometricProfile:
    """Time-constant profile u_i = amplitude * ratio^i across channels."""

    amplitude: float
    ratio: float

    def __post_init__(self):
        if not 0 < self.ratio < 1:
            raise ParameterError("geometric ratio must lie in (0, 1)")

    def values(self, net: TruncatedNetwork, t: float) -> np.ndarray:
        idx = _channel_subsystems(net).astype(float)
        return float(self.amplitude) * float(self.ratio) ** idx

    def sup_norm_q(self, net: TruncatedNetwork, q: float) -> float:
        idx = _channel_subsystems(net).astype(float)
        return float((np.abs(self.values(net, 0.0)) ** q).sum() ** (1.0 / q)) if idx.size else 0.0

    def to_dict(self) -> dict:
        return {"kind": "geometric", "amplitude": self.amplitude, "ratio": self.ratio}


@dataclass(frozen=True)
class SinusoidOnFirstK:
    """In-phase sinusoids on the channels of the first K subsystems."""

    k: int
    amplitude: float
    frequency: float

    def values(self, net: TruncatedNetwork, t: float) -> np.ndarray:
        mask = _channel_subsystems(net) <= self.k
        return np.where(mask, float(self.amplitude) * math.sin(2 * math.pi * self.frequency * t), 0.0)

    def sup_norm_q(self, net: TruncatedNetwork, q: float) -> float:
        count = int((_channel_subsystems(net) <= self.k).sum())
        return abs(float(self.amplitude)) * count ** (1.0 / q)

    def to_dict(self) -> dict:
        return {"kind": "sinusoid-first-k", "k": self.k,
                "amplitude": self.amplitude, "frequency": self.frequency}


@dataclass(frozen=True)
class TrafficLights:
    """Square-wave green phases on the controlled entries.

    All controlled channels share the schedule: green (amplitude) for
    ``t_on``, red (zero) for ``t_off``, repeating.
    """

    t_on: float
    t_off: float
    amplitude: float = 1.0

    def __post_init__(self):
        if self.t_on <= 0 or self.t_off < 0:
            raise ParameterError("green phase must be positive, red phase nonnegative")

    def values(self, net: TruncatedNetwork, t: float) -> np.ndarray:
        period = self.t_on + self.t_off
        on = (t % period) < self.t_on if period > 0 else True
        return np.full(net.input_dim, float(self.amplitude) if on else 0.0)

    def sup_norm_q(self, net: TruncatedNetwork, q: float) -> float:
        return abs(float(self.amplitude)) * net.input_dim ** (1.0 / q) if net.input_dim else 0.0

    def to_dict(self) -> dict:
        return {"kind": "traffic-lights", "t_on": self.t_on, "t_off": self.t_off,
                "amplitude": self.amplitude}


InputSignal = Zero | ConstantOnFirstK | GeometricProfile | SinusoidOnFirstK | TrafficLights


def signal_from_dict(obj: dict) -> InputSignal:
    kind = obj.get("kind", "zero")
    if kind == "zero":
        return Zero()
    if kind == "constant-first-k":
        return ConstantOnFirstK(k=int(obj["k"]), amplitude=float(obj["amplitude"]))
    if kind == "geometric":
        return GeometricProfile(amplitude=float(obj["amplitude"]), ratio=float(obj["ratio"]))
    if kind == "sinusoid-first-k":
        return SinusoidOnFirstK(k=int(obj["k"]), amplitude=float(obj["amplitude"]),
                                frequency=float(obj["frequency"]))
    if kind == "traffic-lights":
        return TrafficLights(t_on=float(obj["t_on"]), t_off=float(obj["t_off"]),
                             amplitude=float(obj.get("amplitude", 1.0)))
    raise ParameterError(f"unknown input signal kind {kind!r}")


# --------------------------------------------------------------------------
# Norms
# --------------------------------------------------------------------------


def lp_norm(x: np.ndarray, p: float, block_dims=None) -> float:
    """lp aggregation of per-block Euclidean norms (scalar blocks default)."""
    x = np.asarray(x, dtype=float).ravel()
    if block_dims is None:
        blocks = np.abs(x)
    else:
        dims = np.asarray(block_dims)
        if dims.sum() != x.size:
            raise ShapeError("block dimensions do not sum to the vector length")
        offs = np.concatenate(([0], np.cumsum(dims)))
        blocks = np.array([np.linalg.norm(x[a:b]) for a, b in zip(offs[:-1], offs[1:])])
    if math.isinf(p):
        return float(blocks.max()) if blocks.size else 0.0
    if p < 1:
        raise ParameterError("norm exponent must satisfy p >= 1")
    return float((blocks ** p).sum() ** (1.0 / p))


def lq_input_norm(signal: InputSignal, net: TruncatedNetwork, q: float, t: float) -> float:
    """Instantaneous |u(t)|_q of a signal on one truncation."""
    return lp_norm(signal.values(net, t), q)


# --------------------------------------------------------------------------
# Initial states
# --------------------------------------------------------------------------


def initial_state(net: TruncatedNetwork, desc) -> np.ndarray:
    """Build x0 from a small descriptor: zero / unit / first-k / explicit."""
    if isinstance(desc, np.ndarray | list | tuple):
        x0 = np.asarray(desc, dtype=float).ravel()
        if x0.size != net.dim:
            raise ShapeError(f"x0 has dimension {x0.size}, network needs {net.dim}")
        return x0
    kind = desc.get("kind", "zero")
    x0 = np.zeros(net.dim)
    if kind == "zero":
        return x0
    if kind == "unit":
        i = int(desc["index"])
        if not 1 <= i <= net.n_subsystems:
            raise ParameterError(f"unit index {i} outside the truncation")
        x0[net.block_offsets[i - 1]] = float(desc.get("value", 1.0))
        return x0
    if kind == "first-k":
        k = min(int(desc["K"]), net.n_subsystems)
        x0[: net.block_offsets[k]] = float(desc.get("value", 1.0))
        return x0
    raise ParameterError(f"unknown initial-state kind {kind!r}")


# --------------------------------------------------------------------------
# Integration
# --------------------------------------------------------------------------


@dataclass
class TrajectoryRecord:
    """Sampled trajectory with norm, Lyapunov, and input-norm channels."""

    t: np.ndarray
    states: np.ndarray | None
    norm_p: np.ndarray
    v: np.ndarray | None
    u_norm: np.ndarray
    u_sup_norm: float
    p: float
    q: float
    step: float
    method: str
    diverged: bool
    n_subsystems: int

    @property
    def horizon(self) -> float:
        return float(self.t[-1]) if self.t.size else 0.0


def integrate(net: TruncatedNetwork, x0, signal: InputSignal | None = None,
              horizon: float = 10.0, step: float = 1e-3,
              lyapunov: CompositeLyapunov | None = None,
              store_states: bool = True, blow_up: float = 1e12) -> TrajectoryRecord:
    """Fixed-step RK4 integration of the truncated interconnection.

    Divergence (block-norm beyond ``blow_up``) flags the record and halts
    integration; it is a reported outcome, not an error.
    """
    if step <= 0 or horizon < step:
        raise ParameterError("need step > 0 and horizon >= step")
    signal = signal or Zero()
    x = np.asarray(x0, dtype=float).ravel().copy()
    if x.size != net.dim:
        raise ShapeError(f"x0 has dimension {x.size}, network needs {net.dim}")
    if not np.all(np.isfinite(x)):
        raise NumericInputError("non-finite component in the initial state")

    gen = net.generator
    p, q = float(gen.p), float(gen.q)
    bound = lyapunov.bind(net) if lyapunov is not None else None
    n_steps = int(round(horizon / step))
    h = step

    ts = np.empty(n_steps + 1)
    norms = np.empty(n_steps + 1)
    vs = np.empty(n_steps + 1) if bound is not None else None
    u_norms = np.empty(n_steps + 1)
    states = np.empty((n_steps + 1, net.dim)) if store_states else None

    def record(k: int, t: float) -> float:
        ts[k] = t
        norms[k] = lp_norm(net.block_norms(x), p)
        if vs is not None:
            vs[k] = bound.value(x)
        u_norms[k] = lp_norm(signal.values(net, t), q) if net.input_dim else 0.0
        if states is not None:
            states[k] = x
        return norms[k]

    diverged = False
    last = 0
    record(0, 0.0)
    for k in range(n_steps):
        t = k * h
        u1 = signal.values(net, t)
        u2 = signal.values(net, t + 0.5 * h)
        u4 = signal.values(net, t + h)
        k1 = net.rhs(x, u1)
        k2 = net.rhs(x + 0.5 * h * k1, u2)
        k3 = net.rhs(x + 0.5 * h * k2, u2)
        k4 = net.rhs(x + h * k3, u4)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        last = k + 1
        n = record(last, t + h)
        if not math.isfinite(n) or n > blow_up:
            diverged = True
            break
    sl = slice(0, last + 1)
    return TrajectoryRecord(
        t=ts[sl], states=states[sl] if states is not None else None,
        norm_p=norms[sl], v=vs[sl] if vs is not None else None,
        u_norm=u_norms[sl], u_sup_norm=signal.sup_norm_q(net, q),
        p=p, q=q, step=h, method="rk4", diverged=diverged,
        n_subsystems=net.n_subsystems)


# --------------------------------------------------------------------------
# Checks along trajectories
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ViolationReport:
    name: str
    n_checked: int
    violations: tuple[tuple[float, float], ...]  # (time, margin)
    worst_margin: float
    tol_coefficient: float

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"name": self.name, "ok": self.ok, "n_checked": self.n_checked,
                "n_violations": len(self.violations),
                "worst_margin": self.worst_margin,
                "tol_coefficient": self.tol_coefficient,
                "violations": [list(v) for v in self.violations[:32]]}


def verify_dissipation(traj: TrajectoryRecord, lyap: CompositeLyapunov,
                       c_tol: float = 20.0) -> ViolationReport:
    """Forward-difference check of the dissipation inequality.

    Each consecutive pair must satisfy
    ``(V(t+h) - V(t))/h <= -lambda_inf V(t) + mu_hi gamma_u_hi ||u||^q + tol``
    with the step-proportional tolerance ``tol = c_tol h (1 + V(t))``.
    """
    if traj.v is None or traj.v.size < 2:
        raise InsufficientDataError("trajectory lacks a Lyapunov channel or samples")
    h = traj.step
    lam_inf = float(lyap.lambda_inf)
    forcing = float(lyap.input_coefficient) * traj.u_sup_norm ** float(lyap.q)
    quotients = np.diff(traj.v) / h
    rhs = -lam_inf * traj.v[:-1] + forcing + c_tol * h * (1.0 + traj.v[:-1])
    margins = quotients - rhs
    bad = np.nonzero(margins > 0)[0]
    return ViolationReport(
        name="dissipation", n_checked=int(margins.size),
        violations=tuple((float(traj.t[i]), float(margins[i])) for i in bad),
        worst_margin=float(margins.max()) if margins.size else -math.inf,
        tol_coefficient=c_tol)


def verify_envelope(traj: TrajectoryRecord, lyap: CompositeLyapunov,
                    eps: float | None = None, c_tol: float = 20.0) -> ViolationReport:
    """Check ``V(t) <= exp(-eps t) V(0) + chi(||u||)`` sample by sample."""
    if traj.v is None or traj.v.size < 1:
        raise InsufficientDataError("trajectory lacks a Lyapunov channel")
    if eps is None:
        eps = 0.5 * float(lyap.lambda_inf)
    bound = iss_trajectory_bound(lyap, eps)
    env = bound.envelope_v(traj.t, float(traj.v[0]), traj.u_sup_norm)
    tol = c_tol * traj.step * (1.0 + env)
    margins = traj.v - env - tol
    bad = np.nonzero(margins > 0)[0]
    return ViolationReport(
        name="envelope", n_checked=int(traj.v.size),
        violations=tuple((float(traj.t[i]), float(margins[i])) for i in bad),
        worst_margin=float(margins.max()) if margins.size else -math.inf,
        tol_coefficient=c_tol)


@dataclass(frozen=True)
class DecayFit:
    rate: float
    prefactor: float
    n_points: int
    channel: str

    def to_dict(self) -> dict:
        return {"rate": self.rate, "prefactor": self.prefactor,
                "n_points": self.n_points, "channel": self.channel}


def fit_decay(traj: TrajectoryRecord, channel: str = "v",
              floor: float = 1e-10) -> DecayFit:
    """Least-squares exponential rate of V(t) or of the state norm.

    Fits log(value) against t over the samples above ``floor`` and
    returns the slope magnitude (so a pure exponential exp(-a t) gives
    rate a).
    """
    if channel == "v":
        if traj.v is None:
            raise InsufficientDataError("no Lyapunov channel on this trajectory")
        values = traj.v
    elif channel == "norm":
        values = traj.norm_p
    else:
        raise ParameterError(f"unknown channel {channel!r}")
    mask = values > floor
    if mask.sum() < 2 or np.ptp(traj.t[mask]) <= 0:
        raise InsufficientDataError("fewer than two samples above the fit floor")
    t, y = traj.t[mask], np.log(values[mask])
    slope, intercept = np.polyfit(t, y, 1)
    return DecayFit(rate=float(-slope), prefactor=float(np.exp(intercept)),
                    n_points=int(mask.sum()), channel=channel)


def truncation_convergence_probe(gen: NetworkGenerator, x0_desc, signal,
                                 horizon: float, step: float,
                                 n_list, first_k: int) -> list[dict]:
    """Inter-truncation deviation of the first K blocks.

    Integrates the same initial data (supported on the first K
    subsystems) at each truncation size and reports, for consecutive
    sizes, the maximum over time of the lp difference of the retained
    window.  No convergence claim is made; the numbers are the evidence.
    """
    n_list = list(n_list)
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ParameterError("truncation sizes must be strictly increasing")
    if n_list[0] < first_k + gen.bandwidth:
        raise ParameterError("smallest truncation must cover the window plus bandwidth")
    p = float(gen.p)
    runs = []
    for n in n_list:
        net = truncate(gen, n)
        x0 = initial_state(net, x0_desc if not isinstance(x0_desc, dict)
                           else {**x0_desc})
        traj = integrate(net, x0, signal, horizon, step, store_states=True)
        dim_k = int(net.block_offsets[first_k])
        runs.append((n, net, traj.states[:, :dim_k]))
    out = []
    for (n1, net1, s1), (n2, _, s2) in zip(runs, runs[1:]):
        rows = min(s1.shape[0], s2.shape[0])
        dims = net1.block_dims[:first_k]
        dev = max(lp_norm(s1[r] - s2[r], p, block_dims=dims) for r in range(rows))
        out.append({"n_small": n1, "n_large": n2, "max_deviation": float(dev)})
    return out


# --------------------------------------------------------------------------
# Export
# --------------------------------------------------------------------------


def export_csv(traj: TrajectoryRecord, path, include_states: bool = False) -> None:
    """Write ``t, norm_p, V, u_norm[, x_1..x_d]`` rows."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        header = ["t", "norm_p", "V", "u_norm"]
        if include_states and traj.states is not None:
            header += [f"x_{i}" for i in range(1, traj.states.shape[1] + 1)]
        w.writerow(header)
        for k in range(traj.t.size):
            row = [repr(float(traj.t[k])), repr(float(traj.norm_p[k])),
                   "" if traj.v is None else repr(float(traj.v[k])),
                   repr(float(traj.u_norm[k]))]
            if include_states and traj.states is not None:
                row += [repr(float(v)) for v in traj.states[k]]
            w.writerow(row)
