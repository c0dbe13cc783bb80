"""Finite descriptions of countably infinite ODE networks.

Supported subsystem families (all with banded neighbor coupling):

* ``LinearChain`` — scalar subsystems
  ``dx_i/dt = -b_ii x_i + b_i(i-1) x_(i-1) + b_i(i+1) x_(i+1)``
  with ``b_10 = 0`` (there is no subsystem 0) and uniformly bounded
  coefficients.

* ``LureBanded`` — small dense blocks with a scalar sector nonlinearity
  ``dx_i/dt = A_i x_i + E_i phi_i(G_i x_i) + B_i u_i + D_i xbar_i``
  where ``xbar_i`` stacks the left/right neighbor states and ``phi_i``
  satisfies ``(phi(s) - r s)(phi(s) - l s) <= 0`` with ``l < r``.

* ``Traffic`` — scalar road cells
  ``dx_i/dt = -(v_i/l_i + e_i) x_i + D_i xbar_i + B_i u_i``
  with nine structural cell classes S1..S9 (period 8 beyond the first
  three cells) describing which neighbors feed each cell, which cells
  have exits, and which have controlled entries.

* ``CounterexampleSlow`` / ``CounterexampleGain`` — decoupled scalar
  systems ``dx_i/dt = -(1/i) x_i + u_i`` and ``dx_i/dt = -x_i + i u_i``
  used as negative controls: the first has no uniform decay rate, the
  second no uniform input gain.

A :class:`NetworkGenerator` bundles a family with exponents (p, q) and can
materialize any prefix of the network as a :class:`TruncatedNetwork` whose
out-of-range couplings read a zero boundary state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from .errors import NumericInputError, ParameterError, ShapeError
from .seqrules import (PeriodicSeq, Real, as_number, exact_div,
                       _check_index)

# --------------------------------------------------------------------------
# Families
# --------------------------------------------------------------------------


def _as_seq(x) -> PeriodicSeq:
    if isinstance(x, PeriodicSeq):
        return x
    return PeriodicSeq.constant(as_number(x))


@dataclass(frozen=True)
class LinearChain:
    """Tridiagonally coupled scalar subsystems."""

    diag: PeriodicSeq
    sub: PeriodicSeq
    sup: PeriodicSeq

    def __post_init__(self):
        if self.diag.min() <= 0:
            raise ParameterError("diagonal coefficients b_ii must be positive")

    @staticmethod
    def uniform(b_diag: Real, b_off: Real) -> "LinearChain":
        b_off = as_number(b_off)
        return LinearChain(diag=_as_seq(b_diag), sub=_as_seq(b_off), sup=_as_seq(b_off))

    @property
    def bandwidth(self) -> int:
        return 1

    @property
    def coeff_bound(self) -> Real:
        """Uniform bound on all coefficient magnitudes (well-posedness)."""
        return max(max(abs(v) for v in s.values()) for s in (self.diag, self.sub, self.sup))

    def coefficients(self, i: int):
        b_sub = 0 if i == 1 else self.sub.at(i)
        return self.diag.at(i), b_sub, self.sup.at(i)

    def neighbors(self, i: int) -> tuple[int, ...]:
        _, b_sub, b_sup = self.coefficients(i)
        out = []
        if b_sub != 0:
            out.append(i - 1)
        if b_sup != 0:
            out.append(i + 1)
        return tuple(out)

    def state_dim(self, i: int) -> int:
        return 1

    def input_dim(self, i: int) -> int:
        return 0

    @property
    def structure(self) -> tuple[int, int]:
        """(preamble length, period) of the subsystem description."""
        pre = max(1, self.diag.preamble_len, self.sub.preamble_len, self.sup.preamble_len)
        period = 1
        for s in (self.diag, self.sub, self.sup):
            period = int(np.lcm(period, s.period))
        return pre, period


def _mat(x) -> np.ndarray:
    return np.atleast_2d(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class LureBanded:
    """Banded network of identical-size blocks with sector nonlinearity.

    Matrices are stored as nested tuples so the description is hashable
    and exactly comparable; they are converted to float arrays on use.
    ``d_left``/``d_right`` are the per-neighbor coupling blocks; subsystem 1
    has only a right neighbor.
    """

    a: tuple
    e: tuple
    g: tuple
    b: tuple
    d_left: tuple
    d_right: tuple
    sector_l: Real
    sector_r: Real
    phi: str = "midpoint-linear"

    def __post_init__(self):
        if not self.sector_l < self.sector_r:
            raise ParameterError("sector requires l < r")
        if self.phi not in ("midpoint-linear", "saturation", "zero"):
            raise ParameterError(f"unknown nonlinearity {self.phi!r}")
        if self.phi == "zero" and not (self.sector_l <= 0 <= self.sector_r):
            raise ParameterError("phi = 0 lies in the sector only when l <= 0 <= r")
        n = self.n
        if _mat(self.a).shape != (n, n):
            raise ShapeError("A must be square")
        for name, m, shape in (("E", self.e, (n, 1)), ("G", self.g, (1, n)),
                               ("D_left", self.d_left, (n, n)), ("D_right", self.d_right, (n, n))):
            if _mat(m).shape != shape:
                raise ShapeError(f"{name} must have shape {shape}")

    @staticmethod
    def platoon(k0: float, b0: float, coupling_scale: float,
                sector=(-1, 1), phi: str = "zero") -> "LureBanded":
        """Symmetric bidirectional vehicle-string error dynamics.

        Each block is a double integrator closed with position/velocity
        feedback ``A = [[0, 1], [-k0, -b0]]``; neighbor states enter
        through ``coupling_scale * [[0, 0], [k0, b0]]`` on each side, and
        the external input acts on the velocity channel.
        """
        if k0 <= 0 or b0 <= 0:
            raise ParameterError("k0 and b0 must be positive")
        d = tuple((tuple(float(coupling_scale) * x for x in row))
                  for row in ((0.0, 0.0), (float(k0), float(b0))))
        return LureBanded(
            a=((0.0, 1.0), (-float(k0), -float(b0))),
            e=((0.0,), (0.0,)),
            g=((0.0, 0.0),),
            b=((0.0,), (1.0,)),
            d_left=d, d_right=d,
            sector_l=as_number(sector[0]), sector_r=as_number(sector[1]),
            phi=phi,
        )

    @property
    def n(self) -> int:
        return len(self.a)

    @property
    def bandwidth(self) -> int:
        return 1

    def matrices(self, i: int):
        """(A, E, G, B, {offset: D block}) for subsystem i."""
        d = {} if np.all(_mat(self.d_right) == 0) else {1: _mat(self.d_right)}
        if i > 1 and not np.all(_mat(self.d_left) == 0):
            d[-1] = _mat(self.d_left)
        return _mat(self.a), _mat(self.e), _mat(self.g), _mat(self.b), d

    def neighbors(self, i: int) -> tuple[int, ...]:
        return tuple(sorted(i + off for off in self.matrices(i)[4]))

    def state_dim(self, i: int) -> int:
        return self.n

    def input_dim(self, i: int) -> int:
        return _mat(self.b).shape[1] if np.any(_mat(self.b) != 0) else 0

    def phi_eval(self, s):
        """Vectorized nonlinearity; satisfies the sector bound by design."""
        s = np.asarray(s, dtype=float)
        lo_s, hi_s = float(self.sector_l) * s, float(self.sector_r) * s
        if self.phi == "zero":
            return np.zeros_like(s)
        if self.phi == "midpoint-linear":
            return 0.5 * (lo_s + hi_s)
        return np.clip(s, np.minimum(lo_s, hi_s), np.maximum(lo_s, hi_s))

    @property
    def structure(self) -> tuple[int, int]:
        return 1, 1


# Traffic cell classes: neighbor offsets, exit multiplier (times e), and
# entry coefficient (times r).
_TRAFFIC_CLASSES: dict[str, tuple[tuple[int, ...], int, Fraction]] = {
    "S1": ((1,), 0, Fraction(0)),
    "S2": ((4,), 0, Fraction(1)),
    "S3": ((-4,), 0, Fraction(1, 2)),
    "S4": ((-1, 4), 0, Fraction(0)),
    "S5": ((-4, 1), 1, Fraction(0)),
    "S6": ((1, 4), 0, Fraction(0)),
    "S7": ((-4, -1), 0, Fraction(0)),
    "S8": ((-1, 4), 2, Fraction(0)),
    "S9": ((-4, 1), 0, Fraction(0)),
}

_TRAFFIC_RESIDUE = {4: "S2", 5: "S3", 6: "S4", 1: "S5",
                    2: "S6", 7: "S7", 0: "S8", 3: "S9"}


def classify_traffic_cell(i: int) -> str:
    """Unique structural class S1..S9 of road cell i."""
    _check_index(i)
    if i in (1, 3):
        return "S1"
    return _TRAFFIC_RESIDUE[i % 8]


@dataclass(frozen=True)
class Traffic:
    """Road network cells with per-class neighbor structure."""

    v: PeriodicSeq
    l: PeriodicSeq
    c: Real
    e: Real
    r: Real

    def __post_init__(self):
        if not 0 < self.c < Fraction(1, 2):
            raise ParameterError("traffic requires c in (0, 0.5)")
        if not 0 < self.e < 1:
            raise ParameterError("traffic requires e in (0, 1)")
        if self.r <= 0:
            raise ParameterError("traffic requires r > 0")
        if self.v.min() <= 0 or self.l.min() <= 0:
            raise ParameterError("speeds and cell lengths must be positive")

    @property
    def bandwidth(self) -> int:
        return 4

    def flow(self, i: int) -> Real:
        """v_i / l_i, the cell's outflow rate."""
        return exact_div(self.v.at(i), self.l.at(i))

    def cell(self, i: int):
        """(class name, e_i, {offset: D weight}, B_i) for cell i."""
        name = classify_traffic_cell(i)
        offsets, e_mult, b_factor = _TRAFFIC_CLASSES[name]
        d = {off: self.c * self.flow(i + off) for off in offsets}
        return name, e_mult * self.e, d, b_factor * self.r

    def neighbors(self, i: int) -> tuple[int, ...]:
        offsets = _TRAFFIC_CLASSES[classify_traffic_cell(i)][0]
        return tuple(sorted(i + off for off in offsets))

    def state_dim(self, i: int) -> int:
        return 1

    def input_dim(self, i: int) -> int:
        return 1 if _TRAFFIC_CLASSES[classify_traffic_cell(i)][2] != 0 else 0

    @property
    def structure(self) -> tuple[int, int]:
        period = int(np.lcm(8, int(np.lcm(self.v.period, self.l.period))))
        pre = max(3, self.v.preamble_len, self.l.preamble_len)
        return pre, period


@dataclass(frozen=True)
class CounterexampleSlow:
    """Decoupled scalars with decay rate 1/i vanishing along the network."""

    def coefficients(self, i: int):
        return Fraction(-1, i), 1

    def neighbors(self, i: int) -> tuple[int, ...]:
        return ()

    def state_dim(self, i: int) -> int:
        return 1

    def input_dim(self, i: int) -> int:
        return 1

    @property
    def bandwidth(self) -> int:
        return 1

    @property
    def structure(self) -> None:
        return None  # closed form, no periodic structure


@dataclass(frozen=True)
class CounterexampleGain:
    """Decoupled scalars with input gain i growing along the network."""

    def coefficients(self, i: int):
        return -1, i

    def neighbors(self, i: int) -> tuple[int, ...]:
        return ()

    def state_dim(self, i: int) -> int:
        return 1

    def input_dim(self, i: int) -> int:
        return 1

    @property
    def bandwidth(self) -> int:
        return 1

    @property
    def structure(self) -> None:
        return None


Family = LinearChain | LureBanded | Traffic | CounterexampleSlow | CounterexampleGain

_FAMILY_NAMES = {
    LinearChain: "linear-chain",
    LureBanded: "lure-banded",
    Traffic: "traffic",
    CounterexampleSlow: "counterexample-slow",
    CounterexampleGain: "counterexample-gain",
}


# --------------------------------------------------------------------------
# Generator and subsystem specs
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SubsystemSpec:
    """Materialized description of one subsystem."""

    index: int
    state_dim: int
    input_dim: int
    neighbors: tuple[int, ...]
    dynamics: tuple  # family-specific coefficient record, exactly comparable

    def __post_init__(self):
        if self.index in self.neighbors:
            raise ParameterError("a subsystem cannot neighbor itself")


@dataclass(frozen=True)
class NetworkGenerator:
    """Finite, machine-checkable description of the whole infinite network."""

    family: Family
    p: Real = 2
    q: Real = 2

    def __post_init__(self):
        if self.p < 1 or self.q < 1:
            raise ParameterError("exponents p, q must lie in [1, inf)")

    @property
    def bandwidth(self) -> int:
        return self.family.bandwidth

    @property
    def structure(self):
        """(preamble length, period), or None for closed-form families."""
        return self.family.structure

    @property
    def family_name(self) -> str:
        return _FAMILY_NAMES[type(self.family)]

    def spec(self, i: int) -> SubsystemSpec:
        return generate_spec(self, i)

    def truncate(self, n_subsystems: int) -> "TruncatedNetwork":
        return truncate(self, n_subsystems)


def _dynamics_record(fam: Family, i: int) -> tuple:
    if isinstance(fam, LinearChain):
        return fam.coefficients(i)
    if isinstance(fam, LureBanded):
        a, e, g, b, d = fam.matrices(i)
        frozen_d = tuple(sorted((off, tuple(map(tuple, m))) for off, m in d.items()))
        return (tuple(map(tuple, a)), tuple(map(tuple, e)), tuple(map(tuple, g)),
                tuple(map(tuple, b)), frozen_d, fam.sector_l, fam.sector_r, fam.phi)
    if isinstance(fam, Traffic):
        name, e_i, d, b_i = fam.cell(i)
        return (name, fam.flow(i), e_i, tuple(sorted(d.items())), b_i)
    return fam.coefficients(i)


def generate_spec(gen: NetworkGenerator, i: int) -> SubsystemSpec:
    """Deterministic description of subsystem i (1-based)."""
    _check_index(i)
    fam = gen.family
    nbrs = fam.neighbors(i)
    if any(abs(j - i) > gen.bandwidth for j in nbrs):
        raise ParameterError(f"neighbor set of {i} exceeds bandwidth {gen.bandwidth}")
    return SubsystemSpec(index=i, state_dim=fam.state_dim(i),
                         input_dim=fam.input_dim(i), neighbors=nbrs,
                         dynamics=_dynamics_record(fam, i))


# --------------------------------------------------------------------------
# Truncation
# --------------------------------------------------------------------------


class TruncatedNetwork:
    """First N subsystems with states beyond N held at zero.

    The right-hand side splits into a sparse linear part, a sparse input
    matrix, and (for the Lur'e family) a vectorized sector nonlinearity:
    ``f(x, u) = A x + B u + nl(x)``.
    """

    def __init__(self, gen: NetworkGenerator, n_subsystems: int):
        if n_subsystems < 1:
            raise ParameterError("truncation needs at least one subsystem")
        self.generator = gen
        self.n_subsystems = n_subsystems
        self.specs = tuple(generate_spec(gen, i) for i in range(1, n_subsystems + 1))
        self.block_dims = np.array([s.state_dim for s in self.specs])
        self.block_offsets = np.concatenate(([0], np.cumsum(self.block_dims)))
        self.dim = int(self.block_offsets[-1])
        self.input_dims = np.array([s.input_dim for s in self.specs])
        self.input_offsets = np.concatenate(([0], np.cumsum(self.input_dims)))
        self.input_dim = int(self.input_offsets[-1])
        self._assemble()

    def block(self, x: np.ndarray, i: int) -> np.ndarray:
        """State block of subsystem i (1-based)."""
        return x[self.block_offsets[i - 1]:self.block_offsets[i]]

    def _assemble(self) -> None:
        fam = self.generator.family
        a = sp.lil_matrix((self.dim, self.dim))
        b = sp.lil_matrix((self.dim, max(self.input_dim, 1)))
        n = self.n_subsystems
        if isinstance(fam, LinearChain):
            for i in range(1, n + 1):
                bd, bs, bp = (float(v) for v in fam.coefficients(i))
                a[i - 1, i - 1] = -bd
                if i >= 2 and bs:
                    a[i - 1, i - 2] = bs
                if i < n and bp:
                    a[i - 1, i] = bp
        elif isinstance(fam, Traffic):
            for i in range(1, n + 1):
                _, e_i, d, b_i = fam.cell(i)
                a[i - 1, i - 1] = -float(fam.flow(i) + e_i)
                for off, w in d.items():
                    j = i + off
                    if 1 <= j <= n:
                        a[i - 1, j - 1] = float(w)
                if b_i:
                    b[i - 1, self.input_offsets[i - 1]] = float(b_i)
        elif isinstance(fam, (CounterexampleSlow, CounterexampleGain)):
            for i in range(1, n + 1):
                decay, gain = fam.coefficients(i)
                a[i - 1, i - 1] = float(decay)
                b[i - 1, self.input_offsets[i - 1]] = float(gain)
        elif isinstance(fam, LureBanded):
            nb = fam.n
            for i in range(1, n + 1):
                ai, ei, gi, bi, d = fam.matrices(i)
                r0 = self.block_offsets[i - 1]
                a[r0:r0 + nb, r0:r0 + nb] = ai
                for off, dm in d.items():
                    j = i + off
                    if 1 <= j <= n:
                        c0 = self.block_offsets[j - 1]
                        a[r0:r0 + nb, c0:c0 + nb] = dm
                if self.specs[i - 1].input_dim:
                    c0 = self.input_offsets[i - 1]
                    b[r0:r0 + nb, c0:c0 + self.specs[i - 1].input_dim] = bi
        self._a = sp.csr_matrix(a)
        self._b = sp.csr_matrix(b)
        if isinstance(fam, LureBanded):
            self._e_stack = np.vstack([fam.matrices(i)[1].ravel() for i in range(1, n + 1)])
            self._g_stack = np.vstack([fam.matrices(i)[2].ravel() for i in range(1, n + 1)])
        else:
            self._e_stack = None

    @property
    def linear_matrix(self) -> sp.csr_matrix:
        return self._a

    @property
    def input_matrix(self) -> sp.csr_matrix:
        return self._b

    def rhs(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        out = self._a @ x
        if self.input_dim:
            out += self._b @ u
        if self._e_stack is not None:
            fam = self.generator.family
            xb = x.reshape(self.n_subsystems, fam.n)
            s = (xb * self._g_stack).sum(axis=1)
            out += (self._e_stack * fam.phi_eval(s)[:, None]).ravel()
        return out

    def block_norms(self, x: np.ndarray) -> np.ndarray:
        """Euclidean norm of every state block."""
        if np.all(self.block_dims == 1):
            return np.abs(x)
        nb = int(self.block_dims[0])
        return np.linalg.norm(x.reshape(self.n_subsystems, nb), axis=1)


def truncate(gen: NetworkGenerator, n_subsystems: int) -> TruncatedNetwork:
    """Materialize the first N subsystems; couplings past N read zero."""
    return TruncatedNetwork(gen, n_subsystems)


def evaluate_rhs(net: TruncatedNetwork, x: np.ndarray, u: np.ndarray,
                 t: float = 0.0) -> np.ndarray:
    """Stacked right-hand side of the truncated interconnection."""
    x = np.asarray(x, dtype=float).ravel()
    u = np.asarray(u, dtype=float).ravel() if u is not None else np.zeros(0)
    if x.shape[0] != net.dim:
        raise ShapeError(f"state has dimension {x.shape[0]}, network needs {net.dim}")
    if u.shape[0] != net.input_dim:
        raise ShapeError(f"input has dimension {u.shape[0]}, network needs {net.input_dim}")
    if not np.all(np.isfinite(x)) or (u.size and not np.all(np.isfinite(u))):
        raise NumericInputError("non-finite component in state or input")
    return net.rhs(x, u)


# --------------------------------------------------------------------------
# Network description files
# --------------------------------------------------------------------------


def _seq_to_json(s: PeriodicSeq):
    if s.preamble_len == 0 and s.period == 1:
        return _num_to_json(s.cycle[0])
    return {"preamble": [_num_to_json(v) for v in s.preamble],
            "cycle": [_num_to_json(v) for v in s.cycle]}


def _num_to_json(v: Real):
    if isinstance(v, Fraction):
        return str(v) if v.denominator != 1 else v.numerator
    return v


def _seq_from_json(obj) -> PeriodicSeq:
    if isinstance(obj, Mapping):
        return PeriodicSeq(tuple(as_number(v) for v in obj.get("preamble", [])),
                           tuple(as_number(v) for v in obj["cycle"]))
    return PeriodicSeq.constant(as_number(obj))


def generator_to_dict(gen: NetworkGenerator) -> dict:
    fam = gen.family
    coeff: dict
    if isinstance(fam, LinearChain):
        coeff = {"diag": _seq_to_json(fam.diag), "sub": _seq_to_json(fam.sub),
                 "sup": _seq_to_json(fam.sup)}
    elif isinstance(fam, Traffic):
        coeff = {"v": _seq_to_json(fam.v), "l": _seq_to_json(fam.l),
                 "c": _num_to_json(fam.c), "e": _num_to_json(fam.e),
                 "r": _num_to_json(fam.r)}
    elif isinstance(fam, LureBanded):
        coeff = {"A": [[float(x) for x in r] for r in fam.a],
                 "E": [[float(x) for x in r] for r in fam.e],
                 "G": [[float(x) for x in r] for r in fam.g],
                 "B": [[float(x) for x in r] for r in fam.b],
                 "D_left": [[float(x) for x in r] for r in fam.d_left],
                 "D_right": [[float(x) for x in r] for r in fam.d_right],
                 "sector": [_num_to_json(fam.sector_l), _num_to_json(fam.sector_r)],
                 "phi": fam.phi}
    else:
        coeff = {}
    structure = gen.structure
    mode = ({"eventually_periodic": {"preamble": structure[0], "period": structure[1]}}
            if structure else {"closed_form": {}})
    return {"schema": "sgain/1", "family": gen.family_name, "mode": mode,
            "bandwidth": gen.bandwidth, "p": _num_to_json(gen.p),
            "q": _num_to_json(gen.q), "coefficients": coeff}


def generator_from_dict(obj: Mapping) -> NetworkGenerator:
    try:
        name = obj["family"]
        coeff = obj.get("coefficients", {})
        if name == "linear-chain":
            fam: Family = LinearChain(diag=_seq_from_json(coeff["diag"]),
                                      sub=_seq_from_json(coeff["sub"]),
                                      sup=_seq_from_json(coeff["sup"]))
        elif name == "traffic":
            fam = Traffic(v=_seq_from_json(coeff["v"]), l=_seq_from_json(coeff["l"]),
                          c=as_number(coeff["c"]), e=as_number(coeff["e"]),
                          r=as_number(coeff["r"]))
        elif name == "lure-banded":
            def rows(key):
                return tuple(tuple(float(x) for x in r) for r in coeff[key])
            fam = LureBanded(
                a=rows("A"), e=rows("E"), g=rows("G"), b=rows("B"),
                d_left=rows("D_left"), d_right=rows("D_right"),
                sector_l=as_number(coeff["sector"][0]),
                sector_r=as_number(coeff["sector"][1]),
                phi=coeff.get("phi", "midpoint-linear"))
        elif name == "counterexample-slow":
            fam = CounterexampleSlow()
        elif name == "counterexample-gain":
            fam = CounterexampleGain()
        else:
            raise ParameterError(f"unknown family {name!r}")
        return NetworkGenerator(family=fam, p=as_number(obj.get("p", 2)),
                                q=as_number(obj.get("q", 2)))
    except (KeyError, TypeError, IndexError) as exc:
        raise ParameterError(f"malformed network description: {exc}") from exc


def load_generator(path) -> NetworkGenerator:
    """Read a network description file (JSON, decimals parsed exactly)."""
    with open(path) as f:
        obj = json.load(f, parse_float=Fraction)
    return generator_from_dict(obj)


def save_generator(gen: NetworkGenerator, path) -> None:
    with open(path, "w") as f:
        json.dump(generator_to_dict(gen), f, indent=2, sort_keys=True)
        f.write("\n")
