"""Deterministic discrete dynamical systems and trajectory utilities.

A system is a deterministic map f: R^D -> R^D wrapped in a
:class:`SystemHandle`. States are plain 1-D float64 numpy arrays. ODE
oracles (Lorenz, Van der Pol) are discretized with fixed-step RK4 so the
whole toolkit only ever sees discrete maps; one RK4 step is one map step.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NumericalBlowup, UnknownSystem

ATRJ_MAGIC = b"ATRJ"
ATRJ_VERSION = 1


def as_state(x, dim=None) -> np.ndarray:
    """Coerce x to a 1-D float64 state vector, checking finiteness."""
    arr = np.asarray(x, dtype=np.float64).reshape(-1)
    if dim is not None and arr.size != dim:
        raise ValueError(f"state has dimension {arr.size}, system expects {dim}")
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr))[0])
        raise NumericalBlowup(bad)
    return arr


@dataclass(frozen=True)
class SystemHandle:
    """A deterministic map f: R^D -> R^D with metadata.

    ``step_time`` is the physical duration of one map step: h for
    RK4-discretized flows, 1.0 for genuine maps. Exponents and frequencies
    are converted with it so flow oracles report per unit time.
    """

    name: str
    dim: int
    params: dict
    step_kind: str  # analytic-map | ode-rk4-discretized | nca
    step_fn: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    step_time: float = 1.0
    default_x0: np.ndarray | None = field(default=None, repr=False)

    def step(self, x: np.ndarray, step_index=None) -> np.ndarray:
        """Apply f once. Raises NumericalBlowup naming the first bad index."""
        out = self.step_fn(x)
        if not np.all(np.isfinite(out)):
            bad = int(np.flatnonzero(~np.isfinite(out))[0])
            raise NumericalBlowup(bad, step=step_index)
        return out

    def initial_state(self) -> np.ndarray:
        if self.default_x0 is None:
            return np.ones(self.dim)
        return self.default_x0.copy()


@dataclass
class Trajectory:
    """T consecutive recorded states (rows) plus the timesteps they cover.

    ``t_start`` is the absolute map step of the first row and ``dt`` the
    sampling interval in map steps (record_every).
    """

    states: np.ndarray
    t_start: int = 0
    dt: float = 1.0

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=np.float64))
        if self.states.shape[0] < 1:
            raise ValueError("trajectory needs at least one row")

    @property
    def n_samples(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.t_start + self.dt * np.arange(self.n_samples)

    @property
    def last(self) -> np.ndarray:
        return self.states[-1]

    # -- serialization ----------------------------------------------------

    def save_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t"] + [f"x{i}" for i in range(self.dim)])
            for t, row in zip(self.times, self.states):
                writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])

    @classmethod
    def load_csv(cls, path) -> "Trajectory":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if not header or header[0] != "t":
                raise ValueError(f"{path}: expected trajectory CSV with 't' column")
            rows = [[float(v) for v in row] for row in reader if row]
        data = np.asarray(rows)
        times, states = data[:, 0], data[:, 1:]
        dt = float(times[1] - times[0]) if len(times) > 1 else 1.0
        return cls(states, t_start=int(times[0]), dt=dt)

    def save_atrj(self, path):
        t, d = self.states.shape
        with open(path, "wb") as fh:
            fh.write(ATRJ_MAGIC)
            fh.write(struct.pack("<I", ATRJ_VERSION))
            fh.write(struct.pack("<QQ", t, d))
            fh.write(np.ascontiguousarray(self.states, dtype="<f8").tobytes())

    @classmethod
    def load_atrj(cls, path) -> "Trajectory":
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != ATRJ_MAGIC:
                raise ValueError(f"{path}: bad magic {magic!r}, expected {ATRJ_MAGIC!r}")
            (version,) = struct.unpack("<I", fh.read(4))
            if version != ATRJ_VERSION:
                raise ValueError(f"{path}: unsupported ATRJ version {version}")
            t, d = struct.unpack("<QQ", fh.read(16))
            data = np.frombuffer(fh.read(t * d * 8), dtype="<f8").reshape(t, d)
        return cls(data.astype(np.float64))


# -- evolution -------------------------------------------------------------


def step(sys: SystemHandle, x) -> np.ndarray:
    """One application of the system map."""
    return sys.step(as_state(x, sys.dim))


def evolve(sys: SystemHandle, x0, n_steps: int, record_every: int = 1) -> Trajectory:
    """Evolve n_steps from x0, recording every record_every-th state.

    Returns floor(n_steps / record_every) + 1 rows, row 0 being x0. When
    record_every does not divide n_steps the trailing remainder steps are
    not taken: the last row is the state after
    floor(n_steps / record_every) * record_every steps.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    x = as_state(x0, sys.dim)
    n_rows = n_steps // record_every + 1
    out = np.empty((n_rows, sys.dim))
    out[0] = x
    t = 0
    for i in range(1, n_rows):
        for _ in range(record_every):
            t += 1
            x = sys.step(x, step_index=t)
        out[i] = x
    return Trajectory(out, t_start=0, dt=float(record_every))


def burn_in(sys: SystemHandle, x0, n_burn: int) -> np.ndarray:
    """State after n_burn steps, intermediates discarded."""
    if n_burn < 0:
        raise ValueError("n_burn must be >= 0")
    x = as_state(x0, sys.dim)
    for t in range(1, n_burn + 1):
        x = sys.step(x, step_index=t)
    return x


# -- oracle systems ---------------------------------------------------------

GOLDEN_RATIO = (1.0 + math.sqrt(5.0)) / 2.0


def _rk4_map(rhs, h):
    def step_fn(x):
        k1 = rhs(x)
        k2 = rhs(x + 0.5 * h * k1)
        k3 = rhs(x + 0.5 * h * k2)
        k4 = rhs(x + h * k3)
        return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    return step_fn


def _make_lorenz(params):
    p = {"sigma": 10.0, "rho": 28.0, "beta": 8.0 / 3.0, "h": 0.01}
    p.update(params)
    sigma, rho, beta, h = p["sigma"], p["rho"], p["beta"], p["h"]

    def rhs(x):
        return np.array(
            [
                sigma * (x[1] - x[0]),
                x[0] * (rho - x[2]) - x[1],
                x[0] * x[1] - beta * x[2],
            ]
        )

    return SystemHandle(
        name="lorenz",
        dim=3,
        params=p,
        step_kind="ode-rk4-discretized",
        step_fn=_rk4_map(rhs, h),
        step_time=h,
        default_x0=np.array([1.0, 1.0, 1.0]),
    )


def _make_van_der_pol(params):
    p = {"mu": 1.0, "h": 0.01}
    p.update(params)
    mu, h = p["mu"], p["h"]

    def rhs(x):
        return np.array([x[1], mu * (1.0 - x[0] ** 2) * x[1] - x[0]])

    return SystemHandle(
        name="van_der_pol",
        dim=2,
        params=p,
        step_kind="ode-rk4-discretized",
        step_fn=_rk4_map(rhs, h),
        step_time=h,
        default_x0=np.array([2.0, 0.0]),
    )


def _make_torus(params):
    # 4-D embedding (cos t1, sin t1, cos t2, sin t2) of a 2-torus rotation.
    # Angles advance by fixed increments; radii contract toward 1 so the
    # torus is an actual attractor with spectrum (0, 0, ln c, ln c).
    p = {"freq1": 0.06, "freq2": 0.06 * GOLDEN_RATIO, "contract": 0.5}
    p.update(params)
    w1 = 2.0 * math.pi * p["freq1"]
    w2 = 2.0 * math.pi * p["freq2"]
    c = p["contract"]

    def step_fn(x):
        out = np.empty(4)
        for k, w in ((0, w1), (2, w2)):
            r = math.hypot(x[k], x[k + 1])
            theta = math.atan2(x[k + 1], x[k]) + w
            r = 1.0 + c * (r - 1.0)
            out[k] = r * math.cos(theta)
            out[k + 1] = r * math.sin(theta)
        return out

    return SystemHandle(
        name="torus",
        dim=4,
        params=p,
        step_kind="analytic-map",
        step_fn=step_fn,
        default_x0=np.array([1.0, 0.0, 1.0, 0.0]),
    )


def _make_linear_diag(params):
    if "diag" not in params:
        raise UnknownSystem("linear_diag requires a 'diag' parameter (list of reals)")
    diag = np.asarray(params["diag"], dtype=np.float64).reshape(-1)
    if diag.size == 0:
        raise UnknownSystem("linear_diag 'diag' must be non-empty")
    p = {"diag": [float(v) for v in diag]}

    def step_fn(x):
        return diag * x

    return SystemHandle(
        name="linear_diag",
        dim=diag.size,
        params=p,
        step_kind="analytic-map",
        step_fn=step_fn,
        default_x0=np.ones(diag.size),
    )


def _make_identity(params):
    dim = int(params.get("dim", 3))
    if dim < 1:
        raise UnknownSystem("identity requires dim >= 1")

    return SystemHandle(
        name="identity",
        dim=dim,
        params={"dim": dim},
        step_kind="analytic-map",
        step_fn=lambda x: x.copy(),
        default_x0=np.ones(dim),
    )


_ORACLES = {
    "lorenz": _make_lorenz,
    "van_der_pol": _make_van_der_pol,
    "torus": _make_torus,
    "linear_diag": _make_linear_diag,
    "identity": _make_identity,
}


def make_oracle(name: str, params: dict | None = None) -> SystemHandle:
    """Build a reference system by name.

    Known names: lorenz, van_der_pol, torus, linear_diag, identity.
    """
    if name not in _ORACLES:
        raise UnknownSystem(
            f"unknown system {name!r}; known: {', '.join(sorted(_ORACLES))}"
        )
    return _ORACLES[name](dict(params or {}))
