"""Finite-difference Lyapunov exponent estimation and attractor classification.

The top exponent follows the two-trajectory protocol: evolve a reference
point and a point displaced by a small random vector, accumulate the log
growth of their separation, and rescale the displaced point back to the
initial distance after every step. The leading-n spectrum keeps n
perturbed points along orthonormal directions and re-orthonormalizes
(modified Gram-Schmidt) every step, accumulating each direction's log
growth orthogonal to the previous directions.

No Jacobians anywhere: everything is driven through the system map itself,
so the same code runs the analytic oracles and the NCA.

ODE oracles discretized with step h report exponents per unit time
(per-step value / h); genuine maps report per step. The unit is recorded
in the report.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .dynsys import SystemHandle, as_state
from .errors import DegenerateSeparation, RankCollapse

DEFAULT_EPSILON = 1e-4
DEFAULT_THETA = 0.002
DEFAULT_CHECKPOINT_EVERY = 100


@dataclass
class AttractorClass:
    """Verdict derived from exponent signs under a zero threshold."""

    kind: str  # fixed_point | limit_cycle | quasi_periodic | chaotic | inconclusive
    zero_threshold: float
    k: int = 0  # number of zero exponents (torus order)
    l: int = 0  # number of positive exponents

    @property
    def label(self) -> str:
        if self.kind == "quasi_periodic":
            return f"quasi_periodic({self.k})"
        if self.kind == "chaotic":
            return f"chaotic({self.l})"
        return self.kind

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "label": self.label,
            "k": self.k,
            "l": self.l,
            "zero_threshold": self.zero_threshold,
        }


@dataclass
class LyapunovReport:
    """Ordered exponent estimates plus their convergence history.

    ``running_means[i]`` tracks exponent i at each checkpoint;
    the final entry of each row equals the reported exponent.
    """

    exponents: np.ndarray
    running_means: np.ndarray  # (n_exponents, n_checkpoints)
    checkpoints: np.ndarray  # accumulation step counts
    epsilon: float
    n_steps: int
    transient: int
    seed: int
    unit: str  # per_step | per_unit_time
    system_name: str
    system_dim: int
    classification: AttractorClass | None = field(default=None)

    @property
    def n_exponents(self) -> int:
        return len(self.exponents)

    def to_dict(self) -> dict:
        d = {
            "exponents": [float(v) for v in self.exponents],
            "running_means": [[float(v) for v in row] for row in self.running_means],
            "checkpoints": [int(v) for v in self.checkpoints],
            "epsilon": self.epsilon,
            "n_steps": self.n_steps,
            "transient": self.transient,
            "seed": self.seed,
            "unit": self.unit,
            "system": {"name": self.system_name, "dim": self.system_dim},
        }
        if self.classification is not None:
            d["theta"] = self.classification.zero_threshold
            d["classification"] = self.classification.to_dict()
        return d

    def save_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")

    def save_csv(self, path):
        """Checkpoint-by-exponent convergence matrix."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step"] + [f"lambda{i + 1}" for i in range(self.n_exponents)])
            for j, ckpt in enumerate(self.checkpoints):
                writer.writerow(
                    [int(ckpt)] + [repr(float(self.running_means[i, j]))
                                   for i in range(self.n_exponents)]
                )


def _unit_for(sys: SystemHandle) -> tuple[str, float]:
    if sys.step_kind == "ode-rk4-discretized":
        return "per_unit_time", sys.step_time
    return "per_step", 1.0


def top_exponent(
    sys: SystemHandle,
    x_attr,
    epsilon: float = DEFAULT_EPSILON,
    n_steps: int = 10_000,
    seed: int = 0,
    checkpoint_every: int = DEFAULT_CHECKPOINT_EVERY,
) -> LyapunovReport:
    """Largest Lyapunov exponent by the two-trajectory separation method.

    ``x_attr`` must already be burned in. The perturbed point starts at
    x + epsilon * (random unit vector) and is pulled back to the initial
    separation along the new difference vector after every step.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    x = as_state(x_attr, sys.dim)
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(sys.dim)
    direction /= np.linalg.norm(direction)
    y = x + epsilon * direction
    d0 = np.linalg.norm(y - x)  # actual realized separation

    unit, time_scale = _unit_for(sys)
    log_sum = 0.0
    checkpoints, means = [], []
    for t in range(1, n_steps + 1):
        x = sys.step(x, step_index=t)
        y = sys.step(y, step_index=t)
        delta = y - x
        dist = np.linalg.norm(delta)
        if dist == 0.0:
            raise DegenerateSeparation(t)
        log_sum += np.log(dist / d0)
        y = x + (d0 / dist) * delta
        if t % checkpoint_every == 0 or t == n_steps:
            checkpoints.append(t)
            means.append(log_sum / t / time_scale)
    lam = log_sum / n_steps / time_scale
    return LyapunovReport(
        exponents=np.array([lam]),
        running_means=np.array([means]),
        checkpoints=np.array(checkpoints),
        epsilon=epsilon,
        n_steps=n_steps,
        transient=0,
        seed=seed,
        unit=unit,
        system_name=sys.name,
        system_dim=sys.dim,
    )


def spectrum(
    sys: SystemHandle,
    x_attr,
    n_exponents: int,
    epsilon: float = DEFAULT_EPSILON,
    n_steps: int = 10_000,
    seed: int = 0,
    checkpoint_every: int = DEFAULT_CHECKPOINT_EVERY,
    transient: int | None = None,
) -> LyapunovReport:
    """Leading n Lyapunov exponents via per-step re-orthonormalization.

    Runs ``n_steps`` map steps total. The first ``transient`` steps
    (default min(100, n_steps // 10)) iterate the direction vectors without
    accumulating, letting them align with the leading subspaces; the log
    growths of the remaining steps are averaged into the exponents.
    """
    if not 1 <= n_exponents <= sys.dim:
        raise ValueError(f"n_exponents must be in [1, {sys.dim}]")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if transient is None:
        transient = min(100, n_steps // 10)
    if n_steps <= transient:
        raise ValueError("n_steps must exceed the transient")

    x = as_state(x_attr, sys.dim)
    rng = np.random.default_rng(seed)
    directions, _ = np.linalg.qr(rng.standard_normal((sys.dim, n_exponents)))

    unit, time_scale = _unit_for(sys)
    n_acc = n_steps - transient
    sums = np.zeros(n_exponents)
    checkpoints, means = [], []
    for t in range(1, n_steps + 1):
        x_next = sys.step(x, step_index=t)
        deltas = np.empty((sys.dim, n_exponents))
        d0 = np.empty(n_exponents)
        for i in range(n_exponents):
            y = x + epsilon * directions[:, i]
            d0[i] = np.linalg.norm(y - x)
            deltas[:, i] = sys.step(y, step_index=t) - x_next
        # modified Gram-Schmidt; the i-th growth is the norm of delta_i's
        # component orthogonal to the preceding (re-normalized) directions
        growths = np.empty(n_exponents)
        for i in range(n_exponents):
            v = deltas[:, i]
            raw_norm = np.linalg.norm(v)
            if raw_norm == 0.0:
                raise DegenerateSeparation(t)
            for j in range(i):
                v = v - (directions[:, j] @ v) * directions[:, j]
            resid = np.linalg.norm(v)
            if resid <= 1e-13 * raw_norm:
                raise RankCollapse(t, i)
            directions[:, i] = v / resid
            growths[i] = resid / d0[i]
        x = x_next
        if t > transient:
            sums += np.log(growths)
            acc = t - transient
            if acc % checkpoint_every == 0 or acc == n_acc:
                checkpoints.append(acc)
                means.append(sums / acc / time_scale)

    exponents = sums / n_acc / time_scale
    running = np.array(means).T  # (n_exponents, n_checkpoints)
    order = np.argsort(-exponents, kind="stable")
    return LyapunovReport(
        exponents=exponents[order],
        running_means=running[order],
        checkpoints=np.array(checkpoints),
        epsilon=epsilon,
        n_steps=n_steps,
        transient=transient,
        seed=seed,
        unit=unit,
        system_name=sys.name,
        system_dim=sys.dim,
    )


def classify(report: LyapunovReport, theta: float = DEFAULT_THETA) -> AttractorClass:
    """Attractor class from exponent signs, |lambda| <= theta counting as zero.

    Any positive exponent means chaotic. With none, the count k of zeros
    decides: k = 0 fixed point, k = 1 limit cycle, k >= 2 quasi-periodic of
    order k. A spectrum whose computed exponents are all zero shows no
    contracting direction at all and is reported inconclusive: every
    attracting class has at least one negative exponent behind its zeros.
    """
    if theta <= 0:
        raise ValueError("theta must be positive")
    if report.n_exponents < 1:
        raise ValueError("report has no exponents")
    lam = np.asarray(report.exponents)
    n_pos = int(np.sum(lam > theta))
    n_zero = int(np.sum(np.abs(lam) <= theta))
    if n_pos > 0:
        cls = AttractorClass("chaotic", theta, k=n_zero, l=n_pos)
    elif n_zero == report.n_exponents:
        cls = AttractorClass("inconclusive", theta, k=n_zero)
    elif n_zero == 0:
        cls = AttractorClass("fixed_point", theta)
    elif n_zero == 1:
        cls = AttractorClass("limit_cycle", theta, k=1)
    else:
        cls = AttractorClass("quasi_periodic", theta, k=n_zero)
    report.classification = cls
    return cls
