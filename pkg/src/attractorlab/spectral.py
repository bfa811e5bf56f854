"""Variable-averaged Fourier power spectra, peak extraction and filtering.

The spectrum of a T-sample trajectory is the one-sided periodogram of each
variable (length T//2 + 1), averaged over variables and normalized so the
strongest non-DC bin is 1. Peak filtering reduces the detected peaks to
base frequencies: first integer harmonics m*f of a stronger base, then
integer linear combinations m1*f1 + m2*f2 of base pairs. What survives is
the reported torus order.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dynsys import Trajectory
from .errors import TooShort

DEFAULT_MIN_POWER = 0.01
DEFAULT_MAX_COEFF = 5
DEFAULT_TOL_BINS = 2
DEFAULT_BROADBAND_FRACTION = 0.5
DEFAULT_NEIGHBORHOOD_BINS = 2
MIN_SAMPLES = 16


@dataclass
class PowerSpectrum:
    freqs: np.ndarray  # cycles per step (or per unit time if spacing says so)
    power: np.ndarray  # averaged over variables, max non-DC bin normalized to 1
    n_samples: int
    detrended: bool
    sample_spacing: float = 1.0

    @property
    def df(self) -> float:
        return float(self.freqs[1] - self.freqs[0])

    def default_tol(self) -> float:
        return DEFAULT_TOL_BINS * self.df

    def save_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["freq", "power"])
            for f, p in zip(self.freqs, self.power):
                writer.writerow([repr(float(f)), repr(float(p))])

    @classmethod
    def load_csv(cls, path) -> "PowerSpectrum":
        data = np.loadtxt(path, delimiter=",", skiprows=1)
        freqs, power = data[:, 0], data[:, 1]
        n = 2 * (len(freqs) - 1)
        spacing = 1.0 / (n * (freqs[1] - freqs[0])) if len(freqs) > 1 else 1.0
        return cls(freqs, power, n_samples=n, detrended=True, sample_spacing=spacing)


@dataclass
class PeakSet:
    """Detected peaks (power-descending) and the bases that survive filtering.

    ``explanations`` maps a discarded peak's frequency to the record that
    reproduces it: {"kind": "harmonic", "m": m, "base": f} or
    {"kind": "combination", "terms": [[m1, f1], [m2, f2]]}.
    """

    peaks: list  # [(freq, power)] sorted by power descending
    bases: list = field(default_factory=list)
    explanations: dict = field(default_factory=dict)
    tolerance: float | None = None
    max_coeff: int | None = None

    @property
    def n_bases(self) -> int:
        return len(self.bases)

    def to_dict(self) -> dict:
        records = []
        for f, p in self.peaks:
            rec = {"freq": float(f), "power": float(p)}
            if f in self.explanations:
                rec["role"] = "explained"
                rec["explanation"] = self.explanations[f]
            elif f in self.bases:
                rec["role"] = "base"
            else:
                rec["role"] = "unfiltered"
            records.append(rec)
        return {
            "peaks": records,
            "bases": [float(b) for b in self.bases],
            "tolerance": self.tolerance,
            "max_coeff": self.max_coeff,
        }

    def save_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")


@dataclass
class SpectrumClass:
    kind: str  # fixed_point_like | periodic | quasi_periodic | broadband_chaotic
    k: int = 0
    fraction_outside_peaks: float = 0.0

    @property
    def label(self) -> str:
        if self.kind == "quasi_periodic":
            return f"quasi_periodic({self.k})"
        return self.kind

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "label": self.label,
            "k": self.k,
            "fraction_outside_peaks": self.fraction_outside_peaks,
        }


def one_sided_power(series: np.ndarray) -> np.ndarray:
    """One-sided periodogram of a single series, energy-normalized.

    The bins sum to sum(x**2) exactly (Parseval), so interior bins carry
    the doubled weight of their mirrored negative frequencies.
    """
    x = np.asarray(series, dtype=np.float64)
    n = len(x)
    spec = np.abs(np.fft.rfft(x)) ** 2 / n
    if n % 2 == 0:
        spec[1:-1] *= 2.0
    else:
        spec[1:] *= 2.0
    return spec


def power_spectrum(
    traj: Trajectory,
    detrend: bool = True,
    sample_spacing: float | None = None,
    window: str | None = None,
    chunk: int = 1024,
) -> PowerSpectrum:
    """Variable-averaged power spectrum of a trajectory.

    ``sample_spacing`` is the physical time per recorded row (defaults to
    the trajectory dt, i.e. frequencies in cycles per map step); pass
    dt * h for RK4-discretized flows to get cycles per unit time. Columns
    are transformed in chunks so wide (NCA-sized) trajectories do not
    allocate a full complex copy.
    """
    t = traj.n_samples
    if t < MIN_SAMPLES:
        raise TooShort(f"need at least {MIN_SAMPLES} samples, got {t}")
    spacing = float(traj.dt if sample_spacing is None else sample_spacing)
    acc = np.zeros(t // 2 + 1)
    taper = None
    if window == "hann":
        taper = np.hanning(t)
    elif window is not None:
        raise ValueError(f"unknown window {window!r}")
    for start in range(0, traj.dim, chunk):
        block = traj.states[:, start : start + chunk]
        if detrend:
            block = block - block.mean(axis=0)
        if taper is not None:
            block = block * taper[:, None]
        f = np.abs(np.fft.rfft(block, axis=0)) ** 2 / t
        if t % 2 == 0:
            f[1:-1] *= 2.0
        else:
            f[1:] *= 2.0
        acc += f.sum(axis=1)
    power = acc / traj.dim
    peak = power[1:].max()
    if peak > 0.0:
        power = power / peak
    freqs = np.fft.rfftfreq(t, d=spacing)
    return PowerSpectrum(
        freqs=freqs,
        power=power,
        n_samples=t,
        detrended=detrend,
        sample_spacing=spacing,
    )


def find_peaks(spec: PowerSpectrum, min_power: float = DEFAULT_MIN_POWER) -> PeakSet:
    """Local maxima (strictly above both neighbors) with power >= min_power.

    The DC bin is excluded; so are the endpoints, which have only one
    neighbor. Peaks come back sorted by power descending.
    """
    if not 0.0 < min_power <= 1.0:
        raise ValueError("min_power must be in (0, 1]")
    p = spec.power
    interior = np.arange(1, len(p) - 1)
    hits = interior[
        (p[interior] > p[interior - 1])
        & (p[interior] > p[interior + 1])
        & (p[interior] >= min_power)
    ]
    order = sorted(hits, key=lambda k: (-p[k], spec.freqs[k]))
    return PeakSet(peaks=[(float(spec.freqs[k]), float(p[k])) for k in order])


def filter_harmonics(peaks: PeakSet, tol: float) -> PeakSet:
    """Greedily accept strongest unexplained peaks as bases; discard integer
    harmonics m*base (m >= 2) within tol."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    bases: list = []
    explanations = dict(peaks.explanations)
    for f, _power in peaks.peaks:
        if f in explanations:
            continue
        matched = False
        for b in bases:
            m = round(f / b)
            if m >= 2 and abs(f - m * b) <= tol:
                explanations[f] = {"kind": "harmonic", "m": int(m), "base": float(b)}
                matched = True
                break
        if not matched:
            bases.append(f)
    return PeakSet(
        peaks=list(peaks.peaks),
        bases=bases,
        explanations=explanations,
        tolerance=tol,
        max_coeff=peaks.max_coeff,
    )


def filter_linear_combinations(
    peaks: PeakSet, tol: float, max_coeff: int = DEFAULT_MAX_COEFF
) -> PeakSet:
    """Discard peaks expressible as positive integer combinations of bases.

    A candidate peak is explained if some m1*fi + m2*fj over current bases
    (|m1|, |m2| <= max_coeff, result positive) lands within tol. Runs after
    filter_harmonics or standalone.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_coeff < 1:
        raise ValueError("max_coeff must be >= 1")
    bases: list = []
    explanations = dict(peaks.explanations)

    def explain(f):
        for bi in bases:
            m = round(f / bi)
            if 1 <= m <= max_coeff and abs(f - m * bi) <= tol:
                return {"kind": "combination", "terms": [[int(m), float(bi)]]}
        for i, bi in enumerate(bases):
            for bj in bases[i + 1 :]:
                for m1 in range(-max_coeff, max_coeff + 1):
                    m2 = round((f - m1 * bi) / bj)
                    if m2 == 0 or abs(m2) > max_coeff:
                        continue
                    value = m1 * bi + m2 * bj
                    if value > 0 and abs(f - value) <= tol:
                        return {
                            "kind": "combination",
                            "terms": [[int(m1), float(bi)], [int(m2), float(bj)]],
                        }
        return None

    for f, _power in peaks.peaks:
        if f in explanations:
            continue
        rec = explain(f)
        if rec is not None:
            explanations[f] = rec
        else:
            bases.append(f)
    return PeakSet(
        peaks=list(peaks.peaks),
        bases=bases,
        explanations=explanations,
        tolerance=tol,
        max_coeff=max_coeff,
    )


def explained_value(record: dict) -> float:
    """Frequency reproduced by an explanation record (for audits)."""
    if record["kind"] == "harmonic":
        return record["m"] * record["base"]
    return math.fsum(m * b for m, b in record["terms"])


def classify_spectrum(
    spec: PowerSpectrum,
    peaks: PeakSet,
    broadband_fraction: float = DEFAULT_BROADBAND_FRACTION,
    neighborhood_bins: int = DEFAULT_NEIGHBORHOOD_BINS,
) -> SpectrumClass:
    """Classify a (detrended) spectrum from its filtered peaks.

    No peaks at all reads as a fixed point. If more than
    ``broadband_fraction`` of the non-DC power lies outside the detected
    peaks' neighborhoods (peak bin +- neighborhood_bins), the spectrum is
    broadband regardless of base count. Otherwise the number of bases
    decides: 1 periodic, >= 2 quasi-periodic of that order.
    """
    if not peaks.peaks:
        return SpectrumClass("fixed_point_like")
    if not peaks.bases:
        tol = peaks.tolerance if peaks.tolerance is not None else spec.default_tol()
        peaks = filter_linear_combinations(filter_harmonics(peaks, tol), tol)
    covered = np.zeros(len(spec.power), dtype=bool)
    for f, _p in peaks.peaks:
        k = int(round(f / spec.df))
        lo = max(1, k - neighborhood_bins)
        covered[lo : k + neighborhood_bins + 1] = True
    total = spec.power[1:].sum()
    outside = spec.power[1:][~covered[1:]].sum()
    fraction = float(outside / total) if total > 0 else 0.0
    if fraction > broadband_fraction:
        return SpectrumClass("broadband_chaotic", k=len(peaks.bases),
                             fraction_outside_peaks=fraction)
    k = len(peaks.bases)
    kind = "periodic" if k == 1 else "quasi_periodic"
    return SpectrumClass(kind, k=k, fraction_outside_peaks=fraction)
