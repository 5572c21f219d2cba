"""Measurement-side analysis: DCP traces and fits, g-factor regression,
conditional probabilities from coincidence counts and the fidelity ladder.

Everything here is pure.  Resampling takes an explicit ``numpy`` generator.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy.optimize import least_squares

from . import trion
from .errors import FitError, ParameterError
from .protocol import BASES, TruthTable
from .trion import CONSTANTS, DeviceParams, JONES

ETA_RULE = "eta=[P(L2|R3)+P(R2|L3)]/2 (inferred)"
F1_ERROR_NOTE = "F1 error propagated through the square-root cross term"

# GHz per tesla per unit g
_GHZ_PER_TESLA = CONSTANTS.mu_B / CONSTANTS.h * 1e-9


@dataclass(frozen=True)
class TimeSeries:
    """Sampled trace; ``times`` in ns, strictly increasing."""

    times: np.ndarray
    values: np.ndarray
    uncertainties: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape:
            raise ParameterError("times and values must be 1-D arrays of equal length")
        if not (np.isfinite(t).all() and np.isfinite(v).all()):
            raise ParameterError("time series contains non-finite entries")
        if np.any(np.diff(t) <= 0):
            raise ParameterError("times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)
        if self.uncertainties is not None:
            u = np.asarray(self.uncertainties, dtype=float)
            if u.shape != t.shape or np.any(u <= 0):
                raise ParameterError("uncertainties must be positive and match the samples")
            object.__setattr__(self, "uncertainties", u)

    def __len__(self):
        return len(self.times)


@dataclass(frozen=True)
class DcpFit:
    p0: float
    t2_star: float
    f_L: float
    residual_rms: float = 0.0
    covariance: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)), compare=False)

    def __post_init__(self):
        if not self.p0 > 0:
            raise ParameterError(f"p0 must be positive, got {self.p0}")
        if not self.t2_star > 0:
            raise ParameterError(f"t2_star must be positive, got {self.t2_star}")
        if self.f_L < 0:
            raise ParameterError(f"f_L must be non-negative, got {self.f_L}")

    @property
    def params(self) -> np.ndarray:
        return np.array([self.p0, self.t2_star, self.f_L])

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0, None))

    def __call__(self, t) -> np.ndarray:
        return dcp_model(np.asarray(t, dtype=float), self.p0, self.t2_star, self.f_L)


class Estimate(NamedTuple):
    value: float
    err: float


@dataclass(frozen=True)
class CoincidenceCounts:
    """Counts ``N[outcome2, outcome3]`` for one basis pair, photon 1 = R."""

    basis2: str
    basis3: str
    counts: np.ndarray

    def __post_init__(self):
        if self.basis2 not in BASES or self.basis3 not in BASES:
            raise ParameterError(f"unknown basis tags {self.basis2}/{self.basis3}")
        n = np.asarray(self.counts)
        if n.shape != (2, 2):
            raise ParameterError("counts must be 2x2")
        if np.any(n < 0) or np.any(n != np.round(n)):
            raise ParameterError("counts must be non-negative integers")
        if n.sum() == 0:
            raise ParameterError("no coincidences recorded")
        object.__setattr__(self, "counts", n.astype(np.int64))

    @classmethod
    def from_mapping(cls, basis2: str, basis3: str, counts: dict) -> CoincidenceCounts:
        rows, cols = BASES[basis2], BASES[basis3]
        return cls(basis2, basis3, [[counts.get((a, b), 0) for b in cols] for a in rows])


@dataclass(frozen=True)
class FidelityReport:
    f1: Estimate
    f2: Estimate
    f_sp: Estimate
    eta: Estimate
    f_spp: Estimate
    metadata: dict = field(default_factory=dict, compare=False)

    def as_dict(self) -> dict[str, Estimate]:
        return {"f1": self.f1, "f2": self.f2, "f_sp": self.f_sp, "eta": self.eta, "f_spp": self.f_spp}


# -- DCP ----------------------------------------------------------------------

def dcp_model(t, p0, t2_star, f_L):
    return p0 * np.exp(-(t / t2_star) ** 2) * np.cos(2 * np.pi * f_L * t)


def simulate_dcp(p: DeviceParams, b: float, t_max: float, dt: float,
                 n_nodes: int = trion.DEFAULT_OVERHAUSER_NODES) -> TimeSeries:
    """Polarisation-resolved emission of the excited doublet after an R pulse.

    The unpaired carrier uses ``p.g_excited`` and ``p.t2_excited``; pass
    ``p.with_(g_excited=..., t2_excited=...)`` to model a different species.
    Intensities are proportional to the trion populations, so the radiative
    decay cancels in the ratio.
    """
    if not dt > 0:
        raise ParameterError(f"dt must be positive, got {dt}")
    q = p.with_(b_field=b, pulse_polarization=JONES["R"])
    rho = trion.excitation_map(q).apply(np.diag([0.5, 0.5, 0, 0]).astype(complex))
    rho = rho[trion.EXCITED, trion.EXCITED]
    rho = rho / np.trace(rho).real

    times = dt * np.arange(int(math.floor(t_max / dt + 1e-9)) + 1)
    grid = (trion.OverhauserGrid((0.0,), (1.0,)) if math.isinf(q.t2_excited)
            else trion.sample_overhauser(q.t2_excited, n_nodes))
    sz = np.zeros_like(times)
    for delta, w in zip(grid.nodes, grid.weights):
        half = 0.5 * (q.excited_omega + delta) * times
        c, s = np.cos(half), np.sin(half)
        u = np.empty((len(times), 2, 2), dtype=complex)
        u[:, 0, 0], u[:, 0, 1], u[:, 1, 0], u[:, 1, 1] = c, -s, s, c
        r = u @ rho @ u.conj().transpose(0, 2, 1)
        pop_r, pop_l = r[:, 0, 0].real, r[:, 1, 1].real
        sz += w * (pop_r - pop_l) / (pop_r + pop_l)
    return TimeSeries(times, q.p0 * sz)


def _uniform(series: TimeSeries) -> tuple[np.ndarray, np.ndarray, float]:
    t, v = series.times, series.values
    dt = float(np.min(np.diff(t)))
    if np.allclose(np.diff(t), dt, rtol=1e-6):
        return t, v, dt
    grid = np.arange(t[0], t[-1] + 0.5 * dt, dt)
    return grid, np.interp(grid, t, v), dt


def _fft_peak(series: TimeSeries) -> float:
    t, v, dt = _uniform(series)
    if abs(t[0]) < 0.5 * dt:
        # the model is even in t; mirroring removes the one-sided-window skew
        v = np.concatenate([v[:0:-1], v])
    n = 64 * int(2 ** math.ceil(math.log2(len(v))))
    spec = np.abs(np.fft.rfft(v, n))
    freqs = np.fft.rfftfreq(n, dt)
    i = int(np.argmax(spec))
    if 0 < i < len(spec) - 1 and spec[i - 1] > 0 and spec[i + 1] > 0:
        # a Gaussian-damped line is a parabola in log magnitude
        a, b, c = np.log(spec[i - 1:i + 2])
        denom = a - 2 * b + c
        if denom < 0:
            return float(freqs[i] + 0.5 * (a - c) / denom * (freqs[1] - freqs[0]))
    return float(freqs[i])


def _envelope_t2(series: TimeSeries, p0: float) -> float:
    t, v = series.times, series.values
    keep = np.abs(v) <= 1
    t, a = t[keep], np.abs(v[keep])
    if len(t) < 2 or p0 <= 0:
        return float(series.times[-1] - series.times[0]) or 1.0
    env = np.maximum.accumulate(a[::-1])[::-1]
    level = p0 * math.exp(-2)
    below = np.nonzero(env < level)[0]
    if below.size:
        return float(t[below[0]] / math.sqrt(2)) or float(t[1])
    last = env[-1]
    if 0 < last < p0:
        return float(t[-1] / math.sqrt(math.log(p0 / last)))
    return float(2 * t[-1])


def initial_dcp_guess(series: TimeSeries) -> DcpFit:
    """P0 from the first sample, f from the FFT peak and T2* from the first
    1/e^2 crossing of the upper envelope."""
    p0 = float(np.clip(abs(series.values[0]), 1e-3, 1.0))
    f = max(_fft_peak(series), 0.0)
    return DcpFit(p0, max(_envelope_t2(series, p0), 1e-3), f)


def fit_dcp(series: TimeSeries, initial_guess: DcpFit | None = None,
            fix_frequency: bool = False, max_iter: int = 200, xtol: float = 1e-8) -> DcpFit:
    """Levenberg-Marquardt fit of ``P0 exp(-(t/T2*)^2) cos(2 pi f t)``.

    With ``fix_frequency`` the frequency stays at the initial guess (use
    ``f_L=0`` for a pure Gaussian decay).  The covariance is scaled by the
    reduced chi-square unless the series carries uncertainties.
    """
    if len(series) < 10:
        raise ParameterError("fit_dcp needs at least 10 samples")
    guess = initial_guess or initial_dcp_guess(series)
    t, y = series.times, series.values
    sig = series.uncertainties if series.uncertainties is not None else np.ones_like(y)
    f_fixed = guess.f_L

    def unpack(x):
        return (x[0], x[1], f_fixed) if fix_frequency else tuple(x)

    def resid(x):
        return (dcp_model(t, *unpack(x)) - y) / sig

    def jac(x):
        p0, t2, f = unpack(x)
        env = np.exp(-(t / t2) ** 2)
        cos, sin = np.cos(2 * np.pi * f * t), np.sin(2 * np.pi * f * t)
        cols = [env * cos, p0 * env * cos * 2 * t ** 2 / t2 ** 3]
        if not fix_frequency:
            cols.append(-p0 * env * sin * 2 * np.pi * t)
        return np.column_stack(cols) / sig[:, None]

    x0 = guess.params[:2] if fix_frequency else guess.params
    n_par = len(x0)
    try:
        res = least_squares(resid, x0, jac=jac, method="lm", xtol=xtol, ftol=1e-15, gtol=1e-15,
                            max_nfev=max_iter * (n_par + 1))
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise FitError(str(exc), x0, float("nan")) from exc
    rms = float(np.sqrt(np.mean((res.fun * sig) ** 2)))
    if res.status <= 0 or not np.all(np.isfinite(res.x)):
        raise FitError(f"fit did not converge: {res.message}", res.x, rms)

    p0, t2, f = unpack(res.x)
    sign = np.array([1.0, math.copysign(1.0, t2), math.copysign(1.0, f)])[:n_par]
    jtj = res.jac.T @ res.jac
    try:
        cov = np.linalg.pinv(jtj)
    except np.linalg.LinAlgError:
        cov = np.full((n_par, n_par), np.inf)
    if series.uncertainties is None:
        dof = max(len(y) - n_par, 1)
        cov = cov * float(res.fun @ res.fun) / dof
    cov = cov * np.outer(sign, sign)
    full = np.zeros((3, 3))
    full[:n_par, :n_par] = cov
    if p0 < 0:
        raise FitError("fit converged to a negative amplitude", res.x, rms)
    return DcpFit(float(p0), abs(float(t2)), abs(float(f)), rms, full)


# -- g factor -----------------------------------------------------------------

def fit_gfactor(points: Iterable[Sequence[float]]) -> Estimate:
    """Weighted regression through the origin of ``f_L = (mu_B/h) g B``.

    ``points`` are ``(b_tesla, f_GHz)`` or ``(b_tesla, f_GHz, err_GHz)``.
    Without errors the standard error comes from the residual scatter.
    """
    pts = [tuple(map(float, pt)) for pt in points]
    if not pts:
        raise ParameterError("no points to fit")
    b = np.array([pt[0] for pt in pts])
    f = np.array([pt[1] for pt in pts])
    if not np.any(b != 0):
        raise ParameterError("all fields are zero; g is undetermined")
    has_err = all(len(pt) > 2 and pt[2] > 0 for pt in pts)
    w = np.array([1 / pt[2] ** 2 for pt in pts]) if has_err else np.ones_like(b)
    sbb = float(np.sum(w * b * b))
    slope = float(np.sum(w * b * f)) / sbb
    if has_err:
        se = 1 / math.sqrt(sbb)
    elif len(pts) > 1:
        r = f - slope * b
        se = math.sqrt(float(r @ r) / (len(pts) - 1) / sbb)
    else:
        se = 0.0
    return Estimate(slope / _GHZ_PER_TESLA, se / _GHZ_PER_TESLA)


# -- coincidences and fidelity ------------------------------------------------

def conditional_probs(counts: CoincidenceCounts) -> TruthTable:
    n = counts.counts.astype(float)
    col = n.sum(axis=0)
    if np.any(col == 0):
        empty = [BASES[counts.basis3][j] for j in np.nonzero(col == 0)[0]]
        raise ParameterError(f"no counts with photon 3 = {', '.join(empty)}")
    prob = n / col
    err = np.sqrt(prob * (1 - prob) / col)
    return TruthTable(counts.basis2, counts.basis3, prob, err)


def _ladder(x):
    """Central values from ``x = (P(L|R), P(R|L), P(V|R), P(H|L))``."""
    x1, x2, y1, y2 = x
    f1 = 0.5 * (x1 + x2) - math.sqrt(max(1 - x1, 0) * max(1 - x2, 0))
    f2 = y1 + y2 - 1
    f_sp = (f1 + f2) / 2
    eta = (x1 + x2) / 2
    return f1, f2, f_sp, eta, f_sp * eta


def _ladder_gradient(x) -> np.ndarray:
    x1, x2, _, _ = x
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt((1 - x2) / (1 - x1)) if x1 < 1 else (0.0 if x2 >= 1 else np.inf)
        rinv = np.sqrt((1 - x1) / (1 - x2)) if x2 < 1 else (0.0 if x1 >= 1 else np.inf)
    g = np.zeros((5, 4))
    g[0] = [0.5 + 0.5 * r, 0.5 + 0.5 * rinv, 0, 0]
    g[1] = [0, 0, 1, 1]
    g[2] = (g[0] + g[1]) / 2
    g[3] = [0.5, 0.5, 0, 0]
    f = _ladder(x)
    g[4] = g[2] * f[3] + g[3] * f[2]
    return g


def fidelity_bounds(circular: TruthTable, linear: TruthTable, monte_carlo: bool = False,
                    rng: np.random.Generator | None = None, n_samples: int = 4000) -> FidelityReport:
    """Fidelity ladder from a circular (RL, RL) and a linear (HV, RL) table.

    Photon 3 reads out the spin (R -> up, L -> down) and the diagonal
    elements are ``rho_ab = P(a|b)/2``.  Errors are first order in the table
    uncertainties unless ``monte_carlo`` is set, in which case each column is
    resampled binomially with its effective count.
    """
    if (circular.basis2, circular.basis3) != ("RL", "RL"):
        raise ParameterError(f"circular table must be RL/RL, got {circular.basis2}/{circular.basis3}")
    if (linear.basis2, linear.basis3) != ("HV", "RL"):
        raise ParameterError(f"linear table must be HV/RL, got {linear.basis2}/{linear.basis3}")

    x = np.array([circular.prob("L", "R"), circular.prob("R", "L"),
                  linear.prob("V", "R"), linear.prob("H", "L")])
    s = np.array([circular.err("L", "R"), circular.err("R", "L"),
                  linear.err("V", "R"), linear.err("H", "L")])
    central = _ladder(x)

    if monte_carlo:
        if rng is None:
            raise ParameterError("monte_carlo resampling needs an explicit rng")
        with np.errstate(divide="ignore", invalid="ignore"):
            n_eff = np.where(s > 0, np.round(x * (1 - x) / s ** 2), 0).astype(np.int64)
        draws = np.empty((n_samples, 4))
        for j in range(4):
            draws[:, j] = rng.binomial(n_eff[j], x[j], n_samples) / n_eff[j] if n_eff[j] else x[j]
        samples = np.array([_ladder(d) for d in draws])
        errs = samples.std(axis=0, ddof=1)
        method = "binomial resampling"
    else:
        g = _ladder_gradient(x)
        with np.errstate(invalid="ignore"):
            terms = np.where(s > 0, g * s, 0.0)
        errs = np.sqrt(np.sum(terms ** 2, axis=1))
        method = "delta method"

    est = [Estimate(float(v), float(e)) for v, e in zip(central, errs)]
    meta = {"eta_rule": ETA_RULE, "error_method": method, "f1_note": F1_ERROR_NOTE}
    return FidelityReport(*est, metadata=meta)


# -- CSV input ----------------------------------------------------------------

def _rows(path, required: Sequence[str]) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in required if c not in (reader.fieldnames or [])]
        if missing:
            raise ParameterError(f"{path}: missing columns {', '.join(missing)}")
        return list(reader)


def read_time_series(path: str | Path) -> TimeSeries:
    """CSV with columns ``time_ns, dcp`` and optionally ``err``."""
    rows = _rows(path, ("time_ns", "dcp"))
    t = [float(r["time_ns"]) for r in rows]
    v = [float(r["dcp"]) for r in rows]
    errs = [r.get("err") for r in rows]
    u = [float(e) for e in errs] if all(e not in (None, "") for e in errs) else None
    return TimeSeries(t, v, u)


def read_counts(path: str | Path) -> dict[tuple[str, str], CoincidenceCounts]:
    """CSV with columns ``basis2, basis3, outcome2, outcome3, count``."""
    grouped: dict[tuple[str, str], dict] = {}
    for r in _rows(path, ("basis2", "basis3", "outcome2", "outcome3", "count")):
        key = (r["basis2"].strip(), r["basis3"].strip())
        cell = (r["outcome2"].strip(), r["outcome3"].strip())
        if key[0] not in BASES or key[1] not in BASES:
            raise ParameterError(f"unknown basis pair {key}")
        if cell[0] not in BASES[key[0]] or cell[1] not in BASES[key[1]]:
            raise ParameterError(f"outcome {cell} does not belong to bases {key}")
        table = grouped.setdefault(key, {})
        table[cell] = table.get(cell, 0) + int(r["count"])
    return {k: CoincidenceCounts.from_mapping(*k, v) for k, v in sorted(grouped.items())}


def read_gfactor_points(path: str | Path) -> list[tuple[float, ...]]:
    """CSV with columns ``b_T, f_GHz`` and optionally ``err_GHz``."""
    out = []
    for r in _rows(path, ("b_T", "f_GHz")):
        e = r.get("err_GHz")
        pt = (float(r["b_T"]), float(r["f_GHz"]))
        out.append(pt + (float(e),) if e not in (None, "") else pt)
    return out
