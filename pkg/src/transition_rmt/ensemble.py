"""Seeded Monte Carlo ensembles, mergeable statistics and case predictions.

Work is split into a fixed number of contiguous batches of realization
indices.  Each batch is accumulated sequentially and the batch results are
merged in index order, so the statistics do not depend on how batches are
distributed over worker processes.
"""

from __future__ import annotations

import enum
import hashlib
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidArgument, NumericalFailure
from .goe import average_xi, stream
from .model import ModelKind, ModelSpec, Realization, sample_side, side_streams, width_matrix
from .scattering import (
    SideSolution,
    amplitude_factor_tra,
    amplitude_factor_tun,
    combine_sides,
    smatrix_direct,
    solve_side,
)
from . import vwz

ESTIMATORS = frozenset({"spectrum", "s_mean", "xi_stats", "formation", "pab", "full_s"})

# histogram range in units of lambda; the 40 central bins cover [-2, 2]
SPECTRUM_HALF_WIDTH = 2.5
SPECTRUM_BINS = 50

MAX_FAILURE_RATE = 1e-3

# sum T below which the large-sum asymptotic cases are flagged
LARGE_SUM_T = 10.0


class Moments:
    """Running mean and sum of squared deviations, elementwise, mergeable.

    Complex samples use |x - mean|^2, so ``variance`` is E|x - <x>|^2.
    """

    __slots__ = ("count", "mean", "m2")

    def __init__(self, shape=(), dtype=float):
        self.count = 0
        self.mean = np.zeros(shape, dtype=dtype)
        self.m2 = np.zeros(shape, dtype=float)

    def add(self, x):
        x = np.asarray(x, dtype=self.mean.dtype)
        self.count += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.count
        self.m2 = self.m2 + np.real(np.conj(delta) * (x - self.mean))

    def merge(self, other: "Moments") -> "Moments":
        out = Moments(self.mean.shape, np.result_type(self.mean, other.mean))
        n = self.count + other.count
        out.count = n
        if other.count == 0:
            out.mean, out.m2 = self.mean.copy(), self.m2.copy()
            return out
        if self.count == 0:
            out.mean, out.m2 = other.mean.copy(), other.m2.copy()
            return out
        delta = other.mean - self.mean
        out.mean = self.mean + delta * (other.count / n)
        out.m2 = self.m2 + other.m2 + np.abs(delta) ** 2 * (self.count * other.count / n)
        return out

    @property
    def variance(self):
        if self.count < 2:
            return np.zeros_like(self.m2)
        return self.m2 / (self.count - 1)

    @property
    def se(self):
        if self.count == 0:
            return np.full_like(self.m2, np.nan)
        return np.sqrt(self.variance / self.count)


@dataclass(frozen=True)
class Estimate:
    mean: np.ndarray
    variance: np.ndarray
    se: np.ndarray
    count: int
    # spread of the per-batch variances / sqrt(batches); variance-type SE
    variance_se: np.ndarray | None = None

    @classmethod
    def from_batches(cls, parts: list[Moments]) -> "Estimate":
        total = parts[0]
        for p in parts[1:]:
            total = total.merge(p)
        vse = None
        usable = [p for p in parts if p.count >= 2]
        if len(usable) >= 2:
            v = np.stack([p.variance for p in usable])
            vse = np.std(v, axis=0, ddof=1) / math.sqrt(len(usable))
        return cls(total.mean, total.variance, total.se, total.count, vse)


@dataclass(frozen=True)
class SpectrumHistogram:
    edges: np.ndarray
    counts: np.ndarray
    underflow: int
    overflow: int
    realizations: int
    levels_per_realization: int

    @property
    def centers(self):
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def density(self):
        """Levels per unit energy per realization (both spaces pooled)."""
        width = np.diff(self.edges)
        return self.counts / (self.realizations * width)


@dataclass(frozen=True)
class EnsembleConfig:
    model: ModelSpec
    realizations: int
    master_seed: int | None = None
    workers: int = 1
    estimators: frozenset = frozenset({"xi_stats"})
    batches: int = 20

    def __post_init__(self):
        object.__setattr__(self, "estimators", frozenset(self.estimators))
        if self.master_seed is None:
            object.__setattr__(self, "master_seed", int(self.model.seed))
        if not isinstance(self.realizations, (int, np.integer)) or self.realizations < 1:
            raise InvalidArgument("realizations must be a positive integer")
        if self.workers < 1:
            raise InvalidArgument("workers must be at least 1")
        if self.batches < 1:
            raise InvalidArgument("batches must be at least 1")
        unknown = self.estimators - ESTIMATORS
        if unknown:
            raise InvalidArgument(f"unknown estimators: {sorted(unknown)}")
        if not self.estimators:
            raise InvalidArgument("at least one estimator is required")
        k1, k2 = len(self.model.channels1), len(self.model.channels2)
        if {"pab", "full_s"} & self.estimators and (k1 == 0 or k2 == 0):
            raise InvalidArgument("pab and full_s need channels on both sides")
        if {"s_mean", "formation", "xi_stats"} & self.estimators and k1 + k2 == 0:
            raise InvalidArgument("the requested estimators need at least one channel")


@dataclass
class EnsembleStats:
    realizations: int
    count: int
    failures: int
    dropped: int
    xi1: Estimate | None = None
    xi2: Estimate | None = None
    s_mean1: Estimate | None = None
    s_mean2: Estimate | None = None
    formation1: Estimate | None = None
    formation2: Estimate | None = None
    pab: Estimate | None = None
    p_a: Estimate | None = None
    p_b: Estimate | None = None
    full_s_abs2: Estimate | None = None
    unitarity_max: float | None = None
    symmetry_max: float | None = None
    spectrum: SpectrumHistogram | None = None
    batch_means: dict = field(default_factory=dict)

    @property
    def pab_mean(self):
        return None if self.pab is None else self.pab.mean

    def arrays(self):
        """Flat (name, array) listing of every numeric result, in fixed order."""
        out = [("count", np.array([self.count, self.failures, self.dropped]))]
        for name in ("xi1", "xi2", "s_mean1", "s_mean2", "formation1", "formation2",
                     "pab", "p_a", "p_b", "full_s_abs2"):
            est = getattr(self, name)
            if est is None:
                continue
            out += [(f"{name}.mean", np.asarray(est.mean)),
                    (f"{name}.variance", np.asarray(est.variance)),
                    (f"{name}.se", np.asarray(est.se))]
            if est.variance_se is not None:
                out.append((f"{name}.variance_se", np.asarray(est.variance_se)))
        if self.unitarity_max is not None:
            out.append(("unitarity", np.array([self.unitarity_max, self.symmetry_max])))
        if self.spectrum is not None:
            out.append(("spectrum", np.concatenate([
                self.spectrum.counts.astype(float),
                [self.spectrum.underflow, self.spectrum.overflow]])))
        for name in sorted(self.batch_means):
            out.append((f"batch.{name}", np.asarray(self.batch_means[name])))
        return out

    def fingerprint(self) -> str:
        """SHA-256 over the exact bytes of all results; equal iff bit-identical."""
        h = hashlib.sha256()
        for name, arr in self.arrays():
            h.update(name.encode())
            a = np.ascontiguousarray(arr)
            h.update(str(a.dtype).encode())
            h.update(a.tobytes())
        return h.hexdigest()


def _needed_sides(cfg: EnsembleConfig):
    spec = cfg.model
    est = cfg.estimators
    if {"spectrum", "pab", "full_s"} & est:
        return (1, 2)
    # xi, S and formation of a space are only meaningful when it has channels
    return tuple(s for s, chans in ((1, spec.channels1), (2, spec.channels2)) if chans)


class _Batch:
    """Accumulators for one contiguous range of realizations."""

    def __init__(self, cfg: EnsembleConfig):
        spec = cfg.model
        k1, k2 = len(spec.channels1), len(spec.channels2)
        est = cfg.estimators
        self.acc: dict[str, Moments] = {}
        if "xi_stats" in est:
            if k1:
                self.acc["xi1"] = Moments((), complex)
            if k2:
                self.acc["xi2"] = Moments((), complex)
        if "s_mean" in est:
            if k1:
                self.acc["s_mean1"] = Moments((k1,), complex)
            if k2:
                self.acc["s_mean2"] = Moments((k2,), complex)
        if "formation" in est:
            if k1:
                self.acc["formation1"] = Moments((k1,))
            if k2:
                self.acc["formation2"] = Moments((k2,))
        if "pab" in est:
            self.acc["pab"] = Moments((k1, k2))
            self.acc["p_a"] = Moments((k1,))
            self.acc["p_b"] = Moments((k2,))
        if "full_s" in est:
            self.acc["full_s_abs2"] = Moments((k1 + k2, k1 + k2))
        self.unitarity = 0.0
        self.symmetry = 0.0
        self.hist = None
        self.under = 0
        self.over = 0
        if "spectrum" in est:
            self.hist = np.zeros(SPECTRUM_BINS, dtype=np.int64)
        self.failures = 0
        self.dropped = 0


def _spectrum_edges(lam):
    return np.linspace(-SPECTRUM_HALF_WIDTH * lam, SPECTRUM_HALF_WIDTH * lam, SPECTRUM_BINS + 1)


def _realization_values(cfg: EnsembleConfig, index: int, attempt: int):
    """All per-realization samples for realization ``index`` as a dict."""
    spec = cfg.model
    est = cfg.estimators
    e = spec.energy
    lam = spec.lam
    rng = stream(cfg.master_seed, index, attempt)
    r1, r2 = side_streams(rng)
    sides = _needed_sides(cfg)
    drawn = {}
    for side, sub in ((1, r1), (2, r2)):
        if side in sides:
            drawn[side] = sample_side(spec, side, sub)

    out = {}
    if "spectrum" in est:
        out["levels"] = np.concatenate([np.linalg.eigvalsh(drawn[s][0].entries) for s in (1, 2)])

    need_solve = {"xi_stats", "s_mean", "formation", "pab"} & est
    sol: dict[int, SideSolution] = {}
    if need_solve:
        with_s = "s_mean" in est
        pivots = {1: spec.pivot1, 2: spec.pivot2}
        for side in sides:
            h, w = drawn[side]
            if w.shape[0] == 0 and "pab" not in est:
                continue
            sol[side] = solve_side(h, w, e, pivots[side], lam, with_s=with_s)
        for side, s in sol.items():
            if s.f.size == 0:
                continue
            if "xi_stats" in est:
                out[f"xi{side}"] = s.xi
            if "s_mean" in est:
                out[f"s_mean{side}"] = np.diag(s.s).copy()
            if "formation" in est:
                out[f"formation{side}"] = np.abs(s.f) ** 2
    if "pab" in est:
        res = combine_sides(spec, e, sol[1], sol[2])
        out["pab"] = res.p_ab
        mean_xi = average_xi(e, lam)
        a_i = _amplitude(spec, sol[1].xi, mean_xi, e)
        a_ii = _amplitude(spec, mean_xi, sol[2].xi, e)
        out["p_a"] = np.abs(sol[1].f) ** 2 * abs(a_i) ** 2
        out["p_b"] = np.abs(sol[2].f) ** 2 * abs(a_ii) ** 2
    if "full_s" in est:
        (h1, w1), (h2, w2) = drawn[1], drawn[2]
        real = Realization(h1, h2, w1, w2, width_matrix(w1), width_matrix(w2), spec)
        s = smatrix_direct(real, e).s_full
        k = s.shape[0]
        out["full_s_abs2"] = np.abs(s) ** 2
        out["unitarity"] = float(np.max(np.abs(s.conj().T @ s - np.eye(k))))
        out["symmetry"] = float(np.max(np.abs(s - s.T)))
    return out


def _amplitude(spec: ModelSpec, xi1, xi2, e):
    if spec.kind is ModelKind.TUNNELING:
        return amplitude_factor_tun(xi1, xi2, spec.v_tilde)
    return amplitude_factor_tra(xi1, xi2, spec.v1_tilde, spec.v2_tilde, e, spec.e0, spec.lam)


def _run_batch(args):
    cfg, start, stop = args
    batch = _Batch(cfg)
    edges = _spectrum_edges(cfg.model.lam) if batch.hist is not None else None
    for index in range(start, stop):
        values = None
        for attempt in (0, 1):
            try:
                values = _realization_values(cfg, index, attempt)
                break
            except NumericalFailure:
                batch.failures += 1
        if values is None:
            batch.dropped += 1
            continue
        for name, acc in batch.acc.items():
            acc.add(values[name])
        if "unitarity" in values:
            batch.unitarity = max(batch.unitarity, values["unitarity"])
            batch.symmetry = max(batch.symmetry, values["symmetry"])
        if edges is not None:
            lv = values["levels"]
            batch.hist += np.histogram(lv, bins=edges)[0]
            batch.under += int(np.count_nonzero(lv < edges[0]))
            batch.over += int(np.count_nonzero(lv > edges[-1]))
    return batch


def _batch_ranges(realizations: int, batches: int):
    b = min(batches, realizations)
    bounds = [realizations * i // b for i in range(b + 1)]
    return list(zip(bounds[:-1], bounds[1:]))


def run_ensemble(cfg: EnsembleConfig) -> EnsembleStats:
    """Average over ``cfg.realizations`` realizations; see the module docstring."""
    ranges = _batch_ranges(cfg.realizations, cfg.batches)
    jobs = [(cfg, a, b) for a, b in ranges]
    if cfg.workers == 1 or len(jobs) == 1:
        parts = [_run_batch(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(jobs))) as pool:
            parts = list(pool.map(_run_batch, jobs))

    failures = sum(p.failures for p in parts)
    dropped = sum(p.dropped for p in parts)
    if failures > MAX_FAILURE_RATE * cfg.realizations:
        raise NumericalFailure(
            f"{failures} numerical failures in {cfg.realizations} realizations "
            f"({dropped} dropped after resampling) exceed the {MAX_FAILURE_RATE:.1%} limit"
        )
    count = cfg.realizations - dropped
    stats = EnsembleStats(realizations=cfg.realizations, count=count, failures=failures,
                          dropped=dropped)
    for name in parts[0].acc:
        pieces = [p.acc[name] for p in parts]
        setattr(stats, name, Estimate.from_batches(pieces))
        stats.batch_means[name] = np.stack([p.mean for p in pieces])
    if "full_s" in cfg.estimators:
        stats.unitarity_max = max(p.unitarity for p in parts)
        stats.symmetry_max = max(p.symmetry for p in parts)
    if "spectrum" in cfg.estimators:
        counts = np.zeros(SPECTRUM_BINS, dtype=np.int64)
        for p in parts:
            counts += p.hist
        stats.spectrum = SpectrumHistogram(
            edges=_spectrum_edges(cfg.model.lam), counts=counts,
            underflow=sum(p.under for p in parts), overflow=sum(p.over for p in parts),
            realizations=count, levels_per_realization=2 * cfg.model.n)
    return stats


class Case(str, enum.Enum):
    I = "i"
    II = "ii"
    III = "iii"
    THICK = "thick"


@dataclass(frozen=True)
class PredictionRecord:
    which: Case
    pab: np.ndarray
    a_factor: complex | None = None
    p_a: np.ndarray | None = None
    p_b: np.ndarray | None = None
    formation1: np.ndarray | None = None
    formation2: np.ndarray | None = None
    notes: tuple[str, ...] = ()


def _transmissions(t, label):
    t = np.asarray(t, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise InvalidArgument(f"{label} must be a non-empty list of transmissions")
    if np.any(t < 0) or np.any(t > 1):
        raise InvalidArgument(f"{label} must lie in [0, 1]")
    return t


def predict_case(cfg: EnsembleConfig, t1, t2, which, stats: EnsembleStats | None = None,
                 tol: float = 1e-6) -> PredictionRecord:
    """Asymptotic prediction of <P_ab> for one of the cases i, ii, iii or thick.

    Cases i and ii need the Monte Carlo P_a (P_b); they are taken from
    ``stats`` when given, otherwise an ensemble with the ``pab`` estimator is
    run from ``cfg``.
    """
    which = Case(which)
    t1 = _transmissions(t1, "t1")
    t2 = _transmissions(t2, "t2")
    spec = cfg.model
    s1, s2 = float(t1.sum()), float(t2.sum())
    notes = []
    mean_xi = average_xi(spec.energy, spec.lam)

    def flag(label, s):
        if s < LARGE_SUM_T:
            msg = f"sum of {label} transmissions is {s:g}; the asymptotic form assumes it is large"
            warnings.warn(msg, stacklevel=3)
            notes.append(msg)

    if which in (Case.I, Case.II):
        if stats is None or stats.p_a is None:
            cfg = replace(cfg, estimators=frozenset({"pab"}))
            stats = run_ensemble(cfg)
        if which is Case.I:
            flag("side-2", s2)
            pab = np.outer(stats.p_a.mean, t2 / s2)
            return PredictionRecord(which, pab, p_a=stats.p_a.mean, notes=tuple(notes))
        flag("side-1", s1)
        pab = np.outer(t1 / s1, stats.p_b.mean)
        return PredictionRecord(which, pab, p_b=stats.p_b.mean, notes=tuple(notes))

    if which is Case.III:
        flag("side-1", s1)
        flag("side-2", s2)
        a = _amplitude(spec, mean_xi, mean_xi, spec.energy)
        pab = np.outer(t1 / s1, t2 / s2) * abs(a) ** 2
        return PredictionRecord(which, pab, a_factor=a, notes=tuple(notes))

    if spec.kind is not ModelKind.TUNNELING:
        raise InvalidArgument("the thick-barrier prediction applies to the tunneling model")
    f1 = _formation_values(t1, tol)
    f2 = _formation_values(t2, tol)
    a = complex(spec.v_tilde)
    pab = abs(a) ** 2 * np.outer(f1, f2)
    return PredictionRecord(which, pab, a_factor=a, formation1=f1, formation2=f2,
                            notes=tuple(notes))


def _formation_values(t, tol):
    cache = {}
    out = np.empty(t.size)
    for i, ta in enumerate(t):
        key = float(ta)
        if key not in cache:
            res = vwz.formation_variance_integral(key, t, tol=tol)
            if not res.converged:
                raise NumericalFailure(f"formation integral for T={key} did not converge: {res.message}")
            cache[key] = res.value
        out[i] = cache[key]
    return out
