"""Coupled two-GOE Hamiltonians, channel couplings and width matrices.

Both variants are built directly in the rotated basis: the tunneling
element (or the transition-state couplings) attach to the last basis vector
of space 1 and to the first basis vector of space 2.  In 0-based array
indices those pivots are ``n - 1`` (space 1) and ``0`` (space 2).
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, NumericalFailure
from .goe import GoeMatrix, mean_level_spacing, sample_goe


class ModelKind(str, enum.Enum):
    TUNNELING = "tunneling"
    TRANSITION_STATE = "transition_state"


@dataclass(frozen=True)
class ChannelSpec:
    """One open channel, given either by coupling strength ``v`` or target ``t``.

    ``v`` is normalised so that sum_mu W_{a mu}^2 = N v^2.
    """

    v: float | None = None
    t: float | None = None

    def __post_init__(self):
        if (self.v is None) == (self.t is None):
            raise InvalidArgument("exactly one of v and t must be given")
        if self.v is not None and not self.v > 0:
            raise InvalidArgument(f"channel strength must be positive, got {self.v}")
        if self.t is not None and not 0.0 < self.t <= 1.0:
            raise InvalidArgument(f"transmission must lie in (0, 1], got {self.t}")

    def strength(self, n: int, lam: float) -> float:
        if self.v is not None:
            return float(self.v)
        return coupling_for_transmission(self.t, lam, n)


def uniform_channels(count: int, t: float) -> tuple[ChannelSpec, ...]:
    return tuple(ChannelSpec(t=t) for _ in range(count))


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind
    n: int
    lam: float = 1.0
    energy: float = 0.0
    v_tilde: float | None = None
    v1_tilde: float | None = None
    v2_tilde: float | None = None
    e0: float = 0.0
    channels1: tuple[ChannelSpec, ...] = ()
    channels2: tuple[ChannelSpec, ...] = ()
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        object.__setattr__(self, "channels1", tuple(self.channels1))
        object.__setattr__(self, "channels2", tuple(self.channels2))
        if not isinstance(self.n, (int, np.integer)) or self.n < 1:
            raise InvalidArgument(f"n must be a positive integer, got {self.n!r}")
        if not self.lam > 0:
            raise InvalidArgument("lambda must be positive")
        if abs(self.energy) >= 2.0 * self.lam:
            raise InvalidArgument("energy must lie inside the GOE band |E| < 2 lambda")
        if self.kind is ModelKind.TUNNELING:
            names = ("v_tilde",)
        else:
            names = ("v1_tilde", "v2_tilde")
        for name in names:
            value = getattr(self, name)
            if value is None or value < 0:
                raise InvalidArgument(f"{name} must be given and non-negative for {self.kind.value}")
            if value > 1.0:
                warnings.warn(f"{name}={value} is not small compared to unity", stacklevel=3)
        limit = self.n // 10
        for label, chans in (("channels1", self.channels1), ("channels2", self.channels2)):
            if len(chans) > limit:
                raise InvalidArgument(
                    f"{label} has {len(chans)} channels; at most N/10 = {limit} allowed"
                )

    # dimensionful couplings
    @property
    def coupling(self) -> float:
        return self.lam * self.v_tilde

    @property
    def coupling1(self) -> float:
        return self.lam * self.v1_tilde

    @property
    def coupling2(self) -> float:
        return self.lam * self.v2_tilde

    @property
    def mean_square_coupling1(self) -> float:
        return self.coupling1**2 / self.n

    @property
    def mean_square_coupling2(self) -> float:
        return self.coupling2**2 / self.n

    @property
    def pivot1(self) -> int:
        return self.n - 1

    @property
    def pivot2(self) -> int:
        return 0


@dataclass(frozen=True)
class Realization:
    h1: GoeMatrix
    h2: GoeMatrix
    w1: np.ndarray
    w2: np.ndarray
    gamma1: np.ndarray
    gamma2: np.ndarray
    spec: ModelSpec = field(repr=False)


def coupling_for_transmission(t: float, lam: float, n: int) -> float:
    """Channel strength v giving transmission ``t`` at E = 0 to leading order in N.

    Uses <S_aa> = (1 - x)/(1 + x), T = 4x/(1 + x)^2 with x = pi N v^2 / lam on
    the weak-coupling branch x <= 1.
    """
    if not 0.0 < t <= 1.0:
        raise InvalidArgument(f"transmission must lie in (0, 1], got {t}")
    # (2 - t - 2 sqrt(1 - t))/t rewritten to avoid cancellation at small t
    s = math.sqrt(1.0 - t)
    x = t / (1.0 + s) ** 2
    return math.sqrt(x * lam / (math.pi * n))


def build_channels(specs, n: int, lam: float, pivot: int, rng: np.random.Generator,
                   max_tries: int = 5) -> np.ndarray:
    """Random coupling rows, mutually orthogonal and orthogonal to e_pivot."""
    specs = tuple(specs)
    k = len(specs)
    if k > n // 10:
        raise InvalidArgument(f"{k} channels exceed the limit N/10 = {n // 10}")
    if k == 0:
        return np.zeros((0, n))
    norms = np.sqrt(n) * np.array([c.strength(n, lam) for c in specs])
    for _ in range(max_tries):
        raw = rng.standard_normal((n, k))
        raw[pivot, :] = 0.0
        q, r = np.linalg.qr(raw)
        if np.min(np.abs(np.diag(r))) > 1e-8 * np.sqrt(n):
            q[pivot, :] = 0.0
            return q.T * norms[:, None]
    raise NumericalFailure("could not orthogonalise channel vectors")


def width_matrix(w: np.ndarray) -> np.ndarray:
    """Gamma_{mu mu'} = 2 pi sum_a W_{a mu} W_{a mu'}."""
    w = np.asarray(w, dtype=float)
    g = 2.0 * np.pi * (w.T @ w)
    return 0.5 * (g + g.T)


def sample_side(spec: ModelSpec, side: int, rng: np.random.Generator):
    """GOE matrix and channel rows of one space (``side`` is 1 or 2)."""
    if side == 1:
        chans, pivot = spec.channels1, spec.pivot1
    else:
        chans, pivot = spec.channels2, spec.pivot2
    h = sample_goe(spec.n, spec.lam, rng)
    w = build_channels(chans, spec.n, spec.lam, pivot, rng)
    return h, w


def side_streams(rng: np.random.Generator):
    """Independent child streams for space 1 and space 2."""
    return tuple(rng.spawn(2))


def _build(spec: ModelSpec, rng: np.random.Generator) -> Realization:
    r1, r2 = side_streams(rng)
    h1, w1 = sample_side(spec, 1, r1)
    h2, w2 = sample_side(spec, 2, r2)
    return Realization(h1, h2, w1, w2, width_matrix(w1), width_matrix(w2), spec)


def build_tunneling(spec: ModelSpec, rng: np.random.Generator) -> Realization:
    if spec.kind is not ModelKind.TUNNELING:
        raise InvalidArgument("build_tunneling needs a tunneling ModelSpec")
    return _build(spec, rng)


def build_transition(spec: ModelSpec, rng: np.random.Generator) -> Realization:
    if spec.kind is not ModelKind.TRANSITION_STATE:
        raise InvalidArgument("build_transition needs a transition-state ModelSpec")
    return _build(spec, rng)


def build_realization(spec: ModelSpec, rng: np.random.Generator) -> Realization:
    if spec.kind is ModelKind.TUNNELING:
        return build_tunneling(spec, rng)
    return build_transition(spec, rng)


def spreading_widths(spec: ModelSpec) -> tuple[float, float]:
    """Spreading widths (2 pi/d) * mean-square coupling of the transition state."""
    if spec.kind is not ModelKind.TRANSITION_STATE:
        raise InvalidArgument("spreading widths are defined for the transition-state model")
    d = mean_level_spacing(spec.lam, spec.n)
    return (2.0 * np.pi / d * spec.mean_square_coupling1,
            2.0 * np.pi / d * spec.mean_square_coupling2)
