"""Threefold saddle-point integrals for the fluctuations of xi and of the
formation amplitude, and their leading large-sum(T) asymptotics.

Integration variables are ``u1, u2`` in [0, inf) and ``u`` in [0, 1].  The
integrals are computed as

* outer / middle: adaptive Gauss-Kronrod (QUADPACK via ``scipy.integrate.quad``)
  over ``s1`` in [0, 1) and ``w`` in [0, 1] with ``u1 = s1^2/(1 - s1^2)``,
  ``u2 = u1`` evaluated at ``s2 = w s1``.  The map removes the 1/sqrt(u_i)
  endpoint singularity and compactifies [0, inf); restricting to ``u2 <= u1``
  (the integrand is symmetric) keeps the |u1 - u2| kink on the boundary.
* inner: fixed Gauss-Legendre panels in ``u`` graded geometrically in powers
  of two down to the scale ``min(u1, u2)`` of the double poles at ``-u1``,
  ``-u2``.  Each panel sees its nearest pole at least one panel length away,
  so 12 nodes per panel reach ~1e-14 relative accuracy.

Normalisation.  The polynomial bracket of the xi integral carries a factor 2
on its second group, and the formation integral has prefactor T_a/4.  With
these, the formation values obey sum_a F_a = 2 = <-2 Im xi> exactly and both
integrals agree with direct simulation.  ``literal=True`` switches to the
unit coefficient and the T_a/2 prefactor instead.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import DivergentIntegralError, InvalidArgument

_GL_NODES = 12
_GL_X, _GL_W = np.polynomial.legendre.leggauss(_GL_NODES)
_MAX_PANEL = 0.125


@dataclass(frozen=True)
class IntegralResult:
    value: float
    error_estimate: float
    evaluations: int
    converged: bool
    message: str = ""


class _BudgetExceeded(Exception):
    pass


def measure(u1, u2, u):
    """Integration measure on the saddle-point manifold (nonnegative)."""
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    u = np.asarray(u, dtype=float)
    if np.any(u1 < 0) or np.any(u2 < 0) or np.any(u < 0) or np.any(u > 1):
        raise InvalidArgument("measure needs u1, u2 >= 0 and 0 <= u <= 1")
    num = (1.0 - u) * u * np.abs(u1 - u2)
    den = np.sqrt((1.0 + u1) * u1 * (1.0 + u2) * u2) * (u + u1) ** 2 * (u + u2) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(num == 0.0, 0.0, num / den)
    return out if out.ndim else float(out)


def channel_factor(u1, u2, u, transmissions):
    """prod_a (1 - T_a u) / sqrt((1 + T_a u1)(1 + T_a u2))."""
    t = np.asarray(transmissions, dtype=float)
    u1, u2, u = (np.asarray(x, dtype=float)[..., None] for x in (u1, u2, u))
    out = np.prod((1.0 - t * u) / np.sqrt((1.0 + t * u1) * (1.0 + t * u2)), axis=-1)
    return out if out.ndim else float(out)


def xi_variance_integrand(u1, u2, u, transmissions, literal: bool = False):
    """Full integrand of <|xi|^2> - 1 (including the 1/2 prefactor)."""
    c = 1.0 if literal else 2.0
    poly = (u1 + u2 + 2 * u) ** 2 + c * (u1 * (1 + u1) + u2 * (1 + u2) + 2 * u * (1 - u))
    return 0.5 * measure(u1, u2, u) * channel_factor(u1, u2, u, transmissions) * poly


def formation_variance_integrand(u1, u2, u, t_a, transmissions, literal: bool = False):
    """Full integrand of the formation-amplitude variance (including prefactor).

    Written in the direct form; the integrator cancels the (1 - T_a u) factors
    analytically instead.
    """
    pref = t_a / 2.0 if literal else t_a / 4.0
    poly = (u1 * (1 + u1) / (1 + t_a * u1) + u2 * (1 + u2) / (1 + t_a * u2)
            + 2 * u * (1 - u) / (1 - t_a * u))
    return pref * measure(u1, u2, u) * channel_factor(u1, u2, u, transmissions) * poly


@functools.lru_cache(maxsize=4096)
def _panel_rule(j0: int):
    """Gauss-Legendre nodes on [0, 1]: [0, 2^j0], geometric to 1/8, then width 1/8."""
    edges = [0.0]
    j = j0
    while 2.0**j < _MAX_PANEL:
        edges.append(2.0**j)
        j += 1
    edges.extend(np.arange(1, int(round(1 / _MAX_PANEL)) + 1) * _MAX_PANEL)
    edges = np.unique(np.asarray(edges))
    a, b = edges[:-1], edges[1:]
    half = 0.5 * (b - a)
    x = (half[:, None] * (_GL_X[None, :] + 1.0) + a[:, None]).ravel()
    w = (half[:, None] * _GL_W[None, :]).ravel()
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def _panel_index(m: float) -> int:
    if m <= 0.0:
        return -1074
    return max(math.floor(math.log2(m)) - 1, -1074)


class _Integrand:
    """Inner u-integral as a function of (u1, u2), with per-node-set caching."""

    def __init__(self, transmissions, kind, t_a=None, index=None, literal=False,
                 budget=10**7):
        t = np.asarray(transmissions, dtype=float)
        self.t_all = t
        self.kind = kind
        self.literal = literal
        self.t_a = t_a
        if kind == "formation":
            self.t_poly = np.delete(t, index)
        else:
            self.t_poly = t
        self.budget = budget
        self.evaluations = 0
        self._poly_cache = {}

    def _nodes(self, m):
        j0 = _panel_index(m)
        x, w = _panel_rule(j0)
        cached = self._poly_cache.get(j0)
        if cached is None:
            cached = np.prod(1.0 - self.t_poly[None, :] * x[:, None], axis=1) * w
            self._poly_cache[j0] = cached
        return x, cached

    def __call__(self, u1, u2):
        u, wp = self._nodes(min(u1, u2))
        self.evaluations += u.size
        if self.evaluations > self.budget:
            raise _BudgetExceeded
        side = math.exp(-0.5 * (np.log1p(self.t_all * u1).sum() + np.log1p(self.t_all * u2).sum()))
        base = (1.0 - u) * u / ((u + u1) ** 2 * (u + u2) ** 2)
        if self.kind == "xi":
            c = 1.0 if self.literal else 2.0
            poly = (u1 + u2 + 2 * u) ** 2 + c * (u1 * (1 + u1) + u2 * (1 + u2) + 2 * u * (1 - u))
        else:
            ta = self.t_a
            poly = ((u1 * (1 + u1) / (1 + ta * u1) + u2 * (1 + u2) / (1 + ta * u2)) * (1 - ta * u)
                    + 2 * u * (1 - u))
        return abs(u1 - u2) * side * float(np.dot(wp, base * poly))


def _nested(inner: _Integrand, tol: float, limit: int = 200):
    middle_errors = []
    middle_tol = 0.1 * tol

    def middle(w, s1):
        s2 = s1 * w
        a1 = (1.0 - s1) * (1.0 + s1)
        a2 = (1.0 - s2) * (1.0 + s2)
        u1 = s1 * s1 / a1
        u2 = s2 * s2 / a2
        # du/sqrt(u(1+u)) = 2 ds/(1-s^2) in each variable; ds2 = s1 dw; x2 for u2 <= u1
        return 8.0 * s1 / (a1 * a2) * inner(u1, u2)

    def outer(r):
        # 1 - s1 = (1 - r)^2 turns the algebraic s1 -> 1 tail into a regular endpoint
        s1 = r * (2.0 - r)
        if s1 <= 0.0 or s1 >= 1.0:
            return 0.0
        val, err = integrate.quad(middle, 0.0, 1.0, args=(s1,), epsabs=0.0,
                                  epsrel=middle_tol, limit=limit)
        jac = 2.0 * (1.0 - r)
        middle_errors.append(err * jac)
        return val * jac

    val, err = integrate.quad(outer, 0.0, 1.0, epsabs=0.0, epsrel=tol, limit=limit)
    return val, err + (max(middle_errors) if middle_errors else 0.0)


def _run(inner, prefactor, tol, floor=1e-300):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", integrate.IntegrationWarning)
        try:
            raw, err = _nested(inner, tol)
        except _BudgetExceeded:
            return IntegralResult(math.nan, math.inf, inner.evaluations, False,
                                  "evaluation budget exhausted")
    value = prefactor * raw
    err = abs(prefactor) * err
    ok = err <= tol * max(abs(value), floor)
    msg = ""
    if caught:
        msg = f"{len(caught)} quadrature warnings; first: {caught[0].message}"
    return IntegralResult(value, err, inner.evaluations, bool(ok), msg)


def _check_transmissions(transmissions):
    t = np.asarray(transmissions, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise InvalidArgument("need a non-empty list of transmission coefficients")
    if np.any(t < 0) or np.any(t > 1):
        raise InvalidArgument("transmission coefficients must lie in [0, 1]")
    if not np.any(t > 0):
        raise DivergentIntegralError("all channels closed: the integral diverges for an isolated system")
    return t


def open_channel_count(transmissions) -> int:
    return int(np.count_nonzero(np.asarray(transmissions, dtype=float) > 0))


def xi_variance_integral(transmissions, tol: float = 1e-6, max_evaluations: int = 10**7,
                         literal: bool = False) -> IntegralResult:
    """<|xi|^2> - 1 in the large-N limit for the given channel transmissions.

    At large u1 (u2 fixed) the integrand falls off as u1^(-k/2) with k open
    channels, so the integral is finite only for k >= 3; fewer open channels
    raise ``DivergentIntegralError`` (heavy Porter-Thomas tail of 1/width).
    """
    t = _check_transmissions(transmissions)
    k = open_channel_count(t)
    if k < 3:
        raise DivergentIntegralError(
            f"{k} open channel(s): the xi variance integral diverges unless at least 3 channels are open"
        )
    inner = _Integrand(t[t > 0], "xi", literal=literal, budget=max_evaluations)
    return _run(inner, 0.5, tol)


def formation_variance_integral(t_a: float, transmissions, tol: float = 1e-6,
                                max_evaluations: int = 10**7,
                                literal: bool = False) -> IntegralResult:
    """2 pi <|sum_mu W_a,mu G_mu,pivot sqrt(lam)|^2> for channel ``a`` with T = ``t_a``.

    ``transmissions`` lists all channels of the space, including ``a``.
    """
    t = _check_transmissions(transmissions)
    matches = np.flatnonzero(np.isclose(t, t_a, rtol=0.0, atol=1e-12))
    if matches.size == 0:
        raise InvalidArgument(f"t_a={t_a} is not among the channel transmissions")
    if t_a == 0:
        return IntegralResult(0.0, 0.0, 0, True)
    inner = _Integrand(t, "formation", t_a=float(t_a), index=int(matches[0]), literal=literal,
                       budget=max_evaluations)
    pref = t_a / 2.0 if literal else t_a / 4.0
    return _run(inner, pref, tol)


def _sum_t(transmissions) -> float:
    s = float(np.sum(np.asarray(transmissions, dtype=float)))
    if not s > 0:
        raise InvalidArgument("sum of transmission coefficients must be positive")
    return s


def xi_variance_asymptotic(transmissions) -> float:
    """Leading-order value 2 / sum_a T_a as stated for sum T >> 1."""
    return 2.0 / _sum_t(transmissions)


def formation_asymptotic(t_a: float, transmissions) -> float:
    """Leading-order value T_a / sum_a' T_a' as stated for sum T >> 1."""
    return float(t_a) / _sum_t(transmissions)
