"""Per-realization scattering quantities.

Two routes to the cross block S_ab are provided.  ``smatrix_factorized`` uses
one real solve per GOE space (channels folded in by the Woodbury identity)
and the resummed barrier factor;
``smatrix_direct`` inverts the full coupled propagator and returns the whole
unitary S-matrix.  Agreement of the two is the central identity check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import InconsistentInput, InvalidArgument, NumericalFailure
from .goe import GoeMatrix
from .model import ModelKind, Realization

# Im E offset (in units of lambda) used when a space carries no channels.
REGULATOR = 1e-9


@dataclass
class ScatteringResult:
    s_cross: np.ndarray
    p_ab: np.ndarray
    xi1: complex | None = None
    xi2: complex | None = None
    a_factor: complex | None = None
    f_in: np.ndarray | None = None
    f_out: np.ndarray | None = None
    s_full: np.ndarray | None = None


def _propagator_matrix(h, gamma, e) -> np.ndarray:
    h = h.entries if isinstance(h, GoeMatrix) else np.asarray(h, dtype=float)
    n = h.shape[0]
    d = -h.astype(complex)
    d[np.diag_indices(n)] += e
    if gamma is not None:
        d += 0.5j * np.asarray(gamma)
    return d


def _solve(d: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        x = scipy.linalg.solve(d, rhs, assume_a="sym", check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalFailure(f"singular propagator: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise NumericalFailure("non-finite propagator solution")
    return x


def resolvent_columns(h, gamma, e, rhs: np.ndarray) -> np.ndarray:
    """Solve (E - H + i Gamma/2) X = rhs; ``e`` may be complex."""
    return _solve(_propagator_matrix(h, gamma, e), np.asarray(rhs))


def resolvent_column(h, gamma, e, pivot: int) -> np.ndarray:
    """Column ``pivot`` of (E - H + (i/2) Gamma)^{-1} from a single solve."""
    d = _propagator_matrix(h, gamma, e)
    rhs = np.zeros(d.shape[0], dtype=complex)
    rhs[pivot] = 1.0
    return _solve(d, rhs)


def xi(h, gamma, e, pivot: int, lam: float) -> complex:
    return complex(lam * resolvent_column(h, gamma, e, pivot)[pivot])


def amplitude_factor_tun(xi1: complex, xi2: complex, v_tilde: float) -> complex:
    """Barrier factor V / (1 - xi2 V xi1 V), summing repeated tunneling."""
    if v_tilde < 0:
        raise InvalidArgument("v_tilde must be non-negative")
    den = 1.0 - xi2 * v_tilde * xi1 * v_tilde
    if den == 0:
        raise NumericalFailure("pole of the tunneling factor")
    return complex(v_tilde / den)


def amplitude_factor_tra(xi1: complex, xi2: complex, v1_tilde: float, v2_tilde: float,
                         e: float, e0: float, lam: float) -> complex:
    """Resonant factor V1 lam / (E - E0 - V1 xi1 V1 - V2 xi2 V2) V2 (dimensionful V_i = lam V_i~)."""
    if v1_tilde < 0 or v2_tilde < 0:
        raise InvalidArgument("couplings must be non-negative")
    den = e - e0 - lam * v1_tilde * xi1 * v1_tilde - lam * v2_tilde * xi2 * v2_tilde
    if den == 0:
        raise NumericalFailure("pole of the transition-state factor")
    return complex(v1_tilde * lam / den * v2_tilde)


def entrance_amplitude(w, resolvent_col, lam: float):
    """sqrt(2 pi lam) * sum_mu W_{a mu} G_{mu, pivot}; ``w`` may hold several rows."""
    return np.sqrt(2.0 * np.pi * lam) * (np.asarray(w) @ resolvent_col)


# The propagator is symmetric, so the exit amplitude has the same form.
exit_amplitude = entrance_amplitude


def _a_factor(spec, xi1, xi2, e):
    if spec.kind is ModelKind.TUNNELING:
        return amplitude_factor_tun(xi1, xi2, spec.v_tilde)
    return amplitude_factor_tra(xi1, xi2, spec.v1_tilde, spec.v2_tilde, e, spec.e0, spec.lam)


@dataclass
class SideSolution:
    """Pivot quantities of one GOE space with its channels attached.

    ``f`` holds sqrt(2 pi lam) W G[:, pivot] and ``s`` the S-matrix of the
    space on its own channels (``None`` when not requested or no channels).
    """

    xi: complex
    f: np.ndarray
    s: np.ndarray | None = None


def solve_side(h, w, e: float, pivot: int, lam: float, with_s: bool = False) -> SideSolution:
    """Pivot element, amplitudes and (optionally) S-matrix of one space.

    With A = E - H real and Gamma = 2 pi W^T W, the Woodbury identity gives
    G = A^-1 - A^-1 W^T M^-1 W A^-1 / pi with M = W A^-1 W^T - (i/pi) 1,
    so one real solve for [e_pivot, W^T] and a k x k complex solve suffice.
    """
    h = h.entries if isinstance(h, GoeMatrix) else np.asarray(h, dtype=float)
    w = np.asarray(w, dtype=float)
    n = h.shape[0]
    k = w.shape[0]
    if k == 0:
        col = resolvent_column(h, None, e + 1j * REGULATOR * lam, pivot)
        return SideSolution(complex(lam * col[pivot]), np.zeros(0, dtype=complex), None)
    a = -h
    a[np.diag_indices(n)] += e
    rhs = np.empty((n, k + 1))
    rhs[:, 0] = 0.0
    rhs[pivot, 0] = 1.0
    rhs[:, 1:] = w.T
    try:
        y = np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"singular E - H: {exc}") from exc
    b = y[pivot, 1:]
    kmat = w @ y[:, 1:]
    m = 0.5 * (kmat + kmat.T) - (1j / np.pi) * np.eye(k)
    try:
        rhs_m = np.column_stack([b, np.eye(k)]) if with_s else b
        z = np.linalg.solve(m, rhs_m)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"singular channel matrix: {exc}") from exc
    mb = z[:, 0] if with_s else z
    xi_val = complex(lam * (y[pivot, 0] - b @ mb))
    f = np.sqrt(2.0 * np.pi * lam) * (-1j / np.pi) * mb
    s = None
    if with_s:
        s = -np.eye(k) - (2j / np.pi) * z[:, 1:]
    if not (np.isfinite(xi_val) and np.all(np.isfinite(f))):
        raise NumericalFailure("non-finite side solution")
    return SideSolution(xi_val, f, s)


def side_solutions(real: Realization, e: float, with_s: bool = False):
    spec = real.spec
    s1 = solve_side(real.h1, real.w1, e, spec.pivot1, spec.lam, with_s)
    s2 = solve_side(real.h2, real.w2, e, spec.pivot2, spec.lam, with_s)
    return s1, s2


def combine_sides(spec, e: float, side1: SideSolution, side2: SideSolution) -> ScatteringResult:
    a = _a_factor(spec, side1.xi, side2.xi, e)
    s_cross = -1j * a * np.outer(side1.f, side2.f)
    return ScatteringResult(s_cross=s_cross, p_ab=np.abs(s_cross) ** 2, xi1=side1.xi,
                            xi2=side2.xi, a_factor=a, f_in=side1.f, f_out=side2.f)


def smatrix_factorized(real: Realization, e: float | None = None) -> ScatteringResult:
    """S_ab = -i f_a A f_b from one real solve per space."""
    e = real.spec.energy if e is None else e
    side1, side2 = side_solutions(real, e)
    return combine_sides(real.spec, e, side1, side2)


def coupled_matrices(real: Realization, e: float):
    """Full propagator D = E - H + (i/2) Gamma and the channel matrix W over all channels."""
    spec = real.spec
    n = spec.n
    k1, k2 = real.w1.shape[0], real.w2.shape[0]
    d1 = _propagator_matrix(real.h1, real.gamma1, e)
    d2 = _propagator_matrix(real.h2, real.gamma2, e)
    if spec.kind is ModelKind.TUNNELING:
        dim = 2 * n
        off2 = n
        d = np.zeros((dim, dim), dtype=complex)
        d[:n, :n] = d1
        d[n:, n:] = d2
        d[spec.pivot1, n + spec.pivot2] = -spec.coupling
        d[n + spec.pivot2, spec.pivot1] = -spec.coupling
    else:
        dim = 2 * n + 1
        off2 = n + 1
        c = n
        d = np.zeros((dim, dim), dtype=complex)
        d[:n, :n] = d1
        d[off2:, off2:] = d2
        d[c, c] = e - spec.e0
        d[spec.pivot1, c] = d[c, spec.pivot1] = -spec.coupling1
        d[off2 + spec.pivot2, c] = d[c, off2 + spec.pivot2] = -spec.coupling2
    w = np.zeros((k1 + k2, dim))
    w[:k1, :n] = real.w1
    w[k1:, off2:off2 + n] = real.w2
    return d, w


def smatrix_direct(real: Realization, e: float | None = None) -> ScatteringResult:
    """Full S = 1 - 2 pi i W D^{-1} W^T over all channels of both spaces."""
    e = real.spec.energy if e is None else e
    k1 = real.w1.shape[0]
    d, w = coupled_matrices(real, e)
    if w.shape[0] == 0:
        raise InvalidArgument("at least one channel is required")
    x = _solve(d, w.T.astype(complex))
    s = np.eye(w.shape[0]) - 2j * np.pi * (w @ x)
    s_cross = s[:k1, k1:]
    return ScatteringResult(s_cross=s_cross, p_ab=np.abs(s_cross) ** 2, s_full=s)


def space_smatrix(h, gamma, w, e) -> np.ndarray:
    """S-matrix of a single GOE space with its own channels only."""
    w = np.asarray(w)
    x = resolvent_columns(h, gamma, e, w.T.astype(complex))
    return np.eye(w.shape[0]) - 2j * np.pi * (w @ x)


def transmission_coefficients(s_mean) -> np.ndarray:
    """T_a = 1 - |<S_aa>|^2, clamped to [0, 1]."""
    s_mean = np.atleast_1d(np.asarray(s_mean, dtype=complex))
    mag = np.abs(s_mean)
    if np.any(mag > 1.0 + 1e-6):
        raise InconsistentInput(f"|<S_aa>| exceeds one: {mag.max()}")
    return np.clip(1.0 - mag**2, 0.0, 1.0)
