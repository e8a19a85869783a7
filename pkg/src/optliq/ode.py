"""Backward solvers for the w ODE system behind the optimal quotes.

The inventory-indexed family w_q(t), q = 0..Q, solves the lower-triangular
linear system

    wdot_q(t) = (alpha q^2 - beta q) w_q(t) - eta w_{q-1}(t),
    w_0 = 1,   w_q(T) = exp(-k q b),

integrated backward from the deadline.  Three independent routes are
provided and cross-check one another in the test suite:

* :func:`solve_rk`          classical fixed-step 4th-order Runge-Kutta,
* :func:`solve_spectral`    exact eigen-decomposition of the bidiagonal
                            system matrix (eigenvalues alpha j^2 - beta j),
* :func:`solve_quadrature`  exact variation-of-constants form, with the
                            level-(q-1) integral evaluated by composite
                            Simpson quadrature, recursively in q.

For very large k*q*b the terminal values round to zero in double precision
(below ~1e-300); :func:`solve_rk` and :func:`solve_quadrature` then integrate
the correctly-rounded terminal data, which coincides with the forced-complete-
liquidation limit, and relax the positivity check on the terminal row.  The
spectral route refuses that regime because its coefficient solve cannot
resolve the underflowed terminal vector.

Solvers are pure functions; distinct parameter sets may be solved
concurrently by the caller.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields

import numpy as np

from .errors import DegenerateSpectrumError, ParameterError, SolverFailureError
from .model import (
    FIELD_TO_CONFIG_KEY,
    DerivedCoefficients,
    ModelParams,
    QuoteSurface,
    derive_coefficients,
)

__all__ = [
    "WGrid",
    "SpectralDecomposition",
    "solve_rk",
    "solve_spectral",
    "solve_quadrature",
    "solve_grid",
    "quote_surface",
    "DEFAULT_N_STEPS",
]

#: default step count; keeps quote drift under 1e-4 Ticks for horizons up
#: to a couple of hours at negligible cost (the system has q_max+1 rows)
DEFAULT_N_STEPS = 10_000

# terminal values exp(-k*q*b) below this are treated as exact zeros
_UNDERFLOW_FLOOR = 1e-300


def _terminal_values(p: ModelParams) -> np.ndarray:
    return np.exp(-p.k * p.b * np.arange(p.q_max + 1, dtype=float))


def _terminal_underflows(p: ModelParams) -> bool:
    return p.k * p.b * p.q_max > -math.log(_UNDERFLOW_FLOOR)


@dataclass(frozen=True)
class WGrid:
    """Solution w_q(t) on a uniform time grid.

    times   grid 0 = t_0 < ... < t_N = T, shape (N+1,)
    values  w values, shape (N+1, q_max+1); column q holds w_q
    terminal_underflow  True when exp(-k q b) rounded to zero for some q,
        in which case the terminal row legitimately contains zeros
    """

    params: ModelParams
    times: np.ndarray
    values: np.ndarray
    terminal_underflow: bool = False

    def __post_init__(self):
        times = np.ascontiguousarray(self.times, dtype=float)
        values = np.ascontiguousarray(self.values, dtype=float)
        if values.shape != (times.size, self.params.q_max + 1):
            raise ParameterError("w grid shape mismatch")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def q_max(self) -> int:
        return self.params.q_max

    def value(self, time_index: int, q: int) -> float:
        return float(self.values[time_index, q])

    @property
    def log_values(self) -> np.ndarray:
        """log w, with -inf where w underflowed to zero."""
        with np.errstate(divide="ignore"):
            return np.log(self.values)

    def check_invariants(self) -> None:
        assert np.all(self.values[:, 0] == 1.0), "w_0 must be identically 1"
        term = _terminal_values(self.params)
        got = self.values[-1]
        assert np.allclose(got, term, rtol=1e-12, atol=0.0), (
            f"terminal row deviates: {got} vs {term}"
        )
        if not self.terminal_underflow:
            assert np.all(self.values > 0), "w must be strictly positive"
        else:
            # each level switches on at some time before T and must then
            # stay positive all the way back to t = 0
            assert np.all(self.values >= 0)
            assert np.all(self.values[0] > 0), "w must be positive by t=0"
            for q in range(1, self.q_max + 1):
                positive = self.values[:, q] > 0
                first_zero = np.argmin(positive)
                assert positive[:first_zero].all() and not positive[first_zero:].any()

    # -- exports ----------------------------------------------------------

    def to_csv(self, path) -> None:
        _write_tq_csv(path, self.times, self.values, first_q=0)

    def to_json_dict(self) -> dict:
        return {
            "params": {FIELD_TO_CONFIG_KEY[f.name]: getattr(self.params, f.name)
                       for f in fields(self.params)},
            "times": self.times.tolist(),
            "w": self.values.tolist(),
        }

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh)


def _write_tq_csv(path, times, values, first_q: int) -> None:
    # 17 significant digits so a read-back reproduces the doubles
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("t,q,value\n")
        n_q = values.shape[1]
        for i, t in enumerate(times):
            row = values[i]
            for j in range(n_q):
                fh.write(f"{t:.17g},{first_q + j},{row[j]:.17g}\n")


def _system_matrix(p: ModelParams, coeffs: DerivedCoefficients) -> np.ndarray:
    """Bidiagonal matrix M with wdot = M w; row 0 is zero so w_0 stays 1."""
    q = np.arange(p.q_max + 1, dtype=float)
    m = np.diag(coeffs.alpha * q * q - coeffs.beta * q)
    for i in range(1, p.q_max + 1):
        m[i, i - 1] = -coeffs.eta
    return m


def solve_rk(p: ModelParams, n_steps: int = DEFAULT_N_STEPS,
             coeffs: DerivedCoefficients | None = None) -> WGrid:
    """Integrate the system backward from T with classical 4th-order
    Runge-Kutta at fixed step T/n_steps.

    The system is linear and autonomous, so one RK4 step is the fixed
    polynomial ``I + P + P^2/2 + P^3/6 + P^4/24`` of ``P = h*M`` applied per
    step (identical arithmetic to the four-stage form).  Any non-positive w
    raises :class:`SolverFailureError` naming the offending (t, q).
    """
    p.require_risk_averse("solve_rk")
    if n_steps < 1:
        raise ParameterError(f"n_steps must be >= 1, got {n_steps}")
    if coeffs is None:
        coeffs = derive_coefficients(p)
    underflow = _terminal_underflows(p)
    h = p.horizon / n_steps
    # backward in t means forward in tau = T - t with v' = -M v
    step = h * _system_matrix(p, coeffs)  # P = h*M; v_{n+1} = poly(-P) v_n
    rk = np.eye(p.q_max + 1)
    term = np.eye(p.q_max + 1)
    for order in range(1, 5):
        term = term @ (-step) / order
        rk = rk + term

    times = np.linspace(0.0, p.horizon, n_steps + 1)
    values = np.empty((n_steps + 1, p.q_max + 1))
    w = _terminal_values(p)
    values[n_steps] = w
    active = w > 0  # components that have become positive must stay so
    for i in range(n_steps - 1, -1, -1):
        w = rk @ w
        bad = active & ~(w > 0)
        if bad.any():
            q_bad = int(np.argmax(bad))
            raise SolverFailureError(
                f"non-positive w at t={times[i]:.6g}, q={q_bad} "
                f"(w={w[q_bad]:.3g}); reduce the step size"
            )
        if not underflow and not np.all(w > 0):
            q_bad = int(np.argmax(~(w > 0)))
            raise SolverFailureError(
                f"non-positive w at t={times[i]:.6g}, q={q_bad}; reduce the step size"
            )
        active |= w > 0
        values[i] = w
    if underflow and not np.all(values[0] > 0):
        raise SolverFailureError("w failed to become positive by t=0; refine the grid")
    return WGrid(params=p, times=times, values=values, terminal_underflow=underflow)


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigen-decomposition of the system matrix.

    eigenvalues  lambda_j = alpha j^2 - beta j, shape (q_max+1,)
    eigvecs      lower-triangular matrix F with F[:, j] the eigenvector for
                 lambda_j, normalised to F[j, j] = 1
    coeffs       expansion coefficients c with F c = terminal vector
    """

    params: ModelParams
    eigenvalues: np.ndarray
    eigvecs: np.ndarray
    coeffs: np.ndarray

    def evaluate_at(self, t: float) -> np.ndarray:
        """w(t) = F (c * exp(-lambda (T - t))).

        The expansion coefficients alternate in sign and can be orders of
        magnitude larger than the reconstructed values, so the row sums use
        exact (fsum) accumulation.
        """
        if not 0.0 <= t <= self.params.horizon:
            raise ParameterError(f"t={t} outside [0, {self.params.horizon}]")
        weights = self.coeffs * np.exp(-self.eigenvalues
                                       * (self.params.horizon - t))
        return np.array([math.fsum(self.eigvecs[row, :row + 1]
                                   * weights[:row + 1])
                         for row in range(self.eigenvalues.size)])

    def to_wgrid(self, n_steps: int = DEFAULT_N_STEPS) -> WGrid:
        times = np.linspace(0.0, self.params.horizon, n_steps + 1)
        decay = np.exp(-np.outer(self.eigenvalues, self.params.horizon - times))
        values = (self.eigvecs @ (self.coeffs[:, None] * decay)).T
        # the grid carries the exact terminal data rather than its
        # cancellation-noisy reconstruction
        values[-1] = _terminal_values(self.params)
        if not np.all(values > 0):
            i, q = np.unravel_index(int(np.argmin(values)), values.shape)
            raise SolverFailureError(
                f"spectral reconstruction non-positive at t={times[i]:.6g}, q={q}"
            )
        return WGrid(params=self.params, times=times, values=values)


def solve_spectral(p: ModelParams,
                   coeffs: DerivedCoefficients | None = None) -> SpectralDecomposition:
    """Exact solution by eigen-decomposition.

    Eigenvector entries follow the recursion
    ``F[q, j] = eta * F[q-1, j] / (lambda_q - lambda_j)`` for q > j, so the
    spectrum must be simple: any gap below ``1e-9 * max|lambda|`` raises
    :class:`DegenerateSpectrumError` (fall back to :func:`solve_rk`).
    """
    p.require_risk_averse("solve_spectral")
    if _terminal_underflows(p):
        raise SolverFailureError(
            "terminal values underflow below 1e-300; the spectral coefficient "
            "solve cannot represent them, use solve_rk or solve_quadrature"
        )
    if coeffs is None:
        coeffs = derive_coefficients(p)
    n = p.q_max + 1
    q = np.arange(n, dtype=float)
    lam = coeffs.alpha * q * q - coeffs.beta * q
    tol = 1e-9 * float(np.max(np.abs(lam)))
    for hi in range(1, n):
        gaps = np.abs(lam[hi] - lam[:hi])
        if np.any(gaps <= tol):
            j = int(np.argmin(gaps))
            raise DegenerateSpectrumError(
                f"eigenvalues for q={hi} and j={j} collide "
                f"(gap {gaps[j]:.3g} <= tol {tol:.3g}); use solve_rk"
            )
    f = np.zeros((n, n))
    for j in range(n):
        f[j, j] = 1.0
        for row in range(j + 1, n):
            f[row, j] = coeffs.eta * f[row - 1, j] / (lam[row] - lam[j])
    term = _terminal_values(p)
    c = np.zeros(n)
    for row in range(n):
        c[row] = term[row] - f[row, :row] @ c[:row]
    return SpectralDecomposition(params=p, eigenvalues=lam, eigvecs=f, coeffs=c)


def solve_quadrature(p: ModelParams, n_quad: int = DEFAULT_N_STEPS,
                     coeffs: DerivedCoefficients | None = None) -> WGrid:
    """Recursive variation-of-constants solution.

    Each level uses the exact representation

        w_q(t) = exp(-lambda_q (T-t)) w_q(T)
                 + eta * integral_t^T exp(-lambda_q (s-t)) w_{q-1}(s) ds

    with the integral accumulated backward two grid intervals at a time by
    Simpson's rule (one trapezoid interval closes the odd-offset chain).
    """
    p.require_risk_averse("solve_quadrature")
    if n_quad < 2:
        raise ParameterError(f"n_quad must be >= 2, got {n_quad}")
    if coeffs is None:
        coeffs = derive_coefficients(p)
    underflow = _terminal_underflows(p)
    n = n_quad
    h = p.horizon / n
    times = np.linspace(0.0, p.horizon, n + 1)
    values = np.empty((n + 1, p.q_max + 1))
    values[:, 0] = 1.0
    term = _terminal_values(p)
    tail = p.horizon - times  # T - t_i
    for q in range(1, p.q_max + 1):
        lam = coeffs.alpha * q * q - coeffs.beta * q
        prev = values[:, q - 1]
        e1 = math.exp(-lam * h)
        e2 = e1 * e1
        integral = np.empty(n + 1)
        integral[n] = 0.0
        integral[n - 1] = 0.5 * h * (prev[n - 1] + e1 * prev[n])
        for i in range(n - 2, -1, -1):
            local = (h / 3.0) * (prev[i] + 4.0 * e1 * prev[i + 1] + e2 * prev[i + 2])
            integral[i] = local + e2 * integral[i + 2]
        col = np.exp(-lam * tail) * term[q] + coeffs.eta * integral
        body = col if not underflow else col[:-1]
        if not np.all(body > 0):
            i = int(np.argmax(~(body > 0)))
            raise SolverFailureError(
                f"non-positive w at t={times[i]:.6g}, q={q}; refine the quadrature grid"
            )
        values[:, q] = col
    return WGrid(params=p, times=times, values=values, terminal_underflow=underflow)


def solve_grid(p: ModelParams, n_steps: int = DEFAULT_N_STEPS,
               method: str = "auto") -> WGrid:
    """Solve on a uniform grid by the requested method.

    ``auto`` prefers the exact spectral route and falls back to Runge-Kutta
    when the spectrum is degenerate or the terminal values underflow.
    """
    if method == "rk":
        return solve_rk(p, n_steps)
    if method == "quadrature":
        return solve_quadrature(p, n_steps)
    if method == "spectral":
        return solve_spectral(p).to_wgrid(n_steps)
    if method == "auto":
        try:
            return solve_spectral(p).to_wgrid(n_steps)
        except (DegenerateSpectrumError, SolverFailureError):
            return solve_rk(p, n_steps)
    raise ParameterError(f"unknown solve method {method!r}")


def quote_surface(w: WGrid) -> QuoteSurface:
    """Optimal premiums delta*(t, q) for q = 1..q_max from a solved grid.

    Applies :func:`optliq.model.quote_from_w` column past column.  On grids
    whose terminal row underflowed to zero the terminal quotes are reported
    as -inf (the forced-liquidation limit is unbounded below at T).
    """
    p = w.params
    p.require_risk_averse("quote_surface")
    spread = math.log1p(p.gamma / p.k) / p.gamma
    vals = w.values
    if w.terminal_underflow:
        # zeros sit at the high-q end of near-terminal rows; their quotes
        # are -inf in the limit (log of 0/positive, or 0/0 for nested zeros)
        with np.errstate(divide="ignore", invalid="ignore"):
            quotes = np.log(vals[:, 1:] / vals[:, :-1]) / p.k + spread
        quotes[np.isnan(quotes)] = -np.inf
    else:
        if not np.all(vals > 0):
            raise ParameterError("w grid contains non-positive values")
        quotes = np.log(vals[:, 1:] / vals[:, :-1]) / p.k + spread
    return QuoteSurface(times=w.times, values=quotes, params=p)
