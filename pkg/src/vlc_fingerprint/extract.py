"""Equivalent-circuit extraction from S21 sweeps.

The fitter is a damped Gauss-Newton (Levenberg-Marquardt) loop over the
natural logs of ``(R_c, C_j, R_q, C_q, zeta)``. Working in logs keeps every
element positive without box constraints.

Only three numbers are observable in a sweep: ``zeta`` and the two
denominator coefficients ``a = R_c R_q C_q C_j`` and
``b = R_q C_q + R_c C_j + R_q C_j``. The four element values therefore sit on
a two-dimensional family of exact solutions. The Levenberg step (solved in
the minimum-norm sense) moves as little as possible in log space, so the
reported elements are the point of that family closest to the starting
guess. The guess is itself a smooth function of the data, which keeps the
fingerprint a deterministic, continuous function of ``(a, b)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .circuit import NOMINAL_PARAMS, CircuitParams, LinkScale, sweep_response
from .synth import S21Sweep


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class FitOptions:
    max_iterations: int = 200
    mse_tolerance: float = 1e-10
    step_tolerance: float = 1e-9
    damping_init: float = 1e-3
    use_phase: bool = False
    fd_step: float = 1e-6
    analytic_jacobian: bool = True
    gradient_tolerance: float = 1e-14
    refine_guess: bool = True

    def __post_init__(self):
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        for name in ("mse_tolerance", "step_tolerance", "damping_init", "fd_step", "gradient_tolerance"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")


@dataclass(frozen=True)
class OpticFingerprint:
    r_c: float
    c_j: float
    r_q: float

    def __post_init__(self):
        for name in ("r_c", "c_j", "r_q"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"fingerprint {name} must be positive and finite, got {v!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.r_c, self.c_j, self.r_q])

    @classmethod
    def from_array(cls, values) -> "OpticFingerprint":
        return cls(*(float(v) for v in values))


@dataclass(frozen=True)
class FitResult:
    params: CircuitParams
    zeta: LinkScale
    mse: float
    iterations: int
    converged: bool
    reason: str = ""
    history: tuple = field(default=(), repr=False)


def _normalized(mag: np.ndarray) -> np.ndarray:
    peak = mag.max()
    if not peak > 0:
        raise FitError("all-zero sweep: normalization undefined")
    return mag / peak


def residual_mse(p: CircuitParams, s: LinkScale, sweep: S21Sweep) -> float:
    """Mean squared difference of the max-normalized magnitude curves.

    Both curves are divided by their own peak, so the result ignores any
    positive scaling of either one (including ``s``).
    """
    measured = _normalized(np.abs(sweep.values))
    model = _normalized(np.abs(sweep_response(p, s, sweep.grid)))
    return float(np.mean((model - measured) ** 2))


def _interp_crossing(freqs, mag, level, start=0) -> float | None:
    below = np.nonzero(mag[start:] <= level)[0]
    if below.size == 0:
        return None
    i = int(below[0]) + start
    if i == 0:
        return float(freqs[0])
    # linear in (log f, dB) between the bracketing grid points
    lf0, lf1 = math.log(freqs[i - 1]), math.log(freqs[i])
    m0, m1 = 20 * math.log10(mag[i - 1]), 20 * math.log10(max(mag[i], 1e-300))
    target = 20 * math.log10(level)
    t = 0.0 if m0 == m1 else (m0 - target) / (m0 - m1)
    return math.exp(lf0 + min(max(t, 0.0), 1.0) * (lf1 - lf0))


def initial_guess(sweep: S21Sweep, nominal: CircuitParams = NOMINAL_PARAMS) -> tuple[CircuitParams, LinkScale]:
    """Starting point read off the magnitude curve.

    ``zeta`` is the mean magnitude over the lowest 5% of the grid; the -3 dB
    corner ``f_c`` sets ``R_q C_q = 1 / (2 pi f_c)`` with ``C_q``, ``R_c`` and
    ``C_j`` held at ``nominal``. Without an in-band corner the nominal
    elements are returned unchanged.
    """
    mag = np.abs(sweep.values)
    freqs = sweep.freqs
    if freqs[-1] / freqs[0] < 10 * (1 - 1e-9):
        raise FitError("sweep must cover at least one decade")
    n_low = max(1, int(math.ceil(0.05 * mag.size)))
    zeta0 = float(np.mean(mag[:n_low]))
    if not zeta0 > 0:
        raise FitError("all-zero sweep: cannot estimate link scale")
    f_c = _interp_crossing(freqs, mag, zeta0 / math.sqrt(2), start=n_low)
    if f_c is None:
        return nominal, LinkScale(zeta0)
    tau = 1.0 / (2 * math.pi * f_c)
    guess = CircuitParams(nominal.r_c, nominal.c_j, tau / nominal.c_q, nominal.c_q)
    return guess, LinkScale(zeta0)


class _Problem:
    """Residual vector of a sweep as a function of the five log-parameters."""

    #: elements may roam this many natural-log units from nominal (about 4 decades)
    BOX = math.log(1e4)

    def __init__(self, sweep: S21Sweep, use_phase: bool):
        self.w = sweep.grid.omega
        self.center = np.log(NOMINAL_PARAMS.as_array())
        self.use_phase = use_phase
        self.values = sweep.values
        self.scale = float(np.abs(sweep.values).max())
        if not self.scale > 0:
            raise FitError("all-zero sweep")
        self.target = self._observe(sweep.values)

    def _observe(self, h):
        if self.use_phase:
            return np.concatenate([h.real, h.imag]) / self.scale
        return np.abs(h) / self.scale

    def model(self, theta):
        r_c, c_j, r_q, c_q, zeta = np.exp(theta)
        a = r_c * r_q * c_q * c_j
        b = r_q * c_q + r_c * c_j + r_q * c_j
        return zeta / (1 - a * self.w ** 2 + 1j * b * self.w)

    def inside(self, theta) -> bool:
        return bool(np.all(np.abs(theta[:4] - self.center) <= self.BOX) and abs(theta[4]) < 700)

    def residual(self, theta):
        return self._observe(self.model(theta)) - self.target

    def jacobian(self, theta, r0, h):
        """Closed-form derivative of the residual w.r.t. the log-parameters."""
        r_c, c_j, r_q, c_q, zeta = np.exp(theta)
        a = r_c * r_q * c_q * c_j
        den = 1 - a * self.w ** 2 + 1j * (r_q * c_q + r_c * c_j + r_q * c_j) * self.w
        hval = zeta / den
        dh_da = hval * self.w ** 2 / den
        dh_db = -1j * hval * self.w / den
        db = (r_c * c_j, r_c * c_j + r_q * c_j, r_q * c_q + r_q * c_j, r_q * c_q)
        cols = [a * dh_da + db_k * dh_db for db_k in db] + [hval]
        dh = np.stack(cols, axis=1)
        if self.use_phase:
            return np.vstack([dh.real, dh.imag]) / self.scale
        mag = np.abs(hval)
        return (hval.conj()[:, None] * dh).real / mag[:, None] / self.scale

    def fd_jacobian(self, theta, r0, h):
        """Forward differences; the reference the closed form is checked against."""
        jac = np.empty((r0.size, theta.size))
        for k in range(theta.size):
            t = theta.copy()
            t[k] += h
            jac[:, k] = (self.residual(t) - r0) / h
        return jac


def _pack(p: CircuitParams, s: LinkScale) -> np.ndarray:
    return np.log(np.append(p.as_array(), s.zeta))


def _unpack(theta) -> tuple[CircuitParams, LinkScale]:
    v = np.exp(theta)
    return CircuitParams.from_array(v[:4]), LinkScale(float(v[4]))


def _levenberg_marquardt(prob: _Problem, theta, opts: FitOptions):
    """Run LM from ``theta``; returns (theta, iterations, converged, reason, history).

    Damping starts at ``opts.damping_init`` and moves by a factor of ten:
    down after an accepted step, up after a rejected one.
    """
    r = prob.residual(theta)
    cost = float(np.mean(r ** 2))
    history = [cost]
    damping = opts.damping_init
    eye = np.eye(theta.size)
    zeros = np.zeros(theta.size)
    iterations = 0
    while True:
        if cost <= opts.mse_tolerance:
            return theta, iterations, True, "mse_tolerance", history
        if iterations >= opts.max_iterations:
            return theta, iterations, False, "max_iterations", history
        iterations += 1
        jac = (prob.jacobian if opts.analytic_jacobian else prob.fd_jacobian)(theta, r, opts.fd_step)
        if np.linalg.norm(jac.T @ r, np.inf) / r.size <= opts.gradient_tolerance:
            return theta, iterations, True, "gradient_tolerance", history
        while True:
            # augmented least squares keeps the rank-deficient system well posed
            aug = np.vstack([jac, math.sqrt(damping) * eye])
            step = np.linalg.lstsq(aug, np.concatenate([-r, zeros]), rcond=None)[0]
            trial = theta + step
            if prob.inside(trial):
                r_trial = prob.residual(trial)
                cost_trial = float(np.mean(r_trial ** 2))
            else:
                cost_trial = math.inf
            if np.isfinite(cost_trial) and cost_trial < cost:
                break
            damping *= 10
            if damping > 1e16:
                # no descent direction left at machine precision
                improved = len(history) > 1
                return theta, iterations, improved, "stalled" if improved else "no_improvement", history
        theta, r, cost = trial, r_trial, cost_trial
        history.append(cost)
        damping = max(damping / 10, 1e-15)
        if np.linalg.norm(step) <= opts.step_tolerance * (np.linalg.norm(theta) + opts.step_tolerance):
            return theta, iterations, True, "step_tolerance", history


def fit_sweep(sweep: S21Sweep, opts: FitOptions | None = None) -> FitResult:
    """Fit the five-element link model to one sweep.

    Returns the best parameters seen. A fit that never improves on the
    initial guess, or that runs out of iterations, reports
    ``converged=False``.
    """
    opts = opts or FitOptions()
    if len(sweep.grid) < 10:
        raise FitError("need at least 10 frequency points")
    if not np.all(np.isfinite(sweep.values)):
        raise FitError("sweep contains non-finite values")

    p0, s0 = initial_guess(sweep)
    if opts.max_iterations == 0:
        return FitResult(p0, s0, residual_mse(p0, s0, sweep), 0, False, "max_iterations")
    prob = _Problem(sweep, opts.use_phase)
    theta, iterations, converged, reason, history = _levenberg_marquardt(prob, _pack(p0, s0), opts)

    if opts.refine_guess and iterations > 0:
        # Restart from a guess read off the fitted, noise-free curve so the
        # element split does not inherit noise from the raw corner search.
        p1, s1 = _unpack(theta)
        smooth = S21Sweep(sweep.grid, sweep_response(p1, s1, sweep.grid))
        p_ref, s_ref = initial_guess(smooth)
        theta2, it2, conv2, reason2, hist2 = _levenberg_marquardt(prob, _pack(p_ref, s_ref), opts)
        iterations += it2
        if hist2[-1] <= history[-1] * 1.01 + opts.mse_tolerance:
            theta, converged, reason, history = theta2, conv2 or converged, reason2, hist2

    p, s = _unpack(theta)
    return FitResult(p, s, residual_mse(p, s, sweep), iterations, converged, reason, tuple(history))


def fingerprint(fit: FitResult) -> OpticFingerprint:
    """Project a converged fit onto ``(R_c, C_j, R_q)``."""
    if not fit.converged:
        raise FitError(f"refusing to fingerprint an unconverged fit ({fit.reason})")
    p = fit.params
    return OpticFingerprint(p.r_c, p.c_j, p.r_q)


def fit_many(sweeps, opts: FitOptions | None = None) -> list[FitResult]:
    """Fit every sweep independently (order-preserving)."""
    opts = opts or FitOptions()
    return [fit_sweep(s, opts) for s in sweeps]
