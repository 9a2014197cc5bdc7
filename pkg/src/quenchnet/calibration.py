"""Per-frequency two-site fits and the calibration table built from them."""

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConstructionError, DomainError, FitError, ParseError
from .model import TwoSiteParams, angular_from_hz, phase_ratio_jacobian, phase_ratio_r
from .spline import ParamCurves, sample_params

logger = logging.getLogger(__name__)

CALIBRATION_VERSION = 1

# Levenberg-Marquardt schedule
LM_LAMBDA0 = 1e-3
LM_LAMBDA_UP = 10.0
LM_LAMBDA_DOWN = 10.0
LM_XTOL = 1e-10
LM_GTOL = 1e-12
LM_MAX_ITER = 200
LM_LAMBDA_MIN = 1e-15
LM_MAX_EXTEND = 6
SITE_MERGE_RTOL = 1e-4


@dataclass(frozen=True)
class QuenchCurve:
    """Normalized phase ratios ``r`` measured at one modulation frequency.

    A point at ``c == 0`` is optional, but if present it must be the
    reference ``r == 1``.
    """

    frequency_hz: float
    temperature_c: float
    concentrations: np.ndarray
    ratios: np.ndarray

    def __post_init__(self):
        c = np.array(self.concentrations, dtype=float)
        r = np.array(self.ratios, dtype=float)
        if c.ndim != 1 or c.shape != r.shape:
            raise ConstructionError("concentrations and ratios must be 1-D and equally long")
        if c.size < 4:
            raise ConstructionError(f"a quench curve needs at least 4 points, got {c.size}")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(r))):
            raise ConstructionError("quench curve contains non-finite values")
        if np.any(c < 0):
            raise ConstructionError("concentrations must be >= 0")
        if np.unique(c).size != c.size:
            raise ConstructionError("concentrations must be distinct")
        if np.any(r <= 0):
            raise ConstructionError("ratios must be positive")
        zero = c == 0
        if np.any(zero) and not np.allclose(r[zero], 1.0, rtol=0, atol=1e-12):
            raise ConstructionError("the c = 0 reference point must have r = 1")
        angular_from_hz(self.frequency_hz)
        if not np.isfinite(self.temperature_c):
            raise ConstructionError("temperature must be finite")
        c.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "frequency_hz", float(self.frequency_hz))
        object.__setattr__(self, "temperature_c", float(self.temperature_c))
        object.__setattr__(self, "concentrations", c)
        object.__setattr__(self, "ratios", r)

    @property
    def omega(self):
        return angular_from_hz(self.frequency_hz)

    def __len__(self):
        return self.concentrations.size


@dataclass
class FitResult:
    params: TwoSiteParams
    residual_norm: float
    per_point_residuals: np.ndarray
    iterations: int
    converged: bool
    # sum of squared residuals after each accepted step, starting at the initial guess
    cost_history: list = field(default_factory=list, repr=False)


def default_init(curve):
    """Starting point for :func:`fit_two_site`.

    ``ksv1`` is the single-site slope of ``1/r - 1`` through the origin,
    averaged over the two lowest non-zero concentrations; ``f = 0.8`` and
    ``ksv2 = ksv1/10``.
    """
    c = curve.concentrations
    r = curve.ratios
    nz = np.flatnonzero(c > 0)
    if nz.size < 2:
        raise FitError("need at least two non-zero concentrations to initialize the fit")
    low = nz[np.argsort(c[nz], kind="stable")[:2]]
    slopes = (1.0 / r[low] - 1.0) / c[low]
    k = float(np.mean(slopes))
    if not k > 0:
        raise FitError("curve shows no quenching at low concentration; cannot initialize")
    return TwoSiteParams(0.8, k, k / 10.0)


class _LogitCoords:
    """``theta = (logit f, log ksv1, log ksv2)``."""

    @staticmethod
    def from_params(p):
        f = min(max(p.f, 1e-12), 1.0 - 1e-12)
        return np.array([np.log(f / (1.0 - f)), np.log(max(p.ksv1, 1e-300)), np.log(max(p.ksv2, 1e-300))])

    @staticmethod
    def to_params(theta):
        u, v1, v2 = theta
        # logistic written to stay finite for large |u|
        f = 1.0 / (1.0 + np.exp(-u)) if u >= 0 else np.exp(u) / (1.0 + np.exp(u))
        return TwoSiteParams(f, np.exp(v1), np.exp(v2))

    @staticmethod
    def jacobian(theta, p, c):
        jac = phase_ratio_jacobian(p, c)
        jac[:, 0] *= p.f * (1.0 - p.f)
        jac[:, 1] *= p.ksv1
        jac[:, 2] *= p.ksv2
        return jac


class _MomentCoords:
    """``theta = (log mean, log spread, skewness)`` of the two-point distribution of K.

    With ``R = sqrt(g**2 + 4)`` the map is ``f = (1 - g/R)/2``,
    ``ksv1 = mu + s*(R + g)/2`` and ``ksv2 = mu - s*(R - g)/2``. Near
    ``ksv1 == ksv2`` the residuals are close to linear in these
    coordinates, where the logit/log form has a long curved valley.
    """

    @staticmethod
    def from_params(p):
        f = min(max(p.f, 1e-6), 1.0 - 1e-6)
        q = np.sqrt(f * (1.0 - f))
        mu = f * p.ksv1 + (1.0 - f) * p.ksv2
        spread = q * max(p.ksv1 - p.ksv2, 1e-12 * mu)
        return np.array([np.log(mu), np.log(spread), (1.0 - 2.0 * f) / q])

    @staticmethod
    def to_params(theta):
        lm, ls, g = theta
        mu, s = np.exp(lm), np.exp(ls)
        big = np.sqrt(g * g + 4.0)
        k2 = mu - 0.5 * s * (big - g)
        if k2 < 0:
            raise DomainError("ksv2 < 0")
        return TwoSiteParams(0.5 * (1.0 - g / big), mu + 0.5 * s * (big + g), k2)

    @staticmethod
    def jacobian(theta, p, c):
        lm, ls, g = theta
        mu, s = np.exp(lm), np.exp(ls)
        big = np.sqrt(g * g + 4.0)
        dmap = np.array([
            [0.0, 0.0, -2.0 / big**3],
            [mu, 0.5 * s * (big + g), 0.5 * s * (g / big + 1.0)],
            [mu, -0.5 * s * (big - g), 0.5 * s * (1.0 - g / big)],
        ])
        return phase_ratio_jacobian(p, c) @ dmap


# kept for tests and callers that used the flat helpers
_to_free = _LogitCoords.from_params
_from_free = _LogitCoords.to_params


def _residuals(p, c, r):
    return np.asarray(phase_ratio_r(p, c)) - r


def _free_jacobian(p, c):
    return _LogitCoords.jacobian(None, p, c)


def _single_site_fit(c, r, k0):
    # 1-D Gauss-Newton on r = 1/(1 + k*c)
    k = k0
    for _ in range(50):
        d = 1.0 + k * c
        res = 1.0 / d - r
        jac = -c / d**2
        jj = jac @ jac
        if jj == 0:
            break
        dk = -(jac @ res) / jj
        k = max(k + dk, 0.0)
        if abs(dk) <= 1e-15 * max(k, 1e-300):
            break
    return k


def _canonical(p, c, r):
    """Report indistinguishable sites as a single site (``f = 1``).

    When ``ksv1`` and ``ksv2`` agree to 1e-4 relative, ``f`` is not
    identifiable. If a single-site model fits at least as well, it replaces
    the two-site solution with ``f = 1`` and ``ksv2 = ksv1``.
    """
    if p.ksv1 == 0 or p.ksv2 < p.ksv1 * (1.0 - SITE_MERGE_RTOL):
        return p
    k = _single_site_fit(c, r, p.f * p.ksv1 + (1.0 - p.f) * p.ksv2)
    single = TwoSiteParams(1.0, k, k)
    r2 = _residuals(p, c, r)
    r1 = _residuals(single, c, r)
    return single if r1 @ r1 <= r2 @ r2 + 1e-24 else p


def _evaluate(coords, theta, c, r):
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            p = coords.to_params(theta)
        res = _residuals(p, c, r)
    except DomainError:
        return None, None, np.inf
    cost = float(res @ res)
    return p, res, cost if np.isfinite(cost) else np.inf


@dataclass
class _Run:
    params: TwoSiteParams
    cost: float
    history: list
    iterations: int
    converged: bool
    # stopped on a tiny step only because heavy damping shrank it
    stalled: bool = False


def _levenberg_marquardt(coords, init, c, r, max_iter):
    theta = coords.from_params(init)
    p, res, cost = _evaluate(coords, theta, c, r)
    if p is None:
        return _Run(init, np.inf, [], 0, False)
    history = [cost]
    lam = LM_LAMBDA0
    dscale = np.zeros(3)
    it = 0
    while it < max_iter:
        it += 1
        jac = coords.jacobian(theta, p, c)
        # MINPACK's scale-free gradient test: cosine between the residual and each Jacobian column
        norms = np.sqrt(np.einsum("ij,ij->j", jac, jac)) * np.sqrt(cost)
        cosines = np.abs(jac.T @ res) / np.where(norms > 0, norms, 1.0)
        if cost == 0.0 or np.max(cosines) < LM_GTOL:
            return _Run(p, cost, history, it, True)
        dscale = np.maximum(dscale, np.einsum("ij,ij->j", jac, jac))
        # damped step as the least-squares solution of [J; sqrt(lam*D)] step = [-res; 0],
        # which avoids squaring the condition number of J
        damp = np.diag(np.sqrt(lam * np.maximum(dscale, 1e-30)))
        step = np.linalg.lstsq(np.vstack([jac, damp]), np.concatenate([-res, np.zeros(3)]), rcond=None)[0]
        small_step = np.linalg.norm(step) < LM_XTOL * (np.linalg.norm(theta) + LM_XTOL)
        trial_p, trial_res, trial_cost = _evaluate(coords, theta + step, c, r)
        if trial_cost < cost:
            theta, p, res, cost = theta + step, trial_p, trial_res, trial_cost
            history.append(cost)
            lam = max(lam / LM_LAMBDA_DOWN, LM_LAMBDA_MIN)
            # keep doubling an accepted step while it still lowers the cost;
            # this crosses long valleys that plain LM only crawls along
            for _ in range(LM_MAX_EXTEND):
                step = 2.0 * step
                trial_p, trial_res, trial_cost = _evaluate(coords, theta + step, c, r)
                if not trial_cost < cost:
                    break
                theta, p, res, cost = theta + step, trial_p, trial_res, trial_cost
                history.append(cost)
        else:
            lam *= LM_LAMBDA_UP
        if small_step:
            return _Run(p, cost, history, it, True, stalled=lam >= 1.0)
    return _Run(p, cost, history, it, False)


def fit_two_site(curve, init=None, max_iter=LM_MAX_ITER):
    """Least-squares fit of the two-site model to one quench curve.

    Levenberg-Marquardt runs on the unconstrained parameters
    ``(logit f, log ksv1, log ksv2)`` with an analytic Jacobian and
    damping ``J'J + lam*D`` where ``D`` holds the running maximum of
    ``diag(J'J)`` over all iterations (as in MINPACK), so a coordinate whose
    sensitivity collapses cannot take unbounded steps. The damping starts
    at 1e-3 and moves by a factor 10 down on accepted and up on rejected
    steps; an accepted step is additionally doubled (up to six times) for as
    long as that keeps lowering the cost. Iteration stops when a proposed
    step is below 1e-10 relative to the parameter vector, when every
    Jacobian column is orthogonal to the residual to within 1e-12 (cosine),
    or after ``max_iter`` iterations.

    If that run exhausts its iterations or stalls under heavy damping
    (``lam >= 1``), which happens when the two constants are within a few
    percent of each other, the fit is repeated
    from the same start in moment coordinates (see ``_MomentCoords``) and
    the lower-cost result is kept. ``converged`` is False only if neither
    run converged; ``iterations`` counts both.

    The result obeys the ``ksv1 >= ksv2`` convention, and sites whose
    constants coincide are reported as one (``f = 1``).
    """
    # a canonical point order makes the result independent of input order, bit for bit
    order = np.argsort(curve.concentrations, kind="stable")
    c = curve.concentrations[order]
    r = curve.ratios[order]
    if np.all(np.abs(r - 1.0) <= 1e-15):
        raise FitError("all ratios equal 1: the curve carries no quenching information")
    if init is None:
        init = default_init(curve)

    run = _levenberg_marquardt(_LogitCoords, init, c, r, max_iter)
    iterations = run.iterations
    if not run.converged or run.stalled:
        start = init.ordered()
        if start.ksv1 > start.ksv2 and 0 < start.f < 1:
            alt = _levenberg_marquardt(_MomentCoords, start, c, r, max_iter)
            iterations += alt.iterations
            if alt.converged and alt.cost <= run.cost or alt.cost < run.cost:
                run = alt
    if not run.converged:
        logger.warning("two-site fit at %g Hz did not converge in %d iterations", curve.frequency_hz, max_iter)
    params = _canonical(run.params.ordered(), c, r)
    res = _residuals(params, curve.concentrations, curve.ratios)
    return FitResult(
        params=params,
        residual_norm=float(np.sqrt(res @ res)),
        per_point_residuals=res,
        iterations=iterations,
        converged=run.converged,
        cost_history=run.history,
    )


@dataclass
class CalibrationTable:
    """Fitted two-site parameters per frequency plus their spline curves.

    ``fits`` is only populated when the table was built from curves; a table
    loaded from a calibration file carries the parameters alone.
    """

    temperature_c: float
    frequencies_hz: np.ndarray
    params: list
    converged: np.ndarray
    fits: list = None

    def __post_init__(self):
        self.frequencies_hz = np.asarray(self.frequencies_hz, dtype=float)
        self.converged = np.asarray(self.converged, dtype=bool)
        if self.frequencies_hz.size < 3:
            raise ConstructionError("a calibration table needs at least 3 frequencies")
        if np.any(np.diff(self.frequencies_hz) <= 0):
            raise ConstructionError("calibration frequencies must be strictly increasing")
        if len(self.params) != self.frequencies_hz.size or self.converged.size != self.frequencies_hz.size:
            raise ConstructionError("one parameter triple and flag per frequency required")
        arr = np.array([p.as_tuple() for p in self.params])
        self.curves = ParamCurves.from_knots(angular_from_hz(self.frequencies_hz), arr[:, 0], arr[:, 1], arr[:, 2])

    @property
    def all_converged(self):
        return bool(np.all(self.converged))

    @property
    def omegas(self):
        return self.curves.knots

    @property
    def domain_hz(self):
        return float(self.frequencies_hz[0]), float(self.frequencies_hz[-1])

    def params_at_hz(self, hz):
        return sample_params(self.curves, angular_from_hz(hz))

    def to_dict(self):
        return {
            "version": CALIBRATION_VERSION,
            "temperature_c": self.temperature_c,
            "frequencies_hz": [float(x) for x in self.frequencies_hz],
            "f": [p.f for p in self.params],
            "ksv1": [p.ksv1 for p in self.params],
            "ksv2": [p.ksv2 for p in self.params],
            "converged": [bool(x) for x in self.converged],
        }

    @classmethod
    def from_dict(cls, doc, path=None):
        required = ("version", "temperature_c", "frequencies_hz", "f", "ksv1", "ksv2", "converged")
        if not isinstance(doc, dict):
            raise ParseError("calibration document must be a JSON object", path)
        missing = [k for k in required if k not in doc]
        if missing:
            raise ParseError(f"calibration file lacks field(s): {', '.join(missing)}", path)
        if doc["version"] != CALIBRATION_VERSION:
            raise ParseError(f"unsupported calibration version {doc['version']!r}", path)
        n = len(doc["frequencies_hz"])
        if any(len(doc[k]) != n for k in ("f", "ksv1", "ksv2", "converged")):
            raise ParseError("calibration arrays differ in length", path)
        try:
            params = [TwoSiteParams(f, k1, k2) for f, k1, k2 in zip(doc["f"], doc["ksv1"], doc["ksv2"])]
            return cls(float(doc["temperature_c"]), doc["frequencies_hz"], params, doc["converged"])
        except (TypeError, ValueError) as exc:
            raise ParseError(str(exc), path) from exc


def build_calibration(curves, max_iter=LM_MAX_ITER):
    """Fit every curve independently and interpolate the results over frequency."""
    curves = sorted(curves, key=lambda cv: cv.frequency_hz)
    if len(curves) < 3:
        raise ConstructionError(f"need curves at >= 3 frequencies, got {len(curves)}")
    freqs = [cv.frequency_hz for cv in curves]
    if len(set(freqs)) != len(freqs):
        raise ConstructionError("duplicate modulation frequency among curves")
    temps = {cv.temperature_c for cv in curves}
    if len(temps) != 1:
        raise ConstructionError(f"curves span several temperatures: {sorted(temps)}")
    fits = [fit_two_site(cv, max_iter=max_iter) for cv in curves]
    return CalibrationTable(
        temperature_c=curves[0].temperature_c,
        frequencies_hz=freqs,
        params=[fr.params for fr in fits],
        converged=[fr.converged for fr in fits],
        fits=fits,
    )


def write_calibration(table, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(table.to_dict(), fh, indent=2)
        fh.write("\n")


def read_calibration(path):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path, exc.lineno) from exc
    return CalibrationTable.from_dict(doc, path)
