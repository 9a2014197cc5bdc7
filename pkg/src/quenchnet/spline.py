"""Natural cubic splines and the frequency-dependent parameter curves."""

from dataclasses import dataclass

import numpy as np

from .errors import ConstructionError, DomainError
from .model import TwoSiteParams


class CubicSpline:
    """Natural cubic spline through ``(xs, ys)``.

    The second derivative vanishes at both ends. Evaluation outside
    ``[xs[0], xs[-1]]`` raises :class:`DomainError`; there is no extrapolation.

    Parameters
    ----------
    xs : sequence of float
        Strictly increasing knot abscissae, at least three.
    ys : sequence of float
        Knot values, same length as ``xs``.
    """

    def __init__(self, xs, ys):
        xs = np.array(xs, dtype=float)
        ys = np.array(ys, dtype=float)
        if xs.ndim != 1 or ys.ndim != 1:
            raise ConstructionError("knots must be one-dimensional")
        if xs.size != ys.size:
            raise ConstructionError(f"length mismatch: {xs.size} abscissae, {ys.size} values")
        if xs.size < 3:
            raise ConstructionError(f"need at least 3 knots, got {xs.size}")
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
            raise ConstructionError("knots must be finite")
        if np.any(np.diff(xs) <= 0):
            raise ConstructionError("knot abscissae must be strictly increasing")
        xs.setflags(write=False)
        ys.setflags(write=False)
        self.xs = xs
        self.ys = ys
        self.m = _natural_second_derivatives(xs, ys)
        self.m.setflags(write=False)

    def __len__(self):
        return self.xs.size

    @property
    def domain(self):
        return float(self.xs[0]), float(self.xs[-1])

    def _locate(self, x):
        x = np.asarray(x, dtype=float)
        lo, hi = self.domain
        if np.any(~((x >= lo) & (x <= hi))):
            raise DomainError(f"spline evaluated outside its knot domain [{lo!r}, {hi!r}]")
        k = np.clip(np.searchsorted(self.xs, x, side="right") - 1, 0, self.xs.size - 2)
        return x, k

    def __call__(self, x):
        """Evaluate the spline at ``x`` (scalar or array)."""
        x, k = self._locate(x)
        xs, ys, m = self.xs, self.ys, self.m
        h = xs[k + 1] - xs[k]
        a = (xs[k + 1] - x) / h
        b = (x - xs[k]) / h
        out = a * ys[k] + b * ys[k + 1] + ((a**3 - a) * m[k] + (b**3 - b) * m[k + 1]) * (h * h) / 6.0
        return float(out) if out.ndim == 0 else out

    def derivative(self, x, order=1):
        """First or second derivative at ``x``."""
        x, k = self._locate(x)
        xs, ys, m = self.xs, self.ys, self.m
        h = xs[k + 1] - xs[k]
        a = (xs[k + 1] - x) / h
        b = (x - xs[k]) / h
        if order == 1:
            out = (ys[k + 1] - ys[k]) / h + ((1.0 - 3.0 * a * a) * m[k] + (3.0 * b * b - 1.0) * m[k + 1]) * h / 6.0
        elif order == 2:
            out = a * m[k] + b * m[k + 1]
        else:
            raise ValueError("order must be 1 or 2")
        return float(out) if out.ndim == 0 else out

    def coefficients(self):
        """Per-interval power-basis coefficients.

        Row ``i`` holds ``(c0, c1, c2, c3)`` with
        ``S(x) = c0 + c1*t + c2*t**2 + c3*t**3`` and ``t = x - xs[i]``.
        """
        h = np.diff(self.xs)
        m0, m1 = self.m[:-1], self.m[1:]
        c0 = self.ys[:-1]
        c1 = np.diff(self.ys) / h - h * (2.0 * m0 + m1) / 6.0
        c2 = m0 / 2.0
        c3 = (m1 - m0) / (6.0 * h)
        return np.column_stack([c0, c1, c2, c3])


def _natural_second_derivatives(xs, ys):
    # Thomas algorithm on the interior equations
    # h[i-1] m[i-1] + 2 (h[i-1] + h[i]) m[i] + h[i] m[i+1] = 6 (s[i] - s[i-1]), m[0] = m[n-1] = 0.
    n = xs.size
    h = np.diff(xs)
    s = np.diff(ys) / h
    m = np.zeros(n)
    k = n - 2
    diag = 2.0 * (h[:-1] + h[1:])
    rhs = 6.0 * (s[1:] - s[:-1])
    sub = h[:-1]
    sup = h[1:]
    cp = np.empty(k)
    dp = np.empty(k)
    cp[0] = sup[0] / diag[0]
    dp[0] = rhs[0] / diag[0]
    for i in range(1, k):
        denom = diag[i] - sub[i] * cp[i - 1]
        cp[i] = sup[i] / denom
        dp[i] = (rhs[i] - sub[i] * dp[i - 1]) / denom
    m[k] = dp[k - 1]
    for i in range(k - 2, -1, -1):
        m[i + 1] = dp[i] - cp[i] * m[i + 2]
    return m


def build_spline(xs, ys):
    """Build a natural :class:`CubicSpline` through ``(xs, ys)``."""
    return CubicSpline(xs, ys)


@dataclass(frozen=True)
class ParamCurves:
    """Splines of ``f``, ``ksv1`` and ``ksv2`` over angular frequency (rad/s)."""

    f_curve: CubicSpline
    ksv1_curve: CubicSpline
    ksv2_curve: CubicSpline

    def __post_init__(self):
        knots = self.f_curve.xs
        if not (np.array_equal(knots, self.ksv1_curve.xs) and np.array_equal(knots, self.ksv2_curve.xs)):
            raise ConstructionError("parameter curves must share their knot abscissae")

    @classmethod
    def from_knots(cls, omegas, f, ksv1, ksv2):
        return cls(CubicSpline(omegas, f), CubicSpline(omegas, ksv1), CubicSpline(omegas, ksv2))

    @property
    def knots(self):
        return self.f_curve.xs

    @property
    def domain(self):
        return self.f_curve.domain

    def sample_arrays(self, omega):
        """Clamped ``(f, ksv1, ksv2)`` at each angular frequency in ``omega``."""
        f = np.clip(self.f_curve(omega), 0.0, 1.0)
        k1 = np.maximum(self.ksv1_curve(omega), 0.0)
        k2 = np.maximum(self.ksv2_curve(omega), 0.0)
        return f, k1, k2


def sample_params(curves, omega):
    """Interpolated :class:`TwoSiteParams` at angular frequency ``omega``.

    ``f`` is clamped into [0, 1] and the constants to >= 0, since the cubic
    can overshoot between knots.
    """
    f, k1, k2 = curves.sample_arrays(float(omega))
    return TwoSiteParams(float(f), float(k1), float(k2))
