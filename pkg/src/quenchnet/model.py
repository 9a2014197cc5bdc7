"""Closed-form luminescence quenching relations.

Units used throughout the package:

* oxygen concentration in % air (100 % air = 20 % vol O2),
* Stern-Volmer constants in (% air)^-1,
* modulation frequency as angular frequency in rad/s; files and user-facing
  tables carry cyclic frequency in Hz and convert with :func:`angular_from_hz`.

The functions below accept scalars or numpy arrays for the concentration and
return the same shape.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

TWO_PI = 2.0 * np.pi


def angular_from_hz(hz):
    """Cyclic frequency (Hz) to angular frequency (rad/s)."""
    hz = np.asarray(hz, dtype=float)
    if np.any(~(hz > 0)):
        raise DomainError("modulation frequency must be positive")
    out = TWO_PI * hz
    return float(out) if out.ndim == 0 else out


def hz_from_angular(omega):
    """Angular frequency (rad/s) to cyclic frequency (Hz)."""
    omega = np.asarray(omega, dtype=float)
    if np.any(~(omega > 0)):
        raise DomainError("modulation frequency must be positive")
    out = omega / TWO_PI
    return float(out) if out.ndim == 0 else out


def _concentration(c):
    c = np.asarray(c, dtype=float)
    if np.any(~(c >= 0)):
        raise DomainError("oxygen concentration must be >= 0 % air")
    return c


def _scalar_or_array(x):
    return float(x) if np.ndim(x) == 0 else x


@dataclass(frozen=True)
class TwoSiteParams:
    """Parameters ``(f, ksv1, ksv2)`` of the two-site quenching model.

    ``f`` is the emission fraction of site 1; ``ksv1`` and ``ksv2`` are the
    Stern-Volmer constants of the two sites in (% air)^-1. By convention site 1
    is the more strongly quenched one (``ksv1 >= ksv2``); :meth:`ordered`
    restores the convention for parameters that violate it.
    """

    f: float
    ksv1: float
    ksv2: float

    def __post_init__(self):
        for name in ("f", "ksv1", "ksv2"):
            value = float(getattr(self, name))
            if not np.isfinite(value):
                raise DomainError(f"{name} must be finite, got {value!r}")
            object.__setattr__(self, name, value)
        if not 0.0 <= self.f <= 1.0:
            raise DomainError(f"f must lie in [0, 1], got {self.f!r}")
        if self.ksv1 < 0 or self.ksv2 < 0:
            raise DomainError("Stern-Volmer constants must be >= 0")

    def ordered(self):
        """Return the equivalent parameters with ``ksv1 >= ksv2``."""
        if self.ksv1 >= self.ksv2:
            return self
        return TwoSiteParams(1.0 - self.f, self.ksv2, self.ksv1)

    def as_tuple(self):
        return (self.f, self.ksv1, self.ksv2)


def sv_ratio(ksv, c):
    """Single-site Stern-Volmer ratio ``I0/I = tau0/tau = 1 + ksv*c``."""
    if not ksv >= 0:
        raise DomainError("ksv must be >= 0")
    c = _concentration(c)
    return _scalar_or_array(1.0 + ksv * c)


def phase_ratio_r(p, c):
    """Phase ratio ``r = tan(theta)/tan(theta0)`` of the two-site model.

    ``r = f/(1 + ksv1*c) + (1 - f)/(1 + ksv2*c)``, evaluated as
    ``1 - f*a/(1 + a) - (1 - f)*b/(1 + b)`` with ``a = ksv1*c``, ``b = ksv2*c``
    so that ``r(0) == 1`` holds exactly for every ``f``.
    """
    c = _concentration(c)
    a = p.ksv1 * c
    b = p.ksv2 * c
    r = 1.0 - p.f * (a / (1.0 + a)) - (1.0 - p.f) * (b / (1.0 + b))
    return _scalar_or_array(r)


def two_site_intensity_ratio(p, c):
    """Two-site ratio ``I0/I``, the reciprocal of :func:`phase_ratio_r`."""
    return _scalar_or_array(1.0 / np.asarray(phase_ratio_r(p, c)))


def phase_from_lifetime(omega, tau):
    """Phase shift ``theta = arctan(omega*tau)`` in radians.

    ``omega`` in rad/s, ``tau`` in seconds; both must be positive.
    """
    omega = np.asarray(omega, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if np.any(~(omega > 0)) or np.any(~(tau > 0)):
        raise DomainError("omega and tau must be positive")
    return _scalar_or_array(np.arctan(omega * tau))


def phase_ratio_jacobian(p, c):
    """Partial derivatives of :func:`phase_ratio_r` w.r.t. ``(f, ksv1, ksv2)``.

    Returns an array of shape ``(len(c), 3)``.
    """
    c = np.atleast_1d(_concentration(c))
    d1 = 1.0 + p.ksv1 * c
    d2 = 1.0 + p.ksv2 * c
    jac = np.empty((c.size, 3))
    jac[:, 0] = 1.0 / d1 - 1.0 / d2
    jac[:, 1] = -p.f * c / d1**2
    jac[:, 2] = -(1.0 - p.f) * c / d2**2
    return jac
