"""Reference calibration used by examples, tests and the acceptance suite.

The parameter values are smooth stand-ins with realistic magnitudes for a
Pt-porphyrin sensor spot: sixteen frequencies from 500 Hz to 16 kHz,
``f`` rising from 0.80 to 0.90, ``ksv1`` falling from 0.030 to 0.020 (% air)^-1
and ``ksv2`` about a tenth of ``ksv1``. They are not measured values.
"""

import json
from importlib import resources

import numpy as np

from .calibration import CalibrationTable
from .model import TwoSiteParams, angular_from_hz

FIXTURE_TEMPERATURE_C = 45.0
FIXTURE_TAU0_S = 60e-6


def fixture_frequencies_hz():
    return np.round(np.geomspace(500.0, 16000.0, 16))


def fixture_params(frequencies_hz):
    """Smooth reference ``(f, ksv1, ksv2)`` at each frequency (Hz)."""
    u = np.log(np.asarray(frequencies_hz, dtype=float) / 500.0) / np.log(32.0)
    f = 0.80 + 0.10 * np.sin(0.5 * np.pi * u)
    ksv1 = 0.030 - 0.010 * u**2
    ksv2 = ksv1 * (0.09 + 0.02 * u)
    return [TwoSiteParams(*t) for t in zip(f, ksv1, ksv2)]


def fixture_calibration():
    """The reference :class:`CalibrationTable` at 45 degC."""
    freqs = fixture_frequencies_hz()
    return CalibrationTable(FIXTURE_TEMPERATURE_C, freqs, fixture_params(freqs), [True] * freqs.size)


def packaged_fixture_calibration():
    """The same table, read from the JSON shipped with the package."""
    text = resources.files("quenchnet").joinpath("data/fixture_calibration.json").read_text(encoding="utf-8")
    return CalibrationTable.from_dict(json.loads(text))


def raw_phase_rows(table, concentrations, frequencies_hz=None, tau0_s=FIXTURE_TAU0_S):
    """Raw ``(frequency_hz, temperature_c, o2_percent_air, tan_theta)`` rows.

    ``tan(theta0) = omega*tau0`` is the unquenched reference and
    ``tan(theta) = tan(theta0)*r`` follows the two-site model.
    """
    freqs = table.frequencies_hz if frequencies_hz is None else np.asarray(frequencies_hz, dtype=float)
    rows = []
    for hz in freqs:
        p = table.params_at_hz(hz)
        tan0 = angular_from_hz(hz) * tau0_s
        for c in concentrations:
            c = float(c)
            a = p.ksv1 * c
            b = p.ksv2 * c
            r = 1.0 - p.f * (a / (1.0 + a)) - (1.0 - p.f) * (b / (1.0 + b))
            rows.append((float(hz), table.temperature_c, c, tan0 * r))
    return rows
