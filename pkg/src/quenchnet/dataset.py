"""Labeled phase-ratio observations: synthesis, splitting and file I/O.

An observation is the vector of phase ratios ``r_i`` measured (or
synthesized) at every frequency of a grid, labeled with its oxygen
concentration. Datasets are stored as CSV plus a ``.meta.json`` sidecar
that records the frequency grid and how the data came to be.
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from . import rng
from .errors import DomainError, ParseError
from .model import angular_from_hz

DATASET_VERSION = 1
PROVENANCES = ("synthetic", "experimental", "mismatch")

DEFAULT_M = 5000
DEFAULT_C_RANGE = (0.0, 110.0)
DEFAULT_TRAIN_FRACTION = 0.8
# ten concentrations between 0 and 100 % air, mirroring the measured test set
DEFAULT_TEST_CONCENTRATIONS = tuple(np.linspace(0.0, 100.0, 10))
DEFAULT_NOISE_SIGMA = 5e-4
DEFAULT_TARGET_SHIFT = 2.0

_TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class Observation:
    o2: float
    temperature_c: float
    ratios: np.ndarray


@dataclass(eq=False)
class Dataset:
    """A set of observations on a common frequency grid.

    Attributes
    ----------
    frequencies_hz : ndarray, shape (N,)
        Strictly increasing modulation frequencies of the ratio columns.
    o2 : ndarray, shape (m,)
        Labels in % air.
    temperature_c : ndarray, shape (m,)
        Temperature label of each observation.
    ratios : ndarray, shape (m, N)
        Phase ratios, each in (0, 1].
    provenance : str
        One of ``synthetic``, ``experimental``, ``mismatch``.
    seed : int or None
        Generator seed for synthesized data.
    generator : dict
        Free-form record of the generation parameters.
    """

    frequencies_hz: np.ndarray
    o2: np.ndarray
    temperature_c: np.ndarray
    ratios: np.ndarray
    provenance: str = "synthetic"
    seed: int = None
    generator: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frequencies_hz = np.asarray(self.frequencies_hz, dtype=float)
        self.o2 = np.asarray(self.o2, dtype=float)
        self.ratios = np.asarray(self.ratios, dtype=float)
        self.temperature_c = np.broadcast_to(np.asarray(self.temperature_c, dtype=float), self.o2.shape).copy()
        n = self.frequencies_hz.size
        if self.frequencies_hz.ndim != 1 or n == 0 or np.any(np.diff(self.frequencies_hz) <= 0):
            raise DomainError("frequency grid must be non-empty and strictly increasing")
        if self.o2.ndim != 1 or self.ratios.shape != (self.o2.size, n):
            raise DomainError(f"ratios must have shape ({self.o2.size}, {n}), got {self.ratios.shape}")
        if np.any(~(self.o2 >= 0)) or not np.all(np.isfinite(self.o2)):
            raise DomainError("labels must be finite and >= 0")
        if np.any(~((self.ratios > 0) & (self.ratios <= 1))):
            raise DomainError("ratios must lie in (0, 1]")
        if self.provenance not in PROVENANCES:
            raise DomainError(f"unknown provenance {self.provenance!r}")

    def __len__(self):
        return self.o2.size

    def __getitem__(self, j):
        return Observation(float(self.o2[j]), float(self.temperature_c[j]), self.ratios[j])

    def __iter__(self):
        return (self[j] for j in range(len(self)))

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            np.array_equal(self.frequencies_hz, other.frequencies_hz)
            and np.array_equal(self.o2, other.o2)
            and np.array_equal(self.temperature_c, other.temperature_c)
            and np.array_equal(self.ratios, other.ratios)
            and self.provenance == other.provenance
            and self.seed == other.seed
            and self.generator == other.generator
        )

    @property
    def n_features(self):
        return self.frequencies_hz.size

    @property
    def temperature(self):
        """The single temperature of the dataset (error if mixed)."""
        temps = np.unique(self.temperature_c)
        if temps.size != 1:
            raise DomainError(f"dataset mixes temperatures {temps.tolist()}")
        return float(temps[0])

    def subset(self, index, **generator_extra):
        index = np.asarray(index, dtype=int)
        return Dataset(
            self.frequencies_hz,
            self.o2[index],
            self.temperature_c[index],
            self.ratios[index],
            provenance=self.provenance,
            seed=self.seed,
            generator={**self.generator, **generator_extra},
        )


@dataclass(frozen=True)
class MismatchSpec:
    """Perturbation applied by :func:`generate_mismatch_test`.

    ``ratio_noise_sigma`` is the std of additive Gaussian noise on every
    ratio; ``curvature_bias`` scales the multiplicative distortion
    ``1 + curvature_bias*(c/100)**2``.
    """

    ratio_noise_sigma: float = 0.0
    curvature_bias: float = 0.0

    def __post_init__(self):
        if not self.ratio_noise_sigma >= 0:
            raise DomainError("ratio_noise_sigma must be >= 0")
        if not np.isfinite(self.curvature_bias):
            raise DomainError("curvature_bias must be finite")

    @classmethod
    def calibrated(cls, table, grid_hz=None, target_shift=DEFAULT_TARGET_SHIFT,
                   ratio_noise_sigma=DEFAULT_NOISE_SIGMA, c_ref=100.0):
        """Spec whose bias shifts the apparent concentration at ``c_ref`` by ``target_shift``."""
        bias = calibrate_curvature_bias(table, grid_hz, target_shift=target_shift, c_ref=c_ref)
        return cls(ratio_noise_sigma=ratio_noise_sigma, curvature_bias=bias)


def _grid(table, grid_hz):
    grid = table.frequencies_hz if grid_hz is None else np.asarray(grid_hz, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or np.any(np.diff(grid) <= 0):
        raise DomainError("frequency grid must be non-empty and strictly increasing")
    lo, hi = table.domain_hz
    omega = angular_from_hz(grid)
    wlo, whi = table.curves.domain
    if np.any(omega < wlo) or np.any(omega > whi):
        raise DomainError(f"frequency grid leaves the calibrated range [{lo:g}, {hi:g}] Hz")
    return grid, omega


def model_ratios(table, grid_hz, concentrations):
    """Noise-free ratios, shape ``(len(concentrations), len(grid))``."""
    grid, omega = _grid(table, grid_hz)
    c = np.asarray(concentrations, dtype=float)
    if np.any(~(c >= 0)):
        raise DomainError("concentrations must be >= 0")
    f, k1, k2 = table.curves.sample_arrays(omega)
    a = c[:, None] * k1[None, :]
    b = c[:, None] * k2[None, :]
    # same arrangement as model.phase_ratio_r, exact 1 at c = 0
    return 1.0 - f * (a / (1.0 + a)) - (1.0 - f) * (b / (1.0 + b))


def generate_synthetic(table, grid_hz=None, m=DEFAULT_M, c_range=DEFAULT_C_RANGE, *, seed):
    """Draw ``m`` labels uniformly on ``c_range`` and synthesize their ratios."""
    if m < 1:
        raise DomainError("m must be >= 1")
    c_lo, c_hi = map(float, c_range)
    if not 0 <= c_lo < c_hi:
        raise DomainError("concentration range must satisfy 0 <= lo < hi")
    grid, _ = _grid(table, grid_hz)
    o2 = rng.stream(seed, "generate").uniform(c_lo, c_hi, size=int(m))
    return Dataset(
        grid,
        o2,
        table.temperature_c,
        model_ratios(table, grid, o2),
        provenance="synthetic",
        seed=int(seed),
        generator={"kind": "synthetic", "m": int(m), "c_range": [c_lo, c_hi]},
    )


def generate_mismatch_test(table, grid_hz=None, concentrations=DEFAULT_TEST_CONCENTRATIONS,
                           spec=MismatchSpec(), *, seed):
    """Test data that deviate from the calibration model.

    ``r = clamp(r_model*(1 + bias*(c/100)**2) + N(0, sigma), (0, 1])``.
    """
    grid, _ = _grid(table, grid_hz)
    c = np.asarray(concentrations, dtype=float)
    if c.ndim != 1 or c.size == 0:
        raise DomainError("need at least one test concentration")
    r = model_ratios(table, grid, c) * (1.0 + spec.curvature_bias * (c[:, None] / 100.0) ** 2)
    if spec.ratio_noise_sigma > 0:
        r = r + rng.stream(seed, "mismatch").normal(0.0, spec.ratio_noise_sigma, size=r.shape)
    r = np.clip(r, _TINY, 1.0)
    return Dataset(
        grid,
        c,
        table.temperature_c,
        r,
        provenance="mismatch",
        seed=int(seed),
        generator={
            "kind": "mismatch",
            "ratio_noise_sigma": float(spec.ratio_noise_sigma),
            "curvature_bias": float(spec.curvature_bias),
        },
    )


def _model_slopes(table, grid_hz, c):
    # d r / d c at every grid frequency
    _, omega = _grid(table, grid_hz)
    f, k1, k2 = table.curves.sample_arrays(omega)
    return -f * k1 / (1.0 + k1 * c) ** 2 - (1.0 - f) * k2 / (1.0 + k2 * c) ** 2


def apparent_concentration(table, grid_hz, ratios, bracket=(0.0, 200.0)):
    """Concentration whose model ratio vector is closest (least squares) to ``ratios``."""
    grid, _ = _grid(table, grid_hz)
    ratios = np.asarray(ratios, dtype=float)

    def dcost(c):
        return float((model_ratios(table, grid, [c])[0] - ratios) @ _model_slopes(table, grid, c))

    return brentq(dcost, *bracket, xtol=1e-12)


def calibrate_curvature_bias(table, grid_hz=None, target_shift=DEFAULT_TARGET_SHIFT, c_ref=100.0):
    """Bias making the distorted ratios at ``c_ref`` look like ``c_ref - target_shift``.

    The concentration equivalent of a distorted ratio vector is its
    least-squares inverse under the calibration model.
    """
    if not 0 < target_shift < c_ref:
        raise DomainError("target_shift must lie in (0, c_ref)")
    grid, _ = _grid(table, grid_hz)
    r_ref = model_ratios(table, grid, [c_ref])[0]
    scale = (c_ref / 100.0) ** 2

    def shift(bias):
        return c_ref - apparent_concentration(table, grid, r_ref * (1.0 + bias * scale)) - target_shift

    upper = (1.0 / r_ref.max() - 1.0) / scale
    return float(brentq(shift, 0.0, upper, xtol=1e-14))


def split(ds, train_fraction=DEFAULT_TRAIN_FRACTION, *, seed):
    """Random train/dev partition; the first ``floor(m*fraction)`` permuted indices train."""
    if not 0 < train_fraction < 1:
        raise DomainError("train_fraction must lie in (0, 1)")
    m = len(ds)
    if m == 0:
        raise DomainError("cannot split an empty dataset")
    n_train = int(np.floor(m * train_fraction))
    if n_train == 0 or n_train == m:
        raise DomainError(f"fraction {train_fraction} leaves one side of the split of {m} empty")
    perm = rng.stream(seed, "split").permutation(m)
    info = {"fraction": float(train_fraction), "seed": int(seed)}
    return (
        ds.subset(perm[:n_train], split={**info, "part": "train"}),
        ds.subset(perm[n_train:], split={**info, "part": "dev"}),
    )


# -- file I/O ---------------------------------------------------------------

def meta_path(path):
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def _header(n):
    return ["o2_percent_air", "temperature_c"] + [f"r_{i}" for i in range(1, n + 1)]


def _fmt(x):
    return f"{x:.17g}"


def write_dataset(ds, path):
    """Write ``ds`` to ``path`` (CSV) and its ``.meta.json`` sidecar."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_header(ds.n_features))
        for j in range(len(ds)):
            writer.writerow([_fmt(ds.o2[j]), _fmt(ds.temperature_c[j])] + [_fmt(x) for x in ds.ratios[j]])
    meta = {
        "version": DATASET_VERSION,
        "frequencies_hz": [float(x) for x in ds.frequencies_hz],
        "provenance": ds.provenance,
        "seed": ds.seed,
        "generator": ds.generator,
    }
    with open(meta_path(path), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")


def _read_meta(path):
    mpath = meta_path(path)
    try:
        with open(mpath, encoding="utf-8") as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", mpath, exc.lineno) from exc
    for key in ("version", "frequencies_hz", "provenance"):
        if key not in meta:
            raise ParseError(f"missing field {key!r}", mpath)
    if meta["version"] != DATASET_VERSION:
        raise ParseError(f"unsupported dataset version {meta['version']!r}", mpath)
    return meta


def read_dataset(path):
    """Read a dataset written by :func:`write_dataset`, validating every row."""
    path = Path(path)
    meta = _read_meta(path)
    freqs = np.asarray(meta["frequencies_hz"], dtype=float)
    n = freqs.size
    o2, temps, rows = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("empty file", path, 1)
        if header != _header(n):
            if header[:2] == _header(0) and all(h.startswith("r_") for h in header[2:]):
                raise ParseError(f"header has {len(header) - 2} ratio columns, grid has {n} frequencies", path, 1)
            raise ParseError("malformed header", path, 1)
        for record in reader:
            line = reader.line_num
            if not record:
                continue
            if len(record) != n + 2:
                raise ParseError(f"expected {n + 2} columns, found {len(record)}", path, line)
            try:
                values = [float(x) for x in record]
            except ValueError as exc:
                raise ParseError(f"not a number: {exc}", path, line) from exc
            c, t, r = values[0], values[1], values[2:]
            if not (np.isfinite(c) and c >= 0):
                raise ParseError(f"invalid concentration {record[0]!r}", path, line)
            if not np.isfinite(t):
                raise ParseError(f"invalid temperature {record[1]!r}", path, line)
            bad = [x for x in r if not 0 < x <= 1]
            if bad:
                raise ParseError(f"ratio {bad[0]!r} outside (0, 1]", path, line)
            o2.append(c)
            temps.append(t)
            rows.append(r)
    try:
        return Dataset(
            freqs,
            np.array(o2, dtype=float),
            np.array(temps, dtype=float),
            np.array(rows, dtype=float).reshape(len(rows), n),
            provenance=meta["provenance"],
            seed=meta.get("seed"),
            generator=meta.get("generator", {}),
        )
    except DomainError as exc:
        raise ParseError(str(exc), path) from exc
