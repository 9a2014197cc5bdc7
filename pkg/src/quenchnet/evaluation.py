"""Error metrics, concentration profiles and the architecture sweep."""

import csv
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng
from .errors import DomainError, TrainingAborted
from .network import NetworkSpec, TrainConfig, train

logger = logging.getLogger(__name__)

SWEEP_HEADER = ["layers", "neurons", "seed", "mae_train", "mae_dev", "mae_test", "epochs", "duration_s", "status"]
PROFILE_HEADER = ["bin_lo", "bin_hi", "count", "mean_ae", "median_ae", "max_ae"]
AE_HEADER = ["o2_measured", "o2_predicted", "ae"]

DEFAULT_LAYERS = (1, 2, 3)
DEFAULT_NEURONS = (3, 5, 10, 20, 30, 50)
CI_EPOCHS = 20_000
FULL_EPOCHS = 100_000
DEFAULT_BINS = (0.0, 20.0, 40.0, 60.0, 80.0, 100.0, 110.0)


@dataclass
class AETable:
    measured: np.ndarray
    predicted: np.ndarray
    ae: np.ndarray

    def __len__(self):
        return self.ae.size

    def rows(self):
        return zip(self.measured.tolist(), self.predicted.tolist(), self.ae.tolist())


def ae_per_observation(model, data):
    """Absolute error ``|pred - measured|`` of every observation, in stored order."""
    if len(data.o2) == 0:
        raise DomainError("empty dataset")
    measured = np.asarray(data.o2, dtype=float)
    predicted = model.predict(data.ratios)
    return AETable(measured, predicted, np.abs(predicted - measured))


def mean_absolute_error(predicted, measured):
    predicted = np.asarray(predicted, dtype=float)
    measured = np.asarray(measured, dtype=float)
    if predicted.size == 0:
        raise DomainError("empty dataset")
    return float(np.mean(np.abs(predicted - measured)))


def mae(model, data):
    """Mean absolute error of ``model`` over ``data`` (% air)."""
    return float(np.mean(ae_per_observation(model, data).ae))


@dataclass
class ProfileBin:
    lo: float
    hi: float
    count: int
    mean_ae: float = None
    median_ae: float = None
    max_ae: float = None


def concentration_profile(model, data, bins=DEFAULT_BINS):
    """AE summary per concentration bin.

    Bins are closed on the right, ``(lo, hi]``, except the first which also
    contains its lower edge. Empty bins are reported with ``count == 0`` and
    no statistics.
    """
    edges = np.asarray(bins, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise DomainError("bin edges must be strictly increasing, at least two")
    table = ae_per_observation(model, data)
    if table.measured.min() < edges[0] or table.measured.max() > edges[-1]:
        raise DomainError(f"labels span [{table.measured.min():g}, {table.measured.max():g}], "
                          f"beyond the bins [{edges[0]:g}, {edges[-1]:g}]")
    idx = np.clip(np.searchsorted(edges, table.measured, side="left") - 1, 0, edges.size - 2)
    out = []
    for k in range(edges.size - 1):
        ae = table.ae[idx == k]
        b = ProfileBin(float(edges[k]), float(edges[k + 1]), int(ae.size))
        if ae.size:
            b.mean_ae = float(np.mean(ae))
            b.median_ae = float(np.median(ae))
            b.max_ae = float(np.max(ae))
        out.append(b)
    return out


def ae_by_temperature(model, data):
    """``{temperature: AETable}`` for a dataset mixing several temperatures."""
    groups = {}
    for temp in np.unique(data.temperature_c):
        sel = data.temperature_c == temp
        measured = data.o2[sel]
        predicted = model.predict(data.ratios[sel])
        groups[float(temp)] = AETable(measured, predicted, np.abs(predicted - measured))
    return groups


# -- sweep --------------------------------------------------------------------

@dataclass(frozen=True)
class SweepGrid:
    layer_counts: tuple = DEFAULT_LAYERS
    neuron_counts: tuple = DEFAULT_NEURONS
    train_config: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=CI_EPOCHS))
    base_seed: int = 0

    def __post_init__(self):
        for name in ("layer_counts", "neuron_counts"):
            counts = tuple(int(x) for x in getattr(self, name))
            if not counts or min(counts) < 1:
                raise DomainError(f"{name} must be a non-empty sequence of positive counts")
            object.__setattr__(self, name, counts)

    def trials(self):
        return [(L, n) for L in sorted(set(self.layer_counts)) for n in sorted(set(self.neuron_counts))]

    def trial_seed(self, layers, neurons):
        return rng.derive_seed(self.base_seed, "trial", layers, neurons)


@dataclass
class TrialRow:
    layers: int
    neurons: int
    seed: int
    mae_train: float
    mae_dev: float
    mae_test: float
    epochs: int
    duration_s: float
    status: str = "ok"

    @property
    def ok(self):
        return self.status == "ok"


@dataclass
class EvalReport:
    rows: list
    models: dict = field(default_factory=dict, repr=False)

    def row(self, layers, neurons):
        for r in self.rows:
            if (r.layers, r.neurons) == (layers, neurons):
                return r
        raise KeyError((layers, neurons))

    def select(self, min_layers=1, min_neurons=1):
        return [r for r in self.rows if r.layers >= min_layers and r.neurons >= min_neurons]


def _run_trial(args):
    layers, neurons, seed, cfg, train_data, dev_data, test_data = args
    spec = NetworkSpec(train_data.n_features, layers, neurons)
    start = time.perf_counter()
    try:
        model, _ = train(spec, train_data, replace(cfg, seed=seed))
    except TrainingAborted as exc:
        nan = float("nan")
        return TrialRow(layers, neurons, seed, nan, nan, nan, cfg.epochs,
                        time.perf_counter() - start, f"aborted: {exc}"), None
    duration = time.perf_counter() - start
    mae_test = mae(model, test_data) if test_data is not None else float("nan")
    row = TrialRow(layers, neurons, seed, mae(model, train_data), mae(model, dev_data), mae_test,
                   cfg.epochs, duration)
    return row, model


def run_sweep(grid, train_data, dev_data, test_data=None, workers=1, keep_models=True):
    """Train one network per ``(layers, neurons)`` pair and tabulate its MAEs.

    Each trial is seeded with ``derive_seed(base_seed, "trial", L, n)``, so
    results do not depend on which other trials run or in what order. Rows
    come back sorted by ``(L, n)``; an aborted trial yields a flagged row
    instead of stopping the sweep.
    """
    datasets = [d for d in (train_data, dev_data, test_data) if d is not None]
    for d in datasets[1:]:
        if not np.array_equal(d.frequencies_hz, train_data.frequencies_hz):
            raise DomainError("datasets of a sweep must share one frequency grid")
    jobs = [(L, n, grid.trial_seed(L, n), grid.train_config, train_data, dev_data, test_data)
            for L, n in grid.trials()]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_trial, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_run_trial(job))
            row = results[-1][0]
            logger.info("trial L=%d n=%d  MAE dev %.4g  (%.1f s)", row.layers, row.neurons, row.mae_dev, row.duration_s)
    results.sort(key=lambda rm: (rm[0].layers, rm[0].neurons))
    models = {(r.layers, r.neurons): m for r, m in results if m is not None} if keep_models else {}
    return EvalReport([r for r, _ in results], models)


# -- reports ------------------------------------------------------------------

def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return "" if np.isnan(x) else f"{x:.17g}"
    return str(x)


def write_sweep_csv(report, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for r in report.rows:
            w.writerow([_fmt(v) for v in (r.layers, r.neurons, r.seed, r.mae_train, r.mae_dev, r.mae_test,
                                          r.epochs, r.duration_s, r.status)])


def sweep_summary(report):
    """Aligned plain-text table of a sweep report."""
    lines = [f"{'L':>2} {'n':>3} {'MAE train':>10} {'MAE dev':>10} {'MAE test':>10} {'time/s':>8}  status"]
    for r in report.rows:
        lines.append(f"{r.layers:>2} {r.neurons:>3} {r.mae_train:>10.4f} {r.mae_dev:>10.4f} "
                     f"{r.mae_test:>10.4f} {r.duration_s:>8.1f}  {r.status}")
    return "\n".join(lines) + "\n"


def write_profile_csv(profile, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PROFILE_HEADER)
        for b in profile:
            w.writerow([_fmt(v) for v in (b.lo, b.hi, b.count, b.mean_ae, b.median_ae, b.max_ae)])


def write_ae_csv(table, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AE_HEADER)
        for row in table.rows():
            w.writerow([_fmt(float(v)) for v in row])
