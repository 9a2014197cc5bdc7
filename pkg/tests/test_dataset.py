import json

import numpy as np
import pytest
import scipy.stats
from hypothesis import given
from hypothesis import strategies as st

from quenchnet.dataset import (
    Dataset,
    MismatchSpec,
    apparent_concentration,
    calibrate_curvature_bias,
    generate_mismatch_test,
    generate_synthetic,
    meta_path,
    model_ratios,
    read_dataset,
    split,
    write_dataset,
)
from quenchnet.errors import DomainError, ParseError
from quenchnet.model import phase_ratio_r


@pytest.fixture(scope="module")
def big(table):
    return generate_synthetic(table, seed=2024)


class TestSynthetic:
    def test_default_size_and_determinism(self, table, big):
        assert len(big) == 5000
        assert big.n_features == 16
        again = generate_synthetic(table, seed=2024)
        assert again == big
        assert np.array_equal(again.ratios, big.ratios)

    def test_seed_matters(self, table, big):
        assert not np.array_equal(generate_synthetic(table, m=50, seed=2025).o2, big.o2[:50])

    def test_label_mean(self, big):
        assert abs(big.o2.mean() - 55.0) <= 3.0
        assert big.o2.min() >= 0 and big.o2.max() <= 110

    def test_labels_uniform(self, big):
        # KS statistic below the 1 % critical value, i.e. p-value above 0.01
        res = scipy.stats.kstest(big.o2, scipy.stats.uniform(loc=0, scale=110).cdf)
        assert res.pvalue > 0.01

    def test_ratios_follow_the_model(self, table, big):
        # oracle: per-frequency TwoSiteParams and the core model, one observation at a time
        for j in (0, 17, 4999):
            expected = [phase_ratio_r(table.params_at_hz(hz), big.o2[j]) for hz in big.frequencies_hz]
            np.testing.assert_allclose(big.ratios[j], expected, rtol=0, atol=1e-15)

    def test_reference_ratios_exactly_one(self, table):
        assert np.all(model_ratios(table, None, [0.0]) == 1.0)

    def test_monotone_features(self, big):
        order = np.argsort(big.o2)
        r = big.ratios[order]
        c = big.o2[order]
        distinct = np.diff(c) > 0
        assert np.all((r[:-1] > r[1:])[distinct])

    def test_custom_range_and_grid(self, table):
        grid = [1000.0, 2000.0, 4000.0]
        ds = generate_synthetic(table, grid, m=200, c_range=(20, 30), seed=1)
        assert ds.n_features == 3
        assert ds.o2.min() >= 20 and ds.o2.max() <= 30

    @pytest.mark.parametrize("grid", [[400.0, 1000.0], [1000.0, 17000.0], [2000.0, 1000.0]])
    def test_grid_outside_domain(self, table, grid):
        with pytest.raises(DomainError):
            generate_synthetic(table, grid, m=10, seed=1)

    @pytest.mark.parametrize("m,rng_", [(0, (0, 110)), (10, (50, 50)), (10, (-1, 10))])
    def test_invalid_arguments(self, table, m, rng_):
        with pytest.raises(DomainError):
            generate_synthetic(table, m=m, c_range=rng_, seed=1)


class TestSplit:
    def test_default_fraction(self, big):
        tr, dev = split(big, seed=3)
        assert (len(tr), len(dev)) == (4000, 1000)

    def test_two_observations(self, table):
        tr, dev = split(generate_synthetic(table, m=2, seed=1), 0.5, seed=0)
        assert (len(tr), len(dev)) == (1, 1)

    def test_deterministic(self, big):
        a = split(big, seed=9)
        b = split(big, seed=9)
        assert a[0] == b[0] and a[1] == b[1]

    @given(st.integers(2, 300), st.floats(0.05, 0.95), st.integers(0, 2**31))
    def test_disjoint_and_exhaustive(self, m, frac, seed):
        ds = Dataset([1000.0], np.arange(m, dtype=float), 45.0, np.full((m, 1), 0.5))
        n_train = int(np.floor(m * frac))
        if n_train in (0, m):
            with pytest.raises(DomainError):
                split(ds, frac, seed=seed)
            return
        tr, dev = split(ds, frac, seed=seed)
        assert len(tr) + len(dev) == m
        labels = np.concatenate([tr.o2, dev.o2])
        assert np.array_equal(np.sort(labels), np.arange(m))

    def test_empty(self):
        ds = Dataset([1000.0], np.empty(0), 45.0, np.empty((0, 1)))
        with pytest.raises(DomainError):
            split(ds, seed=1)

    @pytest.mark.parametrize("frac", [0.0, 1.0, -0.5])
    def test_fraction_bounds(self, big, frac):
        with pytest.raises(DomainError):
            split(big, frac, seed=1)


class TestMismatch:
    def test_zero_perturbation(self, table):
        c = np.linspace(0, 100, 10)
        ds = generate_mismatch_test(table, concentrations=c, spec=MismatchSpec(0.0, 0.0), seed=1)
        assert np.array_equal(ds.ratios, model_ratios(table, None, c))
        assert ds.provenance == "mismatch"

    def test_bias_vanishes_at_zero(self, table):
        ds = generate_mismatch_test(table, concentrations=[0.0, 50.0], spec=MismatchSpec(0.0, 0.05), seed=1)
        assert np.all(ds.ratios[0] == 1.0)

    def test_noise_std(self, table):
        c = np.linspace(10, 100, 100)
        ds = generate_mismatch_test(table, concentrations=c, spec=MismatchSpec(0.002, 0.0), seed=5)
        dev = ds.ratios - model_ratios(table, None, c)
        assert dev.size >= 1000
        assert 0.0015 <= dev.std(ddof=1) <= 0.0025

    def test_ratios_stay_in_range(self, table):
        ds = generate_mismatch_test(table, concentrations=[0.0, 1.0, 100.0], spec=MismatchSpec(0.5, 2.0), seed=5)
        assert np.all((ds.ratios > 0) & (ds.ratios <= 1))

    def test_calibrated_bias_shifts_apparent_concentration(self, table):
        bias = calibrate_curvature_bias(table)
        r100 = model_ratios(table, None, [100.0])[0] * (1 + bias)
        assert apparent_concentration(table, None, r100) == pytest.approx(98.0, abs=1e-8)
        # and the undistorted vector inverts to itself
        assert apparent_concentration(table, None, model_ratios(table, None, [100.0])[0]) == pytest.approx(100.0, abs=1e-8)
        assert MismatchSpec.calibrated(table).curvature_bias == bias

    def test_invalid_spec(self):
        with pytest.raises(DomainError):
            MismatchSpec(-1.0, 0.0)


class TestFiles:
    def test_round_trip(self, tmp_path, table):
        ds = generate_synthetic(table, m=64, seed=8)
        path = tmp_path / "d.csv"
        write_dataset(ds, path)
        assert read_dataset(path) == ds
        header = path.read_text().splitlines()[0]
        assert header == "o2_percent_air,temperature_c," + ",".join(f"r_{i}" for i in range(1, 17))
        meta = json.loads(meta_path(path).read_text())
        assert set(meta) == {"version", "frequencies_hz", "provenance", "seed", "generator"}

    def test_split_round_trip(self, tmp_path, small_data):
        path = tmp_path / "train.csv"
        write_dataset(small_data[0], path)
        assert read_dataset(path) == small_data[0]

    def _write(self, tmp_path, table, edit):
        ds = generate_synthetic(table, m=5, seed=8)
        path = tmp_path / "d.csv"
        write_dataset(ds, path)
        lines = path.read_text().splitlines()
        edit(lines)
        path.write_text("\n".join(lines) + "\n")
        return path

    def test_ratio_above_one(self, tmp_path, table):
        def edit(lines):
            cells = lines[3].split(",")
            cells[5] = "1.2"
            lines[3] = ",".join(cells)

        path = self._write(tmp_path, table, edit)
        with pytest.raises(ParseError, match=r"d\.csv:4:") as info:
            read_dataset(path)
        assert info.value.line == 4

    def test_fifteen_ratio_columns(self, tmp_path, table):
        def edit(lines):
            lines[0] = ",".join(lines[0].split(",")[:-1])
            for k in range(1, len(lines)):
                lines[k] = ",".join(lines[k].split(",")[:-1])

        with pytest.raises(ParseError, match="15 ratio columns"):
            read_dataset(self._write(tmp_path, table, edit))

    def test_short_row(self, tmp_path, table):
        def edit(lines):
            lines[2] = ",".join(lines[2].split(",")[:-1])

        with pytest.raises(ParseError) as info:
            read_dataset(self._write(tmp_path, table, edit))
        assert info.value.line == 3

    def test_malformed_header(self, tmp_path, table):
        def edit(lines):
            lines[0] = lines[0].replace("o2_percent_air", "oxygen")

        with pytest.raises(ParseError):
            read_dataset(self._write(tmp_path, table, edit))

    def test_not_a_number(self, tmp_path, table):
        def edit(lines):
            lines[1] = "abc" + lines[1][lines[1].index(","):]

        with pytest.raises(ParseError):
            read_dataset(self._write(tmp_path, table, edit))

    def test_missing_meta(self, tmp_path, table):
        path = self._write(tmp_path, table, lambda lines: None)
        meta_path(path).unlink()
        with pytest.raises(FileNotFoundError):
            read_dataset(path)


class TestDatasetType:
    def test_observation_access(self, small_data):
        tr, _ = small_data
        obs = tr[0]
        assert obs.o2 == tr.o2[0] and obs.ratios.shape == (16,)
        assert sum(1 for _ in tr) == len(tr)
        assert tr.temperature == 45.0

    @pytest.mark.parametrize("kwargs", [
        dict(frequencies_hz=[1.0, 1.0], o2=[1.0], ratios=[[0.5, 0.5]]),
        dict(frequencies_hz=[1.0], o2=[1.0], ratios=[[1.5]]),
        dict(frequencies_hz=[1.0], o2=[-1.0], ratios=[[0.5]]),
        dict(frequencies_hz=[1.0], o2=[1.0], ratios=[[0.5, 0.5]]),
        dict(frequencies_hz=[1.0], o2=[1.0], ratios=[[0.5]], provenance="measured"),
    ])
    def test_invalid(self, kwargs):
        kwargs.setdefault("temperature_c", 45.0)
        with pytest.raises(DomainError):
            Dataset(**kwargs)
