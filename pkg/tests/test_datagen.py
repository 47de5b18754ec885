import warnings

import numpy as np
import pytest
from scipy.stats import chi2

from manlyem import (
    ComponentParams,
    MixtureModel,
    SimScheme,
    manly_forward,
    paper_scheme_model,
    simulate,
    simulate_with_diagnostics,
)
from manlyem.datagen import DataFormatError, read_dataset_csv, write_dataset_csv
from manlyem.exceptions import InfeasibleSchemeError


def gaussian_scheme(n, seed=0):
    return SimScheme(
        MixtureModel((
            ComponentParams(0.5, [0.0, 0.0], np.eye(2), [0.0, 0.0]),
            ComponentParams(0.5, [3.0, 3.0], np.eye(2), [0.0, 0.0]),
        )),
        n,
        seed,
    )


class TestSimulate:
    def test_identity_transform_accepts_everything(self):
        data, y, proposals = simulate_with_diagnostics(gaussian_scheme(5000))
        assert proposals == 5000
        np.testing.assert_array_equal(data.x, y)

    def test_standard_normal_mean(self):
        n = 10_000
        scheme = SimScheme(MixtureModel((ComponentParams(1.0, [0.0, 0.0], np.eye(2), [0.0, 0.0]),)), n, seed=3)
        data = simulate(scheme)
        assert np.all(np.abs(data.x.mean(axis=0)) < 4 / np.sqrt(n))

    def test_paper_block(self):
        n = 1000
        data = simulate(SimScheme(paper_scheme_model(), n, seed=7))
        assert data.x.shape == (n, 2)
        assert np.all(np.isfinite(data.x))
        pis = paper_scheme_model().pis
        counts = np.bincount(data.labels, minlength=3)
        sd = np.sqrt(n * pis * (1 - pis))
        assert np.all(np.abs(counts - n * pis) <= 4 * sd)

    def test_deterministic(self):
        a = simulate(SimScheme(paper_scheme_model(), 500, seed=12))
        b = simulate(SimScheme(paper_scheme_model(), 500, seed=12))
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_seeds_differ(self):
        a = simulate(SimScheme(paper_scheme_model(), 50, seed=1))
        b = simulate(SimScheme(paper_scheme_model(), 50, seed=2))
        assert not np.array_equal(a.x, b.x)

    def test_latent_roundtrip(self):
        model = paper_scheme_model()
        data, y = simulate(SimScheme(model, 2000, seed=5), return_latent=True)
        lams = np.array(model.lambdas)[data.labels]
        back = manly_forward(data.x, lams)
        assert np.max(np.abs(back - y) / np.maximum(1.0, np.abs(y))) < 1e-10

    def test_label_frequencies(self):
        n = 100_000
        model = paper_scheme_model()
        data = simulate(SimScheme(model, n, seed=21))
        counts = np.bincount(data.labels, minlength=3)
        stat = np.sum((counts - n * model.pis) ** 2 / (n * model.pis))
        if stat > chi2.ppf(0.999, df=2):
            warnings.warn(f"label chi-square {stat:.2f} above the 99.9% critical value")

    def test_infeasible_scheme(self):
        model = MixtureModel((ComponentParams(1.0, [-10.0], [[1.0]], [1.0]),))
        with pytest.raises(InfeasibleSchemeError):
            simulate(SimScheme(model, 10, seed=0))

    @pytest.mark.parametrize("kwargs", [dict(n=0), dict(n=5, seed=-1)])
    def test_scheme_validation(self, kwargs):
        with pytest.raises(ValueError):
            SimScheme(paper_scheme_model(), **kwargs)


class TestCsv:
    def test_roundtrip(self, tmp_path):
        data = simulate(SimScheme(paper_scheme_model(), 40, seed=1))
        path = tmp_path / "d.csv"
        write_dataset_csv(path, data)
        back = read_dataset_csv(path)
        np.testing.assert_array_equal(back.x, data.x)
        np.testing.assert_array_equal(back.labels, data.labels)
        assert path.read_text().splitlines()[0] == "x1,x2,label"

    def test_without_labels(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,b\n1,2\n3,4\n")
        data = read_dataset_csv(path)
        assert data.labels is None
        np.testing.assert_array_equal(data.x, [[1, 2], [3, 4]])

    @pytest.mark.parametrize("text, fragment", [
        ("x1,x2\n1,2\n3\n", "row 3"),
        ("x1,x2\n1,abc\n", "column 'x2'"),
        ("x1,x2\n1,nan\n", "non-finite"),
        ("x1,label\n1,a\n", "label"),
        ("", "empty"),
        ("x1,x2\n", "no data"),
    ])
    def test_malformed(self, tmp_path, text, fragment):
        path = tmp_path / "bad.csv"
        path.write_text(text)
        with pytest.raises(DataFormatError, match=fragment):
            read_dataset_csv(path)
