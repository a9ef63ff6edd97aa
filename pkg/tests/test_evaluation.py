import numpy as np
import pytest

from helpers import tau_oracle
from livmap.errors import UndefinedResultError, ValidationError
from livmap.evaluation import (MetricsReport, evaluate_split, kendall_tau,
                               load_predictions, render_score_map, rmse,
                               save_metrics, save_predictions, save_score_map)
from livmap.features import PatchBundle, SplitDatasets
from livmap.grid import CellId, GridBounds
from livmap.model import init_params


class TestRmse:
    def test_zero_when_equal(self):
        assert rmse(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0

    def test_fixed_example(self):
        assert rmse(np.array([3.0, 4.0]), np.array([0.0, 0.0])) == pytest.approx(
            np.sqrt(12.5), rel=1e-15)

    def test_symmetry_and_positivity(self):
        rng = np.random.Generator(np.random.PCG64(0))
        for _ in range(20):
            x = rng.normal(size=9)
            y = rng.normal(size=9)
            assert rmse(x, y) == rmse(y, x)
            assert rmse(x, y) > 0.0
        x = rng.normal(size=9)
        assert rmse(x, x.copy()) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            rmse(np.zeros(2), np.zeros(3))


class TestKendallTau:
    def test_identical_ranking_is_one(self):
        x = np.array([0.2, 1.5, 3.0, 7.5])
        assert kendall_tau(x, x * 2.0, variant="tau_a") == 1.0
        assert kendall_tau(x, x * 2.0, variant="tau_b") == 1.0

    def test_reversed_ranking_is_minus_one(self):
        x = np.array([0.2, 1.5, 3.0, 7.5])
        assert kendall_tau(x, -x, variant="tau_a") == -1.0
        assert kendall_tau(x, -x, variant="tau_b") == -1.0

    def test_one_discordant_pair_of_three(self):
        # pairs of ((1,2),(1,3),(2,3)): concordant, concordant, discordant
        # -> (2 - 1) / 3
        x = np.array([1.0, 2.0, 3.0])
        y = np.array([1.0, 3.0, 2.0])
        assert kendall_tau(x, y, variant="tau_a") == pytest.approx(1 / 3, rel=1e-15)
        assert kendall_tau(x, y, variant="tau_a") == tau_oracle(list(x), list(y), "tau_a")

    def test_matches_oracle_with_ties(self):
        rng = np.random.Generator(np.random.PCG64(77))
        for _ in range(20):
            n = int(rng.integers(2, 40))
            x = rng.integers(0, 6, size=n).astype(float)
            y = rng.integers(0, 6, size=n).astype(float)
            if np.all(x == x[0]) or np.all(y == y[0]):
                continue
            for variant in ("tau_a", "tau_b"):
                assert kendall_tau(x, y, variant) == tau_oracle(list(x), list(y), variant)

    def test_tau_a_equals_tau_b_without_ties(self):
        rng = np.random.Generator(np.random.PCG64(78))
        for _ in range(20):
            n = int(rng.integers(2, 60))
            x = rng.normal(size=n)
            y = rng.normal(size=n)
            assert kendall_tau(x, y, "tau_a") == kendall_tau(x, y, "tau_b")

    def test_antisymmetric_under_reversal(self):
        rng = np.random.Generator(np.random.PCG64(79))
        for _ in range(10):
            x = rng.normal(size=15)
            y = rng.normal(size=15)
            assert kendall_tau(x, -y) == pytest.approx(-kendall_tau(x, y), rel=1e-12)

    def test_invariant_under_monotone_transform(self):
        rng = np.random.Generator(np.random.PCG64(80))
        x = rng.normal(size=25)
        y = rng.normal(size=25)
        base = kendall_tau(x, y)
        assert kendall_tau(np.exp(x), y) == base
        assert kendall_tau(x, y ** 3) == base

    def test_all_tied_tau_b_is_undefined(self):
        with pytest.raises(UndefinedResultError):
            kendall_tau(np.ones(5), np.array([1.0, 2.0, 3.0, 4.0, 5.0]), "tau_b")

    def test_too_short_rejected(self):
        with pytest.raises(ValidationError, match="n >= 2"):
            kendall_tau(np.array([1.0]), np.array([1.0]))


def oracle_world(dim=3, n=12):
    """Dataset whose targets equal the first merged coordinate, plus params
    — a shifted pass-through head — that predict them exactly."""
    params = init_params(dim, seed=0)
    params.bn_running_mean[:] = 0.0
    params.bn_running_var[:] = 1.0 - 1e-5   # sqrt(var + eps) == 1 exactly
    params.W1[:] = 0.0
    params.W1[0, 0] = 1.0
    params.b1[:] = 0.0
    params.b1[0] = 1000.0
    params.W2[:] = 0.0
    params.W2[0, 0] = 1.0
    params.b2[:] = -1000.0
    rng = np.random.Generator(np.random.PCG64(42))
    bundles = []
    for i in range(n):
        aerial = rng.normal(size=dim)
        ground = rng.normal(size=dim)
        merged0 = (aerial + ground)[0]
        bundles.append(PatchBundle(CellId(i, 0), aerial, ground, 1, float(merged0)))
    ds = SplitDatasets(by_split={"test": bundles}, excluded={}, dim=dim)
    return params, ds


class TestEvaluateSplit:
    def test_perfect_oracle_scores_perfectly(self):
        params, ds = oracle_world()
        report = evaluate_split(params, ds, "test")
        assert report.rmse == pytest.approx(0.0, abs=1e-12)
        assert report.tau == 1.0
        assert report.n == 12
        assert report.variant == "tau_b"

    def test_empty_split_rejected(self):
        params, ds = oracle_world()
        with pytest.raises(ValidationError, match="empty"):
            evaluate_split(params, ds, "train")


class TestRenderScoreMap:
    def bounds(self):
        return GridBounds(0, 0, 2, 2)

    def test_extremes_and_ramp(self):
        values = {CellId(0, 0): -1.0, CellId(2, 2): 3.0, CellId(1, 1): 1.0}
        raster, rows = render_score_map(values, self.bounds(), block_px=2)
        assert raster.shape == (6, 6, 3)
        # row 0 is the top (max cy): (2,2) renders at top-right
        assert tuple(raster[0, 4]) == (0, 0, 255)     # max -> blue
        assert tuple(raster[4, 0]) == (255, 0, 0)     # min -> red
        assert tuple(raster[2, 2]) == (255, 255, 255)  # midpoint -> white
        assert rows == sorted(values.items())

    def test_absent_cells_render_gray_and_skip_csv(self):
        values = {CellId(0, 0): 1.0, CellId(2, 2): 2.0}
        raster, rows = render_score_map(values, self.bounds(), block_px=1)
        assert tuple(raster[1, 1]) == (128, 128, 128)
        assert len(rows) == 2

    def test_uniform_values_render_midpoint(self):
        values = {CellId(x, y): 5.0 for x in range(3) for y in range(3)}
        raster, _ = render_score_map(values, self.bounds(), block_px=1)
        assert np.all(raster == 255) or np.all(
            raster.reshape(-1, 3) == np.array([255, 255, 255]))

    def test_fixed_range_overrides_extremes(self):
        values = {CellId(0, 0): 0.5}
        raster, _ = render_score_map(values, GridBounds(0, 0, 0, 0), block_px=1,
                                     vmin=0.0, vmax=2.0)
        # t = 0.25: halfway between red and white
        assert tuple(raster[0, 0]) == (255, 128, 128)

    def test_values_outside_bounds_ignored(self):
        values = {CellId(0, 0): 1.0, CellId(9, 9): 99.0}
        _, rows = render_score_map(values, self.bounds(), block_px=1)
        assert [c for c, _ in rows] == [CellId(0, 0)]

    def test_png_and_csv_outputs(self, tmp_path):
        from PIL import Image
        values = {CellId(x, y): float(x - y) for x in range(3) for y in range(3)}
        png = tmp_path / "map.png"
        csv_path = tmp_path / "map.csv"
        save_score_map(values, self.bounds(), png, csv_path, block_px=4)
        img = np.asarray(Image.open(png))
        raster, _ = render_score_map(values, self.bounds(), block_px=4)
        np.testing.assert_array_equal(img, raster)
        lines = csv_path.read_text().strip().splitlines()
        assert lines[0] == "cell_x,cell_y,value"
        assert len(lines) == 10
        save_score_map(values, self.bounds(), tmp_path / "map2.png",
                       tmp_path / "map2.csv", block_px=4)
        assert png.read_bytes() == (tmp_path / "map2.png").read_bytes()


class TestReportIo:
    def test_predictions_round_trip(self, tmp_path):
        rows = [(CellId(1, 2), "test", 0.5, 0.4), (CellId(0, 0), "train", -1.0, -0.9)]
        p = tmp_path / "predictions.csv"
        save_predictions(rows, p)
        assert load_predictions(p) == sorted(rows, key=lambda r: r[0])

    def test_metrics_json_structure(self, tmp_path):
        import json
        reports = {"test": MetricsReport(rmse=0.5, tau=0.9, variant="tau_b", n=10)}
        p = tmp_path / "metrics.json"
        save_metrics(reports, p, extra={"seed": 3})
        doc = json.loads(p.read_text())
        assert doc["seed"] == 3
        assert doc["splits"]["test"]["rmse"] == 0.5
        assert doc["splits"]["test"]["n"] == 10
