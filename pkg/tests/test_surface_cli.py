import json

import numpy as np
import pytest

from knnroc.cli import main
from knnroc.data import CutPair, Dataset, load_dataset, serialize
from knnroc.errors import ValidationError
from knnroc.estimate import EstimatorSpec
from knnroc.estimates import EstimatorTag
from knnroc.simulation import ScenarioIConfig, ScenarioIIConfig, generate_scenario_i, generate_scenario_ii
from knnroc.surface import GridSpec, parse_cut_file, quantile_cuts, roc_surface

COMPLETE = EstimatorSpec(EstimatorTag.COMPLETE)


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def scenario_csv(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text(serialize(generate_scenario_i(ScenarioIConfig(n=250, seed=12))))
    return path


class TestSurface:
    def test_quantile_grid_count(self):
        t = np.arange(1.0, 10.0)
        cuts, dup = quantile_cuts(t, 3)
        assert len(cuts) == 3 and dup == 0
        assert [(c.c1, c.c2) for c in cuts] == [(3.0, 5.0), (3.0, 7.0), (5.0, 7.0)]

    def test_duplicate_quantiles_dropped(self):
        cuts, dup = quantile_cuts(np.array([1.0] * 8 + [2.0]), 4)
        assert dup > 0 and len(cuts) <= 1

    def test_extreme_pair_saturates(self, rng):
        ds = Dataset(rng.normal(size=30), np.zeros((30, 1)), np.ones(30, dtype=int), np.tile([1, 2, 3], 10))
        grid = GridSpec(cuts=(CutPair(ds.t.min() - 1, ds.t.max() + 1),))
        assert roc_surface(ds, COMPLETE, grid).points[0].tcf.tolist() == [0, 1, 0]

    def test_random_guess_lies_near_plane(self, rng):
        n = 6000
        ds = Dataset(rng.normal(size=n), np.zeros((n, 1)), np.ones(n, dtype=int), rng.integers(1, 4, n))
        surf = roc_surface(ds, COMPLETE, GridSpec(quantiles=6))
        gap = np.mean([abs(p.tcf.sum() - 1) for p in surf.points])
        assert gap < 0.03

    def test_points_in_unit_cube(self):
        ds = generate_scenario_i(ScenarioIConfig(n=200, seed=4))
        surf = roc_surface(ds, EstimatorSpec(EstimatorTag.KNN, k=1), GridSpec(quantiles=5))
        assert len(surf.points) == 10
        for cut, p in zip(surf.cut_pairs, surf.points):
            assert cut.c1 < cut.c2
            assert np.all((p.tcf >= 0) & (p.tcf <= 1))

    def test_cut_file(self):
        assert parse_cut_file("c1,c2\n1,2\n\n3,4\n") == (CutPair(1, 2), CutPair(3, 4))
        with pytest.raises(ValidationError, match="row 2"):
            parse_cut_file("c1,c2\n2,1\n")
        with pytest.raises(ValidationError):
            parse_cut_file("a,b\n1,2\n")
        with pytest.raises(ValidationError):
            GridSpec.parse("grid:3")


class TestCli:
    def test_estimate_knn(self, capsys, scenario_csv):
        code, out, _ = run(capsys, "estimate", "--input", scenario_csv, "--cut", "2,4", "--estimator", "knn", "--k", 1)
        assert code == 0
        res = json.loads(out)
        tcf = np.array(res["tcf"])
        cov = np.array(res["covariance"])
        assert np.all((tcf >= 0) & (tcf <= 1))
        assert np.array_equal(cov, cov.T)
        assert res["variance"] == "asymptotic" and res["schema"] == 1

    def test_estimate_is_deterministic(self, capsys, scenario_csv):
        args = ("estimate", "--input", scenario_csv, "--cut", "2,4", "--estimator", "knn", "--k", 1,
                "--variance", "bootstrap", "--b", 20, "--seed", 3)
        first = run(capsys, *args)
        assert first == run(capsys, *args)

    def test_select_k_flag(self, capsys, scenario_csv):
        code, out, _ = run(capsys, "estimate", "--input", scenario_csv, "--cut", "2,4",
                           "--estimator", "knn", "--select-k", "--k-max", 5)
        res = json.loads(out)
        assert code == 0 and 1 <= res["k"] <= 5 and len(res["k_selection"]) == 5

    def test_spe_out_of_range_exits_zero(self, capsys, tmp_path):
        path = tmp_path / "ii.csv"
        path.write_text(serialize(generate_scenario_ii(ScenarioIIConfig(n=1000, seed=0))))
        code, out, _ = run(capsys, "estimate", "--input", path, "--cut", "-1,-0.5", "--estimator", "spe",
                           "--disease-formula", "t", "--verification-formula", "t,a1^2/3")
        res = json.loads(out)
        assert code == 0 and res["out_of_range"] is True
        assert max(res["tcf"]) > 1

    def test_surface_output(self, capsys, scenario_csv, tmp_path):
        out_path = tmp_path / "points.csv"
        code, out, _ = run(capsys, "surface", "--input", scenario_csv, "--estimator", "knn", "--k", 1,
                           "--grid", "quantile:4", "--out", out_path)
        assert code == 0 and json.loads(out)["points"] == 6
        lines = out_path.read_text().splitlines()
        assert lines[0] == "c1,c2,tcf1,tcf2,tcf3" and len(lines) == 7

    def test_select_k_command(self, capsys, scenario_csv):
        code, out, _ = run(capsys, "select-k", "--input", scenario_csv, "--metric", "mahalanobis", "--k-max", 6)
        res = json.loads(out)
        assert code == 0 and 1 <= res["k_star"] <= 6 and len(res["criterion"]) == 6

    def test_ellipsoid(self, capsys, scenario_csv):
        code, out, _ = run(capsys, "ellipsoid", "--input", scenario_csv, "--cut", "2,4", "--estimator", "knn",
                           "--k", 1, "--level", 0.95)
        res = json.loads(out)
        assert code == 0 and res["radius2"] == pytest.approx(7.8147, abs=5e-5)
        chol = np.array(res["cholesky"])
        np.testing.assert_allclose(chol @ chol.T, res["covariance"], rtol=1e-12)

    def test_simulate(self, capsys, tmp_path):
        cfg = tmp_path / "sim.cfg"
        cfg.write_text("scenario = i\nreps = 3\nseed = 1\ncuts = 2,4\nestimators = fi, knn\nk = 1\n")
        out_path = tmp_path / "table.csv"
        code, _, _ = run(capsys, "simulate", "--config", cfg, "--out", out_path)
        lines = out_path.read_text().splitlines()
        assert code == 0
        assert lines[1] == "2.0,4.0,True,true,0.5000,0.4347,0.9347,,"

    def test_subsample(self, capsys, tmp_path):
        full = generate_scenario_i(ScenarioIConfig(delta=(60.0, 0.0, 0.0), n=100, seed=2))
        src, dst = tmp_path / "full.csv", tmp_path / "sub.csv"
        src.write_text(serialize(full))
        code, _, _ = run(capsys, "subsample", "--input", src, "--rule", "0.2+0.5*I(t>4)", "--seed", 5, "--out", dst)
        sub = load_dataset(dst.read_bytes())
        assert code == 0 and sub.n == 100 and 0 < sub.n_verified < 100
        assert np.array_equal(sub.t, full.t)

    def test_invalid_input_exit_one(self, capsys, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("t,a1,v,d\n1.2,0.3,0,2\n")
        code, out, err = run(capsys, "estimate", "--input", bad, "--cut", "2,4", "--estimator", "knn", "--k", 1)
        assert code == 1 and out == ""
        assert json.loads(err)["error"] == {"type": "validation", "message": "label present for unverified unit, row 2"}

    def test_bad_arguments_exit_one(self, capsys, scenario_csv):
        assert run(capsys, "estimate", "--input", scenario_csv, "--cut", "4,2", "--estimator", "knn", "--k", 1)[0] == 1
        assert run(capsys, "estimate", "--input", scenario_csv, "--cut", "2,4", "--estimator", "knn")[0] == 1
        assert run(capsys, "frobnicate")[0] == 1

    def test_numerical_failure_exit_two(self, capsys, tmp_path):
        path = tmp_path / "two.csv"
        path.write_text("t,a1,v,d\n1,0,1,1\n2,0,1,2\n3,0,0,\n")
        code, out, err = run(capsys, "estimate", "--input", path, "--cut", "0,5", "--estimator", "knn", "--k", 1)
        assert code == 2 and out == ""
        assert json.loads(err)["error"]["type"] == "numerical"

    def test_failed_run_leaves_no_file(self, capsys, tmp_path):
        path = tmp_path / "two.csv"
        path.write_text("t,a1,v,d\n1,0,1,1\n2,0,1,2\n3,0,0,\n")
        out_path = tmp_path / "result.json"
        run(capsys, "estimate", "--input", path, "--cut", "0,5", "--estimator", "knn", "--k", 1, "--out", out_path)
        assert list(tmp_path.iterdir()) == [path]
