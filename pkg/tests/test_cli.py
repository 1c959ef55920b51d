import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from rdmkit import ActivityDataset
from rdmkit.cli import main
from rdmkit.covariance import null_covariance
from rdmkit.dataset import write_dataset
from rdmkit.selftest import run_selftest

DATA = Path(__file__).parent / "data"
TOY = DATA / "toy.json"


def run(argv):
    """Call the CLI in-process and return its exit code, argparse exits included."""
    try:
        return main([str(a) for a in argv])
    except SystemExit as exc:
        return exc.code


def rdm_file(path, d, k):
    i, j = np.triu_indices(k, 1)
    path.write_text(json.dumps({"k": k, "m": 2, "estimator": "unbiased", "metric": "euclidean",
                                "pairs": [[int(a), int(b)] for a, b in zip(i, j)],
                                "d": [float(x) for x in d]}))
    return path


class TestDistances:
    def test_golden_crossval_euclidean(self, tmp_path):
        out = tmp_path / "rdm.json"
        assert run(["distances", "--manifest", TOY, "--out", out]) == 0
        assert out.read_bytes() == (DATA / "toy_crossval_euclidean.json").read_bytes()

    def test_rerun_is_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        for out in (a, b):
            assert run(["distances", "--manifest", TOY, "--metric", "mahalanobis",
                        "--shrink", "0.2", "--out", out]) == 0
        assert a.read_bytes() == b.read_bytes()
        assert json.loads(a.read_text())["metric"] == "mahalanobis"

    def test_mahalanobis_needs_residuals(self, tmp_path, rng, capsys):
        man = write_dataset(ActivityDataset(tuple(rng.standard_normal((3, 4)) for _ in range(2))),
                            tmp_path)
        assert run(["distances", "--manifest", man, "--metric", "mahalanobis",
                    "--out", tmp_path / "o.json"]) == 3
        assert "residuals required" in capsys.readouterr().err
        assert not (tmp_path / "o.json").exists()

    def test_biased_on_noise_free_data(self, tmp_path, rng):
        b = rng.standard_normal((4, 8))
        man = write_dataset(ActivityDataset((b, b, b)), tmp_path)
        out = tmp_path / "o.json"
        assert run(["distances", "--manifest", man, "--method", "biased", "--out", out]) == 0
        i, j = np.triu_indices(4, 1)
        true = ((b[i] - b[j]) ** 2).sum(1) / 8
        np.testing.assert_allclose(json.loads(out.read_text())["d"], true, rtol=1e-12)

    def test_csv_mirror(self, tmp_path):
        out, csv = tmp_path / "o.json", tmp_path / "o.csv"
        assert run(["distances", "--manifest", TOY, "--out", out, "--csv", csv]) == 0
        lines = csv.read_text().splitlines()
        assert lines[0] == "i,j,d" and len(lines) == 7
        d = json.loads(out.read_text())["d"]
        assert [float(ln.split(",")[2]) for ln in lines[1:]] == d

    def test_stdout_streaming(self, capsys):
        assert run(["distances", "--manifest", TOY, "--out", "-"]) == 0
        golden = json.loads((DATA / "toy_crossval_euclidean.json").read_text())
        assert json.loads(capsys.readouterr().out) == golden

    def test_no_temporary_files_left(self, tmp_path):
        run(["distances", "--manifest", TOY, "--out", tmp_path / "o.json", "--csv", tmp_path / "o.csv"])
        assert sorted(p.name for p in tmp_path.iterdir()) == ["o.csv", "o.json"]

    @pytest.mark.parametrize("argv", [
        ["--shrink", "1.5"],
        ["--method", "jackknife"],
        ["--regressors", "-1"],
    ])
    def test_bad_arguments(self, tmp_path, argv):
        assert run(["distances", "--manifest", TOY, "--out", tmp_path / "o.json", *argv]) == 2

    def test_missing_manifest(self, tmp_path):
        assert run(["distances", "--manifest", tmp_path / "nope.json", "--out", tmp_path / "o"]) == 2

    def test_malformed_partition(self, tmp_path):
        (tmp_path / "p.csv").write_text("1,2\n3,x\n")
        (tmp_path / "m.json").write_text(json.dumps({"k": 2, "p": 2, "m": 1, "partitions": ["p.csv"]}))
        assert run(["distances", "--manifest", tmp_path / "m.json", "--method", "biased",
                    "--out", tmp_path / "o.json"]) == 3


class TestWhiten:
    def test_identity_sigma_k(self, tmp_path):
        out = tmp_path / "w.json"
        assert run(["whiten", "--rdm", DATA / "toy_crossval_euclidean.json", "--out", out]) == 0
        obj = json.loads(out.read_text())
        d = json.loads((DATA / "toy_crossval_euclidean.json").read_text())["d"]
        from rdmkit.covariance import whitener
        np.testing.assert_allclose(obj["d_whitened"], whitener(null_covariance(np.eye(4))) @ d,
                                   rtol=1e-12)
        assert obj["k"] == 4 and len(obj["pairs"]) == 6

    def test_sigma_k_shape_checked(self, tmp_path):
        (tmp_path / "s.csv").write_text("1,0\n0,1\n")
        assert run(["whiten", "--rdm", DATA / "toy_crossval_euclidean.json",
                    "--sigma-k", tmp_path / "s.csv", "--out", tmp_path / "w.json"]) == 3


class TestCompare:
    def test_self_comparison_wuc(self, tmp_path):
        d = [1.0, 2.0, 3.0, 2.5, 1.5, 0.5]
        data = rdm_file(tmp_path / "data.json", d, 4)
        model = tmp_path / "self.json"
        model.write_text(json.dumps({"name": "self", "d": d}))
        out = tmp_path / "r.json"
        assert run(["compare", "--criterion", "wuc", "--rdm", data, "--models", model,
                    "--out", out]) == 0
        obj = json.loads(out.read_text())
        assert obj["winner"] == "self"
        assert obj["per_model"]["self"] == pytest.approx(1.0, abs=1e-12)

    def test_cosine_picks_smaller_angle(self, tmp_path):
        # d = (1, 1, 1); model a = (1, 0, 0) at cos 1/sqrt(3), model b = (1, 1, 0) at cos 2/sqrt(6)
        data = rdm_file(tmp_path / "data.json", [1, 1, 1], 3)
        models = tmp_path / "models"
        models.mkdir()
        (models / "a.csv").write_text("1\n0\n0\n")
        (models / "b.csv").write_text("i,j,d\n0,1,1\n0,2,1\n1,2,0\n")
        out = tmp_path / "r.json"
        assert run(["compare", "--criterion", "cosine", "--rdm", data, "--models", models,
                    "--out", out]) == 0
        obj = json.loads(out.read_text())
        assert obj["winner"] == "b"
        np.testing.assert_allclose([obj["per_model"]["a"], obj["per_model"]["b"]],
                                   [1 / np.sqrt(3), 2 / np.sqrt(6)], rtol=1e-12)

    def test_unknown_criterion(self, tmp_path, capsys):
        data = rdm_file(tmp_path / "data.json", [1, 1, 1], 3)
        assert run(["compare", "--criterion", "euclid", "--rdm", data, "--models", data,
                    "--out", tmp_path / "r.json"]) == 2
        assert "usage:" in capsys.readouterr().err

    def test_length_mismatch_names_file(self, tmp_path, capsys):
        data = rdm_file(tmp_path / "data.json", [1, 1, 1], 3)
        bad = tmp_path / "too_long.csv"
        bad.write_text("1\n2\n3\n4\n")
        assert run(["compare", "--criterion", "pearson", "--rdm", data, "--models", bad,
                    "--out", tmp_path / "r.json"]) == 2
        assert "too_long.csv" in capsys.readouterr().err

    def test_sigma_k_option(self, tmp_path):
        data = rdm_file(tmp_path / "data.json", [1, 2, 3], 3)
        (tmp_path / "s.csv").write_text("2,0.5,0\n0.5,2,0.5\n0,0.5,2\n")
        (tmp_path / "m.csv").write_text("1\n2\n3\n")
        out = tmp_path / "r.json"
        assert run(["compare", "--criterion", "whitened_pearson", "--rdm", data, "--models",
                    tmp_path / "m.csv", "--sigma-k", tmp_path / "s.csv", "--out", out]) == 0
        assert json.loads(out.read_text())["per_model"]["m"] == pytest.approx(1.0)


class TestSimulate:
    def test_repeat_runs_identical(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        for out in (a, b):
            assert run(["simulate", "--scenario", "fig4a", "--sims", 300, "--seed", 5,
                        "--criteria", "pearson,wuc", "--out", out]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_zero_sims(self, tmp_path):
        assert run(["simulate", "--scenario", "fig4a", "--sims", 0, "--out", tmp_path / "o"]) == 2

    def test_unknown_scenario(self, tmp_path):
        assert run(["simulate", "--scenario", "fig99", "--out", tmp_path / "o"]) == 2

    def test_unknown_param(self, tmp_path):
        assert run(["simulate", "--scenario", "fig4a", "--param", "s2=1",
                    "--out", tmp_path / "o"]) == 2

    def test_spatial_identity_kernel_matches_iid(self, tmp_path):
        from rdmkit.simulate import scenario_library

        spatial = tmp_path / "spatial.json"
        assert run(["simulate", "--scenario", "spatial_noise_appendix", "--param", "s2=0",
                    "--sims", 40, "--seed", 3, "--criteria", "cosine,wuc", "--out", spatial]) == 0
        sc = scenario_library("spatial_noise_appendix", s2=0, n_sims=40, seed=3).to_dict()
        sc["sigma_p"] = np.eye(216).tolist()
        sc["name"] = "spatial_noise_appendix"
        scen_file = tmp_path / "iid_scenario.json"
        scen_file.write_text(json.dumps(sc))
        iid = tmp_path / "iid.json"
        assert run(["simulate", "--scenario", scen_file, "--criteria", "cosine,wuc",
                    "--out", iid]) == 0
        assert json.loads(spatial.read_text())["criteria"] == json.loads(iid.read_text())["criteria"]

    def test_sweep_output(self, tmp_path):
        out = tmp_path / "sweep.json"
        assert run(["simulate", "--scenario", "fig4c", "--sweep", "--sims", 20,
                    "--criteria", "pearson", "--out", out]) == 0
        obj = json.loads(out.read_text())
        assert obj["parameter"] == "m"
        assert [pt["value"] for pt in obj["points"]] == [2, 4, 6, 8, 10, 12]

    def test_condition_split_sweep(self, tmp_path):
        out = tmp_path / "sweep.json"
        assert run(["simulate", "--scenario", "cond_split_fig7", "--sweep", "--sims", 10,
                    "--param", "p=20", "--criteria", "cosine", "--out", out]) == 0
        obj = json.loads(out.read_text())
        assert [pt["value"] for pt in obj["points"]] == [0, 1, 2, 3]

    def test_timing_flag(self, tmp_path):
        out = tmp_path / "o.json"
        assert run(["simulate", "--scenario", "fig4a", "--sims", 10, "--criteria", "wuc",
                    "--timing", "--out", out]) == 0
        assert "runtime_seconds" in json.loads(out.read_text())

    def test_threads_from_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv("RDMKIT_THREADS", "many")
        assert run(["simulate", "--scenario", "fig4a", "--sims", 10, "--out", tmp_path / "o"]) == 2


class TestSelftest:
    def test_passes(self, capsys):
        assert run(["selftest"]) == 0
        err = capsys.readouterr().err
        assert err.count("PASS") == 4 and "FAIL" not in err

    def test_perturbed_null_covariance_fails(self):
        results = {r.name: r for r in run_selftest(
            null_cov=lambda s: null_covariance(s) + 0.01 * np.eye(s.shape[0] * (s.shape[0] - 1) // 2),
            n_sims=2000)}
        assert not results["v_eigenstructure"].passed


class TestEntryPoint:
    def test_module_runs_as_script(self, tmp_path):
        out = tmp_path / "rdm.json"
        proc = subprocess.run([sys.executable, "-m", "rdmkit.cli", "distances", "--manifest",
                               str(TOY), "--out", str(out)], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        assert out.read_bytes() == (DATA / "toy_crossval_euclidean.json").read_bytes()

    def test_quiet_and_verbose_exclusive(self):
        assert run(["-q", "-v", "selftest"]) == 2
