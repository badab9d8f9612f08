import csv
import json

import pytest

from bilevel_rt.cli import EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERICAL, EXIT_OK, main
from bilevel_rt.phantom import preset_dict

TINY_GD = ["--steps", "30"]


def run(*argv):
    return main([str(a) for a in argv])


def files(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def strip_timings(blob):
    m = json.loads(blob)
    m.pop("timings")
    return m


@pytest.fixture(scope="module")
def case_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("case")
    assert run("phantom", "--preset", "desk_single", "--out", out) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def tuned(case_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("tune")
    assert run("tune", case_dir, "--out", out, "--pop", 4, "--gens", 1, "--seed", 3, *TINY_GD) == EXIT_OK
    return out


class TestPhantom:
    def test_outputs_and_manifest(self, case_dir):
        assert {"case.json", "deposition.csv", "manifest.json"} <= set(files(case_dir))
        m = json.loads((case_dir / "manifest.json").read_text())
        assert m["command"] == "phantom" and m["seed"] == 0
        assert m["outputs"] == ["case.json", "deposition.csv"]
        assert len(m["config_hash"]) == 64 and "wall_seconds" in m["timings"]

    def test_spec_file_and_seed_override(self, tmp_path):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps(preset_dict("desk")))
        assert run("phantom", spec, "--out", tmp_path / "a") == EXIT_OK
        assert run("phantom", spec, "--seed", 9, "--out", tmp_path / "b") == EXIT_OK
        assert (tmp_path / "a" / "deposition.csv").read_bytes() != (tmp_path / "b" / "deposition.csv").read_bytes()
        assert (tmp_path / "a" / "case.json").read_bytes() == (tmp_path / "b" / "case.json").read_bytes()

    def test_bad_json(self, tmp_path, capsys):
        spec = tmp_path / "spec.json"
        spec.write_text('{"grid": {"dims": [4, 4, 1],}')
        assert run("phantom", spec, "--out", tmp_path / "o") == EXIT_CONFIG
        assert "line 1" in capsys.readouterr().err

    def test_bad_field(self, tmp_path, capsys):
        d = preset_dict("desk")
        d["grid"]["dims"] = [40, -1, 1]
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps(d))
        assert run("phantom", spec, "--out", tmp_path / "o") == EXIT_CONFIG
        assert "grid" in capsys.readouterr().err

    def test_missing_spec(self, tmp_path):
        assert run("phantom", tmp_path / "nope.json", "--out", tmp_path / "o") == EXIT_MISSING

    def test_needs_exactly_one_source(self, tmp_path):
        assert run("phantom", "--out", tmp_path) == EXIT_CONFIG


class TestOptimize:
    def test_default_phi_regression(self, case_dir, tmp_path):
        assert run("optimize", case_dir, "--out", tmp_path) == EXIT_OK
        plan = json.loads((tmp_path / "plan.json").read_text())
        f = [float(v) for v in plan["objectives"]]
        assert f[0] == 0.0
        assert f[1] == pytest.approx(12.717, abs=1e-3)
        for name in ("fluence.csv", "evaluation.csv", "dvh.csv", "manifest.json"):
            assert (tmp_path / name).exists()

    def test_rerun_identical(self, case_dir, tmp_path):
        for sub in ("a", "b"):
            assert run("optimize", case_dir, "--out", tmp_path / sub, *TINY_GD) == EXIT_OK
        a, b = files(tmp_path / "a"), files(tmp_path / "b")
        assert a.keys() == b.keys()
        for k in a:
            if k == "manifest.json":
                assert strip_timings(a[k]) == strip_timings(b[k])
            else:
                assert a[k] == b[k], k

    def test_phi_out_of_range(self, case_dir, tmp_path, capsys):
        phi = tmp_path / "phi.json"
        phi.write_text(json.dumps({"gland_l": {"eud0": 40.0}}))
        assert run("optimize", case_dir, "--phi", phi, "--out", tmp_path / "o") == EXIT_CONFIG
        assert "gland_l.eud0" in capsys.readouterr().err

    def test_phi_virtual_rejected(self, case_dir, tmp_path):
        phi = tmp_path / "phi.json"
        phi.write_text(json.dumps({"ptv60_virtual": {"a": 5.0}}))
        assert run("optimize", case_dir, "--phi", phi, "--out", tmp_path / "o") == EXIT_CONFIG

    def test_phi_applied(self, case_dir, tmp_path):
        phi = tmp_path / "phi.json"
        phi.write_text(json.dumps({"ptv60": {"a": -20.0}}))
        assert run("optimize", case_dir, "--phi", phi, "--out", tmp_path / "o", *TINY_GD) == EXIT_OK
        params = json.loads((tmp_path / "o" / "plan.json").read_text())["params"]
        assert float(params["ptv60"]["a"]) == -20.0
        assert float(params["ptv60_virtual"]["a"]) == 20.0

    def test_zero_steps(self, case_dir, tmp_path, capsys):
        assert run("optimize", case_dir, "--out", tmp_path, "--steps", 0) == EXIT_CONFIG
        assert "--steps" in capsys.readouterr().err

    def test_missing_case(self, tmp_path, capsys):
        assert run("optimize", tmp_path, "--out", tmp_path / "o") == EXIT_MISSING
        assert "case.json" in capsys.readouterr().err

    def test_missing_deposition(self, case_dir, tmp_path, capsys):
        (tmp_path / "case.json").write_bytes((case_dir / "case.json").read_bytes())
        assert run("optimize", tmp_path, "--out", tmp_path / "o") == EXIT_MISSING
        assert "deposition.csv" in capsys.readouterr().err

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_numerical_abort(self, case_dir, tmp_path, capsys):
        (tmp_path / "case.json").write_bytes((case_dir / "case.json").read_bytes())
        lines = (case_dir / "deposition.csv").read_text().splitlines()
        r, c, _ = lines[1].split(",")
        lines[1] = f"{r},{c},nan"
        (tmp_path / "deposition.csv").write_text("\n".join(lines) + "\n")
        assert run("optimize", tmp_path, "--out", tmp_path / "o", *TINY_GD) == EXIT_NUMERICAL
        assert "iteration" in capsys.readouterr().err


class TestTuneReduceReport:
    def test_tune_outputs(self, tuned):
        with open(tuned / "archive.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert rows and set(rows[0]) >= {"plan", "index", "gland_l.eud0", "f0", "f1", "logF"}
        for r in rows:
            assert (tuned / "fluence" / f"plan_{r['plan']}.csv").exists()
        m = json.loads((tuned / "manifest.json").read_text())
        assert "jobs" not in m["config"]["tuner"]

    def test_threads_env_fallback(self, case_dir, tuned, tmp_path, monkeypatch):
        monkeypatch.setenv("BILEVEL_RT_THREADS", "2")
        assert run("tune", case_dir, "--out", tmp_path, "--pop", 4, "--gens", 1, "--seed", 3, *TINY_GD) == EXIT_OK
        assert (tmp_path / "archive.csv").read_bytes() == (tuned / "archive.csv").read_bytes()
        monkeypatch.setenv("BILEVEL_RT_THREADS", "many")
        assert run("tune", case_dir, "--out", tmp_path, "--pop", 4, "--gens", 1, *TINY_GD) == EXIT_CONFIG

    def test_bad_population(self, case_dir, tmp_path):
        assert run("tune", case_dir, "--out", tmp_path, "--pop", 1) == EXIT_CONFIG

    def test_reduce_and_report(self, tuned, tmp_path):
        out = tmp_path / "front"
        assert run("reduce", tuned, "--k", 2, "--out", out) == EXIT_OK
        with open(out / "front.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert 1 <= len(rows) <= 2
        assert run("report", out, "--z", 0) == EXIT_OK
        for r in rows:
            for name in ("dvh.svg", "slice_z0.svg", "evaluation.csv", "dvh.csv"):
                assert (out / f"plan_{r['plan']}" / name).exists()
        assert (out / "comparison.csv").exists()
        assert (out / "manifest.json").exists() and (out / "report_manifest.json").exists()

    def test_reduce_k_below_objectives(self, tuned, tmp_path):
        assert run("reduce", tuned, "--k", 1, "--out", tmp_path) == EXIT_CONFIG

    def test_reduce_missing_archive(self, tmp_path):
        assert run("reduce", tmp_path) == EXIT_MISSING

    def test_report_single_plan(self, case_dir, tmp_path):
        assert run("optimize", case_dir, "--out", tmp_path, *TINY_GD) == EXIT_OK
        assert run("report", tmp_path) == EXIT_OK
        assert (tmp_path / "report" / "plan_0" / "dvh.svg").exists()

    def test_report_bad_slice(self, tuned, tmp_path):
        out = tmp_path / "front"
        assert run("reduce", tuned, "--out", out) == EXIT_OK
        assert run("report", out, "--z", 3) == EXIT_CONFIG
