import csv
import json

import numpy as np
import pytest
import yaml

from infopriv.cli import SWEEP_COLUMNS, config_digest, main, selftest_checks

BASE = {
    "data": {"synthetic": {"kind": "binary_table3", "n_train": 80, "n_test": 200, "rho": 0.2}},
    "solver": {"max_outer": 20},
    "z_card": 2,
}


def write_cfg(tmp_path, cfg, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("train")
    cfg = write_cfg(root, BASE)
    assert main(["train", "--config", cfg, "--seed", "1", "--out", str(root / "a")]) == 0
    return root, cfg


def test_train_artifacts(trained):
    root, _ = trained
    out = root / "a"
    model = json.loads((out / "model.json").read_text())
    Q = np.array(model["Q"])
    assert Q.shape == (4, 8, 2) and np.allclose(Q.sum(axis=2), 1)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["theta"] == pytest.approx(0.999 * manifest["theta_star"], rel=1e-12)
    assert manifest["seed"] == 1 and len(manifest["config_digest"]) == 16
    with open(out / "trace.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["iteration", "objective", "constraint_slack", "config_digest", "seed"]
    assert all(r["config_digest"] == manifest["config_digest"] for r in rows)
    objective = [float(r["objective"]) for r in rows]
    assert np.all(np.diff(objective) <= 1e-12)


def test_train_is_byte_identical(trained):
    root, cfg = trained
    assert main(["train", "--config", cfg, "--seed", "1", "--out", str(root / "b")]) == 0
    for name in ("model.json", "manifest.json", "trace.csv", "joint.json"):
        assert (root / "a" / name).read_bytes() == (root / "b" / name).read_bytes()


def test_digest_depends_on_seed():
    assert config_digest(BASE, 0) != config_digest(BASE, 1)
    assert config_digest(BASE, 0) == config_digest(json.loads(json.dumps(BASE)), 0)


def test_certify_reports(trained):
    root, _ = trained
    out = root / "cert"
    assert main(["certify", "--model", str(root / "a" / "model.json"), "--out", str(out)]) == 0
    rep = json.loads((out / "certificate.json").read_text())
    for key in ("error_H", "error_G", "epsilon_hat", "theta_star", "config_digest"):
        assert key in rep
    assert 0 <= rep["error_H"] <= 0.5 and 0 <= rep["error_G"] <= 0.5


def test_certify_uniform_mapping(trained):
    root, _ = trained
    model = json.loads((root / "a" / "model.json").read_text())
    model["Q"] = np.full((4, 8, 2), 0.5).tolist()
    (root / "u").mkdir()
    (root / "u" / "model.json").write_text(json.dumps(model))
    (root / "u" / "joint.json").write_text((root / "a" / "joint.json").read_text())
    assert main(["certify", "--model", str(root / "u" / "model.json"), "--out", str(root / "u")]) == 0
    rep = json.loads((root / "u" / "certificate.json").read_text())
    joint = json.loads((root / "a" / "joint.json").read_text())
    p_g = np.array(joint["prior"]).sum(axis=0)
    assert rep["epsilon_hat"] == pytest.approx(0, abs=1e-12)
    assert rep["error_G"] == pytest.approx(1 - p_g.max(), abs=1e-12)
    assert rep["budget_exact"]["epsilon"] == pytest.approx(0, abs=1e-12)


def test_certify_from_samples(trained, tmp_path):
    root, cfg = trained
    assert main(["gen-data", "--config", cfg, "--seed", "4", "--out", str(tmp_path)]) == 0
    out = tmp_path / "cert"
    code = main(["certify", "--model", str(root / "a" / "model.json"),
                 "--samples", str(tmp_path / "test.csv"), "--out", str(out)])
    assert code == 0
    rep = json.loads((out / "certificate.json").read_text())
    assert rep["source"] == "samples" and rep["n_samples"] == 200


def test_gen_data(tmp_path):
    cfg = write_cfg(tmp_path, BASE)
    assert main(["gen-data", "--config", cfg, "--seed", "2", "--out", str(tmp_path / "d")]) == 0
    with open(tmp_path / "d" / "train.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 80 and list(rows[0]) == ["x1", "x2", "x3", "x4", "h", "g"]
    assert json.loads((tmp_path / "d" / "manifest.json").read_text())["spec"]["seed"] == 2


def test_sweep_rows_and_failures(tmp_path):
    cfg = dict(BASE, sweep={"param": "rho", "values": [0.3, 5.0]})
    cfg["solver"] = {"max_outer": 5}
    path = write_cfg(tmp_path, cfg)
    assert main(["sweep", "--config", path, "--out", str(tmp_path / "s")]) == 0
    text = (tmp_path / "s" / "sweep.csv").read_text()
    with open(tmp_path / "s" / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == SWEEP_COLUMNS
    assert rows[0]["status"] == "ok" and rows[1]["status"].startswith("failed")
    # floats carry 17 significant digits
    assert float(rows[0]["error_H"]) == float(format(float(rows[0]["error_H"]), ".17g"))
    assert rows[0]["config_digest"] != rows[1]["config_digest"]
    assert "InfeasibleCorrelation" in text


@pytest.mark.slow
def test_mary_certificate_has_pair_quantities(tmp_path):
    cfg = {
        "data": {"synthetic": {"kind": "mary_sec4a3", "m": 3, "n_train": 60, "n_test": 0}},
        "solver": {"max_outer": 10},
    }
    path = write_cfg(tmp_path, cfg)
    assert main(["train", "--config", path, "--out", str(tmp_path)]) == 0
    assert main(["certify", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "certificate.json").read_text())
    assert set(rep["pair_theta_stars"]) == {"1", "2"}
    assert "c_prime" in rep and rep["budget_exact"]["kind"] == "mary_thm2"
    assert rep["theta_star"] == pytest.approx(min(rep["pair_theta_stars"].values()))


def test_selftest(capsys):
    assert main(["oracle-selftest"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines and all(line.startswith("PASS") for line in lines)
    assert all(ok for _, ok in selftest_checks(3, 50))


def test_exit_codes(tmp_path):
    assert main(["train", "--config", str(tmp_path / "missing.yaml")]) == 2
    bad = write_cfg(tmp_path, {"data": {"synthetic": {"kind": "nope"}}}, "bad.yaml")
    assert main(["train", "--config", bad, "--out", str(tmp_path)]) == 2
    unknown = write_cfg(tmp_path, dict(BASE, solver={"bogus": 1}), "unknown.yaml")
    assert main(["train", "--config", unknown, "--out", str(tmp_path)]) == 2
    assert main(["certify", "--out", str(tmp_path / "nothing")]) == 2


def test_support_overflow_falls_back_to_samples(trained, tmp_path, monkeypatch):
    from infopriv import cli

    root, _ = trained
    res = cli.artifact_to_result(json.loads((root / "a" / "model.json").read_text()))
    joint = cli.JointModel.from_dict(json.loads((root / "a" / "joint.json").read_text()))
    opts = {"certify": {"n_samples": 1000}}
    assert cli.run_certify(res, joint, opts, 0)["source"] == "joint"

    def overflow(*a, **k):
        raise cli.SupportTooLarge("forced")

    monkeypatch.setattr(cli, "induced_joint", overflow)
    rep = cli.run_certify(res, joint, opts, 0)
    assert rep["source"] == "samples" and rep["n_samples"] == 1000
    monkeypatch.setitem(cli.COMMANDS, "certify", lambda args, cfg: overflow())
    assert main(["certify", "--out", str(tmp_path)]) == 4


def test_exit_code_infeasible(tmp_path, monkeypatch):
    from infopriv import cli

    def boom(*a, **k):
        raise cli.BarrierViolation("forced")

    monkeypatch.setattr(cli, "solve", boom)
    path = write_cfg(tmp_path, BASE)
    assert main(["train", "--config", path, "--out", str(tmp_path)]) == 3


def test_thread_cap(tmp_path, monkeypatch):
    monkeypatch.setenv("INFOPRIV_THREADS", "1")
    assert main(["oracle-selftest"]) == 0
