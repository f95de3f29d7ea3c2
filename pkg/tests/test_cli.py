import json

import pytest

from betawolff.cli import run_command


def run(args, capsys):
    code = run_command(args)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_gen_and_lattice(tmp_path, capsys):
    m = tmp_path / "m.csv"
    assert run(["gen", "--kind", "cantor4", "--g", "3", "--out", str(m)], capsys)[0] == 0
    code, out, _ = run(["lattice", "--in", str(m), "--n", "1"], capsys)
    assert code == 0
    doc = json.loads(out)
    assert set(doc["checks"].values()) == {"ok"}
    assert doc["lattice"]["id"] == 0


def test_verify_and_capacity(tmp_path, capsys):
    code, out, _ = run(["verify", "--kind", "cantor4", "--g", "3"], capsys)
    assert code == 0
    doc = json.loads(out)
    assert doc["lhs_grid"] == pytest.approx(0.10809449797452783, rel=1e-12)
    assert "runtimes" not in doc
    code, out, _ = run(["capacity", "--kind", "segment", "--N", "64"], capsys)
    assert code == 0 and json.loads(out)["kappa"] > 0


def test_riesz_coeffs_corona(tmp_path, capsys):
    f = tmp_path / "f.csv"
    code, out, _ = run(["riesz", "--kind", "cantor4", "--g", "3", "--out", str(f)], capsys)
    assert code == 0
    assert json.loads(out)["energy"] == pytest.approx(1.5085491772167021, rel=1e-12)
    assert f.read_text().splitlines()[0] == "id,f0,f1,norm"
    code, out, _ = run(["riesz", "--kind", "cantor4", "--g", "3", "--theta-mac", "0.3"], capsys)
    assert code == 0 and "tree_work" in json.loads(out)
    c = tmp_path / "c.csv"
    assert run(["coeffs", "--kind", "cantor4", "--g", "2", "--out", str(c)], capsys)[0] == 0
    assert c.read_text().startswith("id,level,mass,beta2")
    code, out, _ = run(["corona", "--kind", "segment", "--N", "64", "--delta0", "1e-4"], capsys)
    assert code == 0 and [t["root"] for t in json.loads(out)["top"]] == [0]


def test_suite_deterministic(tmp_path, capsys):
    b = tmp_path / "b.json"
    b.write_text(json.dumps([{"kind": "cantor4", "params": {"g": 2}}]))
    outs = []
    for d in ("o1", "o2"):
        code, out, _ = run(["suite", "--battery", str(b), "--out-dir", str(tmp_path / d)], capsys)
        assert code == 0
        outs.append(out)
    assert outs[0] == outs[1]
    assert (tmp_path / "o1" / "report.json").read_bytes() == (tmp_path / "o2" / "report.json").read_bytes()


def test_config_file(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"kind": "segment", "N": 32}))
    assert run(["capacity", "--config", str(cfg)], capsys)[0] == 0
    cfg.write_text(json.dumps({"bogus": 1}))
    assert run(["capacity", "--config", str(cfg)], capsys)[0] == 1


def test_exit_codes(tmp_path, capsys):
    assert run(["lattice", "--bogus"], capsys)[0] == 1
    assert run(["lattice", "--in", str(tmp_path / "missing.csv"), "--n", "1"], capsys)[0] == 2
    assert run(["lattice", "--kind", "segment", "--N", "8", "--A0", "4"], capsys)[0] == 1
    assert run(["lattice"], capsys)[0] == 1
    assert run(["gen", "--kind", "segment", "--N", "4"], capsys)[0] == 1
    assert run(["riesz", "--kind", "segment", "--N", "8", "--threads", "1"], capsys)[0] == 0
