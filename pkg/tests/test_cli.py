import json
import subprocess
import sys

import numpy as np
import pytest

from vgdlab.cli import ConfigError, ExperimentConfig, load_config, main
from vgdlab.mdp import mdp_to_dict, random_mdp, save_mdp


def write_config(tmp_path, **overrides):
    cfg = {
        "environment": {"builtin": "random", "params": {"S": 4, "A": 3, "gamma": 0.5, "seed": 1}},
        "algorithms": [{"algorithm": "SDPO", "K": 4}, {"algorithm": "CPI", "K": 4, "nu": 1.0}],
        "seeds": [0],
        "output_dir": "out",
        "vgd": {"n_probes": 20, "eps": [0.05]},
        "sample_audit": {"n": 20000},
    }
    cfg.update(overrides)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def test_solve_writes_solution(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["solve", "--config", str(cfg)]) == 0
    sol = json.loads((tmp_path / "out" / "solution.json").read_text())
    assert sol["completeness_error"] == pytest.approx(0.0, abs=1e-12)
    assert sol["D_infty"] >= 1.0
    pol = (tmp_path / "out" / "optimal_policy.csv").read_text().splitlines()
    assert pol[0] == "state,a0,a1,a2" and len(pol) == 5
    assert "V*" in capsys.readouterr().out


def test_missing_config_file_exits_2(tmp_path, capsys):
    assert main(["solve", "--config", str(tmp_path / "nope.json")]) == 2
    assert "not found" in capsys.readouterr().err


@pytest.mark.parametrize("bad", [
    {"environment": {"builtin": "maze"}},
    {"environment": {"file": "missing.json"}},
    {"policy_class": {"builtin": "top_k", "file": "x.json"}},
    {"seeds": [1, 1]},
    {"seeds": [-1]},
    {"algorithms": [{"algorithm": "SDPO", "K": -3}]},
    {"algorithms": [{"algorithm": "QLEARN"}]},
    {"colour": "blue"},
])
def test_bad_config_exits_2(tmp_path, bad):
    assert main(["run", "--config", str(write_config(tmp_path, **bad))]) == 2


def test_invalid_json_and_missing_config_flag(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert main(["run", "--config", str(p)]) == 2
    assert main(["run"]) == 2
    with pytest.raises(ConfigError):
        load_config(p)


def test_class_params_rejected(tmp_path):
    cfg = write_config(tmp_path, policy_class={"builtin": "top_k", "params": {"k": 2, "scores": "random"}})
    assert main(["solve", "--config", str(cfg)]) == 2
    cfg = write_config(tmp_path, policy_class={"builtin": "full_simplex", "params": {"width": 2}})
    assert main(["solve", "--config", str(cfg)]) == 2


def test_run_outputs_and_determinism(tmp_path):
    cfg = write_config(tmp_path, seeds=[0, 1])
    assert main(["run", "--config", str(cfg), "--quiet"]) == 0
    out = tmp_path / "out"
    names = sorted(p.name for p in out.iterdir())
    assert names == sorted(f"{kind}_{alg}_seed{s}.csv" for kind in ("run", "vgd")
                           for alg in ("sdpo", "cpi") for s in (0, 1))
    first = {n: (out / n).read_bytes() for n in names}
    assert main(["run", "--config", str(cfg), "--quiet", "--out", str(tmp_path / "again")]) == 0
    for n in names:
        assert (tmp_path / "again" / n).read_bytes() == first[n]
    head = (out / "run_sdpo_seed0.csv").read_text().splitlines()
    assert head[0] == "k,V,grad_vgd,inner_err,wall_ms" and len(head) == 6


def test_run_k0_and_duplicate_names(tmp_path):
    cfg = write_config(tmp_path, algorithms=[{"algorithm": "SDPO", "K": 0}, {"algorithm": "SDPO", "K": 1}])
    assert main(["run", "--config", str(cfg), "--quiet", "--seed", "3"]) == 0
    rows = (tmp_path / "out" / "run_sdpo0_seed3.csv").read_text().splitlines()
    assert len(rows) == 2
    assert (tmp_path / "out" / "vgd_sdpo1_seed3.csv").is_file()


def test_run_requires_algorithms(tmp_path):
    assert main(["run", "--config", str(write_config(tmp_path, algorithms=[]))]) == 2


def test_quiet_suppresses_stdout(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["run", "--config", str(cfg), "--quiet"]) == 0
    assert capsys.readouterr().out == ""
    assert main(["run", "--config", str(cfg)]) == 0
    assert "SDPO" in capsys.readouterr().out


def test_check_default_battery_passes(tmp_path, capsys):
    assert main(["check", "--out", str(tmp_path)]) == 0
    text = (tmp_path / "check.csv").read_text()
    assert text.startswith("property,passed,detail")
    assert "zero_cost:mdp-validation,1" in text
    assert ",0," not in text
    assert "all" in capsys.readouterr().out


def test_check_names_corrupted_mdp(tmp_path, capsys):
    doc = mdp_to_dict(random_mdp(3, 2, 0.5, 0))
    doc["transitions"][1][0][0] += 0.3  # row no longer sums to 1
    (tmp_path / "mdp.json").write_text(json.dumps(doc))
    cfg = write_config(tmp_path, environment={"file": "mdp.json"})
    assert main(["check", "--config", str(cfg), "--quiet"]) == 1
    err = capsys.readouterr().err
    assert "FAILED" in err and "mdp-validation" in err
    # other subcommands treat it as bad input
    assert main(["solve", "--config", str(cfg)]) == 2


def test_check_with_config_adds_theorem_rows(tmp_path):
    save_mdp(random_mdp(3, 2, 0.5, 5), tmp_path / "mdp.json")
    cfg = write_config(tmp_path, environment={"file": "mdp.json"})
    assert main(["check", "--config", str(cfg), "--quiet"]) == 0
    text = (tmp_path / "out" / "check.csv").read_text()
    assert "config:theorem-sdpo-seed0,1" in text and "config:theorem-cpi-seed0,1" in text


def test_reward_documents_become_costs(tmp_path):
    m = random_mdp(3, 2, 0.5, 2)
    doc = mdp_to_dict(m)
    doc["rewards"] = (1.0 - np.asarray(doc["rewards"])).tolist()
    doc["reward_kind"] = "reward"
    (tmp_path / "mdp.json").write_text(json.dumps(doc))
    save_mdp(m, tmp_path / "plain.json")
    a = write_config(tmp_path, environment={"file": "mdp.json"}, output_dir="a")
    assert main(["solve", "--config", str(a), "--quiet"]) == 0
    b = write_config(tmp_path, environment={"file": "plain.json"}, output_dir="b")
    assert main(["solve", "--config", str(b), "--quiet"]) == 0
    va = json.loads((tmp_path / "a" / "solution.json").read_text())["V_star"]
    vb = json.loads((tmp_path / "b" / "solution.json").read_text())["V_star"]
    assert va == pytest.approx(vb, abs=1e-12)


def test_sample_audit_subcommand(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["sample-audit", "--config", str(cfg), "--quiet"]) == 0
    lines = (tmp_path / "out" / "sample_audit.csv").read_text().splitlines()
    assert lines[0] == "metric,value,threshold,passed"
    assert all(ln.endswith(",1") for ln in lines[1:])


def test_vgd_subcommand(tmp_path):
    cfg = write_config(tmp_path, policy_class={"builtin": "random_vertex", "params": {"num_vertices": 2, "seed": 3}})
    assert main(["vgd", "--config", str(cfg), "--quiet"]) == 0
    text = (tmp_path / "out" / "vgd_certificate.txt").read_text()
    assert "nu_empirical" in text and "violations=0" in text
    assert (tmp_path / "out" / "vgd_cpi_seed0.csv").read_text().startswith("k,grad_vgd,subopt,nu_k")


def test_top_k_and_wrapped_classes(tmp_path):
    cfg = ExperimentConfig.from_dict({
        "environment": {"builtin": "gridworld"},
        "policy_class": {"builtin": "top_k", "params": {"k": 2, "explore_eps": 0.1}},
    })
    mdp = cfg.build_mdp()
    cls = cfg.build_class(mdp)
    assert cls.num_states == mdp.num_states
    assert np.all(cls.vertices(0) >= 0.1 / mdp.num_actions - 1e-15)


def test_module_entry_point(tmp_path):
    cfg = write_config(tmp_path)
    proc = subprocess.run([sys.executable, "-m", "vgdlab", "solve", "--config", str(cfg), "--quiet"],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "vgdlab", "--help"], capture_output=True, text=True)
    assert all(c in proc.stdout for c in ("solve", "run", "check", "sample-audit", "vgd"))
