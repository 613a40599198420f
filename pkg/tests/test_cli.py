import json
import re

import pytest

from rhmlab.cli import build_parser, main

SUBCOMMANDS = ["gen", "sample", "audit", "train", "eval", "sweep", "deepquad"]


@pytest.fixture
def grammar(tmp_path):
    path = tmp_path / "g.json"
    assert main(["gen", "--L", "2", "--s", "2", "--V", "4", "--m", "2", "--seed", "1", "-o", str(path)]) == 0
    return path


def test_gen_then_audit(grammar, tmp_path, capsys):
    capsys.readouterr()
    out = tmp_path / "a.json"
    assert main(["audit", str(grammar), "--format", "json", "-o", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["kappa"] == 1
    assert main(["audit", str(grammar)]) == 0
    assert "kappa" in capsys.readouterr().out


def test_train_then_eval(grammar, tmp_path, capsys):
    model = tmp_path / "model.json"
    data = tmp_path / "test.jsonl"
    assert main(["sample", str(grammar), "--n", "500", "--seed", "9", "-o", str(data)]) == 0
    assert main(["train", str(grammar), "--seed", "3", "-o", str(model)]) == 0
    capsys.readouterr()
    assert main(["eval", str(model), str(data)]) == 0
    line = capsys.readouterr().out.strip()
    match = re.fullmatch(r"accuracy=([0-9.eE+-]+)", line)
    assert match and 0.0 <= float(match.group(1)) <= 1.0


def test_train_with_budget_and_multipliers(grammar, tmp_path, capsys):
    model = tmp_path / "m.json"
    assert main(["train", str(grammar), "--N", "600", "--c-sigma", "3", "--solver", "closed_form", "-o", str(model)]) == 0
    cfg = json.loads(capsys.readouterr().err.splitlines()[0])
    assert cfg["multipliers"]["c_sigma"] == 3.0
    assert [c["N"] for c in cfg["schedule"]] == [400, 200]
    assert all(c["solver"] == "closed_form" for c in cfg["schedule"])


def test_resolved_config_echoed(grammar, capsys, tmp_path):
    capsys.readouterr()
    main(["sample", str(grammar), "-o", str(tmp_path / "d.jsonl")])
    cfg = json.loads(capsys.readouterr().err.splitlines()[0])
    assert cfg == {"command": "sample", "grammar": str(grammar), "n": 1000, "seed": 0, "intermediates": False,
                   "output": str(tmp_path / "d.jsonl")}


def test_exit_codes(tmp_path, capsys):
    assert main(["gen", "--m", "0"]) == 1
    assert "invalid parameters" in capsys.readouterr().err
    assert main(["gen", "--bogus", "1"]) == 1
    assert main([]) == 1
    capsys.readouterr()
    assert main(["audit", str(tmp_path / "missing.json")]) == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error:")
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert main(["audit", str(bad)]) == 2
    assert main(["deepquad", "--sizes", "9", "--d", "4"]) == 1


def test_env_jobs_validated(monkeypatch, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"L": [1], "V": [3], "m": [1], "N_grid": [20], "test_size": 20}))
    monkeypatch.setenv("RHM_LAB_JOBS", "x")
    assert main(["sweep", str(cfg)]) == 1
    monkeypatch.setenv("RHM_LAB_JOBS", "1")
    assert main(["sweep", str(cfg), "-o", str(tmp_path / "o.csv")]) == 0


@pytest.mark.parametrize("sub", SUBCOMMANDS)
def test_help_lists_flags_with_defaults(sub, capsys):
    assert main([sub, "--help"]) == 0
    text = capsys.readouterr().out
    parser = build_parser()
    subparser = parser._subparsers._group_actions[0].choices[sub]
    for action in subparser._actions:
        for opt in action.option_strings:
            assert opt in text
        if action.option_strings and action.default not in (None, False) and action.dest != "help":
            assert "default" in text


def test_top_level_help(capsys):
    assert main(["--help"]) == 0
    out = capsys.readouterr().out
    assert all(s in out for s in SUBCOMMANDS)


# ---------------------------------------------------------------------------
# byte determinism


def _twice(tmp_path, argv_fn):
    outs = []
    for k in range(2):
        path = tmp_path / f"out{k}"
        assert main(argv_fn(str(path))) == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]
    return outs[0]


def test_deterministic_outputs(grammar, tmp_path, capsys):
    _twice(tmp_path, lambda o: ["gen", "--V", "5", "--m", "3", "--seed", "4", "-o", o])
    _twice(tmp_path, lambda o: ["sample", str(grammar), "--n", "50", "--intermediates", "-o", o])
    _twice(tmp_path, lambda o: ["audit", str(grammar), "--format", "json", "-o", o])
    _twice(tmp_path, lambda o: ["train", str(grammar), "--seed", "2", "--N", "300", "-o", o])
    cfg = tmp_path / "sweep.json"
    cfg.write_text(json.dumps({"L": [1, 2], "V": [4], "m": [2], "N_grid": [40, 160], "trials": 2, "test_size": 50,
                               "shallow": True, "shallow_M": 128}))
    a = _twice(tmp_path, lambda o: ["sweep", str(cfg), "--jobs", "1", "-o", o])
    b = tmp_path / "par.csv"
    assert main(["sweep", str(cfg), "--jobs", "2", "-o", str(b)]) == 0
    assert b.read_bytes() == a
    _twice(tmp_path, lambda o: ["deepquad", "--trials", "2", "--n", "3000", "-o", o])
    # eval prints to stdout
    model = tmp_path / "m.json"
    data = tmp_path / "d.jsonl"
    main(["train", str(grammar), "--N", "300", "-o", str(model)])
    main(["sample", str(grammar), "--n", "100", "-o", str(data)])
    capsys.readouterr()
    main(["eval", str(model), str(data)])
    first = capsys.readouterr().out
    main(["eval", str(model), str(data)])
    assert capsys.readouterr().out == first


def test_deepquad_csv(tmp_path):
    out = tmp_path / "dq.csv"
    assert main(["deepquad", "--trials", "3", "--sampler", "exhaustive", "--d", "8", "--sizes", "4,2,1", "-o", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("seed,d,sizes")
    assert len(lines) == 4
    assert all(line.split(",")[5] == "1" for line in lines[1:])
