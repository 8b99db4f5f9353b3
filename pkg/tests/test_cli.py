import pytest

from entdist.cli import main
from util import FIXTURES


def fx(name: str) -> str:
    return str(FIXTURES / name)


def test_validate_topology_ok(capsys):
    assert main(["validate-topology", fx("metro4.topo")]) == 0
    out = capsys.readouterr().out
    assert out.startswith("OK: 12 nodes, 12 links")
    assert "6 q-nodes" in out


def test_validate_topology_invalid(tmp_path, capsys):
    bad = tmp_path / "bad.topo"
    bad.write_text("node a qnode ip=not-an-ip channels=1 encodings=pol\n")
    assert main(["validate-topology", str(bad)]) == 1
    assert "INVALID" in capsys.readouterr().out


def test_missing_file_is_usage_error(capsys):
    assert main(["validate-topology", "/no/such/file.topo"]) == 2


def test_rwa_solve_prints_assignment_lines(capsys):
    assert main(["rwa-solve", fx("metro4.topo"), fx("reqs.txt")]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("ASSIGNED O60 O67 loss1=")
    assert lines[1].startswith("ASSIGNED C28 C36 ")
    assert lines[2] == "BLOCKED coexistence"


def test_run_writes_outputs_only_to_out_dir(tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["run", fx("metro4.topo"), fx("nominal.scn"),
                 "--seed", "3", "--out", str(out)])
    assert code == 0
    assert (out / "trace.txt").exists()
    assert (out / "metrics.txt").exists()
    assert (out / "sessions.txt").exists()
    stdout = capsys.readouterr().out
    assert "SESSION s1 Complete" in stdout
    assert set(p.name for p in out.iterdir()) == {"trace.txt", "metrics.txt",
                                                  "sessions.txt"}


def test_run_is_deterministic_per_seed(tmp_path):
    outputs = []
    for name in ("a", "b"):
        out = tmp_path / name
        main(["run", fx("metro4.topo"), fx("nominal.scn"), "--seed", "9",
              "--out", str(out)])
        outputs.append(tuple((out / f).read_bytes()
                             for f in ("trace.txt", "metrics.txt", "sessions.txt")))
    assert outputs[0] == outputs[1]


def test_run_seed_changes_trace(tmp_path):
    traces = []
    for seed in ("1", "2"):
        out = tmp_path / seed
        main(["run", fx("metro4.topo"), fx("nominal.scn"), "--seed", seed,
              "--out", str(out)])
        traces.append((out / "trace.txt").read_bytes())
    assert traces[0] != traces[1]


def test_run_respects_max_retries(tmp_path, capsys):
    out = tmp_path / "out"
    main(["run", fx("chain.topo"), fx("drift_exhaust.scn"),
          "--max-retries", "1", "--out", str(out)])
    sessions = (out / "sessions.txt").read_text()
    assert "Failed(exhausted)" in sessions
    assert "retries=1" in sessions


def test_no_subcommand_prints_help(capsys):
    assert main([]) == 2
    assert "validate-topology" in capsys.readouterr().out


def test_help_documents_grammars(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for token in ("node <id> qnode", "link <idA> <idB>", "at <t> request",
                  "at <t> drift", "request <eps> <qnode1> <qnode2>"):
        assert token in out


def test_version_command(capsys):
    assert main(["version"]) == 0
    assert capsys.readouterr().out.startswith("entdist ")
