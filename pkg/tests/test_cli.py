import pytest

from deskgrid.cli import dispatch, main
from deskgrid.scenario import ScenarioError, parse_scenario

from conftest import CMKIN_SMALL, MINI_TOPOLOGY


def ok(grid, argv, base_dir=None):
    code, text = dispatch(grid, argv, base_dir=base_dir)
    assert code == 0, text
    return text


def test_usage_errors_exit_two(mini):
    for argv in ([], ["bogus"], ["submit"], ["rc"], ["proxy", "init"]):
        code, _text = dispatch(mini, argv)
        assert code == 2, argv


def test_domain_errors_exit_one(mini):
    code, text = dispatch(mini, ["status", "j999"])
    assert code == 1 and text.startswith("error: ")
    code, text = dispatch(mini, ["submit", "nowhere.jdl", "--rb", "rb_test"])
    assert code == 1 and "no such file" in text
    code, text = dispatch(mini, ["rc", "lookup", "ghost"])
    assert code == 1
    code, text = dispatch(mini, ["proxy", "init", "--user", "/C=XX/CN=nobody",
                                 "--vo", "testvo"])
    assert code == 1 and "not a member" in text


def test_topo_show_and_validate(mini):
    assert ok(mini, ["topo", "show"]).splitlines() == [
        "sites\t2", "ces\t2", "ces[EDG]\t2", "ces[GLUE]\t1",
        "ses\t2", "brokers\t2", "vos\t2"]
    # load is the canonical spelling, show stays as an alias
    assert ok(mini, ["topo", "load"]) == ok(mini, ["topo", "show"])
    assert ok(mini, ["topo", "validate"]) == "ok"


def test_vo_sync_lists_mapfiles(mini):
    text = ok(mini, ["vo", "sync", "--site", "alpha"])
    assert text.splitlines()[0] == "== alpha"
    assert any("alice" in line and ".testvo" in line for line in text.splitlines())


def test_submit_status_run_get_output(mini, tmp_path):
    jdl = tmp_path / "job.jdl"
    jdl.write_text(CMKIN_SMALL)
    ok(mini, ["proxy", "init", "--user", "/C=XX/CN=alice", "--vo", "testvo"])
    text = ok(mini, ["submit", str(jdl), "--rb", "rb_test"])
    assert text == "job j1 RUNNING ce=ce_alpha"
    status = ok(mini, ["status"])
    assert status.splitlines()[0] == "job\tstate\tce\treason"
    assert "j1\tRUNNING\tce_alpha\t-" in status
    code, text = dispatch(mini, ["get-output", "j1"])
    assert code == 1  # still running
    ok(mini, ["run"])
    assert "j1\tDONE_OK" in ok(mini, ["status", "j1"])
    out = ok(mini, ["get-output", "j1", "--dest", str(tmp_path)])
    assert out.splitlines()[0] == "name\tbytes\tchecksum"
    assert out.splitlines()[-1] == "cleared j1"
    assert (tmp_path / "j1.manifest").exists()
    code, _text = dispatch(mini, ["get-output", "j1"])
    assert code == 1  # already cleared


def test_replica_commands_roundtrip(mini):
    ok(mini, ["proxy", "init", "--user", "/C=XX/CN=alice", "--vo", "testvo"])
    assert "seeded d.ntpl on se_beta" in ok(
        mini, ["rc", "seed", "lfn:d.ntpl", "se_beta", "1000"])
    assert ok(mini, ["rc", "lookup", "d.ntpl"]) == "se_beta\td.ntpl"
    # register is the canonical spelling of seed
    assert "seeded e.ntpl" in ok(mini, ["rc", "register", "e.ntpl", "se_beta", "5"])
    assert "replicating" in ok(mini, ["rc", "replicate", "d.ntpl", "se_alpha"])
    ok(mini, ["run"])
    assert ok(mini, ["rc", "lookup", "d.ntpl"]).splitlines() == [
        "se_alpha\td.ntpl", "se_beta\td.ntpl"]
    assert "already held" in ok(mini, ["rc", "replicate", "d.ntpl", "se_beta"])
    dump = ok(mini, ["rc", "dump"])
    assert dump.splitlines()[0].startswith("d.ntpl se_alpha d.ntpl 1000 ")


def test_factory_chain_through_the_front_end(mini):
    ok(mini, ["proxy", "init", "--user", "/C=XX/CN=alice", "--vo", "testvo"])
    text = ok(mini, ["refdb", "request", "--dataset", "jpsi", "--step", "CMKIN",
                     "--events", "500", "--per-job", "250", "--rb", "rb_test"])
    assert text == "assignment 1 jpsi CMKIN jobs=2"
    assert ok(mini, ["impala", "declare", "1"]) == "assignment 1 declared jobs=2"
    assert ok(mini, ["impala", "create", "1"]) == "assignment 1 created jobs=2"
    assert ok(mini, ["impala", "submit", "1"]) == \
        "assignment 1 submitted jobs=2 boss=1..2"
    code, text = dispatch(mini, ["refdb", "summary", "1"])
    assert code == 1 and "error:" in text  # jobs still on the testbed
    ok(mini, ["run"])
    summary = ok(mini, ["refdb", "summary", "1"])
    assert "assignment 1 COMPLETE" in summary
    assert "lfn\tjpsi_1.ntpl" in summary and "lfn\tjpsi_2.ntpl" in summary
    assert ok(mini, ["assert", "refdb-status", "1", "COMPLETE"]) == \
        "assignment 1 is COMPLETE"
    boss = ok(mini, ["boss", "query", "--type", "cmkin"])
    assert boss.splitlines()[0].startswith("boss_id\t")
    assert boss.count("finished") == 2
    assert "status=COMPLETE" in ok(mini, ["refdb", "dump"])


def test_assert_job_state_failure_path(mini, tmp_path):
    jdl = tmp_path / "job.jdl"
    jdl.write_text(CMKIN_SMALL)
    ok(mini, ["proxy", "init", "--user", "/C=XX/CN=alice", "--vo", "testvo"])
    ok(mini, ["submit", str(jdl), "--rb", "rb_test"])
    code, text = dispatch(mini, ["assert", "job-state", "j1", "DONE_OK"])
    assert code == 1 and text == "assert failed: j1 is RUNNING, wanted DONE_OK"
    assert ok(mini, ["assert", "job-state", "j1", "RUNNING"]) == "j1 is RUNNING"


def test_trace_export(mini, tmp_path):
    ok(mini, ["proxy", "init", "--user", "/C=XX/CN=alice", "--vo", "testvo"])
    target = tmp_path / "run.trace"
    text = ok(mini, ["trace", "export", str(target)])
    assert text.startswith("wrote 1 trace lines")
    assert target.read_text() == \
        "0.000\tui\tproxy-init\tuser=/C=XX/CN=alice vo=testvo lifetime_s=43200\n"


def test_report_counts_by_state_and_site(mini, tmp_path):
    jdl = tmp_path / "job.jdl"
    jdl.write_text(CMKIN_SMALL)
    ok(mini, ["proxy", "init", "--user", "/C=XX/CN=alice", "--vo", "testvo"])
    ok(mini, ["submit", str(jdl), "--rb", "rb_test"])
    ok(mini, ["run"])
    report = ok(mini, ["report"])
    assert "DONE_OK\t1" in report and "total\t1" in report
    assert "site alpha\tDONE_OK=1" in report


def test_exec_runs_a_scenario_with_relative_inputs(mini, tmp_path):
    (tmp_path / "job.jdl").write_text(CMKIN_SMALL)
    scn = tmp_path / "day.scn"
    scn.write_text(
        "# one job, checked after lunch\n"
        "at 0 proxy init --user /C=XX/CN=alice --vo testvo\n"
        "at 0 submit job.jdl --rb rb_test\n"
        "at 100 assert job-state j1 DONE_OK\n"
        "at 100 report\n")
    text = ok(mini, ["exec", str(scn)])
    assert "-- at 0 submit job.jdl --rb rb_test" in text
    assert "j1 is DONE_OK" in text
    assert "DONE_OK\t1" in text


def test_exec_stops_at_the_first_failing_step(mini, tmp_path):
    scn = tmp_path / "bad.scn"
    scn.write_text(
        "at 0 proxy init --user /C=XX/CN=alice --vo testvo\n"
        "at 1 assert job-state j1 DONE_OK\n"
        "at 2 report\n")
    code, text = dispatch(mini, ["exec", str(scn)])
    assert code == 1
    assert "error:" in text or "assert failed" in text
    assert "-- at 2 report" not in text


def test_scenario_clock_must_not_go_backwards(mini, tmp_path):
    scn = tmp_path / "back.scn"
    scn.write_text("at 10 report\nat 5 report\n")
    with pytest.raises(ScenarioError) as excinfo:
        parse_scenario(scn.read_text(), str(scn))
    assert ":2:" in str(excinfo.value)
    code, text = dispatch(mini, ["exec", str(scn)])
    assert code == 2 and text.startswith("error:")


def test_main_is_a_one_shot_process(tmp_path, capsys):
    topo = tmp_path / "mini.topo"
    topo.write_text(MINI_TOPOLOGY)
    assert main(["--topo", str(topo), "topo", "validate"]) == 0
    assert capsys.readouterr().out.strip() == "ok"
    assert main(["--topo", str(topo), "status", "jX"]) == 1
    assert "error:" in capsys.readouterr().err
    assert main([]) == 2
    assert "deskgrid" in capsys.readouterr().err
    broken = tmp_path / "broken.topo"
    broken.write_text("[site only]\n")
    assert main(["--topo", str(broken), "topo", "show"]) == 2
    assert "missing key region" in capsys.readouterr().err
    assert main(["--topo", str(tmp_path / "void.topo"), "report"]) == 2


def test_main_runs_against_the_shipped_testbed(capsys):
    assert main(["topo", "show"]) == 0
    out = capsys.readouterr().out
    assert "sites\t17" in out and "ces[GLUE]\t3" in out


def test_help_lists_every_command(mini):
    text = ok(mini, ["help"])
    for token in ("topo", "vo sync", "proxy init", "submit", "status",
                  "get-output", "rc register", "refdb request", "impala",
                  "boss query", "run", "report", "trace export", "assert",
                  "exec"):
        assert token in text
