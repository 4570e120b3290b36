import json
import subprocess
import sys

import pytest

from gazekey.cli import build_parser, main, read_topk


def test_unknown_flag_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["analyze", "--bogus"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        build_parser().parse_args([])
    assert exc.value.code == 2


def test_missing_trace_is_input_error(tmp_path, capsys):
    assert main(["analyze", "--trace", str(tmp_path / "none.csv")]) == 2
    assert "input error" in capsys.readouterr().err


def test_synth_pipe_analyze():
    cmd = [sys.executable, "-m", "gazekey"]
    synth = subprocess.run(cmd + ["synth", "--text", "hello world", "--seed", "7"],
                           capture_output=True, text=True, check=True)
    out = subprocess.run(cmd + ["analyze"], input=synth.stdout, capture_output=True, text=True, check=True)
    assert json.loads(out.stdout)["text"] == "hello world"


def test_decode_then_recover(tmp_path, capsys):
    trace = tmp_path / "t.csv"
    assert main(["synth", "--text", "the quick fox", "--seed", "3", "--noiseless", "--out", str(trace)]) == 0
    assert (tmp_path / "t.keys.csv").exists()
    table = tmp_path / "topk.csv"
    assert main(["decode", "--trace", str(trace), "--out", str(table)]) == 0
    posts = read_topk(str(table))
    assert [p.best for p in posts][:3] == ["t", "h", "e"]
    capsys.readouterr()
    assert main(["recover", "--topk", str(table)]) == 0
    assert json.loads(capsys.readouterr().out)["text"] == "the quick fox"


def test_segment_and_locate(tmp_path, capsys):
    trace = tmp_path / "t.csv"
    main(["synth", "--text", "we pay", "--seed", "1", "--out", str(trace)])
    capsys.readouterr()
    assert main(["segment", "--trace", str(trace)]) == 0
    rows = capsys.readouterr().out.strip().splitlines()
    assert rows[0].startswith("start_ms") and len(rows) >= 6
    assert main(["locate", "--trace", str(trace)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc


def test_eval_writes_report(tmp_path, capsys):
    out = tmp_path / "rep"
    assert main(["eval", "--synthetic", "2", "--sessions", "labels", "--out", str(out)]) == 0
    assert (out / "report.json").exists() and (out / "space_confusion.png").exists()
    assert json.loads(capsys.readouterr().out)["format"] == "gazekey-eval"


def test_bad_config_value(capsys):
    assert main(["analyze", "--trace", "-", "--set", "k=zero"]) == 2
