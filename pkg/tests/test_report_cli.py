import json

import pytest

from badusb_forensics.cli import main, run_analysis
from badusb_forensics.detector import DetectionConfig, Severity, keystroke_rate_series
from badusb_forensics.ducky_gen import compile_commands, load_scenario, parse_ducky, synthesize_scenario
from badusb_forensics.report import (
    AnalysisReport,
    ReportFormatError,
    emit_rate_plot,
    ingest_structured,
    render_report,
)

from conftest import FIXTURES

T0 = 133198768300940000
FOUR = {"HID_DRIVER_LOAD", "PNP_DEVICE", "SUSPICIOUS_PROCESS", "VENDOR_WATCHLIST"}


@pytest.fixture(scope="module")
def replay():
    logs = synthesize_scenario(load_scenario("paper-replay")).as_dict()
    report, analysis, _ = run_analysis({k: v.encode() for k, v in logs.items()}, DetectionConfig())
    return report, analysis


@pytest.fixture
def replay_dir(tmp_path):
    assert main(["generate", "--scenario", "paper-replay", "--out-dir", str(tmp_path)]) == 0
    return tmp_path


def _analyze_args(d):
    return ["analyze", "--keys", str(d / "keys.log"), "--procs", str(d / "processes.log"),
            "--images", str(d / "images.log"), "--pnp", str(d / "pnp.log")]


def test_empty_report():
    r = AnalysisReport(findings=[])
    assert b"no findings" in render_report(r, "text")
    doc = json.loads(render_report(r, "structured"))
    assert doc["findings"] == [] and doc["format_version"] == 1
    with pytest.raises(ValueError):
        render_report(r, "yaml")


def test_replay_report(replay):
    report, analysis = replay
    (finding,) = report.findings
    assert finding.severity is Severity.HIGH
    text = render_report(report, "text").decode()
    assert "severity HIGH" in text and "150 keys over 10.000 s" in text
    assert "2023-02-03 05:48:10.094 +00:00" in text
    order = [text.index(f"  {label} ") for label in ("device", "driver", "burst", "process")]
    assert order == sorted(order)
    doc = json.loads(render_report(report, "structured"))
    (fd,) = doc["findings"]
    assert FOUR <= set(fd["indicators"]) and fd["severity"] == "HIGH"
    assert {e["indicator"] for e in fd["evidence"]} == set(fd["indicators"])
    assert all(e["utc"].endswith("+00:00") for e in fd["evidence"])


def test_render_is_deterministic(replay):
    report, _ = replay
    for fmt in ("text", "structured"):
        assert render_report(report, fmt) == render_report(report, fmt)


def test_structured_ingest_round_trip(replay):
    report, _ = replay
    again = ingest_structured(render_report(report, "structured"))
    assert again == report
    empty = AnalysisReport(findings=[], config_echo=DetectionConfig(vid_pid_watchlist={(1, 2)}))
    assert ingest_structured(render_report(empty, "structured")) == empty


def test_ingest_rejects_other_versions(replay):
    doc = json.loads(render_report(replay[0], "structured"))
    doc["format_version"] = 99
    with pytest.raises(ReportFormatError):
        ingest_structured(json.dumps(doc))


def test_replay_plot_plateau(replay):
    _, analysis = replay
    rates = [p.rate for p in analysis.series.points]
    assert max(rates) == 15.0
    burst = analysis.bursts[0]
    outside = [p.rate for i, p in enumerate(analysis.series.points)
               if not burst.first_point - 4 <= i <= burst.last_point + 4]
    assert max(outside) < 8


def test_csv_rows_and_header(replay):
    _, analysis = replay
    lines = emit_rate_plot(analysis.series, "csv").decode().splitlines()
    assert lines[0] == "window_start_utc,count,rate"
    assert len(lines) - 1 == len(analysis.series.points)
    empty = keystroke_rate_series([], DetectionConfig())
    assert emit_rate_plot(empty, "csv") == b"window_start_utc,count,rate\n"


def test_csv_constant_200():
    keys = compile_commands(parse_ducky("STRING " + "q" * 400), T0, 5)
    series = keystroke_rate_series(keys, DetectionConfig(stride_seconds=1.0))
    rows = emit_rate_plot(series, "csv").decode().splitlines()[1:]
    assert rows and all(r.endswith(",200,200.0") for r in rows)


def test_svg_shape(replay):
    svg = emit_rate_plot(replay[1].series, "svg").decode()
    assert 'viewBox="0 0 1000 400"' in svg and svg.count("<polyline") == 1
    assert "keys/s" in svg and "window start (UTC)" in svg
    empty = emit_rate_plot(keystroke_rate_series([], DetectionConfig()), "svg").decode()
    assert '<polyline points=""' in empty
    with pytest.raises(ValueError):
        emit_rate_plot(replay[1].series, "png")


# CLI

def test_cli_generate_and_analyze(replay_dir, capsys):
    assert sorted(p.name for p in replay_dir.iterdir()) == ["images.log", "keys.log", "pnp.log", "processes.log"]
    capsys.readouterr()
    assert main(_analyze_args(replay_dir) + ["--format", "structured"]) == 0
    doc = json.loads(capsys.readouterr().out)
    (fd,) = doc["findings"]
    assert fd["severity"] == "HIGH" and FOUR <= set(fd["indicators"])


def test_cli_analyze_outputs(replay_dir):
    out, plot = replay_dir / "r.txt", replay_dir / "rate.csv"
    assert main(_analyze_args(replay_dir) + ["-o", str(out), "--plot", str(plot)]) == 0
    assert "severity HIGH" in out.read_text()
    assert plot.read_text().startswith("window_start_utc,count,rate\n")
    svg = replay_dir / "rate.svg"
    assert main(_analyze_args(replay_dir) + ["-o", str(out), "--plot", str(svg)]) == 0
    assert svg.read_text().startswith("<svg")


def test_cli_config(replay_dir, tmp_path, capsys):
    conf = tmp_path / "c.conf"
    conf.write_text("burst_rate_threshold = 20\n")
    capsys.readouterr()
    assert main(_analyze_args(replay_dir) + ["--config", str(conf), "--format", "structured"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["findings"] == [] and doc["config"]["burst_rate_threshold"] == 20.0
    conf.write_text("nonsense = 1\n")
    assert main(_analyze_args(replay_dir) + ["--config", str(conf)]) == 1


def test_cli_redacted_generate(tmp_path, capsys):
    assert main(["generate", "--scenario", "paper-replay", "--out-dir", str(tmp_path), "--redact"]) == 0
    assert "0x" not in (tmp_path / "keys.log").read_text()
    capsys.readouterr()
    assert main(_analyze_args(tmp_path)) == 0
    assert "severity HIGH" in capsys.readouterr().out


def test_cli_plot(replay_dir, capsys):
    capsys.readouterr()
    assert main(["plot", "--keys", str(replay_dir / "keys.log")]) == 0
    out = capsys.readouterr().out
    assert out.startswith("window_start_utc,count,rate\n")
    assert main(["plot", "--keys", str(replay_dir / "keys.log"), "--format", "svg",
                 "--window", "2", "--stride", "0.5"]) == 0
    assert "window 2 s, stride 0.5 s" in capsys.readouterr().out
    assert main(["plot", "--keys", str(replay_dir / "keys.log"), "--window", "0"]) == 1


@pytest.mark.parametrize("name, kind", [
    ("kernel_process.log", None), ("kernel_pnp.log", "pnp"), ("rubber_ducky_case.log", None)])
def test_cli_parse_check_fixtures(name, kind, capsys):
    args = ["parse-check", "--file", str(FIXTURES / name)] + (["--kind", kind] if kind else [])
    assert main(args) == 0
    assert "errors=0" in capsys.readouterr().out


def test_cli_parse_check_failure(tmp_path, capsys):
    bad = tmp_path / "bad.log"
    bad.write_text("KeyLog:1:0xZZ:EndKeyLog\nPnpLog:nope")
    assert main(["parse-check", "--file", str(bad)]) == 2
    assert "errors=2" in capsys.readouterr().out
    assert main(["parse-check", "--file", str(FIXTURES / "kernel_pnp.log"), "--kind", "key"]) == 2
    mixed = tmp_path / "mixed.log"
    mixed.write_text("KeyLog:1:0x1E:EndKeyLog\nKeyLog:oops:EndKeyLog\n")
    assert main(["parse-check", "--file", str(mixed)]) == 0
    assert main(["analyze", "--keys", str(bad)]) == 2


@pytest.mark.parametrize("argv", [
    [], ["frobnicate"], ["analyze"], ["analyze", "--bogus", "x"], ["generate", "--scenario", "nope.scn", "--out-dir", "."],
    ["plot"], ["parse-check", "--file", "x", "--kind", "mouse"],
])
def test_cli_usage_errors(argv, capsys):
    assert main(argv) == 1


def test_cli_missing_file(tmp_path, capsys):
    assert main(["analyze", "--keys", str(tmp_path / "missing.log")]) == 1
    assert "cannot read" in capsys.readouterr().err


def test_cli_deterministic(replay_dir, tmp_path):
    outputs = []
    for run in ("a", "b"):
        d = tmp_path / run
        d.mkdir()
        assert main(["generate", "--scenario", "paper-replay", "--out-dir", str(d)]) == 0
        assert main(_analyze_args(d) + ["-o", str(d / "r.json"), "--format", "structured",
                                        "--plot", str(d / "p.svg")]) == 0
        assert main(_analyze_args(d) + ["-o", str(d / "r.txt"), "--plot", str(d / "p.csv")]) == 0
        outputs.append({p.name: p.read_bytes() for p in d.iterdir()})
    assert outputs[0] == outputs[1]


def test_benign_scenario_clean():
    logs = synthesize_scenario(load_scenario("benign-razer")).as_dict()
    report, analysis, _ = run_analysis({k: v.encode() for k, v in logs.items()}, DetectionConfig())
    assert analysis.bursts == [] and report.findings == []
    assert b"no findings" in render_report(report)
