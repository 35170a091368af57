import subprocess
import sys

import pytest

from hybridmimic import cli
from hybridmimic.metrics import MetricsReport
from hybridmimic.rl.trainer import DivergedTraining


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert cli.main(["scenario", "gen", "--seed", "7", "--out", str(d / "scn.yaml")]) == 0
    assert cli.main(["targets", "extract", "--scenario", str(d / "scn.yaml"), "--out", str(d / "tgt.txt")]) == 0
    return d


def test_scenario_gen_is_byte_identical(files, tmp_path):
    # same file name in another directory, since the scenario names its mesh sidecar
    assert cli.main(["scenario", "gen", "--seed", "7", "--out", str(tmp_path / "scn.yaml")]) == 0
    for name in ("scn.yaml", "scn.obj"):
        assert (files / name).read_bytes() == (tmp_path / name).read_bytes()


def test_outputs_start_with_format_version(files):
    for name in ("scn.yaml", "tgt.txt"):
        assert "format-version" in (files / name).read_text().splitlines()[0]


def test_zero_step_policy_fails_the_task(files):
    common = ["--scenario", str(files / "scn.yaml"), "--target", str(files / "tgt.txt")]
    assert cli.main(["train", *common, "--steps", "0", "--quiet", "--out", str(files / "p.ckpt"),
                     "--log", str(files / "log.csv")]) == 0
    assert cli.main(["eval", *common, "--checkpoint", str(files / "p.ckpt"), "--out", str(files / "m.txt")]) == 0
    assert not MetricsReport.load(files / "m.txt").success
    assert cli.main(["metrics", "export", str(files / "m.txt"), "--out", str(files / "all.csv")]) == 0


def test_align_run(files):
    out = files / "aligned.txt"
    assert cli.main(["align", "run", "--scenario", str(files / "scn.yaml"), "--target", str(files / "tgt.txt"),
                     "--out", str(out), "--trace", str(files / "trace.csv")]) == 0
    assert out.exists() and (files / "trace.csv").exists()


def test_validation_failures_exit_2(files, tmp_path):
    assert cli.main(["targets", "extract", "--scenario", str(tmp_path / "missing.yaml")]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("format-version: 1\ntrainer:\n  no_such_key: 1\n")
    assert cli.main(["targets", "extract", "--scenario", str(files / "scn.yaml"), "--config", str(bad),
                     "--out", str(tmp_path / "t.txt")]) == 2
    with pytest.raises(SystemExit) as exc:
        cli.main(["train"])
    assert exc.value.code == 2


def test_divergence_exits_3(monkeypatch, tmp_path):
    def boom(_):
        raise DivergedTraining("non-finite actor loss")
    monkeypatch.setattr(cli, "cmd_scenario_gen", boom)
    assert cli.main(["scenario", "gen", "--out", str(tmp_path / "x.yaml")]) == 3


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "hybridmimic.cli", "scenario", "gen", "--out", str(tmp_path / "s.yaml")],
                       capture_output=True, text=True)
    assert r.returncode == 0 and (tmp_path / "s.yaml").exists()
