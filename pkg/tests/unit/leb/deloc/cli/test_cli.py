import json

import pytest

from leb.deloc import CalibrationConstants
from leb.deloc.cli import (
    EXIT_ACCEPTANCE,
    EXIT_CONFIGURATION,
    EXIT_OK,
    auto_l,
    main,
    replay,
    run,
)
from leb.deloc.cli import _cli
from leb.deloc.cli._reports import sha256
from leb.deloc.ensembles import derive_seed
from leb.deloc.experiments import localization_search


def deloc_scan(calibration, out, *extra):
    return main(
        [
            "deloc-scan",
            "--n",
            "8",
            "--trials",
            "4",
            "--seed",
            "11",
            "--calibration",
            calibration,
            "--out",
            str(out),
            "--log-level",
            "WARNING",
            *extra,
        ]
    )


@pytest.mark.parametrize("n, l", [(256, 31), (64, 16), (32, 8), (8, 2)])
def test_auto_l(n, l):
    assert auto_l(n) == l


def test_default_l_is_admissible(out):
    code = main(["test-projection", "--n", "64", "--trials", "2", "--out", str(out)])

    assert code == EXIT_OK
    assert json.loads((out / "manifest.json").read_text("utf-8"))["results"]["l"] == 16


class TestDelocScan:
    def test_writes_reports_and_manifest(self, calibration, out):
        assert deloc_scan(calibration, out) == EXIT_OK

        manifest = json.loads((out / "manifest.json").read_text("utf-8"))
        assert manifest["command"] == "deloc-scan"
        assert manifest["seed"] == 11
        assert manifest["config"]["run"]["n"] == 8
        assert manifest["calibration"]["family"] == "gaussian"
        assert set(manifest["reports"]) == {"deloc_scan.csv", "deloc_scan.json"}
        for name, digest in manifest["reports"].items():
            assert sha256(out / name) == digest

        lines = (out / "deloc_scan.csv").read_text("utf-8").splitlines()
        assert lines[0] == "trial,n,statistic,bound,violated"
        assert len(lines) == 5

    def test_identical_seeds_give_identical_bytes(self, calibration, tmp_path):
        deloc_scan(calibration, tmp_path / "a")
        deloc_scan(calibration, tmp_path / "b", "--threads", "2")

        first = (tmp_path / "a" / "deloc_scan.csv").read_bytes()
        assert first == (tmp_path / "b" / "deloc_scan.csv").read_bytes()

    def test_replay_reproduces_the_reports(self, calibration, tmp_path):
        deloc_scan(calibration, tmp_path / "a")

        code = replay(str(tmp_path / "a" / "manifest.json"), str(tmp_path / "b"))

        assert code == EXIT_OK
        for name in ("deloc_scan.csv", "deloc_scan.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_replay_subcommand(self, calibration, tmp_path):
        deloc_scan(calibration, tmp_path / "a")

        code = main(
            ["replay", str(tmp_path / "a" / "manifest.json"), "--out", str(tmp_path / "b")]
        )

        assert code == EXIT_OK

    def test_acceptance_failure(self, tmp_path, out):
        tiny = CalibrationConstants(C_main=1e-6).save(tmp_path / "tiny.json")

        assert deloc_scan(str(tiny), out) == EXIT_ACCEPTANCE
        assert (out / "deloc_scan.csv").is_file()
        assert (out / "manifest.json").is_file()


class TestConfigurationErrors:
    def test_missing_calibration(self, tmp_path, out):
        assert deloc_scan(str(tmp_path / "missing.json"), out) == EXIT_CONFIGURATION
        assert not out.exists()

    def test_default_calibration_directory(self, tmp_path, out, monkeypatch):
        monkeypatch.chdir(tmp_path)

        code = main(["deloc-scan", "--n", "8", "--trials", "2", "--out", str(out)])

        assert code == EXIT_CONFIGURATION

    def test_unknown_key(self, calibration, out):
        assert deloc_scan(calibration, out, "--set", "run.size=3") == EXIT_CONFIGURATION

    def test_bad_config_file(self, calibration, tmp_path, out):
        path = tmp_path / "bad.ini"
        path.write_text("[network]\nhost = x\n", "utf-8")

        assert deloc_scan(calibration, out, "--config", str(path)) == EXIT_CONFIGURATION

    def test_unreadable_manifest(self, tmp_path, out):
        path = tmp_path / "manifest.json"
        path.write_text("{}", "utf-8")

        assert main(["replay", str(path), "--out", str(out)]) == EXIT_CONFIGURATION

    def test_unknown_subcommand(self):
        with pytest.raises(ValueError):
            run("scan")

    def test_unknown_subcommand_on_the_command_line(self):
        with pytest.raises(SystemExit):
            main(["scan"])


@pytest.mark.parametrize(
    "argv",
    [
        ["test-projection", "--n", "32", "--l", "4", "--trials", "3"],
        ["distances", "--n", "30", "--trials", "10"],
        ["sv-probe", "--n", "16", "--trials", "10"],
        ["sv-probe", "--n", "16", "--trials", "5", "--set", "sv_probes.probe=intermediate_sv"],
        ["balancing", "--n", "32", "--l", "4", "--trials", "5"],
        ["localize", "--n", "16", "--l", "2", "--trials", "2"],
        ["pipeline", "--n", "8", "--trials", "2"],
    ],
    ids=lambda argv: "-".join(argv[:1] + [a for a in argv if "=" in a]),
)
def test_subcommands(calibration, out, argv):
    code = main([*argv, "--calibration", calibration, "--out", str(out), "--log-level", "ERROR"])

    assert code == EXIT_OK
    assert (out / "manifest.json").is_file()


def test_test_projection_records_l(out):
    main(["test-projection", "--n", "32", "--l", "4", "--trials", "2", "--out", str(out)])

    manifest = json.loads((out / "manifest.json").read_text("utf-8"))
    assert manifest["results"]["l"] == 4
    assert manifest["calibration"] is None


def test_calibrate(tmp_path, out):
    target = tmp_path / "cal" / "gaussian.json"

    code = main(
        ["calibrate", "--n", "16", "--trials", "10", "--calibration", str(target)]
        + ["--out", str(out)]
    )

    assert code == EXIT_OK
    assert CalibrationConstants.load(target).family == "gaussian"


def test_localize_seeds_the_optimizer_from_the_run_seed(calibration, out, monkeypatch):
    seeds = []

    def recording_search(G, W, l, net, params, *args):
        seeds.append(params.seed)
        return localization_search(G, W, l, net, params, *args)

    monkeypatch.setattr(_cli, "localization_search", recording_search)

    code = main(
        ["localize", "--n", "16", "--l", "2", "--trials", "2", "--seed", "5"]
        + ["--calibration", calibration, "--out", str(out), "--log-level", "ERROR"]
    )

    assert code == EXIT_OK
    assert seeds == [derive_seed(5, 0), derive_seed(5, 1)]
