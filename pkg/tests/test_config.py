import json
from pathlib import Path

import numpy as np
import pytest

from app.models.schemas import AirReport, ExperimentConfig, ParamTableRow
from app.utils.config_loader import ConfigLoader, confine_path, config_to_ini, parse_power_grid
from app.utils.errors import ConfigurationError
from app.utils.file_formats import (
    AIR_COLUMNS,
    PARAM_TABLE_COLUMNS,
    dump_waveform,
    format_air_tsv,
    format_param_table,
    format_simulation_tsv,
    load_waveform,
    parse_param_table,
    read_param_table,
)

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

MINIMAL = """
[experiment]
channel = cpan
powers_dbm = -6, -5
stages = 1, 4

[cpan]
sigma_theta2 = 0.005
mu_delta = 0.99
sigma_n2 = 3e-7
"""


class TestPowerGrid:
    def test_inclusive_range(self):
        assert parse_power_grid("-14:-3:1") == [float(p) for p in range(-14, -2)]

    def test_fractional_step(self):
        assert parse_power_grid("-6:-5:0.5") == [-6.0, -5.5, -5.0]

    def test_list(self):
        assert parse_power_grid("-8, -6.5") == [-8.0, -6.5]

    def test_bad_range(self):
        with pytest.raises(ConfigurationError):
            parse_power_grid("-8:-6")


class TestConfigLoader:
    @pytest.mark.parametrize("name", ["reference_link.ini", "desk.ini", "awgn.ini", "cpan_benchmark.ini"])
    def test_shipped_configs_parse(self, name):
        cfg = ConfigLoader.load(str(CONFIG_DIR / name))
        assert cfg.powers_dbm
        assert all(cfg.n % s == 0 for s in cfg.stages)

    def test_reference_link(self):
        cfg = ConfigLoader.load(str(CONFIG_DIR / "reference_link.ini"))
        assert cfg.fiber == cfg.fiber.reference_link()
        assert cfg.stages == [1, 2, 4, 8, 16, 64]
        assert len(cfg.powers_dbm) == 12

    def test_desk_preset(self):
        cfg = ConfigLoader.load(str(CONFIG_DIR / "desk.ini"))
        assert (cfg.fiber.n_wdm, cfg.n, cfg.n_seq, cfg.numerics.n_steps) == (3, 4096, 24, 250)

    def test_defaults(self):
        cfg = ConfigLoader.parse_ini(MINIMAL)
        assert cfg.receivers == ["sic"]
        assert cfg.n == 8192
        assert cfg.cpan.approximation_threshold == 0.1

    @pytest.mark.parametrize("name", ["reference_link.ini", "awgn.ini", "cpan_benchmark.ini"])
    def test_round_trip(self, name):
        cfg = ConfigLoader.load(str(CONFIG_DIR / name))
        assert ConfigLoader.parse_ini(config_to_ini(cfg)) == cfg
        assert ConfigLoader.parse_ini(cfg.to_ini()) == cfg

    def test_json(self):
        cfg = ConfigLoader.parse_ini(MINIMAL)
        assert ConfigLoader.parse(json.dumps(cfg.model_dump()), "exp.json") == cfg

    @pytest.mark.parametrize(
        "text,message",
        [
            (MINIMAL.replace("stages = 1, 4", "stages = 1, 3"), "divide"),
            (MINIMAL.replace("[cpan]", "[cpan]\ncolour = red"), "Unknown keys"),
            (MINIMAL + "\n[extra]\nkey = 1\n", "Unknown config sections"),
            (MINIMAL.replace("powers_dbm = -6, -5", "powers_dbm = "), "powers_dbm"),
            (MINIMAL.replace("channel = cpan", "channel = fiber\nreceivers = genie"), "Genie"),
            ("[experiment]\nchannel = awgn\npowers_dbm = 0\n", "sigma_n2"),
            ("[cpan]\nsigma_n2 = 1\n", "experiment"),
        ],
    )
    def test_invalid(self, text, message):
        with pytest.raises(ConfigurationError, match=message):
            ConfigLoader.parse_ini(text)

    def test_non_cscg_baselines_rejected(self):
        text = MINIMAL.replace("stages = 1, 4", "stages = 1\nreceivers = awgn")
        text += "\n[constellation]\nkind = urr\nn_rings = 4\n"
        with pytest.raises(ConfigurationError, match="CSCG"):
            ConfigLoader.parse_ini(text)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            ConfigLoader.load(str(tmp_path / "missing.ini"))

    def test_file_checks(self):
        assert ConfigLoader.validate_file_format("exp.INI")
        assert not ConfigLoader.validate_file_format("exp.pdf")
        assert ConfigLoader.validate_file_size(1024)
        assert not ConfigLoader.validate_file_size(2 * 1024 * 1024)


class TestParamTable:
    def test_shipped_table(self):
        rows = read_param_table(str(CONFIG_DIR / "cpan_params_reference.tsv"))
        assert [r.power_dbm for r in rows] == [float(p) for p in range(-14, -2)]
        params = [r.to_cpan_params() for r in rows]
        assert all(b.sigma_theta2 > a.sigma_theta2 for a, b in zip(params, params[1:]))
        assert all(b.sigma_n2 >= a.sigma_n2 for a, b in zip(params, params[1:]))
        assert {r.sigma_ase2 for r in rows} == {2.951e-7}

    def test_format_and_parse(self):
        rows = [ParamTableRow(power_dbm=-5.0, sigma_theta2=1e-3, sigma_delta2=1.99e-5, mu_delta=0.99,
                              sigma_n2=3e-7, sigma_ase2=2.951e-7)]
        text = format_param_table(rows)
        assert text.splitlines()[0].split("\t") == list(PARAM_TABLE_COLUMNS)
        assert parse_param_table(text) == rows

    def test_bad_header(self):
        with pytest.raises(ConfigurationError):
            parse_param_table("power\tsigma\n-5\t1\n")

    def test_errors_do_not_quote_file_content(self):
        with pytest.raises(ConfigurationError) as excinfo:
            parse_param_table("root:x:0:0:root:/root:/bin/bash\n")
        assert "root:" not in str(excinfo.value)
        header = "\t".join(PARAM_TABLE_COLUMNS)
        with pytest.raises(ConfigurationError, match="line 2") as excinfo:
            parse_param_table(f"{header}\n-5\tsecret\t0\t0.9\t1e-7\t1e-7\n")
        assert "secret" not in str(excinfo.value)

    def test_missing_table(self, tmp_path):
        with pytest.raises(ConfigurationError):
            read_param_table(str(tmp_path / "none.tsv"))


class TestAirTsv:
    def test_layout(self):
        ring = AirReport(receiver="sic", constellation="URR4", n_rings=4, power_dbm=-5.0, stages=2,
                         per_stage_bits=[3.0, 3.5], per_stage_ci=[0.01, 0.01], amplitude_bits=1.5,
                         total_bpcu=8.0, ci_halfwidth=0.02, n_sequences=24, n_symbols=4096, seed=7)
        lines = format_air_tsv([ring]).splitlines()
        assert lines[0].split("\t") == list(AIR_COLUMNS)
        stages = [line.split("\t")[4] for line in lines[1:]]
        assert stages == ["amplitude", "1", "2", "total"]
        total = lines[-1].split("\t")
        assert total[0] == "-5" and total[5] == "8.000000" and total[-1] == "sic"

    def test_report_total_must_add_up(self):
        with pytest.raises(ValueError):
            AirReport(per_stage_bits=[1.0, 2.0], total_bpcu=4.0, ci_halfwidth=0.0, n_sequences=1, n_symbols=8)


class TestWaveform:
    def test_dump_and_load(self, tmp_path, rng):
        samples = rng.normal(size=100) + 1j * rng.normal(size=100)
        path = str(tmp_path / "w.bin")
        dump_waveform(samples, 800e9, path)
        loaded, rate = load_waveform(path)
        assert rate == 800e9
        np.testing.assert_array_equal(loaded, samples)
        assert (tmp_path / "w.bin").stat().st_size == 16 + 16 * 100

    def test_truncated(self, tmp_path):
        path = tmp_path / "w.bin"
        path.write_bytes(b"\x00" * 20)
        with pytest.raises(ConfigurationError):
            load_waveform(str(path))


def test_simulation_tsv():
    text = format_simulation_tsv(np.array([1 + 2j]), np.array([0.5 - 1j]))
    assert text.splitlines() == ["index\tx_re\tx_im\ty_re\ty_im", "0\t1.0\t2.0\t0.5\t-1.0"]


class TestConfinePath:
    def test_relative_path_from_project_root(self):
        resolved = confine_path("configs/cpan_params_reference.tsv", [str(CONFIG_DIR)])
        assert resolved == str(CONFIG_DIR / "cpan_params_reference.tsv")

    def test_output_directory_allowed(self, tmp_path):
        table = tmp_path / "run_params.tsv"
        assert confine_path(str(table), [str(CONFIG_DIR), str(tmp_path)]) == str(table.resolve())

    @pytest.mark.parametrize("path", ["/etc/passwd", "configs/../../../../etc/passwd", "app/main.py"])
    def test_outside_paths_rejected(self, path):
        with pytest.raises(ConfigurationError, match="outside"):
            confine_path(path, [str(CONFIG_DIR)])
