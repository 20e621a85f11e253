import json

import numpy as np
import pytest

from cascsim.cli import main
from cascsim.config import config_from_dict, load_config
from cascsim.errors import ConfigError
from cascsim.trace import generate_synthetic_trace, SyntheticTraceParams, write_trace_csv
from cascsim.cascade import CALIBRATION_GRID
from cascsim.trace import trace_forward_rate


def tiny_config_doc(count=2, kind="static"):
    return {
        "name": "tiny",
        "fleet": [{
            "tier": "mid", "count": count, "t_inf_ms": 43.0,
            "trace": {"synthetic": {
                "light_accuracy": 0.75,
                "heavy_accuracy_given_light_correct": 0.9,
                "heavy_accuracy_given_light_wrong": 0.4,
                "count": 200,
            }},
        }],
        "server": {"batch_latency_table": {"1": 15.0, "2": 20.0}, "max_effective_batch": 2},
        "scheduler": {"kind": kind, "initial_threshold": 0.5},
        "network": {"uplink_ms": 0.0, "downlink_ms": 0.0},
        "slos_ms": [100.0, 200.0],
        "seeds": [1, 2, 3],
    }


def write_config(tmp_path, doc):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    return str(path)


class TestCapacityCommand:
    TABLE = '{"1": 10, "2": 12, "4": 16, "8": 24, "16": 40}'

    def test_greedy_worked_example(self, capsys):
        assert main(["capacity", "--table", self.TABLE, "--slo", "100"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["capacity"] == 36
        assert doc["schedule"] == [[16, 2], [4, 1]]
        assert doc["time_used_ms"] == 96.0

    def test_exact_solver_agrees(self, capsys):
        assert main(["capacity", "--table", self.TABLE, "--slo", "100", "--exact"]) == 0
        assert json.loads(capsys.readouterr().out)["capacity"] == 36

    def test_zero_slo_fails_with_error_json(self, capsys):
        assert main(["capacity", "--table", self.TABLE, "--slo", "0"]) == 1
        err = json.loads(capsys.readouterr().err)
        assert "slo" in err["message"]

    def test_bad_table_json(self, capsys):
        assert main(["capacity", "--table", "{oops", "--slo", "100"]) == 1
        assert json.loads(capsys.readouterr().err)["error"] == "ConfigError"


class TestSimulateCommand:
    def test_reports_per_seed_plus_mean(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path, tiny_config_doc())
        out = tmp_path / "out"
        assert main(["simulate", "--config", cfg_path, "--out", str(out)]) == 0
        for seed in (1, 2, 3):
            assert (out / f"report_seed{seed}.json").is_file()
        mean = json.loads((out / "report_mean.json").read_text())
        assert mean["seeds"] == [1, 2, 3]
        stdout_doc = json.loads(capsys.readouterr().out)
        assert stdout_doc == mean

    def test_seed_list_override(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path, tiny_config_doc())
        out = tmp_path / "out"
        assert main(["simulate", "--config", cfg_path, "--out", str(out),
                     "--seed-list", "7"]) == 0
        assert (out / "report_seed7.json").is_file()
        assert not (out / "report_seed1.json").exists()

    def test_event_log_needs_out_dir(self, capsys, tmp_path):
        cfg_path = write_config(tmp_path, tiny_config_doc())
        assert main(["simulate", "--config", cfg_path, "--event-log"]) == 1

    def test_missing_batch_table_names_field(self, tmp_path, capsys):
        doc = tiny_config_doc()
        del doc["server"]["batch_latency_table"]
        cfg_path = write_config(tmp_path, doc)
        assert main(["simulate", "--config", cfg_path]) == 1
        err = json.loads(capsys.readouterr().err)
        assert "server.batch_latency_table" in err["message"]

    def test_preset_run_lands_near_calibrated_forward_rate(self, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["simulate", "--config", "homog_efflite0_inceptionv3",
                     "--scheduler", "static", "--seed-list", "1",
                     "--out", str(out)]) == 0
        report = json.loads((out / "report_seed1.json").read_text())
        assert abs(report["forward_rate"] - 0.30) < 0.05
        # with a static threshold the realized rate equals the trace rate
        cfg = load_config("homog_efflite0_inceptionv3")
        threshold = cfg.resolve_initial_thresholds()[0]
        traces = cfg.build_traces(seed=1)
        rates = [trace_forward_rate(traces[d], threshold.value) for d in traces]
        assert report["forward_rate"] == pytest.approx(float(np.mean(rates)))


class TestSweepCommand:
    def test_series_shape(self, tmp_path):
        cfg_path = write_config(tmp_path, tiny_config_doc())
        out = tmp_path / "sweep"
        assert main(["sweep", "--config", cfg_path, "--devices", "2..6:2",
                     "--scheduler", "both", "--seed-list", "1", "--out", str(out)]) == 0
        lines = (out / "sweep.csv").read_text().strip().split("\n")
        header, rows = lines[0], lines[1:]
        assert header == "devices,seed,scheduler,slo_ms,satisfaction,throughput,accuracy,forward_rate"
        # 3 points x 1 seed x 2 schedulers x 2 slos
        assert len(rows) == 12
        devices = sorted({int(r.split(",")[0]) for r in rows})
        assert devices == [2, 4, 6]

    def test_indivisible_heterogeneous_count_rejected(self, capsys):
        assert main(["sweep", "--config", "heterog_inceptionv3",
                     "--devices", "5..10:5", "--seed-list", "1"]) == 1
        err = json.loads(capsys.readouterr().err)
        assert "not divisible" in err["message"]

    def test_empty_range_rejected(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path, tiny_config_doc())
        assert main(["sweep", "--config", cfg_path, "--devices", "6..2:2"]) == 1
        assert json.loads(capsys.readouterr().err)["error"] == "ConfigError"

    def test_malformed_range_rejected(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path, tiny_config_doc())
        assert main(["sweep", "--config", cfg_path, "--devices", "5-10"]) == 1


class TestCalibrateCommand:
    def test_trace_file_calibration_matches_grid_oracle(self, tmp_path, capsys):
        trace = generate_synthetic_trace(
            SyntheticTraceParams(0.75, 0.9, 0.4, count=2000), seed=5)
        path = tmp_path / "trace.csv"
        with open(path, "w", encoding="utf-8") as fh:
            write_trace_csv(trace, fh)
        assert main(["calibrate", "--trace", str(path), "--target", "0.3"]) == 0
        doc = json.loads(capsys.readouterr().out)
        best = min(CALIBRATION_GRID,
                   key=lambda t: (abs(trace_forward_rate(trace, t) - 0.3), t))
        assert doc["forward_rate"] == pytest.approx(
            trace_forward_rate(trace, best), abs=0.005)

    def test_config_calibration_lists_groups(self, capsys):
        assert main(["calibrate", "--config", "heterog_inceptionv3"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert [g["tier"] for g in doc["thresholds"]] == ["low", "mid", "high"]
        assert all(0.0 <= g["threshold"] <= 1.0 for g in doc["thresholds"])

    def test_needs_a_source(self, capsys):
        assert main(["calibrate", "--target", "0.3"]) == 1


class TestConfigRoundTrip:
    def test_dict_round_trip_is_stable(self):
        cfg = load_config("heterog_inceptionv3")
        again = config_from_dict(cfg.to_dict())
        assert again.to_dict() == cfg.to_dict()

    def test_unknown_preset_lists_alternatives(self):
        with pytest.raises(ConfigError) as err:
            load_config("nope_not_a_preset")
        assert "homog_efflite0_inceptionv3" in str(err.value)

    def test_all_presets_load_and_validate(self):
        from cascsim.config import preset_names
        for name in preset_names():
            cfg = load_config(name)
            cfg.validate()
            assert cfg.total_devices >= 1
