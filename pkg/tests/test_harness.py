import csv
import json
import os

import numpy as np
import pytest

from certcc.cli import main
from certcc.evaluate import evaluate, read_state_log
from certcc.network import load_checkpoint
from certcc.report import audit_certificates, build_report
from certcc.traces import load_trace


MICRO_CONFIG = """
# micro configuration for harness tests
hidden = 8
depth = 1
history_k = 2
actor_count = 1
batch_size = 32
warmup_epochs = 20
total_epochs = 120
replay_capacity = 2000
episode_s = 4.0
bw_lo_mbps = 4.0
bw_hi_mbps = 12.0
rtt_lo_ms = 20.0
rtt_hi_ms = 60.0
checkpoint_window = 40
lambda = 0.25
n_components = 2
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One micro training run plus traces, shared across harness tests."""
    root = tmp_path_factory.mktemp("harness")
    cfg_path = root / "micro.cfg"
    cfg_path.write_text(MICRO_CONFIG)
    trace_path = root / "square_a.trace"
    assert main(["gen-traces", "--shape", "square", "--out", str(trace_path),
                 "--lo-mbps", "4", "--hi-mbps", "8", "--period-s", "2",
                 "--duration-s", "8"]) == 0
    run_dir = root / "run"
    assert main(["train", "--config", str(cfg_path), "--seed", "5",
                 "--out-dir", str(run_dir)]) == 0
    return {"root": root, "config": cfg_path, "trace": trace_path,
            "run_dir": run_dir, "checkpoint": run_dir / "checkpoint_best.npz"}


class TestGenTraces:
    @pytest.mark.parametrize("shape", ["constant", "square", "ramp_drop", "triangle"])
    def test_shapes_produce_loadable_files(self, tmp_path, shape):
        out = tmp_path / f"{shape}.trace"
        code = main(["gen-traces", "--shape", shape, "--out", str(out),
                     "--lo-mbps", "6", "--hi-mbps", "12", "--duration-s", "10"])
        assert code == 0
        trace = load_trace(out)
        assert trace.duration_ms == 10_000.0

    def test_unknown_shape_is_usage_error(self, tmp_path):
        code = main(["gen-traces", "--shape", "sawtooth",
                     "--out", str(tmp_path / "x.trace")])
        assert code == 1

    def test_bad_params_are_runtime_error(self, tmp_path):
        code = main(["gen-traces", "--shape", "constant",
                     "--out", str(tmp_path / "x.trace"), "--duration-s", "-5"])
        assert code == 2


class TestTrainCli:
    def test_artifacts(self, workspace):
        run_dir = workspace["run_dir"]
        assert (run_dir / "train_log.csv").exists()
        assert (run_dir / "checkpoint_best.npz").exists()
        assert (run_dir / "checkpoint_last.npz").exists()
        config_echo = (run_dir / "config.txt").read_text()
        assert "lam = 0.25" in config_echo
        nets, _, cfg = load_checkpoint(workspace["checkpoint"])
        assert cfg["hidden"] == 8 and cfg["seed"] == 5

    def test_seed_is_mandatory(self, tmp_path):
        code = main(["train", "--out-dir", str(tmp_path / "r")])
        assert code == 1

    def test_unknown_config_key_rejected(self, tmp_path):
        code = main(["train", "--seed", "1", "--out-dir", str(tmp_path / "r"),
                     "--set", "no_such_key=1"])
        assert code == 2


class TestEvalCli:
    def _run_eval(self, workspace, out_name, extra=()):
        out_dir = workspace["root"] / out_name
        code = main(["eval", "--checkpoint", str(workspace["checkpoint"]),
                     "--traces", str(workspace["trace"]), "--seed", "9",
                     "--out-dir", str(out_dir), "--n-components", "10",
                     "--repeats", "2", "--min-rtt-ms", "30", *extra])
        return code, out_dir

    def test_eval_artifacts_and_schema(self, workspace):
        code, out_dir = self._run_eval(workspace, "eval1")
        assert code == 0
        summary = json.loads((out_dir / "eval_summary.json").read_text())
        trace_entry = summary["traces"]["square_a"]
        for key in ("utilization", "avg_delay_ms", "p95_delay_ms", "loss_rate"):
            assert key in trace_entry
        assert 0.0 <= trace_entry["utilization"] <= 1.001
        assert trace_entry["p95_delay_ms"] >= trace_entry["avg_delay_ms"] >= 0.0
        for key in ("fcc_large", "fcc_small", "fcc_joint",
                    "fcs_large", "fcs_small", "fcs_joint"):
            assert 0.0 <= trace_entry["cert"][key] <= 1.0
        assert (out_dir / "certificates.csv").exists()
        assert (out_dir / "state_log.csv").exists()
        assert (out_dir / "eval_pertrace.csv").exists()

    def test_eval_deterministic(self, workspace):
        _, dir_a = self._run_eval(workspace, "eval_det_a")
        _, dir_b = self._run_eval(workspace, "eval_det_b")
        assert (dir_a / "eval_summary.json").read_bytes() == \
            (dir_b / "eval_summary.json").read_bytes()

    def test_eval_with_noise_reports_deltas(self, workspace):
        code, out_dir = self._run_eval(workspace, "eval_noise",
                                       extra=("--noise", "0.05"))
        assert code == 0
        summary = json.loads((out_dir / "eval_summary.json").read_text())
        entry = summary["traces"]["square_a"]
        assert "noise" in entry and "noise_delta_pct" in entry
        assert "worst_abs" in summary["aggregate"]["noise_delta_pct"]["utilization"]

    def test_missing_traces_is_runtime_error(self, workspace, tmp_path):
        code = main(["eval", "--checkpoint", str(workspace["checkpoint"]),
                     "--traces", str(tmp_path / "nope*.trace"), "--seed", "1",
                     "--out-dir", str(tmp_path / "out")])
        assert code == 2

    def test_mismatched_checkpoint_is_error(self, workspace, tmp_path):
        code = main(["eval", "--checkpoint", str(workspace["checkpoint"]),
                     "--traces", str(workspace["trace"]), "--seed", "1",
                     "--out-dir", str(tmp_path / "out"),
                     "--set", "history_k=7"])
        assert code == 2


class TestCertifyCli:
    def test_offline_matches_live(self, workspace):
        eval_dir = workspace["root"] / "eval_for_certify"
        assert main(["eval", "--checkpoint", str(workspace["checkpoint"]),
                     "--traces", str(workspace["trace"]), "--seed", "9",
                     "--out-dir", str(eval_dir), "--n-components", "10",
                     "--repeats", "1", "--min-rtt-ms", "30"]) == 0
        cert_dir = workspace["root"] / "certify_out"
        assert main(["certify", "--checkpoint", str(workspace["checkpoint"]),
                     "--state-log", str(eval_dir / "state_log.csv"),
                     "--out-dir", str(cert_dir), "--n-components", "10"]) == 0
        offline = json.loads((cert_dir / "certify_summary.json").read_text())
        live = json.loads((eval_dir / "eval_summary.json").read_text())
        live_cert = live["traces"]["square_a"]["cert"]
        for key in ("fcc_large", "fcc_small", "fcs_large", "fcs_small"):
            assert offline[key] == pytest.approx(live_cert[key], abs=1e-12)

    def test_bad_state_log_is_error(self, workspace, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b\n1,2\n")
        code = main(["certify", "--checkpoint", str(workspace["checkpoint"]),
                     "--state-log", str(bad), "--out-dir", str(tmp_path / "o")])
        assert code == 2


class TestReportCli:
    def test_report_builds_and_audits(self, workspace):
        eval_dir = workspace["root"] / "eval_report"
        assert main(["eval", "--checkpoint", str(workspace["checkpoint"]),
                     "--traces", str(workspace["trace"]), "--seed", "9",
                     "--out-dir", str(eval_dir), "--n-components", "10",
                     "--repeats", "2", "--min-rtt-ms", "30"]) == 0
        # merge the training artifacts so one run dir carries everything
        for name in ("train_log.csv", "config.txt"):
            (eval_dir / name).write_bytes((workspace["run_dir"] / name).read_bytes())
        assert main(["report", "--run-dir", str(eval_dir)]) == 0
        report = json.loads((eval_dir / "report.json").read_text())
        assert report["certificate_audit_matches"] is True
        assert "training" in report and "evaluation" in report
        assert (eval_dir / "training_curves.png").exists()
        assert (eval_dir / "eval_summary.png").exists()
        assert (eval_dir / "training_curve.csv").exists()

    def test_report_is_stable(self, workspace, tmp_path):
        eval_dir = workspace["root"] / "eval_report"
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(["report", "--run-dir", str(eval_dir),
                     "--out-dir", str(out_a)]) == 0
        assert main(["report", "--run-dir", str(eval_dir),
                     "--out-dir", str(out_b)]) == 0
        assert (out_a / "report.json").read_bytes() == (out_b / "report.json").read_bytes()

    def test_missing_logs_is_runtime_error(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        assert main(["report", "--run-dir", str(empty)]) == 2


class TestAudit:
    def test_fcc_fcs_recomputable_from_dump(self, workspace):
        eval_dir = workspace["root"] / "eval_audit"
        assert main(["eval", "--checkpoint", str(workspace["checkpoint"]),
                     "--traces", str(workspace["trace"]), "--seed", "3",
                     "--out-dir", str(eval_dir), "--n-components", "5",
                     "--repeats", "1", "--min-rtt-ms", "30"]) == 0
        audit = audit_certificates(eval_dir / "certificates.csv")
        summary = json.loads((eval_dir / "eval_summary.json").read_text())
        cert = summary["traces"]["square_a"]["cert"]
        got = audit["square_a"]
        for key in ("fcc_large", "fcc_small", "fcc_joint",
                    "fcs_large", "fcs_small", "fcs_joint"):
            assert got[key] == pytest.approx(cert[key], abs=1e-12)


class TestSweepCli:
    def test_single_value_degenerate_table(self, workspace, tmp_path):
        out_dir = tmp_path / "sweep"
        code = main(["sweep", "--param", "lambda", "--values", "0.5",
                     "--config", str(workspace["config"]), "--seed", "2",
                     "--out-dir", str(out_dir), "--traces", str(workspace["trace"]),
                     "--repeats", "1", "--eval-components", "4",
                     "--min-rtt-ms", "30", "--set", "total_epochs=60"])
        assert code == 0
        with open(out_dir / "sweep.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1
        assert rows[0]["lambda"] == "0.5"
        assert set(rows[0]) == {"lambda", "utilization", "p95_delay_ms",
                                "fcs", "epoch_rate"}


class TestNoiseSeeds:
    def test_distinct_seeds_differ_under_noise(self, workspace):
        from certcc.certify import PropertySpec
        from certcc.traces import load_trace as _load

        nets, _, cfg = load_checkpoint(workspace["checkpoint"])
        spec = PropertySpec.performance(cfg["history_k"], 6)
        trace = _load(workspace["trace"])
        outs = []
        for seed in (1, 2):
            outs.append(evaluate(nets["actor"], spec, {"t": trace},
                                 min_rtt_ms=30.0, n_components=2, repeats=1,
                                 noise_bound=0.05, seed=seed))
        assert outs[0]["traces"]["t"]["noise"] != outs[1]["traces"]["t"]["noise"]


class TestStateLog:
    def test_round_trip(self, workspace):
        eval_dir = workspace["root"] / "eval1"
        rows = read_state_log(eval_dir / "state_log.csv")
        assert rows and rows[0]["state"].shape == (2 * 6,)
        assert rows[0]["cwnd_prev"] > 0 and rows[0]["cwnd_tcp"] > 0
        steps = [r["step"] for r in rows if r["trace"] == "square_a"]
        assert steps == sorted(steps)
