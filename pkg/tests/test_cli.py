"""End-to-end CLI tests: exit codes, file outputs, determinism."""

import json

import numpy as np
import pytest

from domainmix.cli import main
from domainmix.gradtrace import GradientTrace, TraceRecord, write_trace


def write_fixture_trace(path, vectors, hints=None, dim=None):
    vectors = [np.asarray(v, dtype=np.float32) for v in vectors]
    dim = dim or len(vectors[0])
    hints = hints or [-1] * len(vectors)
    trace = GradientTrace(
        dim=dim,
        records=tuple(
            TraceRecord(i, hints[i], vectors[i]) for i in range(len(vectors))
        ),
    )
    write_trace(trace, path)
    return path


@pytest.fixture
def blob_trace(tmp_path):
    rng = np.random.default_rng(0)
    vecs = [rng.normal(size=8) + 6 for _ in range(10)]
    vecs += [rng.normal(size=8) - 6 for _ in range(10)]
    return write_fixture_trace(tmp_path / "trace.gtrc", vecs)


class TestRepartition:
    def test_happy_path(self, blob_trace, tmp_path):
        out = tmp_path / "out"
        code = main(["repartition", "--trace", str(blob_trace), "--out", str(out),
                     "--config", str(write_config(tmp_path, {"k_domains": 2,
                                                             "proj_dim": 4}))])
        assert code == 0
        lines = (out / "partition.csv").read_text().strip().splitlines()
        assert lines[0] == "sample_id,domain"
        assert len(lines) == 21
        sidecar = json.loads((out / "partition.json").read_text())
        assert sidecar["k"] == 2
        assert (out / "config.json").exists()

    def test_missing_trace_is_io_error(self, tmp_path):
        code = main(["repartition", "--trace", str(tmp_path / "nope.gtrc"),
                     "--out", str(tmp_path / "out")])
        assert code == 2

    def test_k_exceeding_samples_is_validation_error(self, blob_trace, tmp_path):
        cfg = write_config(tmp_path, {"k_domains": 100})
        code = main(["repartition", "--trace", str(blob_trace),
                     "--out", str(tmp_path / "out"), "--config", str(cfg)])
        assert code == 3


def write_config(tmp_path, values, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(values))
    return path


def impact_fixture(tmp_path):
    """Two domains one task with identity FIM: raw column (0.5, 2.0)."""
    trace = write_fixture_trace(tmp_path / "train.gtrc",
                                [[-1.0, 0.0], [-2.0, 0.0]])
    (tmp_path / "partition.csv").write_text("sample_id,domain\n0,0\n1,1\n")
    task = write_fixture_trace(tmp_path / "task.gtrc",
                               [[1.0, 1.0], [-1.0, -1.0]], hints=[0, 0])
    return trace, tmp_path / "partition.csv", task


class TestImpact:
    def test_golden_fixture(self, tmp_path):
        trace, partition, task = impact_fixture(tmp_path)
        out = tmp_path / "out"
        code = main(["impact", "--trace", str(trace), "--partition", str(partition),
                     "--task-trace", str(task), "--out", str(out)])
        assert code == 0
        lines = (out / "impact.csv").read_text().strip().splitlines()
        assert lines[0] == "domain,task,raw,normalized,metric"
        rows = [line.split(",") for line in lines[1:]]
        raw = {r[0]: float(r[2]) for r in rows}
        norm = {r[0]: float(r[3]) for r in rows}
        assert raw["0"] == pytest.approx(0.5)
        assert raw["1"] == pytest.approx(2.0)
        assert norm["0"] == pytest.approx(0.7685, abs=1e-4)
        assert norm["1"] == pytest.approx(0.2315, abs=1e-4)

    def test_metric_variants_share_keys(self, tmp_path):
        trace, partition, task = impact_fixture(tmp_path)
        outputs = {}
        for metric in ("fim_kl", "dga"):
            out = tmp_path / f"out_{metric}"
            cfg = write_config(tmp_path, {"impact_metric": metric}, f"{metric}.json")
            code = main(["impact", "--trace", str(trace), "--partition", str(partition),
                         "--task-trace", str(task), "--out", str(out),
                         "--config", str(cfg)])
            assert code == 0
            lines = (out / "impact.csv").read_text().strip().splitlines()[1:]
            outputs[metric] = {tuple(l.split(",")[:2]): l.split(",")[2:] for l in lines}
        assert outputs["fim_kl"].keys() == outputs["dga"].keys()
        assert outputs["fim_kl"] != outputs["dga"]

    def test_zero_delta_gives_zero_raw(self, tmp_path):
        trace = write_fixture_trace(tmp_path / "train.gtrc", [[1.0, 1.0]])
        (tmp_path / "partition.csv").write_text("sample_id,domain\n0,0\n")
        task = write_fixture_trace(tmp_path / "task.gtrc",
                                   [[1.0, 1.0], [1.0, 1.0]], hints=[0, 0])
        out = tmp_path / "out"
        code = main(["impact", "--trace", str(trace),
                     "--partition", str(tmp_path / "partition.csv"),
                     "--task-trace", str(task), "--out", str(out)])
        assert code == 0
        row = (out / "impact.csv").read_text().strip().splitlines()[1]
        assert float(row.split(",")[2]) == 0.0

    def test_dim_mismatch_is_validation_error(self, tmp_path):
        trace = write_fixture_trace(tmp_path / "train.gtrc", [[1.0, 1.0]])
        (tmp_path / "partition.csv").write_text("sample_id,domain\n0,0\n")
        task = write_fixture_trace(tmp_path / "task.gtrc", [[1.0, 1.0, 1.0]], hints=[0])
        code = main(["impact", "--trace", str(trace),
                     "--partition", str(tmp_path / "partition.csv"),
                     "--task-trace", str(task), "--out", str(tmp_path / "out")])
        assert code == 3


class TestSchedule:
    def make_inputs(self, tmp_path):
        trace, partition, task = impact_fixture(tmp_path)
        out = tmp_path / "impact_out"
        assert main(["impact", "--trace", str(trace), "--partition", str(partition),
                     "--task-trace", str(task), "--out", str(out)]) == 0
        losses = tmp_path / "losses.csv"
        losses.write_text("task,step,loss\n0,0,2.5\n0,100,2.2\n0,200,2.05\n")
        return out / "impact.csv", losses

    def test_single_update(self, tmp_path):
        impact_csv, losses = self.make_inputs(tmp_path)
        out = tmp_path / "sched"
        code = main(["schedule", "--impact", str(impact_csv), "--losses", str(losses),
                     "--out", str(out)])
        assert code == 0
        state = json.loads((out / "state.json").read_text())
        assert state["update_count"] == 1
        probs = np.array(state["probs"])
        assert probs.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.argmax(probs) == 0  # lower divergence domain gains mass
        log = (out / "schedule_log.csv").read_text().strip().splitlines()
        assert log[0] == "update_index,step,domain,prob,utility"
        assert len(log) == 3

    def test_chained_state(self, tmp_path):
        impact_csv, losses = self.make_inputs(tmp_path)
        out = tmp_path / "sched"
        main(["schedule", "--impact", str(impact_csv), "--losses", str(losses),
              "--out", str(out)])
        code = main(["schedule", "--impact", str(impact_csv), "--losses", str(losses),
                     "--state", str(out / "state.json"), "--out", str(out)])
        assert code == 0
        state = json.loads((out / "state.json").read_text())
        assert state["update_count"] == 2

    def test_missing_losses_is_io_error(self, tmp_path):
        impact_csv, _ = self.make_inputs(tmp_path)
        code = main(["schedule", "--impact", str(impact_csv),
                     "--losses", str(tmp_path / "missing.csv"),
                     "--out", str(tmp_path / "s")])
        assert code == 2


SIM_CFG = {
    "budget": 200,
    "tau": 50,
    "seeds": [7],
    "strategies": ["uniform"],
    "sim_samples_per_domain": 60,
    "sim_task_samples": 40,
}


class TestSimulate:
    def test_uniform_constant_trajectory(self, tmp_path):
        cfg = write_config(tmp_path, SIM_CFG)
        out = tmp_path / "sim"
        code = main(["simulate", "--config", str(cfg), "--out", str(out)])
        assert code == 0
        report = json.loads((out / "report_uniform_seed7.json").read_text())
        traj = np.array(report["trajectory"])
        np.testing.assert_allclose(traj, 1 / 3)
        assert (out / "comparison.csv").exists()

    def test_deterministic_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path, SIM_CFG)
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
            outs.append((out / "report_uniform_seed7.json").read_bytes())
        assert outs[0] == outs[1]

    def test_bad_strategy_is_validation_error(self, tmp_path):
        cfg = write_config(tmp_path, dict(SIM_CFG, strategies=["warp"]))
        code = main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "s")])
        assert code == 3

    def test_strategy_flag_overrides(self, tmp_path):
        cfg = write_config(tmp_path, SIM_CFG)
        out = tmp_path / "sim"
        code = main(["simulate", "--config", str(cfg), "--out", str(out),
                     "--strategy", "uniform,random"])
        assert code == 0
        assert (out / "report_random_seed7.json").exists()


class TestReport:
    def make_reports(self, tmp_path, n=2):
        cfg = write_config(tmp_path, dict(SIM_CFG, strategies=["uniform", "dids"]))
        out = tmp_path / "sim"
        assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
        return [out / "report_uniform_seed7.json", out / "report_dids_seed7.json"][:n]

    def test_trajectory_row_count(self, tmp_path):
        reports = self.make_reports(tmp_path, 1)
        out = tmp_path / "rep"
        code = main(["report", "--out", str(out)] + [str(p) for p in reports])
        assert code == 0
        lines = (out / "probability_vs_update.csv").read_text().strip().splitlines()
        evaluations = 200 // 50 + 1
        assert len(lines) == 1 + evaluations * 3
        assert (out / "score_vs_update_count.csv").exists()
        assert (out / "score_vs_noise_ratio.csv").exists()

    def test_mismatched_k_rejected(self, tmp_path):
        reports = self.make_reports(tmp_path, 1)
        cfg = write_config(tmp_path, dict(SIM_CFG, sim_include_noise=False), "c2.json")
        out2 = tmp_path / "sim2"
        assert main(["simulate", "--config", str(cfg), "--out", str(out2)]) == 0
        code = main(["report", "--out", str(tmp_path / "rep"),
                     str(reports[0]), str(out2 / "report_uniform_seed7.json")])
        assert code == 3

    def test_missing_report_is_io_error(self, tmp_path):
        code = main(["report", "--out", str(tmp_path / "rep"),
                     str(tmp_path / "ghost.json")])
        assert code == 2


class TestConfigHandling:
    def test_unknown_key_rejected(self, tmp_path):
        cfg = write_config(tmp_path, {"warp_factor": 9})
        code = main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "s")])
        assert code == 3

    def test_unknown_preset_rejected(self, tmp_path):
        code = main(["simulate", "--preset", "galaxy", "--out", str(tmp_path / "s")])
        assert code == 3

    def test_preset_with_overrides(self, tmp_path):
        out = tmp_path / "sim"
        cfg = write_config(tmp_path, {"budget": 100, "tau": 50,
                                      "sim_samples_per_domain": 50,
                                      "sim_task_samples": 30})
        code = main(["simulate", "--preset", "desk-small", "--config", str(cfg),
                     "--out", str(out), "--seed", "3", "--strategy", "uniform"])
        assert code == 0
        assert (out / "report_uniform_seed3.json").exists()
        echo = json.loads((out / "config.json").read_text())
        assert echo["budget"] == 100  # file overrides preset
        assert echo["seeds"] == [3]
