import csv
import json

import httpx
import pytest

from src.cli import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, build_policies, build_simulator, main, parse_variant
from src.exceptions import ConfigurationError
from src.schemas import RunConfig

SHORT = ["--set", "world.episode_length=20", "--set", "world.decision_period=10", "--log-level", "WARNING"]
SMALL_TRAINING = ["--set", "train.batch_size=2", "--set", "train.n_epoch=1", "--set", "train.n_pre=1"]


def run(tmp_path, name, *args):
    return main(["--output-dir", str(tmp_path), "--name", name, *SHORT, *args])


def read_rows(path):
    with path.open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def read_jsonl(path):
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]


def test_simulate_writes_trace_metrics_and_manifest(tmp_path):
    assert run(tmp_path, "sim", "simulate", "--episodes", "2") == EXIT_OK
    out = tmp_path / "sim"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "simulate"
    assert manifest["files"] == ["config.json", "metrics.csv", "trace.jsonl"]
    assert manifest["seed"] == 7
    rows = read_rows(out / "metrics.csv")
    assert [row["episode"] for row in rows] == ["0", "1"]
    assert all(row["fallbacks"] == "0" for row in rows)
    trace = read_jsonl(out / "trace.jsonl")
    assert sum(row["kind"] == "step" for row in trace) == 40
    decisions = [row for row in trace if row["kind"] == "decision"]
    assert len(decisions) == 2 * 2 * 8
    assert {row["source"] for row in decisions} == {"llm_output"}
    config = json.loads((out / "config.json").read_text())
    assert config["world"]["decision_period"] == 10


def test_reruns_are_byte_identical(tmp_path):
    assert run(tmp_path, "a", "simulate", "--decoys", "1") == EXIT_OK
    assert run(tmp_path, "b", "simulate", "--decoys", "1") == EXIT_OK
    for name in ("config.json", "metrics.csv", "trace.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert run(tmp_path, "c", "--seed", "8", "simulate", "--decoys", "1") == EXIT_OK
    assert (tmp_path / "a" / "trace.jsonl").read_bytes() != (tmp_path / "c" / "trace.jsonl").read_bytes()


def test_trace_can_be_disabled(tmp_path):
    assert run(tmp_path, "quiet", "--set", "trace=false", "simulate", "--stages", "1") == EXIT_OK
    assert not (tmp_path / "quiet" / "trace.jsonl").exists()
    assert (tmp_path / "quiet" / "metrics.csv").exists()


def test_eval_summarizes_returns(tmp_path):
    assert run(tmp_path, "ev", "eval", "--episodes", "2") == EXIT_OK
    summary = json.loads((tmp_path / "ev" / "summary.json").read_text())
    assert summary["episodes"] == 2
    returns = [float(row["return"]) for row in read_rows(tmp_path / "ev" / "metrics.csv")]
    assert summary["mean_return"] == pytest.approx(sum(returns) / 2)
    assert {row["kind"] for row in read_jsonl(tmp_path / "ev" / "decisions.jsonl")} == {"decision"}


def test_seed_offline_then_train_then_simulate_with_checkpoint(tmp_path):
    assert run(tmp_path, "seed", "seed-offline", "--n-pre", "1") == EXIT_OK
    table = read_rows(tmp_path / "seed" / "transitions.csv")
    assert [row["origin"] for row in table] == ["offline-oracle"] * 2
    assert table[-1]["terminal"] == "1"

    buffer = str(tmp_path / "seed" / "buffer.pt")
    assert run(tmp_path, "train", *SMALL_TRAINING, "train-rmix", "--buffer", buffer) == EXIT_OK
    out = tmp_path / "train"
    assert len(read_rows(out / "losses.csv")) == 2
    assert [row["epoch"] for row in read_rows(out / "metrics.csv")] == ["0"]
    assert json.loads((out / "manifest.json").read_text())["updates"] == 2

    checkpoint = str(out / "checkpoint.pt")
    assert run(tmp_path, "greedy", "simulate", "--checkpoint", checkpoint) == EXIT_OK
    assert json.loads((tmp_path / "greedy" / "manifest.json").read_text())["checkpoint"] == checkpoint


def test_collect_then_filter(tmp_path):
    database = f"sqlite:///{tmp_path / 'samples.db'}"
    lenient = ["--set", "filter.reward_threshold=-1e12"]
    assert run(tmp_path, "collect", *lenient, "collect-data", "--count", "10", "--run-id", "r1",
               "--database", database) == EXIT_OK
    manifest = json.loads((tmp_path / "collect" / "manifest.json").read_text())
    assert manifest["samples"] == 16
    assert len(read_jsonl(tmp_path / "collect" / "transcript.jsonl")) == 16

    assert run(tmp_path, "filter", *lenient, "filter-data", "--run-id", "r1", "--database", database) == EXIT_OK
    report = read_rows(tmp_path / "filter" / "filter_report.csv")
    assert len(report) == 16
    corpus = read_jsonl(tmp_path / "filter" / "corpus.jsonl")
    assert len(corpus) == sum(row["passed"] == "1" for row in report)
    assert all(set(entry) == {"instruction", "input", "output", "metadata"} for entry in corpus)

    assert run(tmp_path, "again", "collect-data", "--count", "8", "--run-id", "r1", "--database", database) == EXIT_OK
    assert run(tmp_path, "filter2", *lenient, "filter-data", "--run-id", "r1", "--database", database) == EXIT_OK
    assert len(read_rows(tmp_path / "filter2" / "filter_report.csv")) == 8


def test_filter_of_unknown_run_fails(tmp_path):
    database = f"sqlite:///{tmp_path / 'empty.db'}"
    assert run(tmp_path, "none", "filter-data", "--run-id", "missing", "--database", database) == EXIT_FAILURE


def test_ablate_stages_and_roles(tmp_path):
    assert run(tmp_path, "stages", "ablate", "--variant", "stages", "--episodes", "1") == EXIT_OK
    rows = read_rows(tmp_path / "stages" / "ablation.csv")
    assert [(row["variant"], row["value"]) for row in rows] == [("stages", "1"), ("stages", "2")]
    assert run(tmp_path, "roles", "ablate", "--variant", "roles:1", "--episodes", "1") == EXIT_OK
    assert [row["value"] for row in read_rows(tmp_path / "roles" / "ablation.csv")] == ["1"]


def test_ablate_mixers_writes_loss_curves(tmp_path):
    assert run(tmp_path, "mixers", *SMALL_TRAINING, "ablate", "--variant", "mixer") == EXIT_OK
    out = tmp_path / "mixers"
    assert [row["value"] for row in read_rows(out / "ablation.csv")] == ["rmix", "vdn"]
    assert len(read_rows(out / "losses_rmix.csv")) == len(read_rows(out / "losses_vdn.csv")) == 2


@pytest.mark.parametrize("argv", [
    ["ablate", "--variant", "colors"],
    ["ablate", "--variant", "swarm:12"],
    ["--set", "world.bogus=1", "simulate"],
    ["--set", "world.n_targets=0", "simulate"],
    ["simulate", "--stages", "3"],
    ["filter-data"],
    ["teleport"],
])
def test_usage_errors_exit_with_two(tmp_path, argv):
    assert main(["--output-dir", str(tmp_path), "--log-level", "WARNING", *argv]) == EXIT_USAGE


def test_help_exits_cleanly(capsys):
    assert main(["--help"]) == EXIT_OK
    assert "simulate" in capsys.readouterr().out


def test_config_file_is_used(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"world": {"episode_length": 20, "decision_period": 20}, "episodes": 3}))
    assert main(["--config", str(path), "--output-dir", str(tmp_path), "--name", "cfg", "--log-level", "WARNING",
                 "simulate"]) == EXIT_OK
    assert len(read_rows(tmp_path / "cfg" / "metrics.csv")) == 3


def test_parse_variant():
    assert parse_variant("swarm") == ("swarm", ("8", "9", "10", "11"))
    assert parse_variant("mixer:vdn") == ("mixer", ("vdn",))
    with pytest.raises(ConfigurationError):
        parse_variant("roles:5")


def test_remote_policies_share_one_transport_closed_with_the_simulator():
    config = RunConfig.parse_obj({"policy": {"intent_backend": "remote", "consensus_backend": "remote"}})
    with build_simulator(config) as simulator:
        client = simulator.intent_policy.chat.client
        assert simulator.consensus_policy.chat.client is client
        assert not client.is_closed
    assert client.is_closed


def test_caller_supplied_transport_stays_open():
    config = RunConfig.parse_obj({"policy": {"intent_backend": "remote", "consensus_backend": "oracle"}})
    client = httpx.Client()
    intent_policy, _ = build_policies(config, client)
    intent_policy.close()
    assert not client.is_closed
    client.close()
