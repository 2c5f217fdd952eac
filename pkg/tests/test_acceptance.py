import csv
import itertools
import json

import httpx
import numpy as np
import pytest

from src.cli import main, train_run
from src.schemas import PolicyConfig, RunConfig
from src.services.intent import OracleRoleSelector
from src.services.llm import RemoteConsensusPolicy, RemoteIntentPolicy
from src.services.rmix import smoothed
from src.services.roles import DecisionSource
from src.services.simulation import Simulator


def flaky_server():
    """Stub completion server cycling through timeouts, server errors, unusable text and valid answers."""
    counter = itertools.count()

    def handler(request: httpx.Request) -> httpx.Response:
        k = next(counter) % 5
        if k == 0:
            raise httpx.ReadTimeout("model too slow", request=request)
        if k == 1:
            return httpx.Response(503)
        text = {2: "region 8", 3: "target point #8, #8", 4: "I recommend going to target [8,8]"}[k]
        return httpx.Response(200, json={"model": "stub", "choices": [{"message": {"content": text}}]})

    return httpx.Client(transport=httpx.MockTransport(handler))


def test_remote_failures_never_abort_a_run(short_config, bundle):
    config = PolicyConfig(endpoint="http://stub.local", max_retries=1, backoff=0.0)
    client = flaky_server()
    simulator = Simulator(short_config, RemoteIntentPolicy(bundle, config, client=client),
                          RemoteConsensusPolicy(bundle, config, client=client))
    fallbacks = 0
    for episode in range(3):
        for outcome in simulator.episode(episode, OracleRoleSelector(short_config.oracle)):
            active = outcome.state.target_positions()
            assert all(goal in active for goal in outcome.result.goals)
            fallbacks += sum(r.source is not DecisionSource.LLM_OUTPUT for r in outcome.result.records)
    assert fallbacks > 0


@pytest.mark.slow
def test_training_losses_fall_for_both_mixers():
    curves = {}
    for mixer in ("rmix", "vdn"):
        config = RunConfig.parse_obj({"train": {"mixer": mixer}, "seed": 7})
        _, history = train_run(config)
        curves[mixer] = smoothed(history.losses, 50)
    for mixer, curve in curves.items():
        assert curve[-1] <= 0.2 * curve[0], mixer


@pytest.mark.slow
def test_trained_roles_generalize_to_larger_swarms(tmp_path):
    common = ["--output-dir", str(tmp_path), "--log-level", "WARNING"]
    assert main([*common, "--name", "train", "--set", "train.n_pre=5", "--set", "train.n_epoch=20",
                 "train-rmix"]) == 0
    checkpoint = str(tmp_path / "train" / "checkpoint.pt")
    assert main([*common, "--name", "swarm", "ablate", "--variant", "swarm", "--episodes", "30",
                 "--checkpoint", checkpoint, "--workers", "4"]) == 0
    with (tmp_path / "swarm" / "ablation.csv").open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    for size in ("8", "9", "10", "11"):
        sized = [row for row in rows if row["value"] == size]
        assert len(sized) == 30
        assert sum(float(row["completion"]) for row in sized) > 0
    manifest = json.loads((tmp_path / "swarm" / "manifest.json").read_text())
    assert manifest["values"] == ["8", "9", "10", "11"]
    assert np.isfinite([float(row["return"]) for row in rows]).all()
