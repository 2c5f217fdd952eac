import json
import unittest
from pathlib import Path
from tempfile import TemporaryDirectory

from src.conf.config import Settings, dump_run_config, load_run_config
from src.exceptions import ConfigurationError
from src.schemas import RunConfig


def quiet_env(**values):
    return Settings(_env_file=None, **values)


class TestLoadRunConfig(unittest.TestCase):

    def setUp(self):
        self.tmp = TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, data, name="run.json"):
        path = self.dir / name
        path.write_text(json.dumps(data) if not isinstance(data, str) else data, encoding="utf-8")
        return path

    def test_defaults(self):
        self.assertEqual(load_run_config(env=quiet_env()), RunConfig())

    def test_overrides_win_over_the_file(self):
        path = self.write({"world": {"n_agents": 9, "decay": 0.01}, "seed": 3})
        config = load_run_config(path, ["world.n_agents=10", "policy.model=my-model", "train.mixer=vdn",
                                        "world.weights.w_f=20"], env=quiet_env())
        self.assertEqual(config.world.n_agents, 10)
        self.assertEqual(config.world.decay, 0.01)
        self.assertEqual(config.seed, 3)
        self.assertEqual(config.policy.model, "my-model")
        self.assertEqual(config.train.mixer, "vdn")
        self.assertEqual(config.world.weights.w_f, 20.0)

    def test_environment_only_replaces_endpoint_and_key(self):
        env = quiet_env(llm_endpoint="http://gpu-box:9000", llm_api_key="token")
        config = load_run_config(None, ["policy.endpoint=http://ignored"], env=env)
        self.assertEqual(config.policy.endpoint, "http://gpu-box:9000")
        self.assertEqual(config.policy.api_key, "token")
        self.assertEqual(load_run_config(None, ["policy.endpoint=http://kept"], env=quiet_env()).policy.endpoint,
                         "http://kept")

    def test_errors_are_configuration_errors(self):
        bad = [
            ((None, ["world.unknown=1"]), "unknown configuration key"),
            ((None, ["seed"]), "key=value"),
            ((None, ["world.n_targets=20"]), "invalid configuration"),
            ((None, ["world.formation_min=9"]), "formation bounds"),
            ((self.dir / "missing.json", []), "cannot read"),
            ((self.write("{not json", "broken.json"), []), "cannot read"),
            ((self.write([1, 2], "list.json"), []), "JSON object"),
        ]
        for (path, overrides), message in bad:
            with self.assertRaises(ConfigurationError) as caught:
                load_run_config(path, overrides, env=quiet_env())
            self.assertIn(message, str(caught.exception))


class TestDumpRunConfig(unittest.TestCase):

    def test_dump_is_sorted_masked_and_reloadable(self):
        with TemporaryDirectory() as tmp:
            secret = RunConfig.parse_obj({"policy": {"api_key": "secret"}, "seed": 11})
            text = dump_run_config(secret, tmp).read_text(encoding="utf-8")
            self.assertNotIn("secret", text)
            self.assertEqual(json.loads(text)["policy"]["api_key"], "***")
            self.assertEqual(text, json.dumps(json.loads(text), indent=2, sort_keys=True) + "\n")

            plain = RunConfig.parse_obj({"world": {"n_agents": 10}, "seed": 11})
            path = dump_run_config(plain, tmp)
            self.assertEqual(load_run_config(path, env=quiet_env()), plain)
