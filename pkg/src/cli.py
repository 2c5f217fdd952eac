"""
Experiment runner. Every subcommand resolves one RunConfig, writes it next to its outputs and
leaves a manifest, so a run directory is enough to repeat the run bit-identically.
"""
import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import httpx
import numpy as np

from src.conf.config import dump_run_config, load_run_config, settings
from src.database.db import session_factory
from src.exceptions import ConfigurationError, CorpusError, RallyError
from src.repository import samples as repository_samples
from src.schemas import RunConfig
from src.services.datagen import check_sample, collect, corpus_entry, export_corpus, write_filter_report
from src.services.intent import OracleConsensusPolicy, OracleIntentPolicy, OracleRoleSelector, PromptBundle
from src.services.llm import RemoteConsensusPolicy, RemoteIntentPolicy
from src.services.rmix import (
    ORIGIN_OFFLINE, RMIXTrainer, ReplayBuffer, TrainingHistory, build_trainer, load_buffer, load_checkpoint,
    save_buffer, save_checkpoint, seed_offline, smoothed,
)
from src.services.roles import ROLES, Role
from src.services.simulation import EpisodeSummary, FrameOutcome, Simulator, episode_seed

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(levelname)-5.5s [%(name)s] %(message)s"
EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2

METRIC_FIELDS = ("episode", "seed", "return", "discounted_return", "formation", "navigation", "completion",
                 "interference", "collision", "fallbacks")
ROLE_SUBSETS: Dict[int, Tuple[Role, ...]] = {
    1: (Role.Executor,),
    2: (Role.Commander, Role.Executor),
    3: tuple(ROLES),
    4: tuple(ROLES),
}
VARIANTS: Dict[str, Tuple[str, ...]] = {
    "roles": ("1", "2", "3", "4"),
    "swarm": ("8", "9", "10", "11"),
    "mixer": ("rmix", "vdn"),
    "stages": ("1", "2"),
}


class RunDirectory:
    """Output directory of one run: config.json, manifest.json and the files the command writes."""

    def __init__(self, root: str | Path, name: str):
        self.path = Path(root) / name
        self.path.mkdir(parents=True, exist_ok=True)
        self.files: List[str] = []

    def file(self, name: str) -> Path:
        if name not in self.files:
            self.files.append(name)
        return self.path / name

    def write_config(self, config: RunConfig) -> None:
        dump_run_config(config, self.path)
        self.file("config.json")

    def write_manifest(self, command: str, config: RunConfig, argv: Sequence[str], **extra) -> Path:
        manifest = {
            "command": command,
            "argv": list(argv),
            "seed": config.seed,
            "files": sorted(self.files),
            **extra,
        }
        path = self.path / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


class TraceWriter:
    """
    JSON-lines transcript of a run: one "step" row per environment step and one "decision" row
    per agent per decision frame. Disabled writers accept and drop everything.
    """

    def __init__(self, path: Optional[Path], steps: bool = True):
        self.path = path
        self.steps = steps
        self.episode = 0
        self._fh = None

    def __enter__(self) -> "TraceWriter":
        if self.path is not None:
            self._fh = self.path.open("w", encoding="utf-8", newline="\n")
        return self

    def __exit__(self, *exc) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def _write(self, row: dict) -> None:
        if self._fh is not None:
            self._fh.write(json.dumps(row, sort_keys=True) + "\n")

    def step(self, record: dict) -> None:
        if self.steps:
            self._write({"kind": "step", "episode": self.episode, **record})

    def frame(self, outcome: FrameOutcome) -> None:
        for record in outcome.result.records:
            self._write({"kind": "decision", "episode": self.episode, "episode_seed": outcome.episode_seed,
                         "decoy": record.agent_id in outcome.decoys, **record.to_dict()})


def configure_logging(level: str) -> None:
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format=LOG_FORMAT, force=True)


def build_policies(config: RunConfig, client: Optional[httpx.Client] = None) -> Tuple[Callable, Callable]:
    """
    The build_policies function returns the stage-one and stage-two policies named by the
    policy section: the scripted oracle or the remote chat-completions model.

    :param config: RunConfig: Resolved configuration
    :param client: httpx.Client: Transport for the remote backend. When omitted both remote
        policies share one fresh client, closed by either policy's close
    :return: The intent policy and the consensus policy
    """
    formation_max = config.world.formation_max
    bundle = None
    owns_client = client is None
    if "remote" in (config.policy.intent_backend, config.policy.consensus_backend):
        bundle = PromptBundle.load(config.policy.prompt_dir)
        client = client or httpx.Client(timeout=config.policy.timeout)
    if config.policy.intent_backend == "remote":
        intent_policy = RemoteIntentPolicy(bundle, config.policy, formation_max, client, owns_client)
    else:
        intent_policy = OracleIntentPolicy(config.oracle)
    if config.policy.consensus_backend == "remote":
        consensus_policy = RemoteConsensusPolicy(bundle, config.policy, formation_max, client, owns_client)
    else:
        consensus_policy = OracleConsensusPolicy(config.oracle, formation_max)
    return intent_policy, consensus_policy


def build_role_selector(config: RunConfig, checkpoint: Optional[str] = None,
                        allowed_roles: Optional[Sequence[Role]] = None) -> Callable:
    """Greedy roles from a trained checkpoint, or the oracle role policy when none is given."""
    if checkpoint:
        return load_checkpoint(checkpoint).role_selector(0.0, allowed_roles, config.world.frames_per_episode)
    return OracleRoleSelector(config.oracle, allowed_roles)


def build_simulator(config: RunConfig, stages: int = 2, decoys: int = 0, on_step: Optional[Callable] = None,
                    client: Optional[httpx.Client] = None) -> Simulator:
    intent_policy, consensus_policy = build_policies(config, client)
    return Simulator(config, intent_policy, consensus_policy, stages=stages, decoys=decoys, on_step=on_step)


def run_episodes(simulator: Simulator, role_selector: Callable, config: RunConfig, episodes: int,
                 trace: Optional[TraceWriter] = None) -> List[EpisodeSummary]:
    summaries = []
    for episode in range(episodes):
        if trace is not None:
            trace.episode = episode
        summaries.append(simulator.run_episode(episode, episode_seed(config.seed, episode), role_selector,
                                               on_frame=trace.frame if trace is not None else None))
    return summaries


def summary_row(summary: EpisodeSummary, gamma: float) -> dict:
    components = summary.components
    return {
        "episode": summary.episode,
        "seed": summary.seed,
        "return": summary.total_return,
        "discounted_return": summary.discounted(gamma),
        "formation": components.formation,
        "navigation": components.navigation,
        "completion": components.completion,
        "interference": components.interference,
        "collision": components.collision,
        "fallbacks": summary.fallbacks,
    }


def write_csv(path: Path, fields: Sequence[str], rows: Sequence[dict]) -> Path:
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(fields), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return path


def write_metrics(path: Path, summaries: Sequence[EpisodeSummary], gamma: float) -> Path:
    return write_csv(path, METRIC_FIELDS, [summary_row(s, gamma) for s in summaries])


def _episodes(args: argparse.Namespace, config: RunConfig) -> int:
    return args.episodes if args.episodes is not None else config.episodes


def cmd_simulate(args: argparse.Namespace, config: RunConfig) -> int:
    """
    The cmd_simulate function runs episodes with the configured policies and writes the step
    and decision transcript together with one metrics row per episode.

    :param args: argparse.Namespace: Parsed command-line arguments
    :param config: RunConfig: Resolved configuration
    :return: The exit status
    """
    run = RunDirectory(config.output_dir, args.name or f"simulate-seed{config.seed}")
    run.write_config(config)
    selector = build_role_selector(config, args.checkpoint)
    episodes = _episodes(args, config)
    trace_path = run.file("trace.jsonl") if config.trace else None
    with TraceWriter(trace_path) as trace:
        with build_simulator(config, stages=args.stages, decoys=args.decoys, on_step=trace.step) as simulator:
            summaries = run_episodes(simulator, selector, config, episodes, trace)
    write_metrics(run.file("metrics.csv"), summaries, config.train.joint_gamma)
    run.write_manifest("simulate", config, args.argv, episodes=episodes, stages=args.stages, decoys=args.decoys,
                       checkpoint=args.checkpoint)
    logger.info("simulated %d episodes, mean return %.3f", episodes,
                float(np.mean([s.total_return for s in summaries])))
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, config: RunConfig) -> int:
    run = RunDirectory(config.output_dir, args.name or f"eval-seed{config.seed}")
    run.write_config(config)
    selector = build_role_selector(config, args.checkpoint)
    episodes = _episodes(args, config)
    with TraceWriter(run.file("decisions.jsonl") if config.trace else None, steps=False) as trace:
        with build_simulator(config, stages=args.stages) as simulator:
            summaries = run_episodes(simulator, selector, config, episodes, trace)
    write_metrics(run.file("metrics.csv"), summaries, config.train.joint_gamma)
    returns = [s.total_return for s in summaries]
    summary = {
        "episodes": episodes,
        "mean_return": float(np.mean(returns)),
        "std_return": float(np.std(returns)),
        "mean_discounted_return": float(np.mean([s.discounted(config.train.joint_gamma) for s in summaries])),
        "completion_reward": float(sum(s.components.completion for s in summaries)),
    }
    run.file("summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    run.write_manifest("eval", config, args.argv, episodes=episodes, stages=args.stages, checkpoint=args.checkpoint)
    logger.info("eval over %d episodes: mean return %.3f", episodes, summary["mean_return"])
    return EXIT_OK


def _write_buffer_table(path: Path, buffer: ReplayBuffer) -> Path:
    rows = [
        {"index": k, "origin": origin, "reward": t.reward, "terminal": int(t.terminal),
         "roles": " ".join(str(int(r)) for r in t.roles)}
        for k, (origin, t) in enumerate(zip(buffer.origins(), buffer.transitions()))
    ]
    return write_csv(path, ("index", "origin", "reward", "terminal", "roles"), rows)


def cmd_seed_offline(args: argparse.Namespace, config: RunConfig) -> int:
    run = RunDirectory(config.output_dir, args.name or f"seed-offline-seed{config.seed}")
    run.write_config(config)
    n_pre = args.n_pre if args.n_pre is not None else config.train.n_pre
    buffer = ReplayBuffer(config.train.buffer_capacity)
    with build_simulator(config) as simulator:
        seed_offline(simulator, OracleRoleSelector(config.oracle), n_pre, buffer, config.train, config.seed)
    save_buffer(buffer, run.file("buffer.pt"))
    _write_buffer_table(run.file("transitions.csv"), buffer)
    run.write_manifest("seed-offline", config, args.argv, n_pre=n_pre, transitions=len(buffer))
    return EXIT_OK


def train_run(config: RunConfig, buffer_path: Optional[str] = None) -> Tuple[RMIXTrainer, TrainingHistory]:
    """
    The train_run function seeds (or loads) the replay buffer from oracle episodes and trains
    the role network and mixer online; online episodes start after the offline ones.

    :param config: RunConfig: Resolved configuration, train.mixer selects RMIX or VDN
    :param buffer_path: str: Buffer written by seed-offline, seeded afresh when omitted
    :return: The trained trainer and its history
    """
    trainer = build_trainer(config)
    with build_simulator(config) as simulator:
        if buffer_path:
            buffer = load_buffer(buffer_path, config.train.buffer_capacity)
            offline = sum(origin == ORIGIN_OFFLINE for origin in buffer.origins())
            n_pre = offline // max(1, config.world.frames_per_episode)
        else:
            buffer = ReplayBuffer(config.train.buffer_capacity)
            n_pre = config.train.n_pre
            seed_offline(simulator, OracleRoleSelector(config.oracle), n_pre, buffer, config.train, config.seed)
        history = trainer.train(simulator, buffer, config.seed, episode_offset=n_pre)
    return trainer, history


def _loss_rows(losses: Sequence[float], window: int = 50) -> List[dict]:
    curve = smoothed(losses, window)
    offset = len(losses) - len(curve)
    return [{"update": k, "loss": loss, "smoothed": curve[k - offset] if k >= offset else ""}
            for k, loss in enumerate(losses)]


def cmd_train_rmix(args: argparse.Namespace, config: RunConfig) -> int:
    """
    The cmd_train_rmix function trains the role-value network and writes the checkpoint, the
    per-update loss curve and the per-epoch training returns.

    :param args: argparse.Namespace: Parsed command-line arguments
    :param config: RunConfig: Resolved configuration
    :return: The exit status
    """
    run = RunDirectory(config.output_dir, args.name or f"train-{config.train.mixer}-seed{config.seed}")
    run.write_config(config)
    trainer, history = train_run(config, args.buffer)
    save_checkpoint(trainer, run.file("checkpoint.pt"))
    write_csv(run.file("losses.csv"), ("update", "loss", "smoothed"), _loss_rows(history.losses))
    write_csv(run.file("metrics.csv"), ("epoch", "epsilon", "return"),
              [{"epoch": k, "epsilon": eps, "return": ret}
               for k, (eps, ret) in enumerate(zip(history.epsilons, history.returns))])
    run.write_manifest("train-rmix", config, args.argv, updates=trainer.updates, buffer=args.buffer)
    return EXIT_OK


def _database_url(args: argparse.Namespace) -> str:
    return args.database or settings.sqlalchemy_database_url


def cmd_collect_data(args: argparse.Namespace, config: RunConfig) -> int:
    """
    The cmd_collect_data function labels decision frames with the configured consensus backend
    and stores the raw samples under a run id in the sample database.

    :param args: argparse.Namespace: Parsed command-line arguments
    :param config: RunConfig: Resolved configuration
    :return: The exit status
    """
    name = args.name or f"collect-seed{config.seed}"
    run_id = args.run_id or name
    run = RunDirectory(config.output_dir, name)
    run.write_config(config)
    count = args.count if args.count is not None else config.filter.min_samples
    bundle = PromptBundle.load(config.policy.prompt_dir)
    selector = build_role_selector(config, args.checkpoint)
    with TraceWriter(run.file("transcript.jsonl"), steps=False) as transcript:
        with build_simulator(config) as simulator:
            records = collect(simulator, selector, count, config.seed, bundle, config.filter.reward_mode,
                              on_frame=transcript.frame)
    SessionLocal = session_factory(_database_url(args))
    with SessionLocal() as db:
        repository_samples.delete_samples(run_id, db)
        stored = repository_samples.create_samples(records, run_id, db)
    run.write_manifest("collect-data", config, args.argv, run_id=run_id, samples=stored)
    logger.info("stored %d samples under run id %s", stored, run_id)
    return EXIT_OK


def cmd_filter_data(args: argparse.Namespace, config: RunConfig) -> int:
    run = RunDirectory(config.output_dir, args.name or f"filter-{args.run_id}")
    run.write_config(config)
    SessionLocal = session_factory(_database_url(args))
    with SessionLocal() as db:
        records = repository_samples.get_samples(args.run_id, db)
    if not records:
        raise CorpusError(f"no samples stored under run id {args.run_id}")
    breakdowns = [check_sample(record, config.filter) for record in records]
    entries = [corpus_entry(record, b) for record, b in zip(records, breakdowns)
               if b.score >= config.filter.pass_threshold]
    write_filter_report(records, breakdowns, run.file("filter_report.csv"))
    logger.info("%d of %d samples passed the check", len(entries), len(records))
    corpus = Path(args.out) if args.out else run.file("corpus.jsonl")
    export_corpus(entries, corpus)
    run.write_manifest("filter-data", config, args.argv, run_id=args.run_id, samples=len(records),
                       kept=len(entries), corpus=str(corpus))
    return EXIT_OK


def parse_variant(variant: str) -> Tuple[str, Tuple[str, ...]]:
    """
    The parse_variant function expands "family" into all of its rows and "family:value" into a
    single row.

    :param variant: str: roles, swarm, mixer or stages, optionally with a value
    :return: The family and the values to run
    """
    family, _, value = variant.partition(":")
    if family not in VARIANTS:
        raise ConfigurationError(f"unknown ablation variant '{variant}', expected one of {sorted(VARIANTS)}")
    if value and value not in VARIANTS[family]:
        raise ConfigurationError(f"unknown value '{value}' for variant {family}, expected {VARIANTS[family]}")
    return family, (value,) if value else VARIANTS[family]


def ablation_job(job: Tuple[str, str, str, Optional[str], int]) -> Tuple[List[dict], List[float]]:
    """
    Runs one row of an ablation matrix from plain data, so rows can run in worker processes.
    Returns the per-episode rows and, for the mixer family, the training loss curve.
    """
    family, value, config_json, checkpoint, episodes = job
    data = json.loads(config_json)
    stages, decoys, allowed = 2, 0, None
    if family == "swarm":
        data["world"]["n_agents"] = int(value)
    elif family == "mixer":
        data["train"]["mixer"] = value
    elif family == "stages":
        stages = int(value)
    elif family == "roles":
        allowed = ROLE_SUBSETS[int(value)]
        decoys = 1 if value == "4" else 0
    config = RunConfig.parse_obj(data)
    gamma = config.train.joint_gamma
    if family == "mixer":
        _, history = train_run(config)
        rows = [{"variant": family, "value": value, "episode": k, "seed": config.seed, "return": ret,
                 "discounted_return": "", "completion": "", "fallbacks": ""}
                for k, ret in enumerate(history.returns)]
        return rows, history.losses
    with build_simulator(config, stages=stages, decoys=decoys) as simulator:
        summaries = run_episodes(simulator, build_role_selector(config, checkpoint, allowed), config, episodes)
    rows = [{"variant": family, "value": value, "episode": s.episode, "seed": s.seed, "return": s.total_return,
             "discounted_return": s.discounted(gamma), "completion": s.components.completion,
             "fallbacks": s.fallbacks} for s in summaries]
    return rows, []


def cmd_ablate(args: argparse.Namespace, config: RunConfig) -> int:
    """
    The cmd_ablate function runs an ablation matrix (roles 1..4, swarm 8..11, rmix against vdn,
    one stage against two) on identical seeds and writes one table with a row per episode.

    :param args: argparse.Namespace: Parsed command-line arguments
    :param config: RunConfig: Resolved configuration
    :return: The exit status
    """
    family, values = parse_variant(args.variant)
    run = RunDirectory(config.output_dir, args.name or f"ablate-{family}-seed{config.seed}")
    run.write_config(config)
    episodes = _episodes(args, config)
    jobs = [(family, value, config.json(), args.checkpoint, episodes) for value in values]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(ablation_job, jobs))
    else:
        results = [ablation_job(job) for job in jobs]
    rows = [row for job_rows, _ in results for row in job_rows]
    write_csv(run.file("ablation.csv"),
              ("variant", "value", "episode", "seed", "return", "discounted_return", "completion", "fallbacks"), rows)
    for value, (_, losses) in zip(values, results):
        if losses:
            write_csv(run.file(f"losses_{value}.csv"), ("update", "loss", "smoothed"), _loss_rows(losses))
    run.write_manifest("ablate", config, args.argv, variant=args.variant, values=list(values), episodes=episodes,
                       checkpoint=args.checkpoint)
    return EXIT_OK


COMMANDS: Dict[str, Callable[[argparse.Namespace, RunConfig], int]] = {
    "simulate": cmd_simulate,
    "train-rmix": cmd_train_rmix,
    "seed-offline": cmd_seed_offline,
    "collect-data": cmd_collect_data,
    "filter-data": cmd_filter_data,
    "ablate": cmd_ablate,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rally", description="Role-adaptive swarm consensus experiments")
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a configuration key, e.g. world.n_agents=10")
    parser.add_argument("--seed", type=int, help="run seed")
    parser.add_argument("--output-dir", help="root directory for run outputs")
    parser.add_argument("--name", help="run directory name")
    parser.add_argument("--log-level", default=None, help="logging level, defaults to RALLY_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate", help="run episodes and write traces and metrics")
    simulate.add_argument("--episodes", type=int)
    simulate.add_argument("--stages", type=int, choices=(1, 2), default=2)
    simulate.add_argument("--decoys", type=int, default=0)
    simulate.add_argument("--checkpoint", help="trained role network, oracle roles when omitted")

    train = sub.add_parser("train-rmix", help="seed the buffer offline and train roles online")
    train.add_argument("--mixer", choices=("rmix", "vdn"))
    train.add_argument("--buffer", help="buffer.pt written by seed-offline")

    offline = sub.add_parser("seed-offline", help="fill a replay buffer from oracle episodes")
    offline.add_argument("--n-pre", type=int)

    collect_data = sub.add_parser("collect-data", help="label decision frames into the sample store")
    collect_data.add_argument("--count", type=int)
    collect_data.add_argument("--labeler", choices=("oracle", "remote"))
    collect_data.add_argument("--run-id")
    collect_data.add_argument("--database")
    collect_data.add_argument("--checkpoint")

    filter_data = sub.add_parser("filter-data", help="score stored samples and export the corpus")
    filter_data.add_argument("--run-id", required=True)
    filter_data.add_argument("--database")
    filter_data.add_argument("--out", help="corpus path, corpus.jsonl in the run directory by default")

    ablate = sub.add_parser("ablate", help="run an ablation matrix")
    ablate.add_argument("--variant", required=True, help="roles[:1-4], swarm[:8-11], mixer[:rmix|vdn], stages[:1|2]")
    ablate.add_argument("--episodes", type=int)
    ablate.add_argument("--checkpoint")
    ablate.add_argument("--workers", type=int, default=1)

    evaluate = sub.add_parser("eval", help="evaluate a role policy over test episodes")
    evaluate.add_argument("--checkpoint")
    evaluate.add_argument("--stages", type=int, choices=(1, 2), default=2)
    evaluate.add_argument("--episodes", type=int)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.output_dir is not None:
        overrides.append(f"output_dir={json.dumps(args.output_dir)}")
    if getattr(args, "mixer", None):
        overrides.append(f"train.mixer={args.mixer}")
    if getattr(args, "labeler", None):
        overrides.append(f"policy.consensus_backend={args.labeler}")
    return load_run_config(args.config, overrides)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    The main function parses the command line, resolves the configuration and runs one
    subcommand. Exit status: 0 on success, 1 when a run fails, 2 on usage or configuration errors.

    :param argv: Sequence[str]: Arguments without the program name, sys.argv when omitted
    :return: The exit status
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:
        return EXIT_OK if exit_.code in (0, None) else EXIT_USAGE
    args.argv = argv
    configure_logging(args.log_level or settings.log_level)
    try:
        config = resolve_config(args)
        return COMMANDS[args.command](args, config)
    except ConfigurationError as error:
        logger.error("configuration error: %s", error)
        return EXIT_USAGE
    except (RallyError, OSError) as error:
        logger.error("%s failed: %s", args.command, error)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
