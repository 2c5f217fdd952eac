"""
Fine-tune data pipeline: labeled consensus samples from decision frames, the weighted quality
check, filtering, and JSONL corpus export.
"""
import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence

from src.exceptions import CorpusError
from src.schemas import FilterConfig
from src.services.geometry import GRID_POINTS, Vec2, grid_index
from src.services.intent import PromptBundle, parse_decision, render_cons_prompt
from src.services.roles import Role
from src.services.simulation import FrameOutcome, Simulator, episode_seed
from src.services.world import Observation, TargetView

logger = logging.getLogger(__name__)

CORPUS_FIELDS = ("instruction", "input", "output", "metadata")
_GRID = {k: cell for k, cell in enumerate(GRID_POINTS)}
_OPENERS = {")": "(", "]": "[", "}": "{"}
_ALLOWED_CONTROL = {"\n", "\t"}


@dataclass
class SampleRecord:
    obs: Observation
    role: Role
    goal: Optional[Vec2]
    reasoning: str
    reward: float
    instruction: str = ""
    episode_seed: int = 0
    frame_index: int = 0

    @property
    def agent_id(self) -> int:
        return self.obs.agent_id


def word_count(text: str) -> int:
    return len(text.split())


def labeled_goal(text: str) -> Optional[Vec2]:
    """Grid cell named by the last coordinate pair of text, or None."""
    parsed = parse_decision(text, _GRID)
    return parsed.pos if parsed.legal else None


def records_from_frame(outcome: FrameOutcome, bundle: PromptBundle, formation_max: int) -> List[SampleRecord]:
    result = outcome.result
    records = []
    for i, text in enumerate(result.raw_outputs):
        records.append(SampleRecord(
            obs=result.observations[i],
            role=result.intents[i].role,
            goal=labeled_goal(text),
            reasoning=text,
            reward=outcome.window_reward,
            instruction=render_cons_prompt(bundle, result.infos[i], result.intents[i].role, result.intents[i].goal,
                                           formation_max),
            episode_seed=outcome.episode_seed,
            frame_index=outcome.frame_index,
        ))
    return records


def collect(simulator: Simulator, role_selector: Callable, target_count: int, seed: int,
            bundle: Optional[PromptBundle] = None, reward_mode: str = "window",
            on_frame: Optional[Callable[[FrameOutcome], None]] = None) -> List[SampleRecord]:
    """
    The collect function runs decision frames with the configured labeler (the simulator's
    consensus policy) and records one sample per agent per frame, stopping at the end of the
    first frame that brings the store to target_count. In episode mode every sample carries the
    return of its whole episode, so collection stops at an episode boundary instead.

    :param simulator: Simulator: Episode runner whose consensus policy labels the samples
    :param role_selector: Callable: Role policy used while collecting
    :param target_count: int: Minimum number of samples M
    :param seed: int: Run seed
    :param bundle: PromptBundle: Prompt assets used to render the stored instructions
    :param reward_mode: str: "window" or "episode"
    :param on_frame: Callable: Receives every FrameOutcome, e.g. to write the transcript
    :return: The raw sample store
    """
    bundle = bundle or PromptBundle.load()
    formation_max = simulator.config.world.formation_max
    store: List[SampleRecord] = []
    episode = 0
    while len(store) < target_count:
        pending: List[SampleRecord] = []
        episode_return = 0.0
        for outcome in simulator.episode(episode_seed(seed, episode), role_selector):
            if on_frame is not None:
                on_frame(outcome)
            frame_records = records_from_frame(outcome, bundle, formation_max)
            episode_return += outcome.window_reward
            if reward_mode == "episode":
                pending.extend(frame_records)
                continue
            store.extend(frame_records)
            if len(store) >= target_count:
                break
        for record in pending:
            record.reward = episode_return
        store.extend(pending)
        episode += 1
    logger.info("collected %d samples over %d episodes", len(store), episode)
    return store


def is_clean(text: str, anomalous: Iterable[str]) -> bool:
    """
    The is_clean function checks a reasoning text against the anomalous-character set: listed
    sequences, control characters other than newline and tab, and unpaired brackets or braces.
    """
    if any(sequence and sequence in text for sequence in anomalous):
        return False
    if any(ord(ch) < 32 and ch not in _ALLOWED_CONTROL or ord(ch) == 127 for ch in text):
        return False
    stack = []
    for ch in text:
        if ch in "([{":
            stack.append(ch)
        elif ch in _OPENERS:
            if not stack or stack.pop() != _OPENERS[ch]:
                return False
    return not stack


@dataclass(frozen=True)
class CheckBreakdown:
    goal_ok: bool
    clean: bool
    length_ok: bool
    reward_ok: bool
    tokens: int
    score: float

    @property
    def passed(self) -> bool:
        return self.score >= 1.0


def check_sample(record: SampleRecord, config: FilterConfig,
                 token_counter: Callable[[str], int] = word_count) -> CheckBreakdown:
    """
    The check_sample function scores a sample as the weighted sum of four indicators: the labeled
    goal is a grid cell, the reasoning is free of anomalous characters, its token count lies in
    [min_tokens, max_tokens], and the reward reaches reward_threshold.

    :param record: SampleRecord: Sample to score
    :param config: FilterConfig: Weights and thresholds
    :param token_counter: Callable[[str], int]: Token counting rule, whitespace words by default
    :return: The indicators and the score
    """
    tokens = token_counter(record.reasoning)
    indicators = (
        record.goal is not None and grid_index(record.goal) is not None,
        is_clean(record.reasoning, config.anomalous),
        config.min_tokens <= tokens <= config.max_tokens,
        record.reward >= config.reward_threshold,
    )
    score = round(math.fsum(w for w, ok in zip(config.weights, indicators) if ok), 12)
    return CheckBreakdown(*indicators, tokens=tokens, score=score)


def filter_samples(records: Sequence[SampleRecord], config: FilterConfig,
                   token_counter: Callable[[str], int] = word_count) -> List[SampleRecord]:
    """Keeps, in order, the records whose score reaches pass_threshold."""
    return [r for r in records if check_sample(r, config, token_counter).score >= config.pass_threshold]


@dataclass
class CorpusEntry:
    instruction: str
    output: str
    metadata: Dict = field(default_factory=dict)
    input: str = ""

    def to_json(self) -> str:
        row = {"instruction": self.instruction, "input": self.input, "output": self.output, "metadata": self.metadata}
        return json.dumps(row, ensure_ascii=False)


def corpus_entry(record: SampleRecord, breakdown: CheckBreakdown) -> CorpusEntry:
    return CorpusEntry(
        instruction=record.instruction,
        output=record.reasoning,
        metadata={
            "agent": record.agent_id,
            "frame": record.frame_index,
            "episode_seed": record.episode_seed,
            "role": record.role.name,
            "goal": [record.goal.x, record.goal.y] if record.goal is not None else None,
            "reward": record.reward,
            "score": breakdown.score,
        },
    )


def export_corpus(entries: Sequence[CorpusEntry], path: str | Path) -> Path:
    """
    The export_corpus function writes one JSON object per line with the fields instruction,
    input, output and metadata, UTF-8 encoded.

    :param entries: Sequence[CorpusEntry]: Filtered corpus
    :param path: str | Path: Output file
    :return: The written path
    """
    if not entries:
        raise CorpusError("refusing to export an empty corpus")
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for entry in entries:
            fh.write(entry.to_json() + "\n")
    logger.info("exported %d corpus entries to %s", len(entries), path)
    return path


def read_corpus(path: str | Path) -> List[CorpusEntry]:
    entries = []
    with Path(path).open(encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                entries.append(CorpusEntry(instruction=row["instruction"], output=row["output"],
                                           metadata=row["metadata"], input=row["input"]))
            except (json.JSONDecodeError, KeyError) as error:
                raise CorpusError(f"{path}:{line_number}: invalid corpus row: {error}") from error
    return entries


def write_filter_report(records: Sequence[SampleRecord], breakdowns: Sequence[CheckBreakdown],
                        path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "episode_seed", "frame", "agent", "role", "goal_ok", "clean", "length_ok",
                         "reward_ok", "tokens", "reward", "score", "passed"])
        for index, (record, b) in enumerate(zip(records, breakdowns)):
            writer.writerow([index, record.episode_seed, record.frame_index, record.agent_id, record.role.name,
                             int(b.goal_ok), int(b.clean), int(b.length_ok), int(b.reward_ok), b.tokens,
                             repr(record.reward), repr(b.score), int(b.passed)])
    return path


def observation_to_dict(obs: Observation) -> dict:
    return asdict(obs)


def observation_from_dict(data: dict) -> Observation:
    return Observation(
        agent_id=int(data["agent_id"]),
        self_pos=Vec2(*data["self_pos"]),
        self_vel=Vec2(*data["self_vel"]),
        enemy_pos=Vec2(*data["enemy_pos"]),
        enemy_vel=Vec2(*data["enemy_vel"]),
        targets=tuple(TargetView(int(t["id"]), Vec2(*t["pos"]), float(t["urgency"])) for t in data["targets"]),
    )
