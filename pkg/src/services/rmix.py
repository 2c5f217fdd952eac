"""
Role selection by value decomposition: a shared role-value network, a monotonic hypernetwork
mixer (with a weighted-sum baseline), a semi-offline replay buffer, and the training loop that
seeds the buffer from the oracle role policy before online epsilon-greedy training.
"""
import copy
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Collection, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from src.exceptions import ConfigurationError, ShapeError, TrainingError
from src.schemas import RunConfig, TrainConfig, WorldConfig
from src.services.geometry import GRID_POINTS
from src.services.roles import ROLES, Role
from src.services.simulation import FrameOutcome, Simulator, episode_seed
from src.services.world import GlobalState, Observation, observe

logger = logging.getLogger(__name__)

DTYPE = torch.float64
N_ROLES = len(ROLES)
ORIGIN_OFFLINE = "offline-oracle"
ORIGIN_ONLINE = "online"
CHECKPOINT_VERSION = 2
_POS_SCALE = 10.0


def observation_dim(max_agents: int) -> int:
    return 9 + 3 * len(GRID_POINTS) + max_agents


def state_dim(n_agents: int) -> int:
    return 6 * n_agents + 5 + 3 * len(GRID_POINTS)


def episode_progress(frame_index: int, frames: int) -> float:
    """Share of the episode's decision frames already played, 0 at the first frame."""
    return min(1.0, frame_index / max(1, frames))


def _grid_features(targets: Iterable) -> np.ndarray:
    features = np.array([[cell.x / _POS_SCALE, cell.y / _POS_SCALE, 0.0] for cell in GRID_POINTS])
    for target in targets:
        for k, cell in enumerate(GRID_POINTS):
            if (round(target.pos.x, 1), round(target.pos.y, 1)) == (cell.x, cell.y):
                features[k, 2] = target.urgency
    return features.ravel()


def featurize_observation(obs: Observation, max_agents: int = 11, progress: float = 0.0) -> np.ndarray:
    """
    The featurize_observation function flattens an observation in a fixed order: own pose (4),
    enemy pose (4), the nine grid cells as (x, y, urgency or 0) (27), the episode progress (1)
    and a one-hot agent id.

    :param obs: Observation: Local observation
    :param max_agents: int: Width of the identity one-hot
    :param progress: float: Episode progress in [0, 1]
    :return: A float64 vector of length observation_dim(max_agents)
    """
    if obs.agent_id >= max_agents:
        raise ShapeError(f"agent id {obs.agent_id} does not fit a one-hot of width {max_agents}")
    identity = np.zeros(max_agents)
    identity[obs.agent_id] = 1.0
    return np.concatenate([
        np.array([obs.self_pos.x / _POS_SCALE, obs.self_pos.y / _POS_SCALE, obs.self_vel.x, obs.self_vel.y,
                  obs.enemy_pos.x / _POS_SCALE, obs.enemy_pos.y / _POS_SCALE, obs.enemy_vel.x, obs.enemy_vel.y]),
        _grid_features(obs.targets),
        [progress],
        identity,
    ])


def featurize_state(state: GlobalState, goals: Sequence[int], progress: float = 0.0) -> np.ndarray:
    """Global features: agent poses, the enemy pose, the target grid, episode progress and goal positions."""
    positions = state.target_positions()
    goal_features = np.array([[positions[g].x / _POS_SCALE, positions[g].y / _POS_SCALE] for g in goals])
    return np.concatenate([
        np.hstack([state.agent_pos / _POS_SCALE, state.agent_vel]).ravel(),
        state.enemy_pos / _POS_SCALE, state.enemy_vel,
        _grid_features(state.targets),
        [progress],
        goal_features.ravel(),
    ])


class RoleQNet(nn.Module):
    """Shared role-value network Q(o, k) for k in Commander, Coordinator, Executor."""

    def __init__(self, input_dim: int, hidden_sizes: Sequence[int] = (64, 64)):
        super().__init__()
        self.input_dim = input_dim
        layers, width = [], input_dim
        for size in hidden_sizes:
            layers += [nn.Linear(width, size), nn.ReLU()]
            width = size
        layers.append(nn.Linear(width, N_ROLES))
        self.layers = nn.Sequential(*layers).to(DTYPE)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return self.layers(features)


def role_values(net: RoleQNet, features) -> np.ndarray:
    x = torch.as_tensor(np.asarray(features, dtype=float), dtype=DTYPE)
    if x.shape[-1:] != (net.input_dim,):
        raise ShapeError(f"role network expects {net.input_dim} features, got {tuple(x.shape)}")
    with torch.no_grad():
        return net(x).numpy()


def select_role(q, epsilon: float, rng: np.random.Generator,
                allowed_roles: Optional[Collection[Role]] = None) -> Role:
    """
    The select_role function picks a role epsilon-greedily. The greedy choice is the argmax of
    q restricted to allowed_roles, ties going to the lowest role index.

    :param q: Role values in Role index order
    :param epsilon: float: Exploration probability
    :param rng: np.random.Generator: Random source
    :param allowed_roles: Collection[Role]: Roles the agent may take, all when None
    :return: The selected Role
    """
    allowed = sorted(allowed_roles) if allowed_roles else list(ROLES)
    if rng.random() < epsilon:
        return Role(allowed[int(rng.integers(len(allowed)))])
    values = np.asarray(q, dtype=float)
    best = allowed[0]
    for role in allowed[1:]:
        if values[role] > values[best]:
            best = role
    return Role(best)


class Mixer(nn.Module):
    """
    Monotonic mixing network. Hypernetworks conditioned on the global state produce W1 (E x N)
    and W2 (E) through an absolute value, so dQ_tot/dQ_i >= 0 for every state.
    """

    def __init__(self, n_agents: int, state_dim: int, embed_dim: int = 128, output_activation: str = "relu"):
        super().__init__()
        self.n_agents = n_agents
        self.state_dim = state_dim
        self.embed_dim = embed_dim
        self.output_activation = output_activation
        self.hyper_w1 = nn.Linear(state_dim, embed_dim * n_agents)
        self.hyper_b1 = nn.Linear(state_dim, embed_dim)
        self.hyper_w2 = nn.Linear(state_dim, embed_dim)
        self.hyper_b2 = nn.Sequential(nn.Linear(state_dim, embed_dim), nn.ReLU(), nn.Linear(embed_dim, 1))
        self.to(DTYPE)

    def forward(self, agent_qs: torch.Tensor, states: torch.Tensor) -> torch.Tensor:
        batch = agent_qs.shape[0]
        w1 = torch.abs(self.hyper_w1(states)).view(batch, self.n_agents, self.embed_dim)
        b1 = self.hyper_b1(states).view(batch, 1, self.embed_dim)
        hidden = torch.relu(torch.bmm(agent_qs.view(batch, 1, self.n_agents), w1) + b1)
        w2 = torch.abs(self.hyper_w2(states)).view(batch, self.embed_dim, 1)
        b2 = self.hyper_b2(states).view(batch)
        q_total = torch.bmm(hidden, w2).view(batch) + b2
        return torch.relu(q_total) if self.output_activation == "relu" else q_total


class VDNMixer(nn.Module):
    """Weighted-sum baseline; the weights are fixed and nonnegative."""

    def __init__(self, n_agents: int, weights: Optional[Sequence[float]] = None):
        super().__init__()
        self.n_agents = n_agents
        w = torch.ones(n_agents, dtype=DTYPE) if weights is None else torch.as_tensor(weights, dtype=DTYPE)
        if w.shape != (n_agents,) or bool((w < 0).any()):
            raise ValueError("VDN weights must be nonnegative with one entry per agent")
        self.register_buffer("weights", w)

    def forward(self, agent_qs: torch.Tensor, states: Optional[torch.Tensor] = None) -> torch.Tensor:
        return (agent_qs * self.weights).sum(dim=-1)


def mix(q_values, state_features, mixer: Mixer | VDNMixer) -> float:
    q = torch.as_tensor(np.asarray(q_values, dtype=float), dtype=DTYPE)
    if q.shape != (mixer.n_agents,):
        raise ShapeError(f"mixer expects {mixer.n_agents} agent values, got {tuple(q.shape)}")
    s = torch.as_tensor(np.asarray(state_features, dtype=float), dtype=DTYPE)
    if isinstance(mixer, Mixer) and s.shape != (mixer.state_dim,):
        raise ShapeError(f"mixer expects {mixer.state_dim} state features, got {tuple(s.shape)}")
    with torch.no_grad():
        return float(mixer(q.unsqueeze(0), s.unsqueeze(0))[0])


def vdn_mix(q_values, weights) -> float:
    q, w = np.asarray(q_values, dtype=float), np.asarray(weights, dtype=float)
    if q.shape != w.shape:
        raise ShapeError(f"{len(q)} values against {len(w)} weights")
    if (w < 0).any():
        raise ValueError("VDN weights must be nonnegative")
    return float(q @ w)


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    obs: np.ndarray
    roles: np.ndarray
    reward: float
    next_state: np.ndarray
    next_obs: np.ndarray
    intents: np.ndarray
    terminal: bool = False

    def __post_init__(self):
        n = len(self.roles)
        if not (len(self.obs) == len(self.next_obs) == len(self.intents) == n):
            raise ShapeError("per-agent arrays of a transition must share one length")


@dataclass(frozen=True)
class Batch:
    state: torch.Tensor
    obs: torch.Tensor
    roles: torch.Tensor
    reward: torch.Tensor
    next_state: torch.Tensor
    next_obs: torch.Tensor
    terminal: torch.Tensor

    @classmethod
    def stack(cls, transitions: Sequence[Transition]) -> "Batch":
        def tensor(values, dtype=DTYPE):
            return torch.as_tensor(np.stack(values) if not np.isscalar(values[0]) else np.array(values), dtype=dtype)

        return cls(
            state=tensor([t.state for t in transitions]),
            obs=tensor([t.obs for t in transitions]),
            roles=tensor([t.roles for t in transitions], dtype=torch.long),
            reward=tensor([t.reward for t in transitions]),
            next_state=tensor([t.next_state for t in transitions]),
            next_obs=tensor([t.next_obs for t in transitions]),
            terminal=tensor([float(t.terminal) for t in transitions]),
        )


class ReplayBuffer:
    """Bounded FIFO of transitions, each tagged with its origin."""

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ConfigurationError("replay capacity must be positive")
        self.capacity = capacity
        self._items: deque = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._items)

    def append(self, transition: Transition, origin: str = ORIGIN_ONLINE) -> None:
        self._items.append((origin, transition))

    def origins(self) -> List[str]:
        return [origin for origin, _ in self._items]

    def transitions(self) -> List[Transition]:
        return [transition for _, transition in self._items]

    def sample(self, batch_size: int, rng: np.random.Generator) -> List[Transition]:
        indices = rng.choice(len(self._items), size=min(batch_size, len(self._items)), replace=False)
        return [self._items[int(i)][1] for i in indices]


def td_targets(batch: Batch, target_net: RoleQNet, target_mixer: nn.Module, gamma: float) -> torch.Tensor:
    """
    The td_targets function computes y = R + gamma * Q_tot(s', greedy roles) with the target
    networks, each agent taking its own argmax role. Terminal transitions do not bootstrap.
    """
    with torch.no_grad():
        greedy = target_net(batch.next_obs).max(dim=-1).values
        bootstrap = target_mixer(greedy, batch.next_state)
        return batch.reward + gamma * (1.0 - batch.terminal) * bootstrap


def td_target(transition: Transition, target_net: RoleQNet, target_mixer: nn.Module, gamma: float) -> float:
    return float(td_targets(Batch.stack([transition]), target_net, target_mixer, gamma)[0])


def chosen_q_total(batch: Batch, net: RoleQNet, mixer: nn.Module) -> torch.Tensor:
    q = net(batch.obs).gather(-1, batch.roles.unsqueeze(-1)).squeeze(-1)
    return mixer(q, batch.state)


def td_loss(batch: Batch, net: RoleQNet, mixer: nn.Module, target_net: RoleQNet, target_mixer: nn.Module,
            gamma: float) -> torch.Tensor:
    """
    The td_loss function is the summed squared TD error over the batch.

    :param batch: Batch: Stacked transitions
    :param net: RoleQNet: Online role network
    :param mixer: nn.Module: Online mixer
    :param target_net: RoleQNet: Target role network
    :param target_mixer: nn.Module: Target mixer
    :param gamma: float: Discount factor
    :return: A scalar tensor connected to the online parameters
    """
    y = td_targets(batch, target_net, target_mixer, gamma)
    return ((y - chosen_q_total(batch, net, mixer)) ** 2).sum()


def sgd_step(loss: torch.Tensor, optimizer: torch.optim.Optimizer) -> None:
    """
    The sgd_step function backpropagates loss and applies one plain gradient step. Non-finite
    gradients abort with a TrainingError instead of corrupting the parameters.

    :param loss: torch.Tensor: Scalar loss
    :param optimizer: torch.optim.Optimizer: Plain SGD over the online parameters
    :return: None
    """
    optimizer.zero_grad()
    loss.backward()
    bad = [
        index for group in optimizer.param_groups for index, p in enumerate(group["params"])
        if p.grad is not None and not bool(torch.isfinite(p.grad).all())
    ]
    if bad:
        raise TrainingError("non-finite gradient", {"loss": float(loss.detach()), "tensors": len(bad)})
    optimizer.step()


def soft_update(target: nn.Module, source: nn.Module, tau: float) -> None:
    with torch.no_grad():
        for target_param, param in zip(target.parameters(), source.parameters()):
            if tau == 1:
                target_param.copy_(param)
            elif tau > 0:
                target_param.mul_(1.0 - tau).add_(param, alpha=tau)


def make_transition(outcome: FrameOutcome, max_agents: int, reward_scale: float, frames: int,
                    next_intents: Optional[Sequence[int]] = None) -> Transition:
    """
    Transition of one decision frame. Both states are featurized with the stage-one intents of
    their own frame; next_intents are the intents of the following frame. Terminal frames never
    bootstrap, so without next_intents the next state falls back to the consensus goals. Episode
    progress is measured against frames decision frames per episode.
    """
    result = outcome.result
    intents = [intent.goal for intent in result.intents]
    now = episode_progress(outcome.frame_index, frames)
    later = episode_progress(outcome.frame_index + 1, frames)
    next_obs = [observe(outcome.next_state, i) for i in range(outcome.next_state.n_agents)]
    return Transition(
        state=featurize_state(outcome.state, intents, now),
        obs=np.stack([featurize_observation(o, max_agents, now) for o in result.observations]),
        roles=np.array([int(role) for role in result.roles]),
        reward=outcome.window_reward * reward_scale,
        next_state=featurize_state(outcome.next_state, result.goals if next_intents is None else next_intents,
                                   later),
        next_obs=np.stack([featurize_observation(o, max_agents, later) for o in next_obs]),
        intents=np.array(intents),
        terminal=outcome.terminal,
    )


def episode_transitions(outcomes: Iterable[FrameOutcome], max_agents: int, reward_scale: float,
                        frames: int) -> Iterator[Tuple[FrameOutcome, Transition]]:
    """
    The episode_transitions function pairs every frame with its transition. Each frame is held
    back until the next one arrives so its next state carries the next frame's intents.

    :param outcomes: Iterable[FrameOutcome]: Frames of one episode in order
    :param max_agents: int: Featurization width
    :param reward_scale: float: Factor applied to window rewards
    :param frames: int: Decision frames per episode
    :return: An iterator of (outcome, transition) pairs, one per frame
    """
    pending: Optional[FrameOutcome] = None
    for outcome in outcomes:
        if pending is not None:
            next_intents = [intent.goal for intent in outcome.result.intents]
            yield pending, make_transition(pending, max_agents, reward_scale, frames, next_intents)
        pending = outcome
    if pending is not None:
        yield pending, make_transition(pending, max_agents, reward_scale, frames)


def seed_offline(simulator: Simulator, role_selector: Callable, n_pre: int, buffer: ReplayBuffer,
                 config: TrainConfig, seed: int) -> ReplayBuffer:
    """
    The seed_offline function fills the buffer with one transition per decision frame of n_pre
    episodes played with the oracle role policy, tagged offline-oracle.

    :param simulator: Simulator: Episode runner with the intent and consensus policies
    :param role_selector: Callable: Oracle role policy
    :param n_pre: int: Number of offline episodes
    :param buffer: ReplayBuffer: Buffer to fill
    :param config: TrainConfig: Featurization width and reward scale
    :param seed: int: Run seed
    :return: The same buffer
    """
    frames = simulator.config.world.frames_per_episode
    for episode in range(n_pre):
        outcomes = simulator.episode(episode_seed(seed, episode), role_selector)
        for _, transition in episode_transitions(outcomes, config.max_agents, config.reward_scale, frames):
            buffer.append(transition, ORIGIN_OFFLINE)
    logger.info("offline seeding stored %d transitions from %d episodes", len(buffer), n_pre)
    return buffer


@dataclass
class TrainingHistory:
    losses: List[float] = field(default_factory=list)
    returns: List[float] = field(default_factory=list)
    epsilons: List[float] = field(default_factory=list)


def epsilon_at(epoch: int, config: TrainConfig) -> float:
    """Linear decay from epsilon_start to epsilon_end over the first half of training."""
    horizon = max(1, config.n_epoch // 2)
    fraction = min(1.0, epoch / horizon)
    if fraction >= 1.0:
        return config.epsilon_end
    return (1.0 - fraction) * config.epsilon_start + fraction * config.epsilon_end


class RMIXTrainer:
    """
    Owns the online and target networks, the optimizer and the update rule.

    :param config: TrainConfig: Training hyperparameters
    :param n_agents: int: Swarm size the mixer is built for
    :param seed: int: Seed for parameter initialisation and batch sampling
    """

    def __init__(self, config: TrainConfig, n_agents: int, seed: int = 0):
        if n_agents > config.max_agents:
            raise ConfigurationError(f"swarm of {n_agents} exceeds max_agents={config.max_agents}")
        self.config = config
        self.n_agents = n_agents
        self.seed = seed
        torch.manual_seed(seed)
        self.net = RoleQNet(observation_dim(config.max_agents), config.hidden_sizes)
        if config.mixer == "vdn":
            self.mixer: nn.Module = VDNMixer(n_agents)
        else:
            self.mixer = Mixer(n_agents, state_dim(n_agents), config.mixing_width, config.output_activation)
        self.target_net = copy.deepcopy(self.net)
        self.target_mixer = copy.deepcopy(self.mixer)
        self.optimizer = torch.optim.SGD(list(self.net.parameters()) + list(self.mixer.parameters()), lr=config.lr)
        self.updates = 0
        self.rng = np.random.default_rng([seed, 1])

    def role_selector(self, epsilon: float, allowed_roles: Optional[Collection[Role]] = None,
                      frames: Optional[int] = None) -> Callable:
        """Epsilon-greedy roles from the online network; frames is the episode length in decision frames."""
        max_agents = self.config.max_agents
        frames = frames or WorldConfig().frames_per_episode

        def choose(obs: Observation, turn) -> Role:
            features = featurize_observation(obs, max_agents, episode_progress(turn.frame_index, frames))
            return select_role(role_values(self.net, features), epsilon, turn.rng, allowed_roles)

        return choose

    def update(self, transitions: Sequence[Transition]) -> float:
        """
        The update function runs one TD step on a batch: loss, plain SGD step, then soft updates
        of both target networks.

        :param transitions: Sequence[Transition]: Sampled batch
        :return: The batch loss before the step
        """
        batch = Batch.stack(transitions)
        loss = td_loss(batch, self.net, self.mixer, self.target_net, self.target_mixer, self.config.gamma)
        value = float(loss.detach())
        if not np.isfinite(value) or value > self.config.divergence_threshold:
            raise TrainingError("training diverged", {"loss": value, "update": self.updates})
        sgd_step(loss, self.optimizer)
        soft_update(self.target_net, self.net, self.config.tau)
        soft_update(self.target_mixer, self.mixer, self.config.tau)
        self.updates += 1
        if self.updates % self.config.log_every == 0:
            logger.info("update %d loss=%.6f", self.updates, value)
        return value

    def train(self, simulator: Simulator, buffer: ReplayBuffer, seed: int, episode_offset: int = 0,
              allowed_roles: Optional[Collection[Role]] = None) -> TrainingHistory:
        """
        The train function plays n_epoch episodes with epsilon-greedy roles, appends one online
        transition per frame and, once the buffer holds a full batch, updates after every frame.

        :param simulator: Simulator: Episode runner
        :param buffer: ReplayBuffer: Possibly pre-seeded buffer
        :param seed: int: Run seed
        :param episode_offset: int: First episode index, so online episodes differ from offline ones
        :param allowed_roles: Collection[Role]: Role subset for ablations
        :return: The loss, return and epsilon curves
        """
        history = TrainingHistory()
        frames = simulator.config.world.frames_per_episode
        for epoch in range(self.config.n_epoch):
            epsilon = epsilon_at(epoch, self.config)
            episode_return = 0.0
            selector = self.role_selector(epsilon, allowed_roles, frames)
            outcomes = simulator.episode(episode_seed(seed, episode_offset + epoch), selector)
            transitions = episode_transitions(outcomes, self.config.max_agents, self.config.reward_scale, frames)
            for outcome, transition in transitions:
                buffer.append(transition)
                episode_return += outcome.window_reward
                if len(buffer) >= self.config.batch_size:
                    history.losses.append(self.update(buffer.sample(self.config.batch_size, self.rng)))
            history.returns.append(episode_return)
            history.epsilons.append(epsilon)
            logger.info("epoch %d epsilon=%.3f return=%.3f updates=%d", epoch, epsilon, episode_return, self.updates)
        return history

    def save(self, path: str | Path) -> None:
        torch.save({
            "format_version": CHECKPOINT_VERSION,
            "n_agents": self.n_agents,
            "seed": self.seed,
            "updates": self.updates,
            "train_config": self.config.dict(),
            "net": self.net.state_dict(),
            "mixer": self.mixer.state_dict(),
            "target_net": self.target_net.state_dict(),
            "target_mixer": self.target_mixer.state_dict(),
        }, str(path))

    @classmethod
    def load(cls, path: str | Path) -> "RMIXTrainer":
        payload = torch.load(str(path), weights_only=True)
        if payload.get("format_version") != CHECKPOINT_VERSION:
            raise ConfigurationError(f"unsupported checkpoint version {payload.get('format_version')!r}")
        trainer = cls(TrainConfig(**payload["train_config"]), payload["n_agents"], payload["seed"])
        trainer.net.load_state_dict(payload["net"])
        trainer.mixer.load_state_dict(payload["mixer"])
        trainer.target_net.load_state_dict(payload["target_net"])
        trainer.target_mixer.load_state_dict(payload["target_mixer"])
        trainer.updates = payload["updates"]
        return trainer


def save_checkpoint(trainer: RMIXTrainer, path: str | Path) -> None:
    trainer.save(path)


def load_checkpoint(path: str | Path) -> RMIXTrainer:
    return RMIXTrainer.load(path)


def save_buffer(buffer: ReplayBuffer, path: str | Path) -> None:
    """
    The save_buffer function stores the buffer contents with their origin tags, stacked per field.

    :param buffer: ReplayBuffer: Buffer to persist, possibly empty
    :param path: str | Path: Output file
    """
    items = buffer.transitions()
    payload = {"format_version": CHECKPOINT_VERSION, "capacity": buffer.capacity, "origins": buffer.origins()}
    if items:
        payload.update(
            state=torch.as_tensor(np.stack([t.state for t in items])),
            obs=torch.as_tensor(np.stack([t.obs for t in items])),
            roles=torch.as_tensor(np.stack([t.roles for t in items])),
            reward=torch.as_tensor(np.array([t.reward for t in items])),
            next_state=torch.as_tensor(np.stack([t.next_state for t in items])),
            next_obs=torch.as_tensor(np.stack([t.next_obs for t in items])),
            intents=torch.as_tensor(np.stack([t.intents for t in items])),
            terminal=torch.as_tensor(np.array([t.terminal for t in items])),
        )
    torch.save(payload, str(path))


def load_buffer(path: str | Path, capacity: Optional[int] = None) -> ReplayBuffer:
    payload = torch.load(str(path), weights_only=True)
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise ConfigurationError(f"unsupported buffer version {payload.get('format_version')!r}")
    buffer = ReplayBuffer(capacity or payload["capacity"])
    for k, origin in enumerate(payload["origins"]):
        buffer.append(Transition(
            state=payload["state"][k].numpy(),
            obs=payload["obs"][k].numpy(),
            roles=payload["roles"][k].numpy(),
            reward=float(payload["reward"][k]),
            next_state=payload["next_state"][k].numpy(),
            next_obs=payload["next_obs"][k].numpy(),
            intents=payload["intents"][k].numpy(),
            terminal=bool(payload["terminal"][k]),
        ), origin)
    return buffer


def build_trainer(config: RunConfig) -> RMIXTrainer:
    return RMIXTrainer(config.train, config.world.n_agents, config.seed)


def smoothed(values: Sequence[float], window: int = 50) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if len(values) < window:
        return values.copy()
    return np.convolve(values, np.ones(window) / window, mode="valid")
