import math
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, validator


class RewardWeights(BaseModel):
    w_f: float = Field(15.0, ge=0)
    w_n: float = Field(4.0, ge=0)
    w_tc: float = Field(10.0, ge=0)
    w_e: float = Field(100.0, ge=0)
    w_c: float = Field(100.0, ge=0)

    def as_tuple(self) -> Tuple[float, float, float, float, float]:
        return self.w_f, self.w_n, self.w_tc, self.w_e, self.w_c


class ObstacleSpec(BaseModel):
    center: Tuple[float, float]
    radius: float = Field(gt=0)


class WorldConfig(BaseModel):
    n_agents: int = 8
    strict: bool = True
    n_targets: int = Field(3, ge=1, le=9)
    episode_length: int = Field(1000, gt=0)
    decision_period: int = Field(50, gt=0)
    dt: float = Field(0.1, gt=0)
    obs_range: float = Field(3.0, gt=0)
    decay: float = Field(0.003, ge=0)
    weights: RewardWeights = RewardWeights()
    obstacles: List[ObstacleSpec] = [
        ObstacleSpec(center=(4.0, 4.0), radius=1.0),
        ObstacleSpec(center=(-4.0, -4.0), radius=1.0),
    ]
    arena: float = Field(10.0, gt=0)
    target_radius: float = Field(1.5, gt=0)
    formation_tolerance: float = Field(0.5, gt=0)
    formation_min: int = 3
    formation_max: int = 8
    formation_radius: float = Field(0.75, gt=0)
    safe_distance: float = Field(1.5, gt=0)
    collision_distance: float = Field(0.3, gt=0)
    formation_reward_scale: float = Field(2.0, gt=0)
    agent_speed: float = Field(1.0, gt=0)
    enemy_speed: float = Field(0.75, gt=0)
    enemy_gain: float = Field(2.0, ge=0)
    enemy_max_accel: float = Field(3.0, gt=0)
    enemy_repulsion_gain: float = Field(1.0, ge=0)
    enemy_tangential_gain: float = Field(0.5, ge=0)
    obstacle_margin: float = Field(0.05, ge=0)
    spawn_half_width: float = Field(6.0, gt=0)

    @validator("formation_max", always=True)
    def formation_bounds(cls, value, values):
        low = values.get("formation_min", 3)
        if not 1 <= low <= value:
            raise ValueError("formation bounds must satisfy 1 <= formation_min <= formation_max")
        return value

    @property
    def frames_per_episode(self) -> int:
        return self.episode_length // self.decision_period

    @property
    def navigation_scale(self) -> float:
        return 16.0 * math.sqrt(2.0)


class NavConfig(BaseModel):
    k_attract: float = Field(2.0, ge=0)
    k_damp: float = Field(1.5, ge=0)
    max_accel: float = Field(3.0, gt=0)
    repulsion_gain: float = Field(1.0, ge=0)
    tangential_gain: float = Field(0.5, ge=0)


class OracleConfig(BaseModel):
    enemy_weight: float = Field(0.5, ge=0)
    threat_radius: float = Field(4.0, gt=0)
    team_weight: float = Field(0.5, ge=0)
    commander_margin: float = Field(0.1, ge=0)
    noise: float = Field(0.0, ge=0)


class PolicyConfig(BaseModel):
    intent_backend: Literal["oracle", "remote"] = "oracle"
    consensus_backend: Literal["oracle", "remote"] = "oracle"
    endpoint: str = "http://127.0.0.1:8000"
    api_key: str = ""
    model: str = "qwen2.5-1.5b-rally"
    temperature: float = Field(0.2, ge=0)
    max_tokens: int = Field(512, gt=0)
    timeout: float = Field(30.0, gt=0)
    max_retries: int = Field(2, ge=0)
    backoff: float = Field(0.5, ge=0)
    max_in_flight: int = Field(1, ge=1)
    few_shot_count: int = Field(1, ge=0)
    prompt_dir: Optional[str] = None


class TrainConfig(BaseModel):
    gamma: float = Field(0.95, gt=0, le=1)
    lr: float = Field(1e-5, gt=0)
    batch_size: int = Field(256, gt=0)
    tau: float = Field(0.01, gt=0, le=1)
    mixing_width: int = Field(128, gt=0)
    hidden_sizes: Tuple[int, ...] = (64, 64)
    output_activation: Literal["relu", "identity"] = "identity"
    mixer: Literal["rmix", "vdn"] = "rmix"
    buffer_capacity: int = Field(50000, gt=0)
    n_pre: int = Field(50, ge=0)
    n_epoch: int = Field(200, ge=0)
    epsilon_start: float = Field(0.5, ge=0, le=1)
    epsilon_end: float = Field(0.05, ge=0, le=1)
    reward_scale: float = Field(5e-5, gt=0)
    max_agents: int = Field(11, gt=0)
    divergence_threshold: float = Field(1e12, gt=0)
    joint_gamma: float = Field(0.92, gt=0, le=1)
    log_every: int = Field(100, gt=0)


class FilterConfig(BaseModel):
    reward_threshold: float = -3000.0
    min_tokens: int = Field(200, ge=0)
    max_tokens: int = Field(400, ge=0)
    anomalous: List[str] = ["�"]
    weights: Tuple[float, float, float, float] = (0.45, 0.25, 0.2, 0.1)
    pass_threshold: float = 1.0
    min_samples: int = Field(12000, gt=0)
    reward_mode: Literal["window", "episode"] = "window"

    @validator("weights")
    def nonnegative_weights(cls, value):
        if any(w < 0 for w in value):
            raise ValueError("filter weights must be nonnegative")
        return value


class RunConfig(BaseModel):
    world: WorldConfig = WorldConfig()
    nav: NavConfig = NavConfig()
    oracle: OracleConfig = OracleConfig()
    policy: PolicyConfig = PolicyConfig()
    train: TrainConfig = TrainConfig()
    filter: FilterConfig = FilterConfig()
    seed: int = Field(7, ge=0)
    episodes: int = Field(1, gt=0)
    output_dir: str = "runs"
    trace: bool = True


class ChatMessage(BaseModel):
    role: Literal["system", "user", "assistant"]
    content: str


class ChatCompletionRequest(BaseModel):
    model: str
    messages: List[ChatMessage] = Field(min_items=1)
    temperature: float = 0.2
    max_tokens: int = 512


class ChatChoiceMessage(BaseModel):
    role: str = "assistant"
    content: str


class ChatChoice(BaseModel):
    index: int = 0
    message: ChatChoiceMessage
    finish_reason: str = "stop"


class ChatCompletionResponse(BaseModel):
    id: str = "rally-local"
    object: str = "chat.completion"
    model: str
    choices: List[ChatChoice]
