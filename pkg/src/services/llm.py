"""
OpenAI-compatible chat-completions client and the remote intent/consensus policies built on it.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional

import httpx
from pydantic import ValidationError
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt, wait_exponential

from src.exceptions import TransportError
from src.schemas import ChatCompletionRequest, ChatCompletionResponse, ChatMessage, PolicyConfig
from src.services.intent import PromptBundle, render_cons_prompt, render_init_prompt
from src.services.roles import Role

logger = logging.getLogger(__name__)

COMPLETIONS_PATH = "/v1/chat/completions"


@dataclass(frozen=True)
class TransportFailure:
    """Marker returned instead of text when every attempt failed; callers map it to Illegal."""
    reason: str
    attempts: int


class ChatClient:
    """
    Synchronous chat-completions client. Transport errors, non-2xx statuses and malformed bodies
    are retried with exponential backoff up to max_retries extra attempts.
    """

    def __init__(self, config: PolicyConfig, client: Optional[httpx.Client] = None,
                 owns_client: Optional[bool] = None):
        self.config = config
        self.endpoint = config.endpoint.rstrip("/")
        self.api_key = config.api_key
        self.client = client or httpx.Client(timeout=config.timeout)
        self.owns_client = client is None if owns_client is None else owns_client

    def close(self):
        if self.owns_client:
            self.client.close()

    def _post(self, request: ChatCompletionRequest) -> str:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        response = self.client.post(self.endpoint + COMPLETIONS_PATH, json=request.dict(), headers=headers,
                                    timeout=self.config.timeout)
        response.raise_for_status()
        try:
            body = ChatCompletionResponse.parse_obj(response.json())
        except (ValueError, ValidationError) as error:
            raise TransportError(f"malformed completion body: {error}") from error
        if not body.choices:
            raise TransportError("completion body has no choices")
        return body.choices[0].message.content

    def complete(self, request: ChatCompletionRequest) -> str | TransportFailure:
        """
        The complete function sends one chat request and returns the first choice's content.

        :param request: ChatCompletionRequest: Model, messages and decoding settings
        :return: The response text, or a TransportFailure after the last failed attempt
        """
        attempts = 0
        retrying = Retrying(
            stop=stop_after_attempt(self.config.max_retries + 1),
            wait=wait_exponential(multiplier=self.config.backoff, max=30),
            retry=retry_if_exception_type((httpx.HTTPError, TransportError)),
            reraise=True,
        )
        try:
            for attempt in retrying:
                with attempt:
                    attempts += 1
                    return self._post(request)
        except (httpx.HTTPError, TransportError) as error:
            logger.warning("completion failed after %d attempts: %s", attempts, error)
            return TransportFailure(reason=str(error) or type(error).__name__, attempts=attempts)


def remote_complete(request: ChatCompletionRequest, config: PolicyConfig,
                    client: Optional[httpx.Client] = None) -> str | TransportFailure:
    chat = ChatClient(config, client)
    try:
        return chat.complete(request)
    finally:
        if client is None:
            chat.close()


def build_messages(bundle: PromptBundle, prompt: str, agent_id: int, frame_index: int,
                   few_shot_count: int) -> List[ChatMessage]:
    """
    The build_messages function assembles the system message (task instruction followed by
    few_shot_count worked examples chosen by agent and frame) and the user prompt.

    :param bundle: PromptBundle: Prompt assets including the few-shot corpus
    :param prompt: str: Rendered user prompt
    :param agent_id: int: Requesting agent
    :param frame_index: int: Decision frame index
    :param few_shot_count: int: Number of examples to include
    :return: The message list, system message first
    """
    system = bundle.task_instruction
    if bundle.few_shot and few_shot_count:
        start = (agent_id * 31 + frame_index) % len(bundle.few_shot)
        for k in range(min(few_shot_count, len(bundle.few_shot))):
            example = bundle.few_shot[(start + k) % len(bundle.few_shot)]
            system += f"\n\nExample input:\n{example.prompt}\nExample answer:\n{example.response}"
    return [ChatMessage(role="system", content=system), ChatMessage(role="user", content=prompt)]


class RemotePolicy:
    def __init__(self, bundle: PromptBundle, config: PolicyConfig, formation_max: int = 8,
                 client: Optional[httpx.Client] = None, owns_client: Optional[bool] = None):
        self.bundle = bundle
        self.config = config
        self.formation_max = formation_max
        self.chat = ChatClient(config, client, owns_client)

    def close(self):
        self.chat.close()

    def _ask(self, prompt: str, agent_id: int, frame_index: int) -> str | TransportFailure:
        request = ChatCompletionRequest(
            model=self.config.model,
            messages=build_messages(self.bundle, prompt, agent_id, frame_index, self.config.few_shot_count),
            temperature=self.config.temperature,
            max_tokens=self.config.max_tokens,
        )
        return self.chat.complete(request)


class RemoteIntentPolicy(RemotePolicy):
    """Stage-one intent from the remote model; the raw text is parsed by the decision frame."""

    def __call__(self, obs, turn) -> str | TransportFailure:
        return self._ask(render_init_prompt(self.bundle, obs, self.formation_max), obs.agent_id, turn.frame_index)


class RemoteConsensusPolicy(RemotePolicy):
    def __call__(self, info, role: Role, intent_goal: int, turn) -> str | TransportFailure:
        prompt = render_cons_prompt(self.bundle, info, role, intent_goal, self.formation_max)
        return self._ask(prompt, info.own_obs.agent_id, turn.frame_index)
