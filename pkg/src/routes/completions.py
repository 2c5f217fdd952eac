import logging

import numpy as np
from fastapi import APIRouter, Depends

from src.schemas import ChatChoice, ChatChoiceMessage, ChatCompletionRequest, ChatCompletionResponse, OracleConfig
from src.services.intent import oracle_consensus_text, oracle_intent, read_prompt_context
from src.services.roles import Role

logger = logging.getLogger(__name__)

router = APIRouter(prefix='/v1', tags=["completions"])

NO_CONTEXT_REPLY = "I cannot find my position and the target list in the request, so I have no recommendation."


class ScriptedResponder:
    """
    Answers rendered intent and consensus prompts with the oracle's rationale, so a run can use
    the remote backend without credentials.
    """

    def __init__(self, config: OracleConfig = OracleConfig()):
        self.config = config

    def reply(self, request: ChatCompletionRequest) -> str:
        """
        The reply function reads the last user message, recovers the observation, role and
        neighbor intents from it and recommends the best-scoring target for that role.

        :param request: ChatCompletionRequest: Incoming chat request
        :return: The assistant text
        """
        prompt = next((m.content for m in reversed(request.messages) if m.role == "user"), "")
        context = read_prompt_context(prompt)
        if context is None:
            logger.debug("request without a rendered prompt")
            return NO_CONTEXT_REPLY
        role = context.role or Role.Commander
        rng = np.random.default_rng(context.obs.agent_id)
        goal = oracle_intent(context.obs, role, rng, context.neighbors, self.config)
        return oracle_consensus_text(context.obs, role, goal, context.neighbors, self.config, context.formation_max)


responder = ScriptedResponder()


def get_responder() -> ScriptedResponder:
    return responder


@router.post("/chat/completions", response_model=ChatCompletionResponse)
def create_completion(body: ChatCompletionRequest, scripted: ScriptedResponder = Depends(get_responder)):
    """
    The create_completion function answers an OpenAI-compatible chat completion request.

    :param body: ChatCompletionRequest: Model name, messages and sampling settings
    :param scripted: ScriptedResponder: Responder that writes the assistant message
    :return: A chat completion with a single choice
    """
    text = scripted.reply(body)
    return ChatCompletionResponse(model=body.model, choices=[ChatChoice(message=ChatChoiceMessage(content=text))])
