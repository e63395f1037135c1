#!/usr/bin/env python3
"""
OpenAI-compatible chat-completions client for the guidance rApp.
This is the only network surface of the package.
"""

import logging
import os
import time
from dataclasses import dataclass
from typing import Dict, List, Optional

import openai

logger = logging.getLogger(__name__)

SYSTEM_MESSAGE = "You are an expert in wireless communications for resource allocation."

# retried: 408 request timeout, 409 conflict, 429 rate limit and any 5xx
_TRANSIENT_STATUS = {408, 409, 429}


class GuidanceError(Exception):
    """Custom exception for guidance pipeline errors."""
    pass


class EndpointError(GuidanceError):
    """The LLM endpoint did not produce a usable completion."""
    pass


class EndpointTimeoutError(EndpointError):
    pass


class EndpointTransportError(EndpointError):
    pass


class EndpointStatusError(EndpointError):
    def __init__(self, status_code: int, message: str):
        super().__init__(f"HTTP {status_code}: {message}")
        self.status_code = status_code


class EmptyCompletionError(EndpointError):
    pass


@dataclass(frozen=True)
class LlmEndpointConfig:
    """
    Where and how to query the chat model.

    Attributes:
        base_url: Root of the OpenAI-compatible API (".../v1")
        model_name: Model identifier passed in the request body
        temperature: Sampling temperature
        top_p: Nucleus sampling mass
        timeout: Per-attempt timeout in seconds; all attempts together get timeout * (max_retries + 1)
        max_retries: Extra attempts after the first on transient failures
        api_key_env_var: Environment variable holding the bearer token
    """
    base_url: str = "http://localhost:8000/v1"
    model_name: str = "meta-llama/Llama-3.1-8B-Instruct"
    temperature: float = 0.6
    top_p: float = 0.9
    timeout: float = 30.0
    max_retries: int = 2
    api_key_env_var: str = "HRIC_LLM_API_KEY"

    def __post_init__(self):
        if not self.timeout > 0:
            raise GuidanceError(f"timeout must be > 0, got {self.timeout}")
        if self.max_retries < 0:
            raise GuidanceError(f"max_retries must be >= 0, got {self.max_retries}")


def create_client(endpoint: LlmEndpointConfig) -> openai.OpenAI:
    """Create a client with SDK-level retries disabled; retries are counted here."""
    api_key = os.getenv(endpoint.api_key_env_var, "").strip() or "EMPTY"
    return openai.OpenAI(api_key=api_key, base_url=endpoint.base_url,
                         timeout=endpoint.timeout, max_retries=0)


def build_messages(prompt: str) -> List[Dict[str, str]]:
    return [
        {"role": "system", "content": SYSTEM_MESSAGE},
        {"role": "user", "content": prompt},
    ]


def _is_transient(error: EndpointError) -> bool:
    if isinstance(error, (EndpointTimeoutError, EndpointTransportError)):
        return True
    if isinstance(error, EndpointStatusError):
        return error.status_code in _TRANSIENT_STATUS or error.status_code >= 500
    return False


def _single_request(client: openai.OpenAI, prompt: str, endpoint: LlmEndpointConfig, timeout: float) -> str:
    try:
        response = client.chat.completions.create(
            model=endpoint.model_name,
            messages=build_messages(prompt),
            temperature=endpoint.temperature,
            top_p=endpoint.top_p,
            timeout=timeout,
        )
    except openai.APITimeoutError as e:
        raise EndpointTimeoutError(f"request timed out after {timeout:.3f}s: {e}")
    except openai.APIConnectionError as e:
        raise EndpointTransportError(f"could not reach {endpoint.base_url}: {e}")
    except openai.APIStatusError as e:
        raise EndpointStatusError(e.status_code, str(e))

    choices = getattr(response, "choices", None)
    if not choices:
        raise EmptyCompletionError("endpoint returned no choices")
    content = getattr(getattr(choices[0], "message", None), "content", None)
    if not content or not content.strip():
        raise EmptyCompletionError("endpoint returned an empty completion")
    return content


def request_guidance(prompt: str, endpoint: LlmEndpointConfig,
                     client: Optional[openai.OpenAI] = None) -> str:
    """
    Send the prompt to the chat endpoint and return the assistant text.

    Transient failures are retried up to endpoint.max_retries times without
    back-off. All attempts share a budget of timeout * (max_retries + 1)
    seconds: each request gets at most what is left, and no retry starts
    once the budget is spent.

    Raises:
        EndpointTimeoutError, EndpointTransportError, EndpointStatusError,
        EmptyCompletionError: After the last attempt fails
    """
    client = client or create_client(endpoint)
    attempts = endpoint.max_retries + 1
    last_error: Optional[EndpointError] = None
    budget = endpoint.timeout * attempts
    deadline = time.monotonic() + budget
    for attempt in range(attempts):
        start = time.monotonic()
        remaining = deadline - start
        if remaining <= 0:
            logger.error(f"Guidance request budget of {budget:.1f}s spent after {attempt} attempts")
            break
        try:
            text = _single_request(client, prompt, endpoint, min(endpoint.timeout, remaining))
            logger.info(f"Guidance completion received in {time.monotonic() - start:.3f}s "
                        f"(attempt {attempt + 1}/{attempts})")
            return text
        except EndpointError as e:
            last_error = e
            logger.error(f"Guidance request attempt {attempt + 1}/{attempts} failed: {e}")
            if not _is_transient(e):
                break
    raise last_error
