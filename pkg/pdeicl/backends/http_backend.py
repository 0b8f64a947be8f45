#!/usr/bin/env python3
"""
HTTP backend for OpenAI-compatible completion endpoints.

Sends raw completion requests (no chat template) and records the per-token
top-k log-probabilities returned by the server.
"""

import logging
import threading
import time
from typing import Any, Dict, List, Optional

import requests

from ..exceptions import CapabilityError, ProtocolError, TransportError
from .base_backend import BaseBackend, GenerationRequest, GenerationResult, TokenDistribution

logger = logging.getLogger(__name__)

BODY_EXCERPT = 300
RETRY_STATUS = (429, 500, 502, 503, 504)


class HttpBackend(BaseBackend):
    """Completion client with bounded in-flight requests and exponential backoff."""

    name = "http"

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: Optional[str] = None,
        timeout: float = 120.0,
        retries: int = 3,
        max_in_flight: int = 4,
        session: Optional[requests.Session] = None,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.timeout = timeout
        self.retries = retries
        self.max_in_flight = max_in_flight
        self._slots = threading.BoundedSemaphore(max_in_flight)

        self.session = session or requests.Session()
        self.session.headers.update({"Content-Type": "application/json"})
        if api_key:
            self.session.headers.update({"Authorization": f"Bearer {api_key}"})

    @property
    def url(self) -> str:
        return f"{self.endpoint}/completions"

    def describe(self) -> Dict[str, Any]:
        return {"kind": self.name, "endpoint": self.endpoint, "model": self.model}

    def payload(self, request: GenerationRequest) -> Dict[str, Any]:
        body: Dict[str, Any] = {
            "model": self.model,
            "prompt": request.prompt,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
            "logprobs": request.top_k_probs,
        }
        if request.stop is not None:
            body["stop"] = [request.stop]
        if request.echo:
            body["echo"] = True
        return body

    def generate(self, request: GenerationRequest) -> GenerationResult:
        with self._slots:
            data = self._post(self.payload(request))
        return self._parse_response(data, request)

    def _post(self, body: Dict[str, Any]) -> Dict[str, Any]:
        last_error: Optional[Exception] = None
        for attempt in range(self.retries + 1):
            try:
                response = self.session.post(self.url, json=body, timeout=self.timeout)
            except (requests.exceptions.ConnectionError, requests.exceptions.Timeout) as e:
                last_error = e
                logger.warning(f"⚠️ request to {self.url} failed (attempt {attempt + 1}/{self.retries + 1}): {e}")
                if attempt < self.retries:
                    time.sleep(2 ** attempt)
                continue

            if response.status_code in RETRY_STATUS and attempt < self.retries:
                logger.warning(f"⚠️ HTTP {response.status_code} from {self.url}, retrying")
                time.sleep(2 ** attempt)
                continue
            if not 200 <= response.status_code < 300:
                raise ProtocolError(response.status_code, response.text[:BODY_EXCERPT])
            try:
                return response.json()
            except ValueError as e:
                raise ProtocolError(response.status_code, response.text[:BODY_EXCERPT]) from e

        raise TransportError(f"{self.url} unreachable after {self.retries + 1} attempts: {last_error}")

    def _parse_response(self, data: Dict[str, Any], request: GenerationRequest) -> GenerationResult:
        choices = data.get("choices") or []
        if not choices:
            raise ProtocolError(200, f"response has no choices: {str(data)[:BODY_EXCERPT]}")
        choice = choices[0]
        logprobs = choice.get("logprobs")
        if not logprobs or logprobs.get("top_logprobs") is None or logprobs.get("tokens") is None:
            raise CapabilityError("endpoint did not return per-token top-k logprobs")

        tokens: List[str] = list(logprobs["tokens"])
        top: List[Optional[Dict[str, float]]] = list(logprobs["top_logprobs"])

        prompt_tokens = None
        if request.echo:
            # echoed prompt tokens come first; split at the prompt's character length
            consumed, split = 0, 0
            while split < len(tokens) and consumed < len(request.prompt):
                consumed += len(tokens[split])
                split += 1
            prompt_tokens = tokens[:split]
            tokens, top = tokens[split:], top[split:]

        distributions = []
        for token, alternatives in zip(tokens, top):
            if not alternatives:
                distributions.append(TokenDistribution(token, (), 1.0))
            else:
                distributions.append(TokenDistribution.from_logprobs(token, alternatives))

        return GenerationResult(
            tokens=tokens,
            distributions=distributions,
            finish_reason=choice.get("finish_reason") or "length",
            prompt_tokens=prompt_tokens,
        )

    def close(self):
        self.session.close()
