#!/usr/bin/env python3
"""
PDE-ICL Backend Manager

Builds backends from configuration and implements the slice-level protocol on
top of raw generation: one slice per request, one retry on malformed output,
and autoregressive rollouts that only ever see their own prior outputs.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from ..codec import SLICE_SEP, ParseReport, parse, split_tokens
from ..config import DEFAULT_TEMPERATURE, DEFAULT_TOP_K
from ..exceptions import CapabilityError, ConfigError, InvalidArgumentError, TrialFailure
from .base_backend import BaseBackend, GenerationRequest, GenerationResult, ProblemHint, TokenDistribution
from .baseline_backend import RepeatLastBackend
from .http_backend import HttpBackend
from .oracle_backend import OracleBackend
from .replay_backend import ReplayBackend

logger = logging.getLogger(__name__)

TOKENIZATION_PROMPT = "150,500,850;151,499,849"


def create_backend(config) -> BaseBackend:
    """Instantiate the backend described by a backend config model."""
    kind = config.kind
    if kind == "http":
        api_key = config.api_key()
        if not api_key:
            logger.warning(f"⚠️ {config.api_key_env} is not set; sending requests without auth")
        return HttpBackend(
            endpoint=config.endpoint,
            model=config.model,
            api_key=api_key,
            timeout=config.timeout,
            retries=config.retries,
            max_in_flight=config.max_in_flight,
        )
    if kind == "oracle":
        return OracleBackend(refine_x=config.refine_x, refine_t=config.refine_t)
    if kind == "replay":
        upstream = create_backend(config.upstream) if config.upstream is not None else None
        return ReplayBackend(config.fixture_path, record=config.record, upstream=upstream)
    if kind == "repeat_last":
        return RepeatLastBackend()
    raise ConfigError(f"unknown backend kind: {kind}")


@dataclass
class SliceResult:
    """One generated slice with its diagnostics."""

    codes: np.ndarray
    text: str
    report: ParseReport
    value_distributions: Optional[List[TokenDistribution]]
    separator_distributions: List[TokenDistribution]
    attempts: int = 1


@dataclass
class RolloutResult:
    slices: List[np.ndarray] = field(default_factory=list)
    texts: List[str] = field(default_factory=list)
    value_distributions: List[Optional[List[TokenDistribution]]] = field(default_factory=list)
    separator_distributions: List[List[TokenDistribution]] = field(default_factory=list)
    reports: List[ParseReport] = field(default_factory=list)
    final_context: str = ""

    def codes(self) -> np.ndarray:
        """Generated codes as an (N_X, n_steps) matrix."""
        return np.stack(self.slices, axis=1)


@dataclass
class TokenizationReport:
    status: str
    granularity: str
    detail: str = ""
    observed: Optional[List[str]] = None

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "status": self.status,
            "granularity": self.granularity,
            "detail": self.detail,
            "observed": self.observed,
        }


def split_distributions(result: GenerationResult, n_x: int):
    """
    Separate value-token and separator-token distributions.

    Value distributions are filtered to numeric alternatives and are returned
    only when exactly n_x numeric tokens were emitted, i.e. when emitted tokens
    line up with spatial positions.
    """
    values, separators = [], []
    for token, dist in zip(result.tokens, result.distributions):
        stripped = token.strip()
        if stripped.isdigit():
            values.append(dist.numeric_only())
        elif dist.is_separator:
            separators.append(dist)
    if len(values) != n_x:
        return None, separators
    return values, separators


class BackendManager:
    """Slice-level generation on top of a backend."""

    def __init__(
        self,
        backend: BaseBackend,
        temperature: float = DEFAULT_TEMPERATURE,
        top_k: int = DEFAULT_TOP_K,
        trailing_delimiter: bool = True,
    ):
        self.backend = backend
        self.temperature = temperature
        self.top_k = top_k
        self.trailing_delimiter = trailing_delimiter

    @classmethod
    def from_config(cls, config) -> "BackendManager":
        """Build from an ExperimentConfig."""
        backend = create_backend(config.backend)
        temperature = getattr(config.backend, "temperature", DEFAULT_TEMPERATURE)
        top_k = getattr(config.backend, "top_k", DEFAULT_TOP_K)
        upstream = getattr(config.backend, "upstream", None)
        if upstream is not None:
            temperature = getattr(upstream, "temperature", temperature)
            top_k = getattr(upstream, "top_k", top_k)
        return cls(backend, temperature, top_k, config.trailing_delimiter)

    def generate(self, request: GenerationRequest) -> GenerationResult:
        result = self.backend.generate(request)
        if len(result.tokens) > request.max_tokens:
            raise InvalidArgumentError(
                f"{self.backend.name} returned {len(result.tokens)} tokens for max_tokens={request.max_tokens}"
            )
        return result

    def slice_request(self, context: str, n_x: int, hint: Optional[ProblemHint] = None) -> GenerationRequest:
        if context.endswith(SLICE_SEP):
            return GenerationRequest(
                prompt=context,
                max_tokens=2 * n_x - 1,
                temperature=self.temperature,
                top_k_probs=self.top_k,
                stop=SLICE_SEP,
                hint=hint,
            )
        # the first emitted token is the joining semicolon
        return GenerationRequest(
            prompt=context,
            max_tokens=2 * n_x,
            temperature=self.temperature,
            top_k_probs=self.top_k,
            hint=hint,
        )

    def generate_slice(self, context: str, n_x: int, hint: Optional[ProblemHint] = None,
                       step: Optional[int] = None) -> SliceResult:
        """
        Generate and parse exactly one slice.

        A malformed slice is retried once; a second failure raises
        TrialFailure carrying the parse diagnostics.
        """
        if n_x < 1:
            raise InvalidArgumentError(f"N_X must be >= 1, got {n_x}")
        request = self.slice_request(context, n_x, hint)

        last_reason = ""
        for attempt in (1, 2):
            result = self.generate(request)
            text = result.text
            if not context.endswith(SLICE_SEP) and text.startswith(SLICE_SEP):
                text = text[1:]
            text = text.split(SLICE_SEP)[0] if SLICE_SEP in text else text
            report = parse(text, n_x)

            if len(report.slices) == 1 and report.ok:
                values, separators = split_distributions(result, n_x)
                return SliceResult(report.slices[0], text, report, values, separators, attempt)

            if report.malformed:
                m = report.malformed[0]
                last_reason = f"{m.reason} (got {m.got}, want {m.want})"
            else:
                last_reason = "no slice emitted"
            where = f" at step {step}" if step is not None else ""
            logger.warning(f"⚠️ malformed slice{where}, attempt {attempt}/2: {last_reason}")

        raise TrialFailure(f"malformed slice after retry: {last_reason}", step=step)

    def rollout(self, context: str, n_x: int, n_steps: int, hint: Optional[ProblemHint] = None) -> RolloutResult:
        """
        Generate n_steps slices, each conditioned on the original context and
        the previously generated slices only.
        """
        if n_steps < 1:
            raise InvalidArgumentError(f"n_steps must be >= 1, got {n_steps}")

        out = RolloutResult()
        current = context
        for m in range(1, n_steps + 1):
            sr = self.generate_slice(current, n_x, hint, step=m)
            out.slices.append(sr.codes)
            out.texts.append(sr.text)
            out.value_distributions.append(sr.value_distributions)
            out.separator_distributions.append(sr.separator_distributions)
            out.reports.append(sr.report)
            if current.endswith(SLICE_SEP):
                current = current + sr.text + SLICE_SEP
            else:
                current = current + SLICE_SEP + sr.text
        out.final_context = current
        return out

    def check_tokenization(self) -> TokenizationReport:
        """
        Check that the backend tokenizes 3-digit groups and delimiters as single tokens.
        """
        request = GenerationRequest(prompt=TOKENIZATION_PROMPT, max_tokens=1, temperature=0.0, top_k_probs=1, echo=True)
        try:
            result = self.generate(request)
        except CapabilityError as e:
            logger.warning(f"⚠️ tokenization check unavailable: {e}")
            return TokenizationReport("warn", "unknown", f"endpoint lacks echo/logprob support: {e}")

        observed = result.prompt_tokens
        if observed is None:
            return TokenizationReport("warn", "unknown", "backend did not echo prompt tokens")

        expected = split_tokens(TOKENIZATION_PROMPT)
        stripped = [t.strip() for t in observed if t.strip()]
        if stripped == expected:
            logger.info("✅ tokenization check passed: one token per 3-digit group and delimiter")
            return TokenizationReport("pass", "3-digit", observed=observed)

        digit_tokens = [t for t in stripped if t.isdigit()]
        if digit_tokens and all(len(t) == 1 for t in digit_tokens):
            granularity = "digit-level"
        elif any(not t.isdigit() and any(ch.isdigit() for ch in t) for t in stripped):
            granularity = "merged"
        else:
            granularity = "mixed"
        logger.warning(f"⚠️ tokenization check: {granularity} tokens {stripped[:12]}")
        return TokenizationReport("warn", granularity, "value entropy unavailable for this tokenizer", observed)

    def close(self):
        self.backend.close()
