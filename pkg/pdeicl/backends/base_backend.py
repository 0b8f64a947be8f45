#!/usr/bin/env python3
"""
Base backend for PDE-ICL.

Defines the request/result types and the common interface every generation
backend implements.
"""

import hashlib
import json
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

from ..codec import QuantRange, SLICE_SEP, VALUE_SEP
from ..exceptions import InvalidArgumentError
from ..grid_ic import ICSpline, SpatialGrid, TimeGrid
from ..solvers import PDESpec

logger = logging.getLogger(__name__)

MASS_TOLERANCE = 1e-6


@dataclass(frozen=True)
class ProblemHint:
    """
    Problem context attached to a request for backends that simulate the answer.

    Only the oracle backend reads it; it never reaches the wire and is not part
    of the request digest. With the trial's IC attached the oracle continues
    the refined trajectory of that IC instead of re-solving from the decoded
    context.
    """

    pde: PDESpec
    spatial: SpatialGrid
    time: TimeGrid
    qrange: QuantRange
    ic: Optional[ICSpline] = None


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    max_tokens: int
    temperature: float = 0.6
    top_k_probs: int = 20
    stop: Optional[str] = None
    echo: bool = False
    hint: Optional[ProblemHint] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.max_tokens < 1:
            raise InvalidArgumentError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if self.temperature < 0:
            raise InvalidArgumentError(f"temperature must be >= 0, got {self.temperature}")
        if self.top_k_probs < 1:
            raise InvalidArgumentError(f"top_k_probs must be >= 1, got {self.top_k_probs}")

    def canonical(self) -> Dict[str, Any]:
        """Wire-relevant fields in a stable form."""
        return {
            "prompt": self.prompt,
            "max_tokens": self.max_tokens,
            "temperature": self.temperature,
            "top_k_probs": self.top_k_probs,
            "stop": self.stop,
            "echo": self.echo,
        }

    def digest(self) -> str:
        payload = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class TokenDistribution:
    """Observed next-token distribution at one emitted position."""

    token: str
    alternatives: Tuple[Tuple[str, float], ...]
    remainder: float = 0.0

    def __post_init__(self):
        alts = tuple(sorted(((str(t), float(p)) for t, p in self.alternatives), key=lambda tp: -tp[1]))
        for _, p in alts:
            if not 0.0 <= p <= 1.0 + MASS_TOLERANCE:
                raise InvalidArgumentError(f"probability {p} outside [0, 1]")
        total = sum(p for _, p in alts) + self.remainder
        if self.remainder < -MASS_TOLERANCE or abs(total - 1.0) > MASS_TOLERANCE:
            raise InvalidArgumentError(f"distribution mass {total} != 1")
        object.__setattr__(self, "alternatives", alts)
        object.__setattr__(self, "remainder", max(0.0, float(self.remainder)))

    @classmethod
    def one_hot(cls, token: str) -> "TokenDistribution":
        return cls(token, ((token, 1.0),), 0.0)

    @classmethod
    def from_logprobs(cls, token: str, top_logprobs: Dict[str, float]) -> "TokenDistribution":
        """Build from a {token: logprob} map; mass beyond the top-k goes to the remainder."""
        alts = [(t, math.exp(lp)) for t, lp in top_logprobs.items() if lp is not None]
        total = sum(p for _, p in alts)
        if total > 1.0:
            alts = [(t, p / total) for t, p in alts]
            total = 1.0
        return cls(token, tuple(alts), 1.0 - total)

    @property
    def is_separator(self) -> bool:
        return self.token.strip() in (VALUE_SEP, SLICE_SEP)

    @property
    def probabilities(self) -> List[float]:
        return [p for _, p in self.alternatives]

    def numeric_only(self) -> "TokenDistribution":
        """Keep digit-group alternatives; the rest of the mass joins the remainder."""
        kept = tuple((t, p) for t, p in self.alternatives if t.strip().isdigit())
        return TokenDistribution(self.token, kept, 1.0 - sum(p for _, p in kept))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "token": self.token,
            "alternatives": [[t, p] for t, p in self.alternatives],
            "remainder": self.remainder,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TokenDistribution":
        return cls(data["token"], tuple((t, p) for t, p in data["alternatives"]), data.get("remainder", 0.0))


@dataclass
class GenerationResult:
    tokens: List[str]
    distributions: List[TokenDistribution]
    finish_reason: str = "length"
    prompt_tokens: Optional[List[str]] = None

    @property
    def text(self) -> str:
        return "".join(self.tokens)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "tokens": list(self.tokens),
            "distributions": [d.to_dict() for d in self.distributions],
            "finish_reason": self.finish_reason,
            "prompt_tokens": self.prompt_tokens,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GenerationResult":
        return cls(
            tokens=list(data["tokens"]),
            distributions=[TokenDistribution.from_dict(d) for d in data["distributions"]],
            finish_reason=data.get("finish_reason", "length"),
            prompt_tokens=data.get("prompt_tokens"),
        )


def truncate_emission(tokens: List[str], distributions: List[TokenDistribution],
                      max_tokens: int, stop: Optional[str]) -> GenerationResult:
    """Apply max_tokens and stop-string semantics to a locally produced emission."""
    out_tokens: List[str] = []
    out_dists: List[TokenDistribution] = []
    for token, dist in zip(tokens, distributions):
        if stop is not None and stop in "".join(out_tokens) + token:
            return GenerationResult(out_tokens, out_dists, "stop")
        if len(out_tokens) >= max_tokens:
            break
        out_tokens.append(token)
        out_dists.append(dist)
    return GenerationResult(out_tokens, out_dists, "length")


class BaseBackend(ABC):
    """Base class for generation backends."""

    name: str = "base"

    @abstractmethod
    def generate(self, request: GenerationRequest) -> GenerationResult:
        """Continue the prompt autoregressively."""
        pass

    @property
    def exact_distributions(self) -> bool:
        """Whether recorded distributions are complete rather than top-k truncated."""
        return False

    def describe(self) -> Dict[str, Any]:
        return {"kind": self.name}

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()
