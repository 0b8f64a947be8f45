#!/usr/bin/env python3
"""
Shared fixtures for the PDE-ICL test suite.
"""

import sys
from pathlib import Path
from typing import Callable, List, Optional, Union

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from pdeicl.backends import BaseBackend, GenerationRequest, GenerationResult, TokenDistribution
from pdeicl.backends.base_backend import truncate_emission
from pdeicl.codec import split_tokens
from pdeicl.config import parse_config


def one_hot_result(text: str) -> GenerationResult:
    """Result whose tokens are the split text, each with probability 1."""
    tokens = split_tokens(text)
    return GenerationResult(tokens, [TokenDistribution.one_hot(t) for t in tokens])


class ScriptedBackend(BaseBackend):
    """
    Backend that replays a fixed script of results.

    Script entries are GenerationResult objects, plain strings (one-hot
    tokens) or callables taking the request. The last entry repeats once the
    script is exhausted.
    """

    name = "scripted"

    def __init__(self, script: List[Union[str, GenerationResult, Callable]], exact: bool = True,
                 echo_tokens: Optional[List[str]] = None):
        self.script = list(script)
        self.exact = exact
        self.echo_tokens = echo_tokens
        self.requests: List[GenerationRequest] = []

    @property
    def exact_distributions(self) -> bool:
        return self.exact

    def generate(self, request: GenerationRequest) -> GenerationResult:
        self.requests.append(request)
        entry = self.script[min(len(self.requests) - 1, len(self.script) - 1)]
        if callable(entry):
            entry = entry(request)
        if isinstance(entry, str):
            entry = one_hot_result(entry)
        result = truncate_emission(entry.tokens, entry.distributions, request.max_tokens, request.stop)
        if request.echo:
            result.prompt_tokens = self.echo_tokens if self.echo_tokens is not None else split_tokens(request.prompt)
        return result


def make_config(**overrides):
    """Small validated ExperimentConfig; nested dicts replace whole sections."""
    raw = {
        "name": "test",
        "family": "one-step-context",
        "pde": {"equation": "heat"},
        "sweep": {"kind": "context", "n_x": 6, "n_t_values": [3, 5]},
        "trials": 2,
        "seed": 7,
        "backend": {"kind": "repeat_last"},
        "reference": {"refine_x": 4},
        "dump_prompts": False,
    }
    raw.update(overrides)
    return parse_config(raw)


@pytest.fixture
def rng():
    """Seeded generator shared by randomized tests."""
    return np.random.default_rng(12345)
