#!/usr/bin/env python3
"""
Persistence baseline: repeats the last complete context slice.
"""

import logging
from typing import List

from ..codec import SLICE_SEP, VALUE_SEP, split_tokens
from .base_backend import BaseBackend, GenerationRequest, GenerationResult, TokenDistribution, truncate_emission

logger = logging.getLogger(__name__)


class RepeatLastBackend(BaseBackend):
    name = "repeat_last"

    @property
    def exact_distributions(self) -> bool:
        return True

    def generate(self, request: GenerationRequest) -> GenerationResult:
        prompt = request.prompt
        chunks = [c for c in prompt.split(SLICE_SEP) if c]
        last = chunks[-1] if chunks else ""

        tokens: List[str] = []
        if last:
            if not prompt.endswith(SLICE_SEP):
                tokens.append(SLICE_SEP)
            for k, group in enumerate(last.split(VALUE_SEP)):
                if k:
                    tokens.append(VALUE_SEP)
                tokens.append(group)
            tokens.append(SLICE_SEP)
        else:
            logger.warning("⚠️ repeat-last prompt holds no slice to repeat")

        # emission repeats until the budget is spent, as a persistence model would
        emission = list(tokens)
        while tokens and len(emission) < request.max_tokens + 1:
            emission.extend(tokens[1:] if tokens[0] == SLICE_SEP else tokens)

        distributions = [TokenDistribution.one_hot(t) for t in emission]
        result = truncate_emission(emission, distributions, request.max_tokens, request.stop)
        if request.echo:
            result.prompt_tokens = split_tokens(prompt)
        return result
