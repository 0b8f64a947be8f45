#!/usr/bin/env python3
"""
Exception hierarchy for pdeicl.

Library code raises these; only the CLI maps them to exit codes.
"""

from typing import Optional


class PdeIclError(Exception):
    """Base class for every error raised by pdeicl."""


class InvalidArgumentError(PdeIclError, ValueError):
    """A caller passed a value outside the documented domain."""


class GridError(InvalidArgumentError):
    """Evaluation or construction outside a grid's domain."""


class ConfigError(PdeIclError):
    """Run manifest could not be loaded or validated."""


class DivergenceError(PdeIclError):
    """A time stepper produced non-finite or runaway values."""

    def __init__(self, scheme: str, step: int, detail: str = ""):
        self.scheme = scheme
        self.step = step
        message = f"{scheme} diverged at step {step}"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)


class SingularSystemError(PdeIclError):
    """Zero pivot met while eliminating a tridiagonal system."""


class StabilityError(PdeIclError):
    """Requested explicit refinement violates the stability bound."""


class DegenerateEnergyError(PdeIclError):
    """Reference energy too close to zero for a relative deviation."""


class BackendError(PdeIclError):
    """Base class for generation backend failures."""


class TransportError(BackendError):
    """Network failure or timeout that survived all retries."""


class ProtocolError(BackendError):
    """Endpoint answered with a non-2xx status or an unreadable body."""

    def __init__(self, status: int, body_excerpt: str):
        self.status = status
        self.body_excerpt = body_excerpt
        super().__init__(f"HTTP {status}: {body_excerpt}")


class CapabilityError(BackendError):
    """Endpoint lacks a feature the harness needs (logprobs, echo)."""


class FixtureMissError(BackendError):
    """Replay fixture has no response recorded for a request."""


class TrialFailure(PdeIclError):
    """A single Monte Carlo trial could not be completed."""

    def __init__(self, reason: str, step: Optional[int] = None):
        self.reason = reason
        self.step = step
        message = reason if step is None else f"step {step}: {reason}"
        super().__init__(message)


class ExcessiveFailuresError(PdeIclError):
    """More than the tolerated share of trials failed."""

    def __init__(self, failed: int, total: int):
        self.failed = failed
        self.total = total
        super().__init__(f"{failed}/{total} trials failed (limit 10%)")
