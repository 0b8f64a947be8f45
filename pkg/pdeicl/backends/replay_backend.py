#!/usr/bin/env python3
"""
Replay backend: serves recorded responses from a JSON-lines fixture file.

In record mode, requests missing from the fixture are forwarded to an
upstream backend and appended to the file, so a live run can later be
replayed offline.
"""

import json
import logging
import threading
from pathlib import Path
from typing import Any, Dict, Optional

from ..exceptions import FixtureMissError, InvalidArgumentError
from .base_backend import BaseBackend, GenerationRequest, GenerationResult

logger = logging.getLogger(__name__)


class ReplayBackend(BaseBackend):
    """Fixture lookup keyed by the request digest."""

    name = "replay"

    def __init__(self, fixture_path, record: bool = False, upstream: Optional[BaseBackend] = None):
        self.fixture_path = Path(fixture_path)
        self.record = record
        self.upstream = upstream
        self._lock = threading.Lock()
        self._entries: Dict[str, Dict[str, Any]] = {}

        if record and upstream is None:
            raise InvalidArgumentError("record mode needs an upstream backend")
        if self.fixture_path.exists():
            self._load()
        elif not record:
            raise InvalidArgumentError(f"fixture file not found: {self.fixture_path}")
        logger.info(f"📊 replay fixture {self.fixture_path}: {len(self._entries)} recorded responses")

    def _load(self):
        with open(self.fixture_path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    entry = json.loads(line)
                except json.JSONDecodeError as e:
                    raise InvalidArgumentError(f"{self.fixture_path}:{line_no}: invalid fixture line: {e}") from e
                self._entries[entry["request_hash"]] = entry

    @property
    def exact_distributions(self) -> bool:
        if self.upstream is not None:
            return self.upstream.exact_distributions
        # offline: exact only if every recorded response came from an exact backend
        return bool(self._entries) and all(e.get("exact_distributions", False) for e in self._entries.values())

    def describe(self) -> Dict[str, Any]:
        info = {"kind": self.name, "fixture_path": str(self.fixture_path), "record": self.record}
        if self.upstream is not None:
            info["upstream"] = self.upstream.describe()
        return info

    def __len__(self) -> int:
        return len(self._entries)

    def generate(self, request: GenerationRequest) -> GenerationResult:
        key = request.digest()
        entry = self._entries.get(key)
        if entry is not None:
            return GenerationResult.from_dict(entry["response"])

        if not self.record:
            raise FixtureMissError(f"no recorded response for request {key[:12]}")

        result = self.upstream.generate(request)
        entry = {
            "request_hash": key,
            "request": request.canonical(),
            "response": result.to_dict(),
            "exact_distributions": self.upstream.exact_distributions,
        }
        with self._lock:
            if key not in self._entries:
                self._entries[key] = entry
                self.fixture_path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.fixture_path, "a", encoding="utf-8") as f:
                    f.write(json.dumps(entry) + "\n")
        # round trip so live and replayed runs see identical floats
        return GenerationResult.from_dict(json.loads(json.dumps(entry["response"])))

    def close(self):
        if self.upstream is not None:
            self.upstream.close()
