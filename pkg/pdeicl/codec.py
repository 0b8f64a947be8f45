#!/usr/bin/env python3
"""
Quantization and serialization of solution fields into numeric token streams.

Fields are mapped affinely onto the code set {150, ..., 850} and written as
3-digit groups: commas separate spatial values, semicolons separate time
slices. The parser accepts arbitrary backend text and reports every anomaly
instead of raising.
"""

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .exceptions import InvalidArgumentError

logger = logging.getLogger(__name__)

CODE_MIN = 150
CODE_MAX = 850
CODE_MID = 500
CODE_SPAN = CODE_MAX - CODE_MIN

VALUE_SEP = ","
SLICE_SEP = ";"

_STREAM_RE = re.compile(r"[0-9]{3}(,[0-9]{3})*(;[0-9]{3}(,[0-9]{3})*)*")
_GROUP_RE = re.compile(r"[0-9]{1,3}")
_TOKEN_RE = re.compile(r"[0-9]+|[^0-9]")


@dataclass(frozen=True)
class QuantRange:
    """Extrema (u_min, u_max) defining the affine code map."""

    u_min: float
    u_max: float

    def __post_init__(self):
        if not (np.isfinite(self.u_min) and np.isfinite(self.u_max)):
            raise InvalidArgumentError("quantization range must be finite")
        if self.u_min > self.u_max:
            raise InvalidArgumentError(f"u_min {self.u_min} > u_max {self.u_max}")

    @classmethod
    def of(cls, values: np.ndarray) -> "QuantRange":
        values = np.asarray(values, dtype=float)
        return cls(float(np.min(values)), float(np.max(values)))

    @property
    def degenerate(self) -> bool:
        return self.u_max == self.u_min

    @property
    def step(self) -> float:
        """Value spacing of adjacent codes."""
        return (self.u_max - self.u_min) / CODE_SPAN

    def to_dict(self) -> dict:
        return {"u_min": self.u_min, "u_max": self.u_max}


@dataclass(frozen=True, eq=False)
class QuantizedField:
    """Integer codes, rows = spatial points, columns = time slices."""

    codes: np.ndarray
    range: QuantRange

    def __post_init__(self):
        codes = np.asarray(self.codes)
        if codes.ndim == 1:
            codes = codes[:, None]
        codes = codes.astype(np.int64)
        if codes.size and (codes.min() < CODE_MIN or codes.max() > CODE_MAX):
            raise InvalidArgumentError(f"codes must lie in [{CODE_MIN}, {CODE_MAX}]")
        object.__setattr__(self, "codes", codes)

    @property
    def n_x(self) -> int:
        return self.codes.shape[0]

    @property
    def n_slices(self) -> int:
        return self.codes.shape[1]


@dataclass(frozen=True)
class TokenStream:
    """Exact ASCII payload: 3-digit groups, commas within a slice, semicolons between."""

    text: str

    def __post_init__(self):
        if not _STREAM_RE.fullmatch(self.text):
            raise InvalidArgumentError("text is not a well-formed token stream")

    @property
    def n_tokens(self) -> int:
        return count_tokens(self.text)

    def __str__(self) -> str:
        return self.text


@dataclass
class MalformedSlice:
    slice_index: int
    got: int
    want: int
    reason: str
    text: str = ""

    def to_dict(self) -> dict:
        return {
            "slice": self.slice_index,
            "got": self.got,
            "want": self.want,
            "reason": self.reason,
            "text": self.text,
        }


@dataclass
class ParseReport:
    """Outcome of parsing backend text against an expected slice width."""

    slices: List[np.ndarray] = field(default_factory=list)
    ood_flags: List[Tuple[int, int]] = field(default_factory=list)
    malformed: List[MalformedSlice] = field(default_factory=list)
    short_groups: List[Tuple[int, int]] = field(default_factory=list)
    raw_tail: str = ""

    @property
    def ok(self) -> bool:
        return not self.malformed

    def codes(self) -> np.ndarray:
        """Complete slices as an (N_X, n_slices) matrix."""
        if not self.slices:
            return np.empty((0, 0), dtype=np.int64)
        return np.stack(self.slices, axis=1)

    def to_dict(self) -> dict:
        return {
            "n_slices": len(self.slices),
            "ood_flags": [list(p) for p in self.ood_flags],
            "malformed": [m.to_dict() for m in self.malformed],
            "short_groups": [list(p) for p in self.short_groups],
            "raw_tail": self.raw_tail,
        }


def quantize(values: np.ndarray, qrange: Optional[QuantRange] = None) -> QuantizedField:
    """
    Map real values onto {150..850}.

    Q = round(150 + (u - u_min)*700/(u_max - u_min)), or 500 for a degenerate
    range. The range defaults to the extrema over the whole matrix; values
    outside an explicitly given range saturate at the code bounds.
    """
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise InvalidArgumentError("cannot quantize non-finite values")
    if qrange is None:
        qrange = QuantRange.of(values)

    if qrange.degenerate:
        codes = np.full(values.shape, CODE_MID, dtype=np.int64)
    else:
        scaled = CODE_MIN + (values - qrange.u_min) * CODE_SPAN / (qrange.u_max - qrange.u_min)
        codes = np.clip(np.rint(scaled), CODE_MIN, CODE_MAX).astype(np.int64)
    return QuantizedField(codes, qrange)


def reconstruct(field_: QuantizedField) -> np.ndarray:
    """Inverse affine map: u = u_min + (Q - 150)*(u_max - u_min)/700."""
    return decode_codes(field_.codes, field_.range)


def decode_codes(codes: np.ndarray, qrange: QuantRange) -> np.ndarray:
    """Reconstruct raw codes, clamping out-of-distribution values first."""
    codes = np.clip(np.asarray(codes, dtype=float), CODE_MIN, CODE_MAX)
    if qrange.degenerate:
        return np.full(codes.shape, qrange.u_min)
    return qrange.u_min + (codes - CODE_MIN) * qrange.step


def format_slice(codes) -> str:
    return VALUE_SEP.join(f"{int(c):03d}" for c in codes)


def serialize(field_: QuantizedField, j0: int = 0, j1: Optional[int] = None) -> TokenStream:
    """Serialize slices j0 <= j < j1 (half-open) without a trailing semicolon."""
    j1 = field_.n_slices if j1 is None else j1
    if not 0 <= j0 < j1 <= field_.n_slices:
        raise InvalidArgumentError(f"invalid slice range [{j0}, {j1}) for {field_.n_slices} slices")
    text = SLICE_SEP.join(format_slice(field_.codes[:, j]) for j in range(j0, j1))
    return TokenStream(text)


def encode_context(field_: QuantizedField, j0: int = 0, j1: Optional[int] = None,
                   trailing_delimiter: bool = True) -> str:
    """Prompt text for slices [j0, j1), optionally ending with ';' so a fresh slice follows."""
    text = serialize(field_, j0, j1).text
    return text + SLICE_SEP if trailing_delimiter else text


def token_count(n_slices: int, n_x: int) -> int:
    """Tokens in n_slices slices of width n_x: values + commas + joining semicolons."""
    if n_slices < 1 or n_x < 1:
        raise InvalidArgumentError("token_count needs positive slice count and width")
    return n_slices * 2 * n_x - 1


def split_tokens(text: str) -> List[str]:
    """Canonical tokenization: one token per digit group, one per other character."""
    return _TOKEN_RE.findall(text)


def count_tokens(text: str) -> int:
    """Tokens of a stream under the canonical tokenizer."""
    return len(split_tokens(text))


def parse(text: str, n_x: int) -> ParseReport:
    """
    Split backend text into slices of n_x codes.

    Chunks between semicolons with exactly n_x valid groups become slices. An
    underfull or overlong chunk, an empty group, a group longer than three
    digits or a foreign character is recorded in the report's malformed list.
    Codes in 000-149 or 851-999 are kept and flagged as out of distribution.
    """
    report = ParseReport()
    if n_x < 1:
        report.malformed.append(MalformedSlice(0, 0, n_x, "invalid expected width"))
        return report

    chunks = text.split(SLICE_SEP)
    terminated = [True] * (len(chunks) - 1) + [False]

    for chunk_index, (chunk, closed) in enumerate(zip(chunks, terminated)):
        if chunk == "" and not closed:
            continue
        groups = chunk.split(VALUE_SEP)
        values: List[int] = []
        short: List[int] = []
        bad_group = None
        for pos, group in enumerate(groups):
            if not _GROUP_RE.fullmatch(group):
                bad_group = group
                break
            if len(group) != 3:
                short.append(pos)
            values.append(int(group))

        if bad_group is not None:
            reason = "empty value group" if bad_group == "" else f"invalid value group {bad_group[:12]!r}"
            report.malformed.append(MalformedSlice(chunk_index, len(values), n_x, reason, chunk[:80]))
            if not closed:
                report.raw_tail = chunk
            continue
        if len(values) != n_x:
            reason = "underfull slice" if len(values) < n_x else "overlong slice"
            report.malformed.append(MalformedSlice(chunk_index, len(values), n_x, reason, chunk[:80]))
            if not closed:
                report.raw_tail = chunk
            continue

        slice_index = len(report.slices)
        report.slices.append(np.asarray(values, dtype=np.int64))
        report.short_groups.extend((slice_index, p) for p in short)
        report.ood_flags.extend(
            (slice_index, p) for p, v in enumerate(values) if v < CODE_MIN or v > CODE_MAX
        )

    if report.malformed:
        logger.debug(f"parse found {len(report.malformed)} malformed chunk(s) in {len(chunks)}")
    return report


def quantization_floor(values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-step error of quantize-then-reconstruct on a reference field.

    Returns:
        (RMSE^Q_j, MaxAE^Q_j) arrays over the columns of values
    """
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    err = reconstruct(quantize(values)) - values
    return np.sqrt(np.mean(err ** 2, axis=0)), np.max(np.abs(err), axis=0)


def temporal_differences(field_: QuantizedField) -> np.ndarray:
    """Q_{i,j+1} - Q_{i,j}, shape (N_X, N_T)."""
    if field_.n_slices < 2:
        raise InvalidArgumentError("temporal differences need at least two slices")
    return np.diff(field_.codes, axis=1)


def zero_fraction(diffs: np.ndarray) -> float:
    """Share of zero temporal differences; 1.0 means a frozen field."""
    diffs = np.asarray(diffs)
    return float(np.mean(diffs == 0)) if diffs.size else 1.0


def write_stream(path, text: str) -> Path:
    """Write a prompt payload byte-exactly as ASCII."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(text.encode("ascii"))
    return path


def read_stream(path) -> str:
    return Path(path).read_bytes().decode("ascii")
