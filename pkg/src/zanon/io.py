"""Text formats: ``t,u,a`` observation lines and commented report CSVs."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, Optional, Sequence

import numpy as np

from .popularity import RatePopularity
from .stream import Observation

BLUR_TOKEN = "*"

_ESCAPES = {"%": "%25", ",": "%2C", "\n": "%0A", "\r": "%0D", "\x00": "%00"}
_UNESCAPES = {v: k for k, v in _ESCAPES.items()}


class MalformedLineError(ValueError):
    def __init__(self, lineno: int, line: str, reason: str):
        self.lineno = lineno
        self.line = line
        self.reason = reason
        super().__init__(f"line {lineno}: {reason}: {line.rstrip()!r}")


def escape_token(token: str) -> str:
    if not any(c in token for c in _ESCAPES):
        return token
    return "".join(_ESCAPES.get(c, c) for c in token)


def unescape_token(token: str) -> str:
    if "%" not in token:
        return token
    out = []
    i = 0
    while i < len(token):
        code = token[i:i + 3].upper()
        if token[i] == "%" and code in _UNESCAPES:
            out.append(_UNESCAPES[code])
            i += 3
        else:
            out.append(token[i])
            i += 1
    return "".join(out)


def format_time(t: float) -> str:
    # microsecond resolution, trailing zeros trimmed
    s = f"{t:.6f}".rstrip("0").rstrip(".")
    return s or "0"


def format_observation(obs: Observation) -> str:
    t, u, a = obs
    return f"{format_time(t)},{escape_token(str(u))},{escape_token(str(a))}\n"


def is_header(line: str) -> bool:
    return [f.strip().lower() for f in line.split(",")] == ["t", "u", "a"]


@dataclass
class ParsedLine:
    obs: Observation
    raw: str
    t_text: str
    u_text: str


def parse_line(line: str, lineno: int = 0, *, allow_blur: bool = False) -> Observation:
    return _parse(line, lineno, allow_blur).obs


def _parse(line: str, lineno: int, allow_blur: bool) -> ParsedLine:
    body = line.rstrip("\n").rstrip("\r")
    fields = body.split(",")
    if len(fields) != 3:
        raise MalformedLineError(lineno, line, f"expected 3 fields, got {len(fields)}")
    t_text, u_text, a_text = fields
    try:
        t = float(t_text)
    except ValueError:
        raise MalformedLineError(lineno, line, "unparseable timestamp") from None
    if not math.isfinite(t) or t < 0:
        raise MalformedLineError(lineno, line, "timestamp must be finite and non-negative")
    if not u_text or not a_text:
        raise MalformedLineError(lineno, line, "empty token")
    if a_text == BLUR_TOKEN and not allow_blur:
        raise MalformedLineError(lineno, line, f"{BLUR_TOKEN!r} is reserved")
    obs = Observation(t, unescape_token(u_text), unescape_token(a_text))
    return ParsedLine(obs, line, t_text, u_text)


def iter_records(lines: Iterable[str], *, errors: Optional[list] = None,
                 strict: bool = False) -> Iterator[ParsedLine]:
    """Parse observation lines lazily.

    Blank lines, ``#`` comments and a leading ``t,u,a`` header are skipped.
    Malformed lines raise when ``strict``; otherwise they are appended to
    ``errors`` (if given) and skipped.
    """
    first = True
    for lineno, line in enumerate(lines, 1):
        if not line.strip() or line.startswith("#"):
            continue
        if first:
            first = False
            if is_header(line):
                continue
        try:
            yield _parse(line, lineno, False)
        except MalformedLineError as exc:
            if strict:
                raise
            if errors is not None:
                errors.append(exc)


def read_observations(fh: IO[str], strict: bool = True) -> list[Observation]:
    return [p.obs for p in iter_records(fh, strict=strict)]


def write_observations(fh: IO[str], stream: Iterable[Observation], header: bool = False) -> int:
    n = 0
    if header:
        fh.write("t,u,a\n")
    for obs in stream:
        fh.write(format_observation(obs))
        n += 1
    return n


def comment_header(params: dict) -> str:
    """``# key=value`` lines recording the parameters behind a report."""
    return "".join(f"# {k}={v}\n" for k, v in params.items())


def write_table(fh: IO[str], params: dict, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    fh.write(comment_header(params))
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def read_table(fh: IO[str]) -> tuple[dict, list[dict]]:
    """Inverse of :func:`write_table`: ``(params, rows)`` with rows as string dicts."""
    params = {}
    body = []
    for line in fh:
        if line.startswith("#"):
            kv = line[1:].strip()
            if "=" in kv:
                k, v = kv.split("=", 1)
                params[k.strip()] = v.strip()
        elif line.strip():
            body.append(line)
    rows = list(csv.DictReader(body))
    return params, rows


def write_popularity(fh: IO[str], pop: RatePopularity, params: dict) -> None:
    column = "p_x" if pop.kind == "exposure-probs" else "rate"
    labels = pop.labels if pop.labels is not None else [""] * len(pop)
    write_table(fh, params, ["rank", "label", column],
                ((r, escape_token(str(lab)), v) for r, (lab, v)
                 in enumerate(zip(labels, pop.values.tolist()), 1)))


def read_popularity(fh: IO[str]) -> tuple[RatePopularity, dict]:
    params, rows = read_table(fh)
    if not rows:
        raise ValueError("popularity file has no rows")
    if "p_x" in rows[0]:
        kind, column = "exposure-probs", "p_x"
    elif "rate" in rows[0]:
        kind, column = "rates", "rate"
    else:
        raise ValueError("popularity file needs a p_x or rate column")
    rows.sort(key=lambda r: int(r["rank"]))
    values = np.array([float(r[column]) for r in rows])
    labels = tuple(unescape_token(r.get("label", "")) for r in rows)
    if not any(labels):
        labels = None
    return RatePopularity(kind, values, labels), params
