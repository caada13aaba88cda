"""Session-log ingestion, dataset splitting, and episode-spec extraction
for the data-driven simulator (first 60% initializes, middle 20% is masked,
last 20% supplies the target items).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .dkt import Interaction

log = logging.getLogger(__name__)

LOG_HEADER = "user_id,concept_name,session_id,correct,timestamp"


class DataFormatError(ValueError):
    """Raised on malformed log/session/name-table input in strict mode."""


@dataclass
class SessionLog:
    """One learner session: ordered interactions under a single session id."""

    session_id: str
    records: list[Interaction]


@dataclass(frozen=True)
class KesEpisodeSpec:
    """Initial history plus target items for one data-driven episode."""

    init_records: tuple[Interaction, ...]
    target: tuple[int, ...]


def read_name_table(source) -> dict[str, int]:
    """CSV `concept_name,item_id` mapping concept names to item indices."""
    lines = _as_lines(source)
    table: dict[str, int] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line == "concept_name,item_id":
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise DataFormatError(f"line {lineno}: expected 'concept_name,item_id'")
        name = parts[0].strip()
        try:
            table[name] = int(parts[1])
        except ValueError as exc:
            raise DataFormatError(f"line {lineno}: bad item id {parts[1]!r}") from exc
    return table


def write_name_table(path, table: dict[str, int]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("concept_name,item_id\n")
        for name, item in table.items():
            f.write(f"{name},{item}\n")


def default_name_table(num_items: int) -> dict[str, int]:
    return {f"item_{k}": k for k in range(num_items)}


def parse_logs(source, name_to_id: dict[str, int], strict: bool = True) -> list[SessionLog]:
    """Group raw log lines by session id and sort each session by timestamp.

    Lines are CSV `user_id,concept_name,session_id,correct,timestamp`.
    Malformed lines or unknown concepts raise in strict mode; in lenient
    mode they are skipped with a warning carrying the line number.
    """
    lines = _as_lines(source)
    by_session: dict[str, list[tuple[int, int, Interaction]]] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line == LOG_HEADER:
            continue
        parts = line.split(",")
        problem = None
        if len(parts) != 5:
            problem = f"expected 5 fields, got {len(parts)}"
        else:
            _, concept, session_id, correct, timestamp = (p.strip() for p in parts)
            if concept not in name_to_id:
                problem = f"unknown concept {concept!r}"
            elif correct not in ("0", "1"):
                problem = f"correct must be 0 or 1, got {correct!r}"
            else:
                try:
                    ts = int(timestamp)
                except ValueError:
                    problem = f"bad timestamp {timestamp!r}"
        if problem is not None:
            if strict:
                raise DataFormatError(f"line {lineno}: {problem}")
            log.warning("skipping line %d: %s", lineno, problem)
            continue
        rec = Interaction(name_to_id[concept], int(correct))
        by_session.setdefault(session_id, []).append((ts, lineno, rec))
    sessions = []
    for session_id, entries in by_session.items():
        entries.sort(key=lambda e: (e[0], e[1]))  # timestamp, then input order
        sessions.append(SessionLog(session_id, [rec for _, _, rec in entries]))
    return sessions


@dataclass
class DatasetSplit:
    train: list[SessionLog]
    validation: list[SessionLog]
    test: list[SessionLog]


def split_dataset(sessions: Sequence[SessionLog], proportions=(0.8, 0.1, 0.1),
                  seed: int = 0, rng: np.random.Generator | None = None) -> DatasetSplit:
    """Shuffle then partition; deterministic for a given seed, disjoint by
    construction."""
    if abs(sum(proportions) - 1.0) > 1e-9 or len(proportions) != 3:
        raise ValueError("proportions must be three values summing to 1")
    if rng is None:
        rng = np.random.default_rng(seed)
    order = rng.permutation(len(sessions))
    n = len(sessions)
    cut1 = int(np.floor(proportions[0] * n))
    cut2 = int(np.floor((proportions[0] + proportions[1]) * n))
    shuffled = [sessions[i] for i in order]
    return DatasetSplit(shuffled[:cut1], shuffled[cut1:cut2], shuffled[cut2:])


def make_kes_episode(session: SessionLog) -> KesEpisodeSpec | None:
    """Episode spec from one session: first 60% of the records initialize the
    learner, the distinct items of the last 20% form the target; the middle
    20% is masked.  Returns None for sessions shorter than 5 records."""
    n = len(session.records)
    if n < 5:
        return None
    init_end = int(np.floor(0.6 * n))
    target_start = int(np.floor(0.8 * n))
    init_records = tuple(session.records[:init_end])
    target = tuple(sorted({rec.item for rec in session.records[target_start:]}))
    return KesEpisodeSpec(init_records=init_records, target=target)


def kes_episode_specs(sessions: Iterable[SessionLog]) -> tuple[list, int]:
    """All sessions converted to episode specs, plus the skipped-too-short count."""
    specs = []
    skipped = 0
    for session in sessions:
        spec = make_kes_episode(session)
        if spec is None:
            skipped += 1
        else:
            specs.append(spec)
    return specs, skipped


# -- session file format: one line per session, `id<TAB>item:score,...` ------


def write_session_file(path, sessions: Iterable[SessionLog], header_lines: Sequence[str] = ()) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for line in header_lines:
            f.write(f"# {line}\n")
        for session in sessions:
            body = ",".join(f"{rec.item}:{rec.score}" for rec in session.records)
            f.write(f"{session.session_id}\t{body}\n")


def read_session_file(source) -> list[SessionLog]:
    lines = _as_lines(source)
    sessions = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if not line.strip() or line.startswith("#"):
            continue
        try:
            session_id, body = line.split("\t")
            records = []
            for token in body.split(","):
                item, score = token.split(":")
                records.append(Interaction(int(item), int(score)))
        except ValueError as exc:
            raise DataFormatError(f"line {lineno}: malformed session line") from exc
        if not records:
            raise DataFormatError(f"line {lineno}: empty session")
        sessions.append(SessionLog(session_id, records))
    return sessions


def write_log_file(path, sessions: Iterable[SessionLog], id_to_name: dict[int, str],
                   user_id: str = "u0") -> None:
    """Sessions rendered back to the raw CSV log format (round-trip support)."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(LOG_HEADER + "\n")
        for session in sessions:
            for ts, rec in enumerate(session.records):
                f.write(f"{user_id},{id_to_name[rec.item]},{session.session_id},{rec.score},{ts}\n")


def _as_lines(source) -> list[str]:
    if isinstance(source, (str, bytes)):
        with open(source, "r", encoding="utf-8") as f:
            return f.readlines()
    return list(source)
