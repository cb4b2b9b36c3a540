"""Extraction evaluation: hit rate of extracted values against gold points.

A gold point is matched when some extracted value lands within tolerance.
Matching is one-to-one and maximal (a single extracted value can never
satisfy two gold points), computed exactly with augmenting paths.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import EmptyGoldError, SchemaViolationError

DEFAULT_ABS_TOL = 1e-9
DEFAULT_REL_TOL = 1e-4
LEVEL3_REL_TOL = 1e-2
LEVELS = (1, 2, 3)


@dataclass(frozen=True)
class GoldDataPoint:
    doc_id: str
    level: int
    value: float
    unit: str = ""
    label: str = ""

    def __post_init__(self) -> None:
        if self.level not in LEVELS:
            raise ValueError(f"level must be 1, 2 or 3, got {self.level}")
        if not math.isfinite(self.value):
            raise ValueError("gold value must be finite")


@dataclass(frozen=True)
class HitRateResult:
    doc_id: str
    level: int
    hits: int
    gold_count: int
    hit_rate: float


def default_rel_tol(level: int) -> float:
    """Level 3 values come out of model arithmetic, so they get more slack."""
    return LEVEL3_REL_TOL if level == 3 else DEFAULT_REL_TOL


def load_gold(path: Path) -> list[GoldDataPoint]:
    """Read gold points, one JSON record per line."""
    points = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
            point = GoldDataPoint(
                doc_id=raw["doc_id"],
                level=int(raw["level"]),
                value=float(raw["value"]),
                unit=str(raw.get("unit", "")),
                label=str(raw.get("label", "")),
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise SchemaViolationError(f"{path}:{lineno}: bad gold record: {exc}") from exc
        points.append(point)
    return points


def save_gold(points: Iterable[GoldDataPoint], path: Path) -> None:
    lines = [
        json.dumps(
            {
                "doc_id": p.doc_id,
                "level": p.level,
                "value": p.value,
                "unit": p.unit,
                "label": p.label,
            },
            sort_keys=True,
        )
        for p in points
    ]
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def _admissible(a: float, b: float, abs_tol: float, rel_tol: float) -> bool:
    return abs(a - b) <= max(abs_tol, rel_tol * abs(b))


def match_values(
    extracted: Sequence[float],
    gold: Sequence[float],
    abs_tol: float = DEFAULT_ABS_TOL,
    rel_tol: float = DEFAULT_REL_TOL,
) -> list[tuple[int, int]]:
    """Maximum one-to-one matching between extracted and gold values.

    Pair (a, b) is admissible iff |a - b| <= max(abs_tol, rel_tol * |b|).
    Returns (extracted_index, gold_index) pairs.
    """
    if abs_tol < 0 or rel_tol < 0:
        raise ValueError("tolerances must be >= 0")
    candidates = [
        [j for j, b in enumerate(gold) if _admissible(a, b, abs_tol, rel_tol)]
        for a in extracted
    ]
    owner = [-1] * len(gold)  # gold index -> extracted index

    def assign(i: int, seen: list[bool]) -> bool:
        for j in candidates[i]:
            if seen[j]:
                continue
            seen[j] = True
            if owner[j] < 0 or assign(owner[j], seen):
                owner[j] = i
                return True
        return False

    for i in range(len(extracted)):
        assign(i, [False] * len(gold))
    return sorted((i, j) for j, i in enumerate(owner) if i >= 0)


def hit_rate(
    extracted: Sequence[float],
    gold_points: Sequence[GoldDataPoint],
    abs_tol: float = DEFAULT_ABS_TOL,
    rel_tol: float | None = None,
) -> HitRateResult:
    """Hit rate for one document and level: matched gold / total gold."""
    if not gold_points:
        raise EmptyGoldError("hit rate undefined without gold points")
    doc_ids = {p.doc_id for p in gold_points}
    levels = {p.level for p in gold_points}
    if len(doc_ids) != 1 or len(levels) != 1:
        raise ValueError("gold points must share one doc_id and one level")
    level = gold_points[0].level
    if rel_tol is None:
        rel_tol = default_rel_tol(level)
    matches = match_values(extracted, [p.value for p in gold_points], abs_tol, rel_tol)
    return HitRateResult(
        doc_id=gold_points[0].doc_id,
        level=level,
        hits=len(matches),
        gold_count=len(gold_points),
        hit_rate=len(matches) / len(gold_points),
    )


def evaluate_extraction(
    extracted_by_doc: dict[str, Sequence[float]],
    gold: Sequence[GoldDataPoint],
    abs_tol: float = DEFAULT_ABS_TOL,
    rel_tol: float | None = None,
) -> list[HitRateResult]:
    """Hit rates for every (doc, level) group present in the gold set.

    All of a document's extracted values compete for each level's points.
    Documents absent from the extraction map count as empty extractions.
    """
    grouped: dict[tuple[str, int], list[GoldDataPoint]] = defaultdict(list)
    for point in gold:
        grouped[(point.doc_id, point.level)].append(point)
    results = []
    for (doc_id, level) in sorted(grouped):
        values = list(extracted_by_doc.get(doc_id, ()))
        results.append(hit_rate(values, grouped[(doc_id, level)], abs_tol, rel_tol))
    return results


def aggregate(results: Iterable[HitRateResult]) -> dict[int, float]:
    """Unweighted per-level mean of per-document hit rates."""
    by_level: dict[int, list[float]] = defaultdict(list)
    for result in results:
        by_level[result.level].append(result.hit_rate)
    return {level: sum(rates) / len(rates) for level, rates in sorted(by_level.items())}
