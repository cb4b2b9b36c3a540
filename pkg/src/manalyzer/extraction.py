"""Data extraction with self-proving provenance.

Stage one converts table and figure images into text parts and drops
irrelevant parts with a scored mask. Stage two asks for one integrated
table plus an explanation line per number ("Comes from Part p, Row r,
Column c"); those citations are machine-checked against the source parts,
and an independent checker grades the result. Rejections feed the
checker's suggestion back into another attempt, at most three in total.
"""

from __future__ import annotations

import dataclasses
import logging
import re
from dataclasses import dataclass
from typing import Sequence

from . import prompts
from .errors import (
    CheckerFailure,
    ConversionFailure,
    EmptyResponseError,
    ExtractionError,
    HeaderMismatchError,
    MissingExplanationError,
    NoTableFoundError,
    UnparseableNumericError,
    UnparseableReplyError,
    UnparseableTableError,
)
from .gateway import Gateway
from .parsing import (
    normalize_numeric,
    parse_all_markdown_tables,
    parse_check_reply,
    parse_delimited_blocks,
    parse_markdown_table,
    parse_real_list,
    render_markdown_table,
    render_numeric,
)

log = logging.getLogger(__name__)

DEFAULT_MASK_BATCH = 10
DEFAULT_ACCEPT_OVERALL = 7
DEFAULT_MAX_ITER = 3

ORIGIN_LABELS = {
    "text-paragraph": "paragraph",
    "table-image": "table",
    "figure-image": "figure",
}


@dataclass(frozen=True)
class ConvertedPart:
    part_id: str
    origin: str
    body: str
    title: str = ""
    footnote: str = ""

    def __post_init__(self) -> None:
        if self.origin not in ORIGIN_LABELS:
            raise ValueError(f"unknown part origin {self.origin!r}")
        if self.origin == "table-image" and not (self.title and self.footnote):
            raise ValueError("table parts need a title and a footnote")


@dataclass(frozen=True)
class ProvenanceEntry:
    value: float
    part_id: str
    row: int
    column: int
    note: str = ""


@dataclass(frozen=True)
class ExtractedTable:
    doc_id: str
    header: tuple[str, ...]
    rows: tuple[tuple[float | None, ...], ...]
    provenance: tuple[ProvenanceEntry, ...]
    iteration: int
    accepted: bool = False

    def render(self) -> str:
        return render_markdown_table(list(self.header), [list(r) for r in self.rows])

    def is_empty(self) -> bool:
        return not self.rows

    def numeric_cells(self) -> list[tuple[int, int, float]]:
        """(row, column, value) for every non-missing cell, 1-based."""
        out = []
        for i, row in enumerate(self.rows, start=1):
            for j, cell in enumerate(row, start=1):
                if cell is not None:
                    out.append((i, j, cell))
        return out


@dataclass(frozen=True)
class CheckReport:
    data_accuracy: int
    semantic_consistency: int
    data_completeness: int
    overall: int
    suggestion: str


@dataclass(frozen=True)
class Violation:
    kind: str  # missing-part | out-of-range | value-mismatch | uncited
    reason: str
    entry: ProvenanceEntry | None = None


def render_part(part: ConvertedPart, number: int) -> str:
    """The text form of a part as agents see it; `number` is how the
    extraction reply's citations refer back to it."""
    lines = [f"Part {number} ({ORIGIN_LABELS[part.origin]}):"]
    if part.title:
        lines.append(f"Title: {part.title}")
    lines.append(part.body)
    if part.footnote:
        lines.append(f"Footnote: {part.footnote}")
    return "\n".join(lines)


def convert_table_image(
    image_path: str, caption: str, gateway: Gateway, part_id: str
) -> list[ConvertedPart]:
    """Transcribe one table image into ConvertedParts (one per table found).

    A reply with no parseable table gets one re-ask; a second miss raises
    NoTableFoundError. Missing title or footnote blocks fall back to the
    caption rather than failing the conversion.
    """
    request = prompts.table_convert_request(image_path, caption)
    reply = ""
    tables: list[tuple[list[str], list[list[str]]]] = []
    for attempt in range(2):
        try:
            reply = gateway.complete(request).raw_text
        except EmptyResponseError:
            reply = ""
        tables = parse_all_markdown_tables(reply)
        if tables:
            break
        request = request.with_addendum(prompts.REASK_TABLE)
    if not tables:
        raise NoTableFoundError(f"{part_id}: conversion reply holds no table")

    titles = parse_delimited_blocks(reply, "Title")
    footnotes = parse_delimited_blocks(reply, "Footnote")
    parts = []
    for k, (header, rows) in enumerate(tables):
        suffix = f"#{k + 1}" if len(tables) > 1 else ""
        title = titles[k] if k < len(titles) else (caption or f"Table {part_id}")
        footnote = footnotes[k] if k < len(footnotes) else (caption or title)
        parts.append(
            ConvertedPart(
                part_id=f"{part_id}{suffix}",
                origin="table-image",
                body=render_markdown_table(header, rows),
                title=title,
                footnote=footnote,
            )
        )
    return parts


def summarize_figure(
    image_path: str, caption: str, gateway: Gateway, part_id: str
) -> ConvertedPart:
    """Summarize one figure image into a bullet-list part."""
    request = prompts.figure_summary_request(image_path, caption)
    for attempt in range(2):
        try:
            reply = gateway.complete(request).raw_text
        except EmptyResponseError:
            reply = ""
        lines = [ln.strip() for ln in reply.splitlines()]
        if any(ln.startswith(("-", "*", "•")) for ln in lines):
            return ConvertedPart(part_id=part_id, origin="figure-image", body=reply.strip())
        request = request.with_addendum(prompts.REASK_BULLETS)
    raise ConversionFailure(f"{part_id}: figure summary reply holds no bullets")


def relevance_mask(
    parts: Sequence[ConvertedPart],
    topic: str,
    gateway: Gateway,
    batch_size: int = DEFAULT_MASK_BATCH,
) -> list[float]:
    """One relevance score in [0, 1] per part, batched.

    Batches partition the part list in order; a reply whose length does not
    match its batch gets one re-ask and then fails.
    """
    if not parts:
        raise ValueError("relevance_mask needs at least one part")
    scores: list[float] = []
    for start in range(0, len(parts), batch_size):
        batch = parts[start : start + batch_size]
        rendered = [render_part(p, i) for i, p in enumerate(batch, start=1)]
        request = prompts.mask_request(topic, rendered)
        batch_scores = None
        for attempt in range(2):
            try:
                values = parse_real_list(gateway.complete(request).raw_text)
            except UnparseableReplyError:
                values = None
            if values is not None and len(values) == len(batch):
                batch_scores = [min(1.0, max(0.0, v)) for v in values]
                break
            request = request.with_addendum(
                f"{prompts.REASK_LIST} It must hold exactly {len(batch)} values."
            )
        if batch_scores is None:
            raise UnparseableReplyError(
                f"mask reply did not yield {len(batch)} scores for batch at {start}"
            )
        scores.extend(batch_scores)
    return scores


def retain_parts(
    parts: Sequence[ConvertedPart], scores: Sequence[float]
) -> list[ConvertedPart]:
    """Parts whose mask score is strictly above 0.5."""
    return [p for p, s in zip(parts, scores) if s > 0.5]


_EXPLANATION_LINE = re.compile(
    r"The number\s+(?P<value>[^:]+):\s*Comes from\s+\w+\s*(?P<part>\d+)\s*,"
    r"\s*Row\s*(?P<row>\d+)\s*,\s*Column\s*(?P<col>\d+)",
    re.IGNORECASE,
)

_HEADER_JUNK = re.compile(r"[\s*`]+")


def _canon_header(name: str) -> str:
    return _HEADER_JUNK.sub(" ", name).strip().lower()


def extract_to_table(
    retained: Sequence[ConvertedPart],
    template: Sequence[str],
    topic: str,
    gateway: Gateway,
    prior_suggestion: str | None = None,
    iteration: int = 1,
    doc_id: str = "",
) -> ExtractedTable:
    """One integrated table from the retained parts.

    The reply's header must match the template; every number line in the
    explanation block becomes a ProvenanceEntry. An empty retained set
    short-circuits to an empty table without an agent call.
    """
    if not template:
        raise ValueError("extraction template needs at least one column")
    if not retained:
        return ExtractedTable(
            doc_id=doc_id,
            header=tuple(template),
            rows=(),
            provenance=(),
            iteration=iteration,
        )

    rendered = [render_part(p, i) for i, p in enumerate(retained, start=1)]
    request = prompts.extract_request(topic, template, rendered, prior_suggestion)
    reply = gateway.complete(request).raw_text

    header, raw_rows = parse_markdown_table(reply)
    if len(header) != len(template) or any(
        _canon_header(a) != _canon_header(b) for a, b in zip(header, template)
    ):
        raise HeaderMismatchError(
            f"reply columns {header!r} do not match template {list(template)!r}"
        )

    rows = []
    for raw in raw_rows:
        cells = []
        for text in raw:
            try:
                cells.append(normalize_numeric(text))
            except UnparseableNumericError as exc:
                raise UnparseableTableError(str(exc)) from exc
        rows.append(tuple(cells))

    provenance = []
    blocks = parse_delimited_blocks(reply, "Explanation")
    for block in blocks:
        for match in _EXPLANATION_LINE.finditer(block):
            try:
                value = normalize_numeric(match.group("value"))
            except UnparseableNumericError:
                continue
            if value is None:
                continue
            number = int(match.group("part"))
            part_id = retained[number - 1].part_id if 1 <= number <= len(retained) else f"#{number}"
            provenance.append(
                ProvenanceEntry(
                    value=value,
                    part_id=part_id,
                    row=int(match.group("row")),
                    column=int(match.group("col")),
                    note=match.group(0),
                )
            )

    table = ExtractedTable(
        doc_id=doc_id,
        header=tuple(template),
        rows=tuple(rows),
        provenance=tuple(provenance),
        iteration=iteration,
    )
    if not blocks and table.numeric_cells():
        raise MissingExplanationError("extraction reply carries numbers but no explanation block")
    return table


def _match_tol(a: float, b: float, abs_tol: float, rel_tol: float) -> bool:
    return abs(a - b) <= max(abs_tol, rel_tol * abs(b))


def validate_provenance(
    table: ExtractedTable,
    parts: Sequence[ConvertedPart],
    abs_tol: float = 1e-9,
    rel_tol: float = 1e-4,
) -> list[Violation]:
    """Machine-check every citation against its source part.

    Citations into table parts resolve (row, column) in the part's grid and
    compare values under the matching tolerance; citations into paragraphs
    and figure summaries check that the value's canonical text appears,
    since those have no grid. Numeric output cells no citation vouches for
    are violations too.
    """
    by_id = {p.part_id: p for p in parts}
    grids: dict[str, tuple[list[str], list[list[str]]]] = {}
    violations = []

    for entry in table.provenance:
        part = by_id.get(entry.part_id)
        if part is None:
            violations.append(
                Violation("missing-part", f"cites unknown part {entry.part_id!r}", entry)
            )
            continue
        if part.origin == "table-image":
            if part.part_id not in grids:
                grids[part.part_id] = parse_markdown_table(part.body)
            header, rows = grids[part.part_id]
            if not (1 <= entry.row <= len(rows)) or not (1 <= entry.column <= len(header)):
                violations.append(
                    Violation(
                        "out-of-range",
                        f"row {entry.row}, column {entry.column} outside "
                        f"{len(rows)}x{len(header)} grid of {part.part_id}",
                        entry,
                    )
                )
                continue
            cell_text = rows[entry.row - 1][entry.column - 1]
            try:
                cell_value = normalize_numeric(cell_text)
            except UnparseableNumericError:
                cell_value = None
            if cell_value is None or not _match_tol(entry.value, cell_value, abs_tol, rel_tol):
                violations.append(
                    Violation(
                        "value-mismatch",
                        f"cites {render_numeric(entry.value)} but {part.part_id} "
                        f"row {entry.row}, column {entry.column} holds {cell_text!r}",
                        entry,
                    )
                )
        else:
            needle = render_numeric(entry.value)
            haystack = "\n".join((part.title, part.body, part.footnote))
            if needle not in haystack:
                violations.append(
                    Violation(
                        "value-mismatch",
                        f"value {needle} does not appear in {part.part_id}",
                        entry,
                    )
                )

    cited = list(table.provenance)
    for i, j, value in table.numeric_cells():
        if not any(_match_tol(e.value, value, abs_tol, rel_tol) for e in cited):
            violations.append(
                Violation(
                    "uncited",
                    f"cell at row {i}, column {j} ({render_numeric(value)}) has no citation",
                )
            )
    return violations


def check_table(
    table: ExtractedTable,
    parts: Sequence[ConvertedPart],
    topic: str,
    gateway: Gateway,
) -> CheckReport:
    """Grade the integration; empty submissions score the minimum without
    an agent call. An unparseable reply after one re-ask raises
    CheckerFailure (callers accept with a warning rather than deadlock)."""
    if table.is_empty():
        return CheckReport(1, 1, 1, 1, "The submission is empty; extract the relevant values.")
    rendered = [render_part(p, i) for i, p in enumerate(parts, start=1)]
    request = prompts.check_request(topic, rendered, table.render())
    for attempt in range(2):
        try:
            raw = parse_check_reply(gateway.complete(request).raw_text)
        except UnparseableReplyError:
            request = request.with_addendum(prompts.REASK_CHECK)
            continue
        def clamp(v: object) -> int:
            return max(1, min(10, int(v)))  # type: ignore[call-overload]

        return CheckReport(
            data_accuracy=clamp(raw["Data Accuracy"]),
            semantic_consistency=clamp(raw["Semantic Consistency"]),
            data_completeness=clamp(raw["Data Completeness"]),
            overall=clamp(raw["Overall Score"]),
            suggestion=str(raw["Suggestion"]),
        )
    raise CheckerFailure("checker reply unparseable after re-ask")


def _feedback_text(report: CheckReport, violations: Sequence[Violation]) -> str:
    lines = [report.suggestion] if report.suggestion else []
    if violations:
        lines.append("Provenance problems found by validation:")
        lines.extend(f"- {v.reason}" for v in violations)
    return "\n".join(lines) or "Improve accuracy and completeness."


def run_feedback_loop(
    parts: Sequence[ConvertedPart],
    template: Sequence[str],
    topic: str,
    gateway: Gateway,
    doc_id: str = "",
    accept_overall: int = DEFAULT_ACCEPT_OVERALL,
    max_iter: int = DEFAULT_MAX_ITER,
    abs_tol: float = 1e-9,
    rel_tol: float = 1e-4,
) -> tuple[ExtractedTable, list[tuple[int, CheckReport]]]:
    """Extract, validate, and check until accepted or attempts run out.

    Acceptance needs an overall check score at or above the threshold AND
    zero provenance violations. The checker's suggestion plus the violation
    list feed the next attempt. On exhaustion the best-scoring attempt is
    returned, flagged unaccepted. Extraction errors on the final attempt
    propagate; earlier ones become feedback.
    """
    if not 1 <= max_iter <= 3:
        raise ValueError("max_iter must be in [1, 3]")
    trace: list[tuple[int, CheckReport]] = []
    prior: str | None = None
    best: tuple[int, int, ExtractedTable] | None = None  # (overall, -violations, table)

    for iteration in range(1, max_iter + 1):
        try:
            table = extract_to_table(
                parts, template, topic, gateway, prior, iteration, doc_id
            )
        except ExtractionError as exc:
            if iteration == max_iter:
                raise
            prior = f"Your previous reply could not be used ({exc}). Follow the format exactly."
            continue

        violations = validate_provenance(table, parts, abs_tol, rel_tol)
        try:
            report = check_table(table, parts, topic, gateway)
        except CheckerFailure:
            log.warning("%s: checker unusable on attempt %d; accepting as-is", doc_id, iteration)
            trace.append(
                (iteration, CheckReport(1, 1, 1, 1, "checker unusable; accepted with warning"))
            )
            return dataclasses.replace(table, accepted=True), trace

        trace.append((iteration, report))
        if report.overall >= accept_overall and not violations:
            return dataclasses.replace(table, accepted=True), trace

        key = (report.overall, -len(violations))
        if best is None or key > (best[0], best[1]):
            best = (report.overall, -len(violations), table)
        if table.is_empty():
            # Re-asking over zero retained parts cannot change anything.
            break
        prior = _feedback_text(report, violations)

    assert best is not None
    return dataclasses.replace(best[2], accepted=False), trace


def table_to_json(table: ExtractedTable) -> dict:
    return {
        "doc_id": table.doc_id,
        "header": list(table.header),
        "rows": [list(row) for row in table.rows],
        "provenance": [
            {
                "value": e.value,
                "part_id": e.part_id,
                "row": e.row,
                "column": e.column,
                "note": e.note,
            }
            for e in table.provenance
        ],
        "iteration": table.iteration,
        "accepted": table.accepted,
    }


def table_from_json(raw: dict) -> ExtractedTable:
    return ExtractedTable(
        doc_id=raw["doc_id"],
        header=tuple(raw["header"]),
        rows=tuple(tuple(cell for cell in row) for row in raw["rows"]),
        provenance=tuple(
            ProvenanceEntry(
                value=e["value"],
                part_id=e["part_id"],
                row=e["row"],
                column=e["column"],
                note=e.get("note", ""),
            )
            for e in raw["provenance"]
        ),
        iteration=raw["iteration"],
        accepted=raw["accepted"],
    )


def part_to_json(part: ConvertedPart) -> dict:
    return {
        "part_id": part.part_id,
        "origin": part.origin,
        "body": part.body,
        "title": part.title,
        "footnote": part.footnote,
    }


def part_from_json(raw: dict) -> ConvertedPart:
    return ConvertedPart(
        part_id=raw["part_id"],
        origin=raw["origin"],
        body=raw["body"],
        title=raw.get("title", ""),
        footnote=raw.get("footnote", ""),
    )
