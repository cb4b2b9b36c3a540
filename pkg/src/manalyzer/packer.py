"""Paragraph packing: importance scoring plus exact 0/1 knapsack selection.

Long documents are cut down to a weight budget before review. Each
paragraph gets an integer importance from the scoring agent; the selection
then maximizes total importance under the budget, exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from . import prompts
from .errors import UnparseableReplyError
from .gateway import Gateway
from .parsing import parse_int_reply

if TYPE_CHECKING:
    from .collector import ParsedDocument

MAX_BUDGET = 131072
DEFAULT_IMPORTANCE = 5


@dataclass(frozen=True)
class RatedParagraph:
    index: int
    text: str
    importance: int
    weight: int

    def __post_init__(self) -> None:
        if not 0 <= self.importance <= 10:
            raise ValueError(f"importance {self.importance} outside [0, 10]")
        if self.weight < 1:
            raise ValueError(f"weight {self.weight} below 1")


@dataclass(frozen=True)
class PackedDocument:
    doc_id: str
    selected_indices: tuple[int, ...]
    total_weight: int
    total_importance: int
    budget: int


def estimate_weight(text: str) -> int:
    """Crude token-count stand-in: one unit per four characters, minimum 1."""
    return max(1, math.ceil(len(text) / 4))


def score_paragraphs(
    doc: "ParsedDocument",
    gateway: Gateway,
    default_importance: int = DEFAULT_IMPORTANCE,
) -> list[RatedParagraph]:
    """One importance rating per paragraph.

    A reply that is not an integer in [0, 10] gets one re-ask; if that also
    fails, the paragraph falls back to the default rating rather than
    sinking the document.
    """
    rated = []
    for para in doc.paragraphs:
        request = prompts.paragraph_score_request(para.text)
        importance = None
        for attempt in range(2):
            try:
                value = parse_int_reply(gateway.complete(request).raw_text)
            except UnparseableReplyError:
                value = None
            if value is not None and 0 <= value <= 10:
                importance = value
                break
            request = request.with_addendum(prompts.REASK_INTEGER)
        if importance is None:
            importance = default_importance
        rated.append(
            RatedParagraph(
                index=para.index,
                text=para.text,
                importance=importance,
                weight=estimate_weight(para.text),
            )
        )
    return rated


def select_paragraphs(items: Sequence[RatedParagraph], budget: int, doc_id: str = "") -> PackedDocument:
    """Exact 0/1 knapsack over paragraphs.

    Maximizes total importance subject to total weight <= budget. Among
    optima, prefers the smaller total weight, then the lexicographically
    smallest index set. The DP runs over the importance dimension (min
    weight to reach each importance total), which stays small because
    importances are capped at 10 per item.
    """
    budget = min(budget, MAX_BUDGET)
    if budget < 0:
        budget = 0
    ordered = sorted(items, key=lambda it: it.index)
    eligible = [it for it in ordered if it.weight <= budget]

    n = len(eligible)
    if n == 0:
        return PackedDocument(doc_id, (), 0, 0, budget)

    v_max = sum(it.importance for it in eligible)
    inf = np.int64(1) << 62
    # g[i][v] = min weight of a subset of eligible[i:] with importance sum v.
    g = np.full((n + 1, v_max + 1), inf, dtype=np.int64)
    g[n][0] = 0
    for i in range(n - 1, -1, -1):
        imp, w = eligible[i].importance, eligible[i].weight
        g[i] = g[i + 1]
        take = np.full(v_max + 1, inf, dtype=np.int64)
        take[imp:] = g[i + 1][: v_max + 1 - imp] + w
        g[i] = np.minimum(g[i + 1], take)

    feasible = np.nonzero(g[0] <= budget)[0]
    best_v = int(feasible[-1])
    best_w = int(g[0][best_v])

    # Greedy front-to-back reconstruction: taking an item whenever doing so
    # still reaches the (importance, weight) optimum yields the smallest
    # index set in lexicographic order.
    chosen: list[int] = []
    v = best_v
    for i in range(n):
        imp, w = eligible[i].importance, eligible[i].weight
        if v >= imp and w + g[i + 1][v - imp] == g[i][v]:
            chosen.append(eligible[i].index)
            v -= imp
        # else: g[i][v] == g[i+1][v], skip

    return PackedDocument(
        doc_id=doc_id,
        selected_indices=tuple(chosen),
        total_weight=best_w,
        total_importance=best_v,
        budget=budget,
    )


def pack_document(
    doc: "ParsedDocument",
    gateway: Gateway,
    budget: int,
    default_importance: int = DEFAULT_IMPORTANCE,
) -> PackedDocument:
    """Pack one document under the budget.

    Figure and table captions are always carried along to review, so their
    weight comes off the budget first. A document whose paragraphs already
    fit costs no agent calls: everything is selected at the default rating.
    """
    budget = min(budget, MAX_BUDGET)
    caption_weight = sum(estimate_weight(c) for c in doc.captions())
    effective = max(0, budget - caption_weight)

    weights = [estimate_weight(p.text) for p in doc.paragraphs]
    if sum(weights) <= effective:
        rated = [
            RatedParagraph(p.index, p.text, default_importance, w)
            for p, w in zip(doc.paragraphs, weights)
        ]
        return PackedDocument(
            doc_id=doc.doc_id,
            selected_indices=tuple(p.index for p in doc.paragraphs),
            total_weight=sum(weights),
            total_importance=default_importance * len(weights),
            budget=effective,
        )

    rated = score_paragraphs(doc, gateway, default_importance)
    return select_paragraphs(rated, effective, doc_id=doc.doc_id)


def packed_text(doc: "ParsedDocument", packed: PackedDocument) -> str:
    """The review-facing text: selected paragraphs in document order."""
    wanted = set(packed.selected_indices)
    return "\n\n".join(p.text for p in doc.paragraphs if p.index in wanted)
