"""Persistent workspace for one pipeline run.

Layout under the root: manifest.json, config.snapshot, papers/, parsed/,
packed/, reviews/, extracted/, analysis/, report.md. The manifest keeps an
append-only status history per document; statuses only ever advance along
the pipeline order, and the recorded config digest must match the active
config or resuming is refused.

Writes go through a temp-file-and-rename so a killed process never leaves
a half-written artifact. Manifest mutation is single-writer: only the
orchestrator thread marks statuses.
"""

from __future__ import annotations

import json
from pathlib import Path

from .config import PipelineConfig, config_digest, render_config
from .errors import CorruptManifestError, RefuseResumeError, WorkspaceError

MANIFEST_VERSION = 1

# Rank along the pipeline; equal-rank statuses are mutually exclusive
# outcomes of the same stage.
STATUS_RANK = {
    "collected": 0,
    "parsed": 1,
    "packed": 2,
    "reviewed": 3,
    "screened_in": 4,
    "screened_out": 4,
    "extracted": 5,
    "accepted": 6,
    "unaccepted": 6,
    "analyzed": 7,
}

SUBDIRS = ("papers", "parsed", "packed", "reviews", "extracted", "analysis")


def atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def atomic_write_json(path: Path, payload: object) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


class Workspace:
    def __init__(self, root: Path, direction: str, digest: str, docs: dict[str, list[str]]):
        self.root = root
        self.direction = direction
        self.digest = digest
        self.docs = docs

    # -- paths ---------------------------------------------------------

    @property
    def manifest_path(self) -> Path:
        return self.root / "manifest.json"

    @property
    def report_path(self) -> Path:
        return self.root / "report.md"

    def dir(self, name: str) -> Path:
        if name not in SUBDIRS:
            raise WorkspaceError(f"unknown workspace subdirectory {name!r}")
        return self.root / name

    # -- lifecycle -----------------------------------------------------

    @classmethod
    def init(cls, root: Path, direction: str, config: PipelineConfig) -> "Workspace":
        if (root / "manifest.json").exists():
            raise WorkspaceError(f"{root} already holds a workspace")
        root.mkdir(parents=True, exist_ok=True)
        for sub in SUBDIRS:
            (root / sub).mkdir(exist_ok=True)
        ws = cls(root, direction, config_digest(config), {})
        atomic_write_text(root / "config.snapshot", render_config(config))
        ws.save()
        return ws

    @classmethod
    def load(cls, root: Path) -> "Workspace":
        path = root / "manifest.json"
        if not path.exists():
            raise WorkspaceError(f"{root} is not a workspace (no manifest.json)")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise CorruptManifestError(f"unreadable manifest: {exc}") from exc
        if not isinstance(raw, dict) or raw.get("version") != MANIFEST_VERSION:
            raise CorruptManifestError(f"unsupported manifest version in {path}")
        docs = raw.get("docs")
        direction = raw.get("direction")
        digest = raw.get("config_digest")
        if not isinstance(docs, dict) or not isinstance(direction, str) or not isinstance(digest, str):
            raise CorruptManifestError("manifest fields missing or mistyped")
        for doc_id, history in docs.items():
            if not isinstance(history, list) or not history:
                raise CorruptManifestError(f"{doc_id}: empty status history")
            ranks = []
            for status in history:
                if status not in STATUS_RANK:
                    raise CorruptManifestError(f"{doc_id}: unknown status {status!r}")
                ranks.append(STATUS_RANK[status])
            if any(b <= a for a, b in zip(ranks, ranks[1:])):
                raise CorruptManifestError(f"{doc_id}: status history regressed: {history}")
        return cls(root, direction, digest, docs)

    def save(self) -> None:
        atomic_write_json(
            self.manifest_path,
            {
                "version": MANIFEST_VERSION,
                "direction": self.direction,
                "config_digest": self.digest,
                "docs": self.docs,
            },
        )

    def check_config(self, config: PipelineConfig) -> None:
        active = config_digest(config)
        if active != self.digest:
            raise RefuseResumeError(
                "config digest mismatch: the workspace was created under a "
                "different configuration; rerun with the original config "
                "file (see config.snapshot) or start a fresh workspace"
            )

    # -- status tracking -----------------------------------------------

    def status_of(self, doc_id: str) -> str | None:
        history = self.docs.get(doc_id)
        return history[-1] if history else None

    def rank_of(self, doc_id: str) -> int:
        status = self.status_of(doc_id)
        return -1 if status is None else STATUS_RANK[status]

    def mark(self, doc_id: str, status: str) -> None:
        """Append a status; a no-op when already recorded, an error when it
        would regress."""
        if status not in STATUS_RANK:
            raise WorkspaceError(f"unknown status {status!r}")
        history = self.docs.setdefault(doc_id, [])
        if history:
            current = STATUS_RANK[history[-1]]
            if STATUS_RANK[status] == current:
                if history[-1] != status:
                    raise CorruptManifestError(
                        f"{doc_id}: conflicting outcomes {history[-1]!r} vs {status!r}"
                    )
                return
            if STATUS_RANK[status] < current:
                raise CorruptManifestError(
                    f"{doc_id}: status would regress from {history[-1]!r} to {status!r}"
                )
        history.append(status)
        self.save()

    def doc_ids(self) -> list[str]:
        return sorted(self.docs)

    def at_least(self, doc_id: str, status: str) -> bool:
        return self.rank_of(doc_id) >= STATUS_RANK[status]

    def status_counts(self) -> dict[str, int]:
        counts = {status: 0 for status in STATUS_RANK}
        for doc_id in self.docs:
            status = self.status_of(doc_id)
            if status:
                counts[status] += 1
        return counts
