"""Ordered collection of task learners, optionally backed by a directory.

A backed store keeps one container per learner plus ``store.manifest``, a
``key=value`` text file listing task order, files and concept tokens.
"""

from __future__ import annotations

import os
from pathlib import Path

from ..errors import IntegrityError, SequencingError, UniquenessError
from .learner import TaskLearner, load_learner, save_learner

MANIFEST = "store.manifest"


class LearnerStore:
    def __init__(self, learners=(), root=None, config_hash: str = ""):
        self.root = Path(root) if root is not None else None
        self.config_hash = config_hash
        self._learners: list[TaskLearner] = []
        for tl in learners:
            self._check(tl)
            self._learners.append(tl)

    def __len__(self):
        return len(self._learners)

    def __iter__(self):
        return iter(self._learners)

    def __getitem__(self, i) -> TaskLearner:
        return self._learners[i]

    @property
    def tokens(self) -> set[str]:
        return {t for tl in self._learners for t in tl.token_names()}

    def concept_store(self) -> dict:
        """Token -> layer rows, across every stored task."""
        return {tok: rows for tl in self._learners for tok, rows in tl.tokens.items()}

    def _check(self, tl: TaskLearner):
        if self._learners and tl.task_id <= self._learners[-1].task_id:
            raise SequencingError(f"task {tl.task_id} does not follow task {self._learners[-1].task_id}")
        clash = self.tokens & set(tl.token_names())
        if clash:
            raise UniquenessError(f"concept tokens already stored: {sorted(clash)}")

    def append(self, tl: TaskLearner) -> None:
        self._check(tl)
        self._learners.append(tl)
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)
            save_learner(tl, self.root / self.filename(tl.task_id), self.config_hash)
            self._write_manifest()

    def truncate(self, g: int) -> None:
        """Drop every learner after the first ``g``, deleting their files when backed."""
        dropped, self._learners = self._learners[g:], self._learners[:g]
        if self.root is not None:
            for tl in dropped:
                (self.root / self.filename(tl.task_id)).unlink(missing_ok=True)
            if self.root.exists():
                self._write_manifest()

    def prefix(self, g: int) -> "LearnerStore":
        """In-memory view of the first ``g`` learners."""
        return LearnerStore(self._learners[:g], config_hash=self.config_hash)

    @staticmethod
    def filename(task_id: int) -> str:
        return f"task_{task_id:03d}.citf"

    def _write_manifest(self):
        lines = ["format=conceptinc-store", "version=1", f"config_hash={self.config_hash}",
                 f"tasks={len(self._learners)}"]
        for i, tl in enumerate(self._learners, 1):
            lines.append(f"task.{i}.id={tl.task_id}")
            lines.append(f"task.{i}.file={self.filename(tl.task_id)}")
            lines.append(f"task.{i}.tokens={','.join(tl.token_names())}")
        tmp = self.root / (MANIFEST + ".tmp")
        tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
        os.replace(tmp, self.root / MANIFEST)

    @classmethod
    def open(cls, root, config_hash: str = "") -> "LearnerStore":
        """Load a backed store, creating an empty one if the directory has no manifest."""
        root = Path(root)
        path = root / MANIFEST
        if not path.exists():
            return cls(root=root, config_hash=config_hash)
        meta = dict(line.split("=", 1) for line in path.read_text(encoding="utf-8").splitlines() if line)
        if meta.get("format") != "conceptinc-store":
            raise IntegrityError(f"{path} is not a store manifest", "format")
        stored_hash = meta.get("config_hash", "")
        if config_hash and stored_hash and stored_hash != config_hash:
            raise IntegrityError(f"store was built with config {stored_hash}, not {config_hash}", "config_hash")
        learners = [load_learner(root / meta[f"task.{i}.file"]) for i in range(1, int(meta["tasks"]) + 1)]
        return cls(learners, root=root, config_hash=stored_hash or config_hash)
