"""Controlled vocabulary tables for component and node descriptions.

Tables are plain-text files, one term per line, named ``vocab/<axis>.txt``.
A seed set ships with the package; callers may point at their own directory.
Unknown terms are reported as warnings, never hard errors (open vocabularies).
"""

from __future__ import annotations

import importlib.resources
from pathlib import Path

#: Requirement axes that carry vocabulary terms, plus functionality.
AXES = ("cpu", "os", "proglang", "sourcestatus", "license", "functionality")


class VocabularyTables:
    """Per-axis term sets loaded from one-term-per-line files."""

    def __init__(self, tables: dict[str, frozenset[str]]):
        self.tables = dict(tables)

    @classmethod
    def from_dir(cls, directory) -> "VocabularyTables":
        directory = Path(directory)
        tables = {}
        for axis in AXES:
            path = directory / f"{axis}.txt"
            terms = []
            if path.exists():
                terms = [
                    line.strip()
                    for line in path.read_text(encoding="utf-8").splitlines()
                    if line.strip() and not line.startswith("#")
                ]
            tables[axis] = frozenset(terms)
        return cls(tables)

    @classmethod
    def builtin(cls) -> "VocabularyTables":
        root = importlib.resources.files("nlpgrid") / "vocab"
        with importlib.resources.as_file(root) as directory:
            return cls.from_dir(directory)

    def known(self, axis: str, term: str) -> bool:
        """True when `term` is listed for `axis` (or the axis has no table)."""
        table = self.tables.get(axis)
        if not table:
            return True
        return term in table
