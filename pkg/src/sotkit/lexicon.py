"""Attribute lexicon: maps raw attribute values to their category.

Scene-graph attributes are untyped strings; category-directed ops
(query color, same material, ...) need a value -> category map to resolve
them deterministically. A seed vocabulary ships with the package; users
can point the CLI at their own file.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path
from typing import Dict, Iterable, Optional

from .program import CHOOSE_CATEGORIES, FILTER_CATEGORIES, VERIFY_CATEGORIES

KNOWN_CATEGORIES = frozenset(FILTER_CATEGORIES) | frozenset(VERIFY_CATEGORIES) | frozenset(
    CHOOSE_CATEGORIES
)


def parse_lexicon(lines: Iterable[str], source: str = "<lexicon>") -> Dict[str, str]:
    """Parse tab-separated "value<TAB>category" lines; '#' starts a comment."""
    table: Dict[str, str] = {}
    bad = []
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "\t" not in line:
            raise ValueError(f"{source}:{lineno}: expected 'value<TAB>category'")
        value, category = (part.strip() for part in line.split("\t", 1))
        if category not in KNOWN_CATEGORIES:
            bad.append(f"{source}:{lineno}: unknown category {category!r}")
            continue
        table[value.lower()] = category
    if bad:
        raise ValueError("; ".join(bad))
    return table


def load_lexicon(path: Optional[str | Path] = None) -> Dict[str, str]:
    """Load a lexicon file, or the packaged seed vocabulary when no path given."""
    if path is None:
        text = resources.files("sotkit.data").joinpath("lexicon.txt").read_text("utf-8")
        return parse_lexicon(text.splitlines(), source="builtin lexicon")
    p = Path(path)
    return parse_lexicon(p.read_text(encoding="utf-8").splitlines(), source=str(p))
