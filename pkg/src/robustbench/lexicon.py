"""Word lists backing the lexical perturbations.

Files are UTF-8 TSV, one headword per line followed by a tab and a
comma-separated variant list.  A small bundled lexicon ships with the
package; a directory with the same four file names can be swapped in via
``--lexicon-dir``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

FILES = {
    "synonyms": "synonyms.tsv",
    "inflections": "inflections.tsv",
    "verbs": "verbs.tsv",
}
STOPWORDS_FILE = "stopwords.txt"


class LexiconError(ValueError):
    pass


@dataclass(slots=True)
class Lexicon:
    synonyms: dict[str, list[str]] = field(default_factory=dict)
    inflections: dict[str, list[str]] = field(default_factory=dict)
    verbs: dict[str, list[str]] = field(default_factory=dict)
    stopwords: set[str] = field(default_factory=set)
    digest: str = ""

    def table(self, name: str) -> dict[str, list[str]]:
        try:
            return getattr(self, name)
        except AttributeError:
            raise LexiconError(f"unknown lexicon table {name!r}") from None


def bundled_lexicon_dir() -> Path:
    return Path(resources.files("robustbench").joinpath("data", "lexicon"))


def _parse_tsv(path: Path) -> dict[str, list[str]]:
    table: dict[str, list[str]] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise LexiconError(f"{path}:{lineno}: expected 'word<TAB>variants', got {line!r}")
        word, variants = line.split("\t", 1)
        entries = [v.strip() for v in variants.split(",") if v.strip()]
        if not word.strip() or not entries:
            raise LexiconError(f"{path}:{lineno}: empty word or variant list")
        table[word.strip().lower()] = entries
    return table


def load_lexicon(directory: str | Path | None = None) -> Lexicon:
    base = Path(directory) if directory is not None else bundled_lexicon_dir()
    if not base.is_dir():
        raise LexiconError(f"lexicon directory not found: {base}")
    lex = Lexicon()
    digest = hashlib.sha256()
    for attr, name in FILES.items():
        path = base / name
        if not path.is_file():
            raise LexiconError(f"missing lexicon file: {path}")
        setattr(lex, attr, _parse_tsv(path))
        digest.update(name.encode() + b"\0" + path.read_bytes())
    stop = base / STOPWORDS_FILE
    if not stop.is_file():
        raise LexiconError(f"missing lexicon file: {stop}")
    lex.stopwords = {
        w.strip().lower() for w in stop.read_text(encoding="utf-8").splitlines() if w.strip()
    }
    digest.update(STOPWORDS_FILE.encode() + b"\0" + stop.read_bytes())
    lex.digest = digest.hexdigest()
    return lex
