"""Ordered character vocabulary with index lookup."""

from __future__ import annotations

import hashlib

from .errors import UnknownCharacter


class Vocabulary:
    """Ordered list of distinct characters; index order is the alignment
    contract for every distribution and similarity vector in the package."""

    def __init__(self, chars):
        chars = list(chars)
        if len(chars) < 2:
            raise ValueError("vocabulary needs at least 2 characters")
        if len(set(chars)) != len(chars):
            dupes = sorted({c for c in chars if chars.count(c) > 1})
            raise ValueError(f"duplicate vocabulary characters: {dupes}")
        self._chars = chars
        self._index = {c: i for i, c in enumerate(chars)}

    def __len__(self) -> int:
        return len(self._chars)

    def __iter__(self):
        return iter(self._chars)

    def __contains__(self, char: str) -> bool:
        return char in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._chars == other._chars

    @property
    def chars(self) -> list[str]:
        return list(self._chars)

    def index(self, char: str) -> int:
        try:
            return self._index[char]
        except KeyError:
            raise UnknownCharacter(f"character {char!r} is not in the vocabulary") from None

    def char(self, idx: int) -> str:
        return self._chars[idx]

    def content_hash(self) -> str:
        """Stable digest of the ordered character list."""
        h = hashlib.sha256()
        for c in self._chars:
            h.update(c.encode("utf-8"))
            h.update(b"\x00")
        return h.hexdigest()

    @classmethod
    def from_file(cls, path) -> "Vocabulary":
        """One character per line; ``#`` comments and blank lines ignored."""
        chars = []
        with open(path, encoding="utf-8") as fh:
            for raw in fh:
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                chars.append(line)
        return cls(chars)
