"""Structured object-distribution prompts.

Grammar (no trailing punctuation, no "and")::

    prompt := HEAD " " item (", " item)*
    item   := count " " name      count >= 1, name pluralized when count != 1

Items are ordered by descending count, ties by ascending class id.
"""

from __future__ import annotations

import re
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

from .sampler import Layout

HEAD = "A remote sensing image with"

# Names whose plural is not name + "s". None of the DIOR classes need one.
IRREGULAR_PLURALS: dict[str, str] = {}


class SodiError(ValueError):
    pass


class SodiParseError(SodiError):
    def __init__(self, offset: int, message: str):
        super().__init__(f"at byte {offset}: {message}")
        self.offset = offset


def pluralize(name: str, count: int) -> str:
    if count == 1:
        return name
    if name in IRREGULAR_PLURALS:
        return IRREGULAR_PLURALS[name]
    if name.endswith("s"):
        return name
    return name + "s"


@dataclass(frozen=True)
class SodiPrompt:
    text: str
    counts: tuple[tuple[str, int], ...]


def format_sodi(counts: Sequence[tuple[str, int]]) -> str:
    """Render an already-ordered (name, count) list; zero counts are filtered out."""
    items = []
    for name, n in counts:
        if n < 0:
            raise SodiError(f"negative count for {name!r}")
        if n == 0:
            continue
        if not name or "," in name or name != name.strip():
            raise SodiError(f"class name {name!r} cannot be expressed in the prompt grammar")
        items.append(f"{n} {pluralize(name, n)}")
    if not items:
        raise SodiError("no objects to describe")
    return HEAD + " " + ", ".join(items)


def ordered_counts(counts: Mapping[int, int], names: Mapping[int, str]) -> tuple[tuple[str, int], ...]:
    """(name, count) pairs for nonzero counts, by count desc then class id asc."""
    keep = [(cid, n) for cid, n in counts.items() if n > 0]
    keep.sort(key=lambda t: (-t[1], t[0]))
    return tuple((names[cid], n) for cid, n in keep)


def generate_sodi(layout: Layout) -> SodiPrompt:
    if not layout.objects:
        raise SodiError("cannot describe an empty layout")
    names = {o.class_id: o.class_name for o in layout.objects}
    counts = ordered_counts(layout.class_counts(), names)
    return SodiPrompt(format_sodi(counts), counts)


_COUNT = re.compile(r"[1-9][0-9]*")


def _byte_offset(text: str, char_index: int) -> int:
    return len(text[:char_index].encode("utf-8"))


def parse_sodi(text: str, class_table: Mapping[str, int]) -> tuple[tuple[str, int], ...]:
    """Inverse of :func:`format_sodi` for canonical prompts over ``class_table``."""
    forms: dict[tuple[str, bool], str] = {}
    for name in class_table:
        for key in ((name, True), (pluralize(name, 2), False)):
            if forms.setdefault(key, name) != name:
                raise SodiError(f"class names {forms[key]!r} and {name!r} share the form {key[0]!r}")
    prefix = HEAD + " "
    if not text.startswith(prefix):
        i = next((k for k, (a, b) in enumerate(zip(text, prefix)) if a != b), min(len(text), len(prefix)))
        raise SodiParseError(_byte_offset(text, i), f"expected scene head {HEAD!r}")
    pos = len(prefix)
    out: list[tuple[str, int]] = []
    seen: set[str] = set()
    while True:
        m = _COUNT.match(text, pos)
        if m is None:
            raise SodiParseError(_byte_offset(text, pos), "expected a positive count")
        n = int(m.group())
        pos = m.end()
        if not text.startswith(" ", pos):
            raise SodiParseError(_byte_offset(text, pos), "expected a space after the count")
        pos += 1
        end = text.find(", ", pos)
        stop = len(text) if end < 0 else end
        word = text[pos:stop]
        name = forms.get((word, n == 1))
        if name is None:
            raise SodiParseError(_byte_offset(text, pos), f"unknown class name {word!r} for count {n}")
        if name in seen:
            raise SodiParseError(_byte_offset(text, pos), f"class {name!r} listed twice")
        seen.add(name)
        out.append((name, n))
        if end < 0:
            break
        pos = end + 2
    keys = [(-n, class_table[name]) for name, n in out]
    if keys != sorted(keys):
        raise SodiParseError(0, "items are not in canonical order (count desc, class id asc)")
    return tuple(out)
