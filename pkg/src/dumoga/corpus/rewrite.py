"""Remove numeric disambiguation suffixes (``person2``) from generated text."""
from __future__ import annotations

import re
from typing import Iterable, Optional

IRREGULAR_PLURALS = {
    "person": "people",
    "man": "men",
    "woman": "women",
    "child": "children",
    "foot": "feet",
    "tooth": "teeth",
    "mouse": "mice",
    "goose": "geese",
    "sheep": "sheep",
    "deer": "deer",
    "fish": "fish",
    "leaf": "leaves",
    "knife": "knives",
    "shelf": "shelves",
    "skis": "skis",
    "glasses": "glasses",
}

_ARTICLE = r"(?:(?P<art>\b(?:[Tt]he|[Aa]n|[Aa]|[Aa]nother)\s+))?"


def pluralize(label: str) -> str:
    *front, last = label.split(" ")
    low = last.lower()
    if low in IRREGULAR_PLURALS:
        plural = IRREGULAR_PLURALS[low]
    elif re.search(r"(s|x|z|ch|sh)$", low):
        plural = last + "es"
    elif re.search(r"[^aeiou]y$", low):
        plural = last[:-1] + "ies"
    else:
        plural = last + "s"
    return " ".join(front + [plural])


def _label_pattern(labels: Optional[Iterable[str]]) -> str:
    if labels is None:
        return r"[A-Za-z]+"
    alts = sorted({re.escape(lb) for lb in labels if lb}, key=len, reverse=True)
    return "(?:" + "|".join(alts) + ")" if alts else r"(?!x)x"


def _cap(replacement: str, original: str) -> str:
    return replacement[:1].upper() + replacement[1:] if original[:1].isupper() else replacement


def rewrite_suffixes(raw: str, labels: Optional[Iterable[str]] = None) -> str:
    """Rewrite suffixed references into plain determiners.

    * a list of three or more same-label references becomes ``multiple <plural>``;
    * when a label appears with several suffixes, its first reference becomes
      ``the <label>``, each newly introduced one ``another <label>``, a repeat
      of the first ``the <label>`` and a repeat of a later one
      ``the other <label>``;
    * a label seen with only one suffix just loses the digits.

    ``labels`` restricts matching to known (possibly multi-word) labels;
    by default any alphabetic word followed by digits is treated as a
    reference.
    """
    lab = _label_pattern(labels)
    ref_re = re.compile(rf"(?<![\w]){_ARTICLE}(?P<label>{lab})(?P<num>\d+)\b")
    text = raw

    # 1. enumerations: "person1, person2, and person3" -> "multiple people"
    sep = r"(?:\s*,\s*(?:and\s+)?|\s+and\s+)(?:the\s+)?"
    for label in sorted({m.group("label") for m in ref_re.finditer(text)}, key=len, reverse=True):
        el = re.escape(label)
        list_re = re.compile(rf"(?<![\w]){_ARTICLE}{el}\d+\b(?:{sep}{el}\d+\b)+")
        pieces = []
        pos = 0
        for m in list_re.finditer(text):
            nums = set(re.findall(rf"{el}(\d+)\b", m.group(0)))
            if len(nums) < 3:
                continue
            pieces.append(text[pos:m.start()])
            pieces.append(_cap(f"multiple {pluralize(label)}", m.group(0)))
            pos = m.end()
        pieces.append(text[pos:])
        text = "".join(pieces)

    # 2. remaining references, in order of appearance
    distinct: dict[str, set] = {}
    for m in ref_re.finditer(text):
        distinct.setdefault(m.group("label").lower(), set()).add(int(m.group("num")))

    first: dict[str, int] = {}
    seen: dict[str, set] = {}

    def replace(m: re.Match) -> str:
        label, num = m.group("label"), int(m.group("num"))
        key = label.lower()
        art = m.group("art") or ""
        if len(distinct[key]) == 1:
            return art + label
        if not art:
            label = label[:1].lower() + label[1:]
        if key not in first:
            first[key] = num
            seen[key] = {num}
            word = f"the {label}"
        elif num == first[key]:
            word = f"the {label}"
        elif num in seen[key]:
            word = f"the other {label}"
        else:
            seen[key].add(num)
            word = f"another {label}"
        return _cap(word, m.group(0))

    return ref_re.sub(replace, text)
