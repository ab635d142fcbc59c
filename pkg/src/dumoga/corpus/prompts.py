"""Prompt assembly: an opening instruction block followed by one request."""
from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from string import Template
from typing import Optional, Sequence

DEFAULT_MAX_WORDS = 20


def _data(name: str) -> str:
    return resources.files("dumoga.corpus").joinpath(f"data/{name}").read_text(encoding="utf-8")


@dataclass(frozen=True)
class PromptTemplate:
    opening: str
    request: str

    @classmethod
    def default(cls) -> "PromptTemplate":
        return cls(_data("prompt_opening.txt"), _data("prompt_request.txt"))

    @classmethod
    def from_files(cls, opening_path, request_path) -> "PromptTemplate":
        return cls(Path(opening_path).read_text(encoding="utf-8"), Path(request_path).read_text(encoding="utf-8"))


def mentions(sentence: str, reference: str) -> bool:
    return re.search(rf"(?<![\w]){re.escape(reference)}(?![\w])", sentence) is not None


@dataclass(frozen=True)
class PromptBundle:
    opening: str
    target: str
    sentences: tuple[str, ...]

    def __post_init__(self):
        if not self.sentences:
            raise ValueError("prompt needs at least one relation sentence")
        for s in self.sentences:
            if not mentions(s, self.target):
                raise ValueError(f"relation sentence does not mention target {self.target!r}: {s!r}")

    def request(self, template: PromptTemplate) -> str:
        relations = "\n".join(f"- {s}" for s in self.sentences)
        return Template(template.request).substitute(target=self.target, relations=relations).rstrip("\n")

    def messages(self, template: PromptTemplate) -> list[dict]:
        return [{"role": "system", "content": self.opening},
                {"role": "user", "content": self.request(template)}]


def make_bundle(target: str, sentences: Sequence[str], template: Optional[PromptTemplate] = None,
                max_words: int = DEFAULT_MAX_WORDS) -> PromptBundle:
    template = PromptTemplate.default() if template is None else template
    opening = Template(template.opening).substitute(max_words=max_words).rstrip("\n")
    return PromptBundle(opening, target, tuple(sentences))


def build_prompt(target: str, sentences: Sequence[str], template: Optional[PromptTemplate] = None,
                 max_words: int = DEFAULT_MAX_WORDS) -> str:
    """Full prompt text: the opening block, a blank line, then the request."""
    template = PromptTemplate.default() if template is None else template
    bundle = make_bundle(target, sentences, template, max_words)
    return f"{bundle.opening}\n\n{bundle.request(template)}"
