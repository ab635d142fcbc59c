"""Chat-completion clients: a retrying HTTP client and an offline generator."""
from __future__ import annotations

import json
import logging
import os
import re
import time
import urllib.error
import urllib.request
from typing import Callable, Optional, Sequence, Union

from .prompts import PromptBundle, PromptTemplate

log = logging.getLogger(__name__)

DEFAULT_MODEL = "gpt-3.5-turbo"
DEFAULT_KEY_ENV = "OPENAI_API_KEY"

# predicates whose subject and object can be swapped without changing meaning
SYMMETRIC_PHRASES = ("is next to", "is near", "is beside", "is by", "is close to", "is with", "is touching")


class LLMError(RuntimeError):
    pass


class TransportError(LLMError):
    pass


Transport = Callable[[str, dict, bytes, float], "tuple[int, bytes]"]


def urllib_transport(url: str, headers: dict, body: bytes, timeout: float) -> tuple[int, bytes]:
    req = urllib.request.Request(url, data=body, headers=headers, method="POST")
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return resp.status, resp.read()
    except urllib.error.HTTPError as exc:
        return exc.code, exc.read()
    except (urllib.error.URLError, OSError) as exc:
        raise TransportError(f"request to {url} failed: {exc}") from exc


class ChatClient:
    """POSTs ``{model, temperature: 0, messages}`` to an OpenAI-style endpoint.

    Transport failures are retried up to ``max_retries`` times with
    exponential backoff; HTTP errors and empty completions are not.
    """

    def __init__(self, endpoint: str, model: str = DEFAULT_MODEL, api_key_env: Optional[str] = DEFAULT_KEY_ENV,
                 timeout: float = 60.0, max_retries: int = 3, backoff: float = 1.0,
                 transport: Optional[Transport] = None, sleep: Callable[[float], None] = time.sleep):
        self.endpoint = endpoint
        self.model = model
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff
        self.transport = transport or urllib_transport
        self.sleep = sleep
        self._key = None
        if api_key_env:
            self._key = os.environ.get(api_key_env)
            if not self._key:
                raise LLMError(f"credential environment variable {api_key_env} is not set")

    def complete(self, messages: Sequence[dict]) -> str:
        body = json.dumps({"model": self.model, "temperature": 0, "messages": list(messages)}).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self._key:
            headers["Authorization"] = f"Bearer {self._key}"
        attempt = 0
        while True:
            try:
                status, payload = self.transport(self.endpoint, headers, body, self.timeout)
                break
            except TransportError as exc:
                if attempt >= self.max_retries:
                    raise TransportError(f"{exc} (gave up after {self.max_retries} retries)") from exc
                delay = self.backoff * (2 ** attempt)
                log.warning("transport failure (%s); retrying in %.1fs", exc, delay)
                self.sleep(delay)
                attempt += 1
        if not 200 <= status < 300:
            raise LLMError(f"endpoint returned HTTP {status}: {payload[:200]!r}")
        try:
            doc = json.loads(payload)
            choice = doc["choices"][0]
            text = choice["message"]["content"] if "message" in choice else choice["text"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise LLMError(f"unexpected response format: {exc}") from None
        if not text or not text.strip():
            raise LLMError("empty completion")
        return text


def _parse_request(text: str) -> tuple[str, list[str]]:
    blocks = list(re.finditer(r"^Target object: (.+)$", text, flags=re.M))
    if not blocks:
        raise LLMError("offline generator: no 'Target object:' line in prompt")
    target = blocks[-1].group(1).strip()
    sentences = []
    for line in text[blocks[-1].end():].splitlines():
        if line.startswith("- "):
            sentences.append(line[2:].strip())
        elif line.startswith("Answer:"):
            break
    if not sentences:
        raise LLMError("offline generator: no relation sentences in prompt")
    return target, sentences


def offline_generate(text: str) -> str:
    """Deterministic stand-in for the model.

    Relations are rephrased with the target as subject (symmetric predicates
    are flipped, others become ``that ...`` clauses), incoming relations
    first, then joined with commas and a final ``and``.
    """
    target, sentences = _parse_request(text)
    head = f"the {target} "
    tail = f" the {target}"
    incoming, outgoing, relative = [], [], []
    for s in sentences:
        if s.startswith(head):
            outgoing.append(s[len(head):])
        elif s.endswith(tail) and s.startswith("the "):
            lhs = s[len("the "):-len(tail)]
            sym = next((p for p in SYMMETRIC_PHRASES if lhs.endswith(" " + p)), None)
            if sym is not None:
                incoming.append(f"{sym} the {lhs[:-len(sym) - 1]}")
            else:
                relative.append(f"the {lhs}")
        else:
            outgoing.append(f"is with {s}")
    clauses = incoming + outgoing
    for i in range(1, len(clauses)):
        if clauses[i].startswith("is ") and clauses[0].startswith("is "):
            clauses[i] = clauses[i][3:]
    out = f"the {target}"
    if relative:
        out += " that " + " and that ".join(relative)
    if clauses:
        joined = clauses[0] if len(clauses) == 1 else ", ".join(clauses[:-1]) + " and " + clauses[-1]
        out += " " + joined
    return out + "."


class OfflineClient:
    def complete(self, messages: Sequence[dict]) -> str:
        return offline_generate("\n".join(m["content"] for m in messages))


def generate_query(prompt: Union[str, PromptBundle], client, template: Optional[PromptTemplate] = None) -> str:
    """Request one completion for ``prompt`` and return the text unmodified."""
    if isinstance(prompt, PromptBundle):
        messages = prompt.messages(PromptTemplate.default() if template is None else template)
    else:
        messages = [{"role": "user", "content": prompt}]
    return client.complete(messages)
