"""Provider-agnostic chat-completion client with record/replay and scripted modes.

Four modes share one interface:

  live      – a chat-completions-shaped POST against a configured base URL
  record    – live, plus every (request digest, response) appended to a transcript
  replay    – responses looked up by request digest; unknown digests are errors
  scripted  – responses served from a rule table matched by tag and pattern

Replay and scripted modes never touch the network, which makes every pipeline
path testable offline and bit-reproducible.
"""

from __future__ import annotations

import fnmatch
import hashlib
import json
import re
import threading
import time
import urllib.error
import urllib.request
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence


class LlmError(RuntimeError):
    """A completion could not be produced."""


class ReplayMissError(LlmError):
    """Strict replay found no transcript entry for the request digest."""


class ScriptedRuleMissError(LlmError):
    """No scripted rule matched the request."""


@dataclass(frozen=True)
class CompletionRequest:
    messages: tuple[tuple[str, str], ...]
    temperature: float = 0.2
    max_output_tokens: int = 4096
    tag: str = ""

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("a completion request needs at least one message")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    def text(self) -> str:
        return "\n".join(content for _, content in self.messages)


def request(
    content: str,
    *,
    system: str | None = None,
    temperature: float = 0.2,
    max_output_tokens: int = 4096,
    tag: str = "",
) -> CompletionRequest:
    messages: list[tuple[str, str]] = []
    if system:
        messages.append(("system", system))
    messages.append(("user", content))
    return CompletionRequest(
        messages=tuple(messages),
        temperature=temperature,
        max_output_tokens=max_output_tokens,
        tag=tag,
    )


def request_digest(req: CompletionRequest, sample_index: int | None = None) -> str:
    # max_output_tokens is deliberately excluded: cap tuning must not
    # invalidate recorded transcripts.
    payload: dict = {
        "messages": [[role, content] for role, content in req.messages],
        "temperature": req.temperature,
        "tag": req.tag,
    }
    if sample_index is not None:
        payload["sample_index"] = sample_index
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()



@dataclass
class ScriptedRule:
    """Serves responses for requests whose tag and text match.

    ``tag`` may be exact or an fnmatch pattern ("evolve.*"); ``pattern`` is a
    regex searched over the concatenated message contents ("" matches all).
    Responses are consumed in order across matches, sticking at the last.
    A response may be a callable taking the request.
    """

    tag: str
    pattern: str = ""
    responses: list = field(default_factory=list)
    _cursor: int = field(default=0, repr=False)

    def matches(self, req: CompletionRequest) -> bool:
        if req.tag != self.tag and not fnmatch.fnmatch(req.tag, self.tag):
            return False
        return not self.pattern or re.search(self.pattern, req.text(), re.DOTALL) is not None

    def next_response(self, req: CompletionRequest) -> str:
        if not self.responses:
            raise ScriptedRuleMissError(f"rule for tag {self.tag!r} has no responses")
        index = min(self._cursor, len(self.responses) - 1)
        self._cursor += 1
        response = self.responses[index]
        if callable(response):
            return response(req)
        return response


def load_scripted_rules(path: str | Path) -> list[ScriptedRule]:
    """Load rules from a JSON file: [{tag, pattern, response | responses: [...]}, ...]."""
    data = json.loads(Path(path).read_text())
    rules = []
    for entry in data:
        responses = entry.get("responses")
        if responses is None:
            responses = [entry["response"]]
        rules.append(
            ScriptedRule(tag=entry["tag"], pattern=entry.get("pattern", ""), responses=list(responses))
        )
    return rules


def load_transcript(path: str | Path) -> dict[str, str]:
    entries: dict[str, str] = {}
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            entries[record["digest"]] = record["response"]
    return entries


MODES = ("live", "record", "replay", "scripted")


class LlmClient:
    """Thread-safe completion client; see the module docstring for the modes."""

    def __init__(
        self,
        mode: str = "scripted",
        *,
        base_url: str | None = None,
        model: str | None = None,
        api_key: str | None = None,
        transcript_path: str | Path | None = None,
        rules: Sequence[ScriptedRule] | None = None,
        timeout: float = 60.0,
        max_retries: int = 3,
        log_requests: bool = False,
    ) -> None:
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
        self.mode = mode
        self.base_url = base_url
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.max_retries = max_retries
        self._lock = threading.Lock()
        self.calls = 0
        self.calls_by_tag: Counter[str] = Counter()
        self.request_log: list[CompletionRequest] = [] if log_requests else None  # type: ignore[assignment]

        self._transcript_path = Path(transcript_path) if transcript_path else None
        self._replay: dict[str, str] = {}
        self._rules: list[ScriptedRule] = list(rules or [])
        if mode == "replay":
            if self._transcript_path is None:
                raise ValueError("replay mode needs a transcript path")
            self._replay = load_transcript(self._transcript_path)
        if mode == "record" and self._transcript_path is None:
            raise ValueError("record mode needs a transcript path")
        if mode in ("live", "record") and not base_url:
            raise ValueError(f"{mode} mode needs a base_url")

    # -- public surface ------------------------------------------------------

    def complete(self, req: CompletionRequest) -> str:
        return self._dispatch(req, None)

    def sample(self, req: CompletionRequest, k: int, *, skip_failures: bool = False) -> list[str]:
        """k independent completions; indexed digests keep replayed samples distinct.

        With ``skip_failures`` per-element errors are dropped and the list may
        come back shorter (possibly empty); callers own the exhaustion policy.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        if k == 1:
            indices: list[int | None] = [None]
        else:
            indices = list(range(k))
        out: list[str] = []
        for index in indices:
            try:
                out.append(self._dispatch(req, index))
            except LlmError:
                if not skip_failures:
                    raise
        return out

    # -- dispatch ------------------------------------------------------------

    def _count(self, req: CompletionRequest) -> None:
        with self._lock:
            self.calls += 1
            self.calls_by_tag[req.tag] += 1
            if self.request_log is not None:
                self.request_log.append(req)

    def _dispatch(self, req: CompletionRequest, index: int | None) -> str:
        self._count(req)
        if self.mode == "scripted":
            return self._scripted(req)
        if self.mode == "replay":
            digest = request_digest(req, index)
            try:
                return self._replay[digest]
            except KeyError:
                raise ReplayMissError(
                    f"REPLAY_MISS: no transcript entry for tag={req.tag!r} digest={digest[:12]}"
                ) from None
        text = self._live(req)
        if self.mode == "record":
            self._append_transcript(req, index, text)
        return text

    def _scripted(self, req: CompletionRequest) -> str:
        with self._lock:
            for rule in self._rules:
                if rule.matches(req):
                    return rule.next_response(req)
        raise ScriptedRuleMissError(f"no scripted rule matches tag={req.tag!r}")

    def _append_transcript(self, req: CompletionRequest, index: int | None, text: str) -> None:
        record = {
            "digest": request_digest(req, index),
            "tag": req.tag,
            "temperature": req.temperature,
            "messages": [[role, content] for role, content in req.messages],
            "response": text,
        }
        line = json.dumps(record, ensure_ascii=False)
        with self._lock:
            with open(self._transcript_path, "a", encoding="utf-8") as handle:
                handle.write(line + "\n")

    def _live(self, req: CompletionRequest) -> str:
        payload = json.dumps(
            {
                "model": self.model,
                "messages": [{"role": role, "content": content} for role, content in req.messages],
                "temperature": req.temperature,
                "max_tokens": req.max_output_tokens,
            }
        ).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error: Exception | None = None
        for attempt in range(self.max_retries):
            try:
                http_req = urllib.request.Request(self.base_url, data=payload, headers=headers)
                with urllib.request.urlopen(http_req, timeout=self.timeout) as response:
                    body = json.loads(response.read().decode("utf-8"))
                return body["choices"][0]["message"]["content"]
            except (urllib.error.URLError, OSError, KeyError, json.JSONDecodeError) as exc:
                last_error = exc
                if attempt + 1 < self.max_retries:
                    time.sleep(0.5 * 2**attempt)
        raise LlmError(f"completion failed after {self.max_retries} attempts: {last_error}")


def client_from_config(
    mode: str,
    *,
    base_url: str | None = None,
    model: str | None = None,
    api_key: str | None = None,
    transcript_path: str | Path | None = None,
    rules_path: str | Path | None = None,
    log_requests: bool = False,
) -> LlmClient:
    rules = load_scripted_rules(rules_path) if rules_path else None
    return LlmClient(
        mode,
        base_url=base_url,
        model=model,
        api_key=api_key,
        transcript_path=transcript_path,
        rules=rules,
        log_requests=log_requests,
    )
