"""Zero-shot LLM baseline: prompts, chunking, a completion client, span parsing.

Span indices in prompts and completions are 0-based positions of the
whitespace tokens of the chunk as sent.
"""
from __future__ import annotations

import json
import logging
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import httpx

from .core import TASKS, PageRecord, Task
from .evalkit import EvalReport, score
from .model import chunk_bounds

log = logging.getLogger(__name__)

TEXT_CHUNK = 1024
HYPERTEXT_CHUNK = 128

# reference prompt templates, kept verbatim including the doubled closing bracket
TEMPLATE_TEXT = (
    "Given the text of a web page: {text}, please extract all entities of type {task}. "
    "You need to only return the corresponding start and end positions of the spans like "
    "[(1,2), (5,6)]]. Please remember the output format and never give me any redundant information."
)
TEMPLATE_HYPERTEXT = (
    "Given the text of a web page: {text}, where each token corresponds to HTML features {features}. "
    "Each vector corresponds to a set of hypertext features, including font-size, bounding box, "
    "and other details. Please extract all entities of type {task}, and return the corresponding "
    "start and end positions of the spans like [(1,2), (5,6)]]. Please remember the output format "
    "and never give me any redundant information."
)


def chunk_limit(with_hypertext: bool) -> int:
    return HYPERTEXT_CHUNK if with_hypertext else TEXT_CHUNK


@dataclass(frozen=True)
class PromptChunk:
    page_id: str
    index: int
    offset: int
    tokens: tuple[str, ...]
    features: tuple[tuple[int, ...], ...]


def prompt_chunks(record: PageRecord, with_hypertext: bool) -> list[PromptChunk]:
    return [PromptChunk(record.page_id, i, lo, tuple(record.tokens[lo:hi]), tuple(record.features[lo:hi]))
            for i, (lo, hi) in enumerate(chunk_bounds(len(record.tokens), chunk_limit(with_hypertext)))]


def build_prompt(chunk, task, with_hypertext: bool) -> str:
    tokens = list(chunk.tokens)
    if not tokens:
        raise ValueError("build_prompt: empty chunk")
    limit = chunk_limit(with_hypertext)
    if len(tokens) > limit:
        raise ValueError(f"build_prompt: chunk of {len(tokens)} tokens exceeds {limit}")
    name = Task(task).title
    text = " ".join(tokens)
    if not with_hypertext:
        return TEMPLATE_TEXT.format(text=text, task=name)
    features = "[" + ", ".join("[" + ", ".join(str(int(v)) for v in fv) + "]" for fv in chunk.features) + "]"
    return TEMPLATE_HYPERTEXT.format(text=text, features=features, task=name)


# -- parsing -----------------------------------------------------------------

@dataclass(frozen=True)
class ParsedSpans:
    spans: tuple[tuple[int, int], ...]
    dropped: int = 0
    failed: bool = False


_PAIR = re.compile(r"[(\[]\s*([^(),\[\]]*?)\s*[,;]\s*([^(),\[\]]*?)\s*[)\]]")
_INT = re.compile(r"[+-]?\d+")


def parse_llm_spans(completion: str | None) -> ParsedSpans:
    """Read a list of ``(start, end)`` pairs out of free-form model output.

    Text before or after the list, square or round pair brackets, odd
    spacing and a missing closing bracket are tolerated. Pairs that are not
    two non-negative integers with ``start <= end`` are dropped and counted.
    Output without any list or pair is a failure with no spans.
    """
    if not completion:
        return ParsedSpans((), 0, True)
    text = completion.strip()
    lo = text.find("[")
    if lo >= 0:
        hi = text.rfind("]")
        body = text[lo + 1:hi] if hi > lo else text[lo + 1:]
        if not body.strip().strip("[]").strip():
            return ParsedSpans((), 0, False)
    else:
        body = text
    pairs = _PAIR.findall(body)
    if not pairs:
        if lo >= 0 and not re.search(r"\d", body):
            return ParsedSpans((), 0, False)
        return ParsedSpans((), 0, True)
    spans, dropped = [], 0
    for a, b in pairs:
        if not (_INT.fullmatch(a) and _INT.fullmatch(b)):
            dropped += 1
            continue
        s, e = int(a), int(b)
        if s < 0 or e < s:
            dropped += 1
            continue
        if (s, e) not in spans:
            spans.append((s, e))
    return ParsedSpans(tuple(spans), dropped, False)


def format_spans(spans: Sequence[tuple[int, int]]) -> str:
    return "[" + ", ".join(f"({s},{e})" for s, e in spans) + "]"


# -- clients -----------------------------------------------------------------

class CompletionClient(Protocol):
    def send(self, prompt: str) -> str: ...


class ClientExhausted(RuntimeError):
    """All attempts of a request failed."""


class HttpCompletionClient:
    """Chat-completions style HTTP client.

    ``endpoint`` and ``api_key`` default to ``LLM_ENDPOINT`` and
    ``LLM_API_KEY``. Transport errors, 429 and 5xx responses are retried up
    to ``max_retries`` times with exponential backoff.
    """

    def __init__(self, endpoint: str | None = None, api_key: str | None = None, model: str = "gpt-3.5-turbo",
                 timeout: float = 60.0, max_retries: int = 3, backoff: float = 1.0, max_in_flight: int = 4,
                 transport: httpx.BaseTransport | None = None, sleep=time.sleep):
        self.endpoint = endpoint or os.environ.get("LLM_ENDPOINT")
        if not self.endpoint:
            raise ValueError("no endpoint: pass one or set LLM_ENDPOINT")
        self._api_key = api_key if api_key is not None else os.environ.get("LLM_API_KEY")
        self.model = model
        self.max_retries = max_retries
        self.backoff = backoff
        self.max_in_flight = max_in_flight
        self._sleep = sleep
        self._http = httpx.Client(timeout=timeout, transport=transport)

    def __repr__(self):
        return f"HttpCompletionClient(endpoint={self.endpoint!r}, model={self.model!r})"

    def close(self):
        self._http.close()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        return headers

    def send(self, prompt: str) -> str:
        payload = {"model": self.model, "temperature": 0,
                   "messages": [{"role": "user", "content": prompt}]}
        last = "no attempt made"
        for attempt in range(self.max_retries + 1):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._http.post(self.endpoint, json=payload, headers=self._headers())
            except httpx.TransportError as exc:
                last = f"{type(exc).__name__}"
                log.warning("completion request failed (%s), attempt %d", last, attempt + 1)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = f"HTTP {resp.status_code}"
                log.warning("completion request got %s, attempt %d", last, attempt + 1)
                continue
            resp.raise_for_status()
            return _completion_text(resp.json())
        raise ClientExhausted(f"gave up after {self.max_retries + 1} attempts: {last}")


def _completion_text(body: dict) -> str:
    if "choices" in body and body["choices"]:
        choice = body["choices"][0]
        if isinstance(choice.get("message"), dict):
            return choice["message"].get("content") or ""
        return choice.get("text") or ""
    for key in ("completion", "text", "output"):
        if key in body:
            return str(body[key])
    raise ValueError("unrecognised completion response")


class StaticClient:
    """Answers every prompt with the same string."""

    def __init__(self, reply: str = "[]"):
        self.reply = reply

    def send(self, prompt: str) -> str:
        return self.reply


class OracleClient:
    """Answers with the gold spans of the chunk the prompt was built from."""

    def __init__(self, answers: dict[str, str]):
        self.answers = answers

    @classmethod
    def from_records(cls, records: Sequence[PageRecord], tasks=TASKS, with_hypertext: bool = False):
        answers = {}
        for rec in records:
            for chunk in prompt_chunks(rec, with_hypertext):
                hi = chunk.offset + len(chunk.tokens)
                for task in tasks:
                    spans = [(max(s.start, chunk.offset) - chunk.offset, min(s.end, hi - 1) - chunk.offset)
                             for s in rec.spans_for(task) if s.start < hi and s.end >= chunk.offset]
                    answers[build_prompt(chunk, task, with_hypertext)] = format_spans(spans)
        return cls(answers)

    def send(self, prompt: str) -> str:
        return self.answers.get(prompt, "[]")


def complete_all(client: CompletionClient, prompts: Sequence[str], max_in_flight: int = 4) -> list:
    """Send prompts with at most ``max_in_flight`` outstanding; results keep prompt order.

    Each result is the completion string or the exception raised for it.
    """
    def one(prompt):
        try:
            return client.send(prompt)
        except Exception as exc:  # reported per request, not raised
            return exc

    if max_in_flight <= 1 or len(prompts) <= 1:
        return [one(p) for p in prompts]
    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        return list(pool.map(one, prompts))


# -- running the baseline ----------------------------------------------------

@dataclass
class BaselineResult:
    report: EvalReport
    transcript: list[dict] = field(default_factory=list)
    incomplete: bool = False
    parse_failures: int = 0
    dropped_pairs: int = 0
    out_of_range: int = 0

    def to_dict(self) -> dict:
        return {"incomplete": self.incomplete, "parse_failures": self.parse_failures,
                "dropped_pairs": self.dropped_pairs, "out_of_range": self.out_of_range,
                "report": self.report.to_dict()}


def _merge_at_boundaries(spans: list[tuple[int, int]], boundaries: set[int]) -> list[tuple[int, int]]:
    """Join a span ending just before a chunk boundary with one starting on it."""
    out: list[tuple[int, int]] = []
    for s, e in sorted(spans):
        if out and s in boundaries and out[-1][1] == s - 1:
            out[-1] = (out[-1][0], e)
        else:
            out.append((s, e))
    return out


def run_baseline(records: Sequence[PageRecord], client: CompletionClient, with_hypertext: bool = False,
                 tasks=TASKS, max_in_flight: int = 4, transcript_path: str | Path | None = None) -> BaselineResult:
    """Prompt every chunk of every page for every task and score the answers."""
    tasks = [Task(t) for t in tasks]
    jobs = []
    for rec in records:
        for chunk in prompt_chunks(rec, with_hypertext):
            for task in tasks:
                jobs.append((rec, chunk, task, build_prompt(chunk, task, with_hypertext)))
    replies = complete_all(client, [j[3] for j in jobs], max_in_flight)

    result = BaselineResult(EvalReport())
    predicted: dict[tuple[str, Task], list[tuple[int, int]]] = {}
    for (rec, chunk, task, prompt), reply in zip(jobs, replies):
        entry = {"page_id": rec.page_id, "chunk": chunk.index, "offset": chunk.offset,
                 "task": task.value, "prompt": prompt}
        spans: list[tuple[int, int]] = []
        if isinstance(reply, Exception):
            result.incomplete = True
            entry.update(completion=None, error=str(reply), parse_failed=None, spans=[])
        else:
            parsed = parse_llm_spans(reply)
            result.parse_failures += parsed.failed
            result.dropped_pairs += parsed.dropped
            for s, e in parsed.spans:
                if e >= len(chunk.tokens):
                    result.out_of_range += 1
                    continue
                spans.append((s + chunk.offset, e + chunk.offset))
            entry.update(completion=reply, error=None, parse_failed=parsed.failed, spans=spans)
        predicted.setdefault((rec.page_id, task), []).extend(spans)
        result.transcript.append(entry)

    for rec in records:
        boundaries = {lo for lo, _ in chunk_bounds(len(rec.tokens), chunk_limit(with_hypertext))}
        for task in tasks:
            pred = _merge_at_boundaries(predicted.get((rec.page_id, task), []), boundaries)
            gold = [(s.start, s.end) for s in rec.spans_for(task)]
            result.report.add(task, rec.language, score(pred, gold))

    if transcript_path is not None:
        path = Path(transcript_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as fh:
            for entry in result.transcript:
                fh.write(json.dumps(entry, ensure_ascii=False) + "\n")
    if result.incomplete:
        log.warning("llm baseline incomplete: some requests failed after retries")
    return result
