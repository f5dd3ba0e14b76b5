"""Domain types, feature quantization and the JSONL record format.

A page is stored as a :class:`PageRecord`: whitespace tokens in reading
order, one 20-integer feature vector per token and the gold entity spans.
The feature layout is fixed::

    [0]      font size bucket          (128)
    [1]      font weight / 100         (10)
    [2..5]   RGBA                      (256 each)
    [6..9]   element bbox x, y, w, h   (1024 each, 8px buckets)
    [10..13] token bbox x, y, w, h     (1024 each, 8px buckets)
    [14]     is image                  (2)
    [15]     is anchor                 (2)
    [16]     preceded by line break    (2)
    [17]     preceded by whitespace    (2)
    [18]     is clipped                (2)
    [19]     is visible                (2)
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

N_FEATURES = 20
BBOX_BUCKET_PX = 8
MAX_BBOX_BUCKET = 1023
MAX_FONT_BUCKET = 127

FEATURE_VOCAB_SIZES: tuple[int, ...] = (128, 10) + (256,) * 4 + (1024,) * 8 + (2,) * 6

FEATURE_NAMES: tuple[str, ...] = (
    "font_size", "font_weight",
    "color_r", "color_g", "color_b", "color_a",
    "element_x", "element_y", "element_w", "element_h",
    "token_x", "token_y", "token_w", "token_h",
    "is_image", "is_anchor",
    "preceded_by_linebreak", "preceded_by_ws",
    "is_clipped", "is_visible",
)

# the five feature categories used by the ablation runner
FEATURE_CATEGORIES: dict[str, tuple[int, ...]] = {
    "font-style": (0, 1, 2, 3, 4, 5),
    "bounding-box": (6, 7, 8, 9, 10, 11, 12, 13),
    "category": (14, 15),
    "preceding-token": (16, 17),
    "clickability-visibility": (18, 19),
}


class Task(str, enum.Enum):
    PRICE = "price"
    NAME = "name"
    IMAGE = "image"

    @property
    def title(self) -> str:
        return self.value.capitalize()


TASKS: tuple[Task, ...] = (Task.PRICE, Task.NAME, Task.IMAGE)


class FeatureError(ValueError):
    """A raw feature value is outside its allowed range."""

    def __init__(self, field_name: str, value, message: str = "out of range"):
        super().__init__(f"{field_name}: {message} ({value!r})")
        self.field = field_name
        self.value = value


class RecordError(ValueError):
    """A serialized record could not be decoded or violates the schema."""

    def __init__(self, message: str, line: int | None = None, field_name: str | None = None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line
        self.field = field_name


@dataclass(frozen=True)
class RawTokenFeatures:
    font_size_px: float
    font_weight: int
    color_rgba: tuple[int, int, int, int]
    element_bbox: tuple[float, float, float, float]
    token_bbox: tuple[float, float, float, float]
    is_image: bool = False
    is_anchor: bool = False
    preceded_by_linebreak: bool = False
    preceded_by_ws: bool = False
    is_clipped: bool = False
    is_visible: bool = True

    def violations(self) -> list[str]:
        out = []
        if not (self.font_size_px >= 0 and math.isfinite(self.font_size_px)):
            out.append("font_size_px")
        if not 100 <= self.font_weight <= 900:
            out.append("font_weight")
        if len(self.color_rgba) != 4:
            out.append("color_rgba")
        for k, c in enumerate(self.color_rgba):
            if not 0 <= c <= 255:
                out.append(f"color_rgba[{k}]")
        for name in ("element_bbox", "token_bbox"):
            box = getattr(self, name)
            if len(box) != 4 or box[2] < 0 or box[3] < 0:
                out.append(name)
        ex, ey, ew, eh = self.element_bbox
        tx, ty, tw, th = self.token_bbox
        slack = 0.5
        if (tx < ex - slack or ty < ey - slack
                or tx + tw > ex + ew + slack or ty + th > ey + eh + slack):
            out.append("token_bbox not contained in element_bbox")
        return out


FeatureVector = tuple  # 20 ints, layout in the module docstring


def _bbox_bucket(value: float) -> int:
    return min(max(int(math.floor(value / BBOX_BUCKET_PX)), 0), MAX_BBOX_BUCKET)


def quantize_features(raw: RawTokenFeatures) -> FeatureVector:
    """Integerize raw token features into the fixed 20-slot layout.

    Font size rounds half-up to whole pixels and clips to [0, 127]; every
    bbox coordinate becomes ``floor(px / 8)`` clipped to [0, 1023].
    """
    if not (raw.font_size_px >= 0 and math.isfinite(raw.font_size_px)):
        raise FeatureError("font_size_px", raw.font_size_px)
    if not 100 <= raw.font_weight <= 900:
        raise FeatureError("font_weight", raw.font_weight)
    if len(raw.color_rgba) != 4:
        raise FeatureError("color_rgba", raw.color_rgba, "expected 4 channels")
    for k, c in enumerate(raw.color_rgba):
        if not 0 <= c <= 255:
            raise FeatureError(f"color_rgba[{k}]", c)
    for name in ("element_bbox", "token_bbox"):
        box = getattr(raw, name)
        if len(box) != 4:
            raise FeatureError(name, box, "expected (x, y, w, h)")
        if box[2] < 0 or box[3] < 0:
            raise FeatureError(name, box, "negative width or height")

    font = min(int(math.floor(raw.font_size_px + 0.5)), MAX_FONT_BUCKET)
    weight = int(math.floor(raw.font_weight / 100 + 0.5))
    return (
        (font, weight)
        + tuple(int(c) for c in raw.color_rgba)
        + tuple(_bbox_bucket(v) for v in raw.element_bbox)
        + tuple(_bbox_bucket(v) for v in raw.token_bbox)
        + tuple(int(bool(b)) for b in (
            raw.is_image, raw.is_anchor, raw.preceded_by_linebreak,
            raw.preceded_by_ws, raw.is_clipped, raw.is_visible))
    )


def dequantize_features(fv: Sequence[int]) -> RawTokenFeatures:
    """Midpoint representative of a feature vector (bbox buckets -> centre pixel)."""
    mid = lambda b: b * BBOX_BUCKET_PX + BBOX_BUCKET_PX / 2  # noqa: E731
    return RawTokenFeatures(
        font_size_px=float(fv[0]),
        font_weight=int(fv[1]) * 100,
        color_rgba=tuple(int(c) for c in fv[2:6]),
        element_bbox=tuple(mid(b) for b in fv[6:10]),
        token_bbox=tuple(mid(b) for b in fv[10:14]),
        is_image=bool(fv[14]),
        is_anchor=bool(fv[15]),
        preceded_by_linebreak=bool(fv[16]),
        preceded_by_ws=bool(fv[17]),
        is_clipped=bool(fv[18]),
        is_visible=bool(fv[19]),
    )


@dataclass(frozen=True, order=True)
class EntitySpan:
    """Inclusive token span ``[start, end]`` annotated with a task."""

    task: Task
    start: int
    end: int

    def __post_init__(self):
        object.__setattr__(self, "task", Task(self.task))


@dataclass(frozen=True)
class PageRecord:
    page_id: str
    language: str
    tokens: tuple[str, ...]
    features: tuple[FeatureVector, ...]
    spans: tuple[EntitySpan, ...] = ()
    source_url: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "features", tuple(tuple(int(x) for x in f) for f in self.features))
        object.__setattr__(self, "spans", tuple(sorted(self.spans, key=lambda s: (TASKS.index(s.task), s.start, s.end))))

    def __len__(self) -> int:
        return len(self.tokens)

    def spans_for(self, task: Task) -> list[EntitySpan]:
        return [s for s in self.spans if s.task == Task(task)]

    def entity_text(self, span: EntitySpan) -> str:
        return " ".join(self.tokens[span.start:span.end + 1])


def validate_record(record: PageRecord) -> list[str]:
    """Return every invariant violation of ``record``; empty when valid."""
    out: list[str] = []
    n = len(record.tokens)
    if n == 0:
        out.append("tokens empty")
    if len(record.features) != n:
        out.append(f"features length {len(record.features)} != tokens length {n}")
    for i, tok in enumerate(record.tokens):
        if not tok or any(ch.isspace() for ch in tok):
            out.append(f"tokens[{i}] empty or contains whitespace")
    for i, fv in enumerate(record.features):
        if len(fv) != N_FEATURES:
            out.append(f"features[{i}] has length {len(fv)}")
            continue
        for j, (v, size) in enumerate(zip(fv, FEATURE_VOCAB_SIZES)):
            if not 0 <= v < size:
                out.append(f"features[{i}][{j}] out of range")
    last_end: dict[Task, int] = {}
    for k, s in enumerate(record.spans):
        if not 0 <= s.start < n:
            out.append(f"spans[{k}].start out of range")
        if s.end >= n or s.end < 0:
            out.append(f"spans[{k}].end out of range")
        if s.end < s.start:
            out.append(f"spans[{k}] end before start")
        prev = last_end.get(s.task)
        if prev is not None and s.start <= prev:
            out.append(f"spans[{k}] overlaps previous {s.task.value} span")
        last_end[s.task] = max(s.end, prev if prev is not None else -1)
    return out


# -- serialization -----------------------------------------------------------

def record_to_dict(record: PageRecord) -> dict:
    return {
        "page_id": record.page_id,
        "language": record.language,
        "tokens": list(record.tokens),
        "features": [list(f) for f in record.features],
        "spans": [{"task": s.task.value, "start": s.start, "end": s.end} for s in record.spans],
        "source_url": record.source_url,
    }


def record_to_json(record: PageRecord) -> str:
    return json.dumps(record_to_dict(record), ensure_ascii=False, separators=(",", ":"))


def _require(obj: dict, key: str, types, line: int | None):
    if key not in obj:
        raise RecordError(f"missing field '{key}'", line, key)
    if not isinstance(obj[key], types):
        raise RecordError(f"field '{key}' has wrong type", line, key)
    return obj[key]


def record_from_dict(obj: dict, line: int | None = None) -> PageRecord:
    if not isinstance(obj, dict):
        raise RecordError("expected a JSON object", line)
    page_id = _require(obj, "page_id", str, line)
    language = _require(obj, "language", str, line)
    tokens = _require(obj, "tokens", list, line)
    features = _require(obj, "features", list, line)
    spans = _require(obj, "spans", list, line)
    source_url = obj.get("source_url")
    if source_url is not None and not isinstance(source_url, str):
        raise RecordError("field 'source_url' has wrong type", line, "source_url")
    for i, t in enumerate(tokens):
        if not isinstance(t, str):
            raise RecordError(f"tokens[{i}] is not a string", line, f"tokens[{i}]")
    for i, f in enumerate(features):
        if not isinstance(f, list) or not all(isinstance(x, int) and not isinstance(x, bool) for x in f):
            raise RecordError(f"features[{i}] is not a list of integers", line, f"features[{i}]")
    parsed_spans = []
    for k, s in enumerate(spans):
        if not isinstance(s, dict):
            raise RecordError(f"spans[{k}] is not an object", line, f"spans[{k}]")
        try:
            task = Task(s.get("task"))
        except ValueError:
            raise RecordError(f"spans[{k}].task invalid: {s.get('task')!r}", line, f"spans[{k}].task") from None
        for key in ("start", "end"):
            if not isinstance(s.get(key), int) or isinstance(s.get(key), bool):
                raise RecordError(f"spans[{k}].{key} is not an integer", line, f"spans[{k}].{key}")
        parsed_spans.append(EntitySpan(task, s["start"], s["end"]))
    record = PageRecord(page_id, language, tokens, features, parsed_spans, source_url)
    problems = validate_record(record)
    if problems:
        raise RecordError("; ".join(problems), line, problems[0].split(" ")[0])
    return record


def write_records(records: Iterable[PageRecord], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            problems = validate_record(rec)
            if problems:
                raise RecordError(f"record {rec.page_id!r} invalid: {'; '.join(problems)}")
            fh.write(record_to_json(rec))
            fh.write("\n")


def read_records(path: str | Path) -> list[PageRecord]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordError(f"malformed JSON: {exc.msg}", lineno) from None
            out.append(record_from_dict(obj, lineno))
    return out
