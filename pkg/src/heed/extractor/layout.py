"""Simplified box layout.

Blocks stack vertically at full available width; inline content flows
left to right and wraps at the block edge. Glyphs are fixed width
(0.6 x font size per character) and a text line is 1.2 x font size tall.
No floats, no positioning, no margins: document order is reading order.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, replace

from .dom import BLOCK_TAGS, DomNode

DEFAULT_VIEWPORT = 1280.0
DEFAULT_FONT_SIZE = 16.0
GLYPH_ADVANCE = 0.6
LINE_HEIGHT = 1.2
DEFAULT_IMAGE_SIZE = (100.0, 100.0)

_HEADING_SIZES = {"h1": 32.0, "h2": 24.0, "h3": 18.72, "h4": 16.0, "h5": 13.28, "h6": 10.72}
_BOLD_TAGS = frozenset({"b", "strong", "th", *_HEADING_SIZES})
_FONT_KEYWORDS = {"xx-small": 9.0, "x-small": 10.0, "small": 13.0, "medium": 16.0,
                  "large": 18.0, "x-large": 24.0, "xx-large": 32.0}
_NAMED_COLORS = {
    "black": (0, 0, 0, 255), "white": (255, 255, 255, 255), "red": (255, 0, 0, 255),
    "green": (0, 128, 0, 255), "blue": (0, 0, 255, 255), "gray": (128, 128, 128, 255),
    "grey": (128, 128, 128, 255), "silver": (192, 192, 192, 255), "maroon": (128, 0, 0, 255),
    "navy": (0, 0, 128, 255), "orange": (255, 165, 0, 255), "purple": (128, 0, 128, 255),
    "transparent": (0, 0, 0, 0),
}
ANCHOR_COLOR = (0, 0, 238, 255)

Rect = tuple[float, float, float, float]


@dataclass(frozen=True)
class ComputedStyle:
    font_size: float = DEFAULT_FONT_SIZE
    font_weight: int = 400
    color: tuple[int, int, int, int] = (0, 0, 0, 255)
    visible: bool = True


@dataclass
class LayoutBox:
    """An element box or a single token box.

    Token boxes carry ``token`` and point at their innermost enclosing
    element box through ``owner``; ``extent`` is the union of an element's
    own rect and every token rect inside it. An ``image`` box is both an
    element and its single token.
    """

    node: DomNode
    rect: Rect
    style: ComputedStyle
    visible: bool
    clipped: bool
    kind: str
    owner: int | None = None
    token: str | None = None
    anchor: bool = False
    linebreak_before: bool = False
    ws_before: bool = False
    extent: Rect | None = None

    @property
    def is_token(self) -> bool:
        return self.token is not None


def _parse_length(value: str | None) -> float | None:
    if value is None:
        return None
    m = re.fullmatch(r"(-?\d+(?:\.\d+)?)(px)?", value.strip())
    return float(m.group(1)) if m else None


def parse_font_size(value: str, parent: float) -> float | None:
    value = value.strip()
    if value in _FONT_KEYWORDS:
        return _FONT_KEYWORDS[value]
    if value == "larger":
        return parent * 1.2
    if value == "smaller":
        return parent / 1.2
    m = re.fullmatch(r"(\d+(?:\.\d+)?)(px|em|rem|%)?", value)
    if not m:
        return None
    num, unit = float(m.group(1)), m.group(2)
    if unit == "em":
        return num * parent
    if unit == "rem":
        return num * DEFAULT_FONT_SIZE
    if unit == "%":
        return num * parent / 100.0
    return num


def parse_font_weight(value: str) -> int | None:
    value = value.strip()
    named = {"normal": 400, "bold": 700, "bolder": 700, "lighter": 300}
    if value in named:
        return named[value]
    if re.fullmatch(r"\d+", value):
        w = int(round(int(value) / 100.0)) * 100
        return min(max(w, 100), 900)
    return None


def parse_color(value: str) -> tuple[int, int, int, int] | None:
    value = value.strip().lower()
    if value in _NAMED_COLORS:
        return _NAMED_COLORS[value]
    if value.startswith("#"):
        h = value[1:]
        if len(h) in (3, 4) and re.fullmatch(r"[0-9a-f]+", h):
            h = "".join(c * 2 for c in h)
        if len(h) in (6, 8) and re.fullmatch(r"[0-9a-f]+", h):
            chans = [int(h[i:i + 2], 16) for i in range(0, len(h), 2)]
            if len(chans) == 3:
                chans.append(255)
            return tuple(chans)
        return None
    m = re.fullmatch(r"rgba?\(([^)]*)\)", value)
    if m:
        parts = [p.strip() for p in m.group(1).split(",")]
        try:
            rgb = [min(max(int(round(float(p))), 0), 255) for p in parts[:3]]
            alpha = 255 if len(parts) < 4 else min(max(int(round(float(parts[3]) * 255)), 0), 255)
        except ValueError:
            return None
        if len(rgb) == 3:
            return (*rgb, alpha)
    return None


def compute_style(node: DomNode, parent: ComputedStyle) -> ComputedStyle:
    style = parent
    tag = node.tag
    if tag in _HEADING_SIZES:
        style = replace(style, font_size=_HEADING_SIZES[tag])
    elif tag == "small":
        style = replace(style, font_size=13.0)
    if tag in _BOLD_TAGS:
        style = replace(style, font_weight=700)
    if tag == "a":
        style = replace(style, color=ANCHOR_COLOR)
    css = node.inline_style
    if "font-size" in css:
        size = parse_font_size(css["font-size"], parent.font_size)
        if size is not None:
            style = replace(style, font_size=size)
    if "font-weight" in css:
        w = parse_font_weight(css["font-weight"])
        if w is not None:
            style = replace(style, font_weight=w)
    if "color" in css:
        c = parse_color(css["color"])
        if c is not None:
            style = replace(style, color=c)
    if "visibility" in css:
        style = replace(style, visible=css["visibility"] == "visible")
    return style


def is_block(node: DomNode) -> bool:
    display = node.inline_style.get("display")
    if display in ("block", "flex", "list-item", "table", "grid"):
        return True
    if display in ("inline", "inline-block", "inline-flex"):
        return False
    return node.tag in BLOCK_TAGS


def is_rendered(node: DomNode) -> bool:
    if node.is_text:
        return True
    return node.is_content and node.inline_style.get("display") != "none"


_TOKEN_RE = re.compile(r"\S+")


class _Cursor:
    """Flow position inside one block: current line origin and extent."""

    def __init__(self, x0: float, width: float, y: float):
        self.x0, self.width, self.y = x0, width, y
        self.x = x0
        self.line_h = 0.0
        self.has_items = False

    def break_line(self, empty_height: float = 0.0):
        if self.has_items:
            self.y += self.line_h
        else:
            self.y += empty_height
        self.x, self.line_h, self.has_items = self.x0, 0.0, False

    def place(self, w: float, h: float, space: float) -> tuple[float, float]:
        if self.has_items:
            if self.x + space + w > self.x0 + self.width:
                self.break_line()
            else:
                self.x += space
        pos = (self.x, self.y)
        self.x += w
        self.line_h = max(self.line_h, h)
        self.has_items = True
        return pos


class _Layout:
    def __init__(self):
        self.boxes: list[LayoutBox] = []
        self.pending_lb = True
        self.pending_ws = False
        self.seen_token = False

    def add(self, box: LayoutBox) -> int:
        self.boxes.append(box)
        return len(self.boxes) - 1

    def token(self, node, text, w, h, cursor, style, clipped, anchor, owner, kind="token"):
        space = GLYPH_ADVANCE * style.font_size if self.pending_ws else 0.0
        x, y = cursor.place(w, h, space)
        box = LayoutBox(node, (x, y, w, h), style, style.visible, clipped, kind,
                        owner=owner, token=text, anchor=anchor,
                        linebreak_before=self.pending_lb, ws_before=self.pending_ws)
        self.pending_lb = self.pending_ws = False
        self.seen_token = True
        return self.add(box)

    def text(self, node, cursor, style, clipped, anchor, owner):
        content = node.text or ""
        pos = 0
        for m in _TOKEN_RE.finditer(content):
            if m.start() > pos and self.seen_token:
                self.pending_ws = True
            word = m.group(0)
            self.token(node, word, GLYPH_ADVANCE * style.font_size * len(word),
                       LINE_HEIGHT * style.font_size, cursor, style, clipped, anchor, owner)
            pos = m.end()
        if pos < len(content) and self.seen_token:
            self.pending_ws = True

    def children(self, node, cursor, style, clipped, anchor, owner):
        for child in node.children:
            if is_rendered(child):
                self.node(child, cursor, style, clipped, anchor, owner)

    def node(self, node, cursor, parent_style, clipped, anchor, owner):
        if node.is_text:
            self.text(node, cursor, parent_style, clipped, anchor, owner)
            return
        style = compute_style(node, parent_style)
        anchor = anchor or node.tag == "a"
        if node.tag == "br":
            cursor.break_line(LINE_HEIGHT * style.font_size)
            self.pending_lb = True
            return
        if node.tag == "img":
            src = re.sub(r"\s+", "%20", (node.attributes.get("src") or "").strip())
            if not src:
                return
            w = _parse_length(node.attributes.get("width")) or _parse_length(node.inline_style.get("width"))
            h = _parse_length(node.attributes.get("height")) or _parse_length(node.inline_style.get("height"))
            w = DEFAULT_IMAGE_SIZE[0] if w is None else max(w, 0.0)
            h = DEFAULT_IMAGE_SIZE[1] if h is None else max(h, 0.0)
            self.token(node, src, w, h, cursor, style, clipped, anchor, owner, kind="image")
            return
        if is_block(node):
            self.block(node, cursor, style, clipped, anchor, owner)
            return
        idx = self.add(LayoutBox(node, (cursor.x, cursor.y, 0.0, 0.0), style, style.visible,
                                 clipped, "inline", owner=owner, anchor=anchor))
        self.children(node, cursor, style, clipped, anchor, idx)

    def block(self, node, parent_cursor, style, clipped, anchor, owner):
        parent_cursor.break_line()
        self.pending_lb = True
        css = node.inline_style
        fixed_w = _parse_length(css.get("width"))
        fixed_h = _parse_length(css.get("height"))
        x, y = parent_cursor.x0, parent_cursor.y
        width = parent_cursor.width if fixed_w is None else max(fixed_w, 0.0)
        idx = self.add(LayoutBox(node, (x, y, width, 0.0), style, style.visible, clipped,
                                 "block", owner=owner, anchor=anchor))
        inner_clipped = clipped or (css.get("overflow") == "hidden"
                                    and (fixed_w == 0 or fixed_h == 0))
        cursor = _Cursor(x, width, y)
        self.children(node, cursor, style, inner_clipped, anchor, idx)
        cursor.break_line()
        height = cursor.y - y if fixed_h is None else max(fixed_h, 0.0)
        self.boxes[idx].rect = (x, y, width, height)
        parent_cursor.y = y + height
        self.pending_lb = True


def _union(a: Rect | None, b: Rect) -> Rect:
    if a is None:
        return b
    x0, y0 = min(a[0], b[0]), min(a[1], b[1])
    x1, y1 = max(a[0] + a[2], b[0] + b[2]), max(a[1] + a[3], b[1] + b[3])
    return (x0, y0, x1 - x0, y1 - y0)


def layout(dom: DomNode, viewport_width: float = DEFAULT_VIEWPORT) -> list[LayoutBox]:
    """Lay out ``dom`` and return element and token boxes in document order."""
    if viewport_width <= 0:
        raise ValueError(f"viewport_width must be positive, got {viewport_width}")
    engine = _Layout()
    root_cursor = _Cursor(0.0, float(viewport_width), 0.0)
    engine.block(dom, root_cursor, ComputedStyle(), False, False, None)
    boxes = engine.boxes
    for box in boxes:
        if box.kind == "block":
            box.extent = box.rect
    for box in boxes:
        if not box.is_token:
            continue
        box.extent = box.rect
        k = box.owner
        while k is not None:
            boxes[k].extent = _union(boxes[k].extent, box.rect)
            k = boxes[k].owner
    return boxes
