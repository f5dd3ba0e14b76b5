"""DOM nodes, a permissive HTML tree builder and a serializer.

Tokenizing is delegated to :class:`html.parser.HTMLParser`; this module
only builds the tree (implicit closing of ``<p>``/``<li>``, void elements,
stray end tags) and parses the small inline-style subset the layout uses.
"""
from __future__ import annotations

import html
import re
from dataclasses import dataclass, field
from html.parser import HTMLParser

VOID_TAGS = frozenset({
    "area", "base", "br", "col", "embed", "hr", "img", "input",
    "link", "meta", "param", "source", "track", "wbr",
})

# skipped by the extractor: never part of page text
NON_CONTENT_TAGS = frozenset({
    "input", "select", "textarea", "button", "script", "style", "head",
    "noscript", "title", "template",
})

BLOCK_TAGS = frozenset({
    "#document", "html", "body", "address", "article", "aside", "blockquote",
    "dd", "details", "dialog", "div", "dl", "dt", "fieldset", "figcaption",
    "figure", "footer", "form", "h1", "h2", "h3", "h4", "h5", "h6", "header",
    "hr", "li", "main", "nav", "ol", "p", "pre", "section", "table", "tbody",
    "thead", "tfoot", "tr", "ul", "caption",
})

# a start tag from this set closes an open <p>
_CLOSES_P = frozenset({
    "address", "article", "aside", "blockquote", "details", "dialog", "div",
    "dl", "fieldset", "figcaption", "figure", "footer", "form", "h1", "h2",
    "h3", "h4", "h5", "h6", "header", "hr", "main", "nav", "ol", "p", "pre",
    "section", "table", "ul",
})
_P_SCOPE_STOP = frozenset({"html", "table", "td", "th", "caption", "button", "#document"})

_STYLE_KEYS = ("font-size", "font-weight", "color", "display", "visibility",
               "overflow", "width", "height")


class HtmlParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


def parse_inline_style(text: str | None) -> dict[str, str]:
    """Keep only the supported declarations of a ``style`` attribute."""
    out: dict[str, str] = {}
    if not text:
        return out
    for decl in text.split(";"):
        if ":" not in decl:
            continue
        key, value = decl.split(":", 1)
        key = key.strip().lower()
        if key in _STYLE_KEYS:
            out[key] = value.strip().lower().replace("!important", "").strip()
    return out


@dataclass(eq=False)
class DomNode:
    tag: str
    attributes: dict[str, str] = field(default_factory=dict)
    children: list["DomNode"] = field(default_factory=list)
    text: str | None = None
    inline_style: dict[str, str] = field(default_factory=dict)

    @property
    def is_text(self) -> bool:
        return self.tag == "#text"

    @property
    def is_content(self) -> bool:
        return self.tag not in NON_CONTENT_TAGS

    def append(self, child: "DomNode | str") -> "DomNode":
        if isinstance(child, str):
            child = text_node(child)
        # adjacent text merges, as it would after a serialize/parse cycle
        if child.is_text and self.children and self.children[-1].is_text:
            self.children[-1].text += child.text or ""
            return self.children[-1]
        self.children.append(child)
        return child

    def iter(self):
        yield self
        for c in self.children:
            yield from c.iter()

    def find_all(self, tag: str) -> list["DomNode"]:
        return [n for n in self.iter() if n.tag == tag]

    def text_content(self) -> str:
        if self.is_text:
            return self.text or ""
        return "".join(c.text_content() for c in self.children)


def text_node(text: str) -> DomNode:
    return DomNode("#text", text=text)


def element(tag: str, attributes: dict[str, str] | None = None, *children) -> DomNode:
    """Build an element; string children become text nodes."""
    attributes = dict(attributes or {})
    node = DomNode(tag.lower(), attributes, inline_style=parse_inline_style(attributes.get("style")))
    for c in children:
        node.append(text_node(c) if isinstance(c, str) else c)
    return node


class _TreeBuilder(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.root = DomNode("#document")
        self.stack: list[DomNode] = [self.root]

    def _close_through(self, idx: int):
        del self.stack[idx:]

    def _close_p_if_open(self):
        for i in range(len(self.stack) - 1, 0, -1):
            tag = self.stack[i].tag
            if tag == "p":
                self._close_through(i)
                return
            if tag in _P_SCOPE_STOP:
                return

    def _close_list_item(self, names: tuple[str, ...], boundary: tuple[str, ...]):
        for i in range(len(self.stack) - 1, 0, -1):
            tag = self.stack[i].tag
            if tag in names:
                self._close_through(i)
                return
            if tag in boundary:
                return

    def handle_starttag(self, tag, attrs):
        tag = tag.lower()
        attributes = {k.lower(): (v if v is not None else "") for k, v in attrs}
        if tag in _CLOSES_P:
            self._close_p_if_open()
        if tag == "li":
            self._close_list_item(("li",), ("ul", "ol"))
        elif tag in ("dd", "dt"):
            self._close_list_item(("dd", "dt"), ("dl",))
        node = element(tag, attributes)
        self.stack[-1].append(node)
        if tag not in VOID_TAGS:
            self.stack.append(node)

    def handle_startendtag(self, tag, attrs):
        self.handle_starttag(tag, attrs)
        if tag.lower() not in VOID_TAGS and self.stack[-1].tag == tag.lower():
            self.stack.pop()

    def handle_endtag(self, tag):
        tag = tag.lower()
        for i in range(len(self.stack) - 1, 0, -1):
            if self.stack[i].tag == tag:
                self._close_through(i)
                return
        # stray end tag: ignored

    def handle_data(self, data):
        if not data:
            return
        self.stack[-1].append(text_node(data))


_INCOMPLETE = re.compile(r"<[A-Za-z/!?]")


def parse_html(source: str) -> DomNode:
    """Parse ``source`` permissively into a ``#document`` tree.

    Unclosed elements are closed at end of input. Raises
    :class:`HtmlParseError` only when the input ends inside a tag.
    """
    builder = _TreeBuilder()
    builder.feed(source)
    tail = builder.rawdata
    if tail and _INCOMPLETE.match(tail):
        pos = len(source) - len(tail)
        raise HtmlParseError("input truncated inside a tag", len(source[:pos].encode("utf-8")))
    builder.close()
    return builder.root


# -- serialization -----------------------------------------------------------

_RAW_TEXT = frozenset({"script", "style"})


def to_html(node: DomNode) -> str:
    """Serialize a tree so that :func:`parse_html` rebuilds it."""
    parts: list[str] = []
    _emit(node, parts, raw=False)
    return "".join(parts)


def _emit(node: DomNode, parts: list[str], raw: bool):
    if node.is_text:
        parts.append(node.text if raw else html.escape(node.text or "", quote=False))
        return
    if node.tag == "#document":
        for c in node.children:
            _emit(c, parts, raw)
        return
    attrs = "".join(f' {k}="{html.escape(v, quote=True)}"' for k, v in node.attributes.items())
    parts.append(f"<{node.tag}{attrs}>")
    if node.tag in VOID_TAGS:
        return
    for c in node.children:
        _emit(c, parts, node.tag in _RAW_TEXT)
    parts.append(f"</{node.tag}>")
