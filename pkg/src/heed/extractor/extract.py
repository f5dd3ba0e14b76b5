"""HTML page -> :class:`~heed.core.PageRecord` with all hypertext features."""
from __future__ import annotations

from ..core import PageRecord, RawTokenFeatures, quantize_features
from .dom import DomNode, parse_html
from .layout import DEFAULT_VIEWPORT, LayoutBox, layout


def token_boxes(boxes: list[LayoutBox]) -> list[LayoutBox]:
    return [b for b in boxes if b.is_token]


def raw_features(box: LayoutBox, boxes: list[LayoutBox]) -> RawTokenFeatures:
    if box.kind == "image" or box.owner is None:
        element_rect = box.rect
    else:
        element_rect = boxes[box.owner].extent
    return RawTokenFeatures(
        font_size_px=box.style.font_size,
        font_weight=box.style.font_weight,
        color_rgba=box.style.color,
        element_bbox=element_rect,
        token_bbox=box.rect,
        is_image=box.kind == "image",
        is_anchor=box.anchor,
        preceded_by_linebreak=box.linebreak_before,
        preceded_by_ws=box.ws_before,
        is_clipped=box.clipped,
        is_visible=box.visible,
    )


def record_from_dom(dom: DomNode, viewport_width: float = DEFAULT_VIEWPORT,
                    page_id: str = "page", language: str = "en",
                    source_url: str | None = None) -> PageRecord:
    boxes = layout(dom, viewport_width)
    toks = token_boxes(boxes)
    return PageRecord(
        page_id=page_id,
        language=language,
        tokens=[b.token for b in toks],
        features=[quantize_features(raw_features(b, boxes)) for b in toks],
        spans=(),
        source_url=source_url,
    )


def extract_record(html: str, viewport_width: float = DEFAULT_VIEWPORT, page_id: str = "page",
                   language: str = "en", source_url: str | None = None) -> PageRecord:
    """Parse, lay out and linearize ``html`` into an unannotated record.

    Tokens come out in document order, which under this layout model is
    left-to-right, top-to-bottom reading order.
    """
    return record_from_dom(parse_html(html), viewport_width, page_id, language, source_url)
