from .dom import DomNode, HtmlParseError, element, parse_html, text_node, to_html
from .extract import extract_record, raw_features, record_from_dom
from .layout import ComputedStyle, LayoutBox, layout

__all__ = [
    "ComputedStyle", "DomNode", "HtmlParseError", "LayoutBox", "element", "extract_record",
    "layout", "parse_html", "raw_features", "record_from_dom", "text_node", "to_html",
]
