import pytest

from heed.extractor import HtmlParseError, extract_record, layout, parse_html, to_html
from heed.extractor.dom import parse_inline_style


def contents(node):
    return [c for c in node.children if c.is_content]


def test_parse_basic():
    root = parse_html("<div>hi</div>")
    (div,) = root.children
    assert div.tag == "div" and div.children[0].text == "hi"


def test_p_autoclose():
    root = parse_html("<p>a<p>b")
    assert [c.tag for c in root.children] == ["p", "p"]
    assert [c.text_content() for c in root.children] == ["a", "b"]


def test_li_autoclose_and_stray_end_tags():
    root = parse_html("<ul><li>a<li>b</ul></span>")
    (ul,) = root.children
    assert [c.text_content() for c in ul.children] == ["a", "b"]


def test_attributes_verbatim():
    root = parse_html('<a href="/x?a=1&amp;b=2" data-Q="Keep">x</a>')
    assert root.children[0].attributes == {"href": "/x?a=1&b=2", "data-q": "Keep"}


def test_truncated_tag_reports_offset():
    with pytest.raises(HtmlParseError) as err:
        parse_html("<div>héllo</div><span cl")
    assert err.value.offset == len("<div>héllo</div>".encode())


def test_inline_style_subset():
    assert parse_inline_style("Font-Size: 12PX; margin: 0; color:red !important") == \
        {"font-size": "12px", "color": "red"}


def test_serializer_roundtrip():
    src = '<div class="a"><p>x &lt; y</p><img src="u v.png"><script>a<b</script></div>'
    assert to_html(parse_html(to_html(parse_html(src)))) == to_html(parse_html(src))


def test_token_width_and_line_height():
    boxes = [b for b in layout(parse_html("Hi")) if b.is_token]
    assert boxes[0].rect[2] == pytest.approx(19.2)
    boxes = [b for b in layout(parse_html('<h1 style="font-size:32px">T</h1>')) if b.is_token]
    assert boxes[0].rect[3] == pytest.approx(38.4)


def test_blocks_stack():
    boxes = [b for b in layout(parse_html("<div>a</div><div>b</div>")) if b.kind == "block" and b.node.tag == "div"]
    first, second = boxes
    assert second.rect[1] == pytest.approx(first.rect[1] + first.rect[3])


def test_wrapping_at_viewport():
    boxes = [b for b in layout(parse_html("aaaa bbbb"), viewport_width=50) if b.is_token]
    assert boxes[1].rect[0] == 0 and boxes[1].rect[1] > boxes[0].rect[1]


def test_hidden_and_clipped():
    html = ('<div style="visibility:hidden">a</div>'
            '<div style="overflow:hidden;height:0px"><span>b</span></div><div>c</div>')
    rec = extract_record(html)
    assert rec.tokens == ("a", "b", "c")
    assert [f[19] for f in rec.features] == [0, 1, 1]
    assert [f[18] for f in rec.features] == [0, 1, 0]


def test_hello_world_features():
    rec = extract_record('<div style="font-size:16px"><b>Hello world</b></div>')
    assert rec.tokens == ("Hello", "world")
    hello, world = rec.features
    assert hello[1] == world[1] == 7
    assert hello[16] == 1 and world[17] == 1 and world[16] == 0
    assert hello[6:10] == world[6:10]  # one styled run, one element box
    assert hello[10] != world[10]


def test_image_and_anchor():
    rec = extract_record('<img src="http://x/a.png">')
    assert rec.tokens == ("http://x/a.png",) and rec.features[0][14] == 1
    rec = extract_record('<a href="u">buy now</a>')
    assert [f[15] for f in rec.features] == [1, 1]


def test_skips_non_content():
    rec = extract_record('<script>x</script><span>y</span><input value="q"><button>Go</button>'
                         '<select><option>o</option></select><textarea>t</textarea><div style="display:none">n</div>')
    assert rec.tokens == ("y",)


def test_br_and_whitespace_flags():
    rec = extract_record("<p>a<br>b c</p><p>d</p>")
    lb = [f[16] for f in rec.features]
    ws = [f[17] for f in rec.features]
    assert rec.tokens == ("a", "b", "c", "d")
    assert lb == [1, 1, 0, 1]
    assert ws == [0, 0, 1, 0]


def test_no_whitespace_between_adjacent_inlines():
    rec = extract_record("<span>ab</span><span>cd</span> <span>ef</span>")
    assert rec.tokens == ("ab", "cd", "ef")
    assert [f[17] for f in rec.features] == [0, 0, 1]


def test_extraction_is_pure():
    html = '<div><h1>Name</h1><span style="color:#c00">$5.00</span></div>'
    a, b = extract_record(html), extract_record(html)
    assert a == b and a.spans == ()


def test_viewport_must_be_positive():
    with pytest.raises(ValueError):
        layout(parse_html("x"), viewport_width=0)
