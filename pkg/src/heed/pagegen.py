"""Deterministic synthetic product pages with gold Price/Name/Image spans.

Each page is built as a DOM tree, serialized to HTML and linearized with
the same layout code the extractor uses, so extracting the HTML gives
back the gold record exactly. Gold spans come from the generator's own
token bookkeeping, not from the extractor.

Entity cues are carried by hypertext features: the product name is the
only large bold heading, the main price has a shop-specific accent
colour and large font, the main image is the only large picture. Decoys
(list price, related items, deal cards, thumbnails) share the surface
forms but not the styling.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import EntitySpan, PageRecord, Task, write_records
from .extractor.dom import DomNode, element, to_html
from .extractor.extract import record_from_dom
from .extractor.layout import is_rendered

log = logging.getLogger(__name__)

VIEWPORT = 1280.0

# relative corpus sizes per language, thousands of pages
DEFAULT_LANGUAGE_MIX = {
    "en": 180, "fr": 90, "de": 80, "zh": 20, "it": 6, "ko": 19, "ja": 38, "es": 5.9, "ar": 24,
}


def _normalized(mix: dict[str, float]) -> dict[str, float]:
    total = float(sum(mix.values()))
    return {k: v / total for k, v in mix.items()}


@dataclass(frozen=True)
class GenConfig:
    seed: int = 0
    n_pages: int = 100
    language_mix: dict[str, float] = field(default_factory=lambda: _normalized(DEFAULT_LANGUAGE_MIX))
    length_mean: float = 750.0
    length_sd: float = 170.0
    length_min: int = 400
    length_max: int = 1000
    entity_position_bias: float = 0.88

    def __post_init__(self):
        total = sum(self.language_mix.values())
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"language_mix weights must sum to 1, got {total}")
        if unknown := set(self.language_mix) - set(LEXICONS):
            raise ValueError(f"no lexicon for languages {sorted(unknown)}")
        if self.length_mean <= 0:
            raise ValueError("length_mean must be positive")
        if not 0.0 <= self.entity_position_bias <= 1.0:
            raise ValueError("entity_position_bias must lie in [0, 1]")
        if not 0 < self.length_min <= self.length_max:
            raise ValueError("need 0 < length_min <= length_max")


# -- lexicons ----------------------------------------------------------------

def _latin(s: str) -> list[str]:
    return s.split()


@dataclass(frozen=True)
class Lexicon:
    filler: list[str]
    nouns: list[str]
    adjectives: list[str]
    nav: list[str]
    headings: dict[str, str]
    price_format: str
    titlecase: bool = True
    decimal: str = "."
    group: str = ","
    decimals: int = 2
    price_scale: float = 1.0


LEXICONS: dict[str, Lexicon] = {
    "en": Lexicon(
        filler=_latin("the this product is very good and works well for daily use with great quality "
                      "i bought it for my family after reading many reviews shipping was fast easy to "
                      "set up battery lasts long would recommend to friends value for money design looks "
                      "nice sturdy material comfortable fits perfectly returned once but replacement came quickly"),
        nouns=_latin("Headphones Backpack Blender Lamp Keyboard Jacket Sneakers Watch Kettle Speaker Camera Chair"),
        adjectives=_latin("Wireless Portable Premium Compact Ergonomic Waterproof Classic Smart Ultra Lightweight"),
        nav=_latin("Home Deals Electronics Fashion Kitchen Garden Toys Sports Books Beauty Account Orders Cart Help"),
        headings={"related": "Customers also viewed", "reviews": "Customer reviews", "desc": "About this item",
                  "deals": "Today's deals", "list": "List:", "ratings": "ratings", "stars": "out of 5 stars"},
        price_format="${v}",
    ),
    "fr": Lexicon(
        filler=_latin("ce produit est très bien et fonctionne parfaitement pour un usage quotidien avec une "
                      "excellente qualité livraison rapide facile à installer la batterie dure longtemps je le "
                      "recommande rapport qualité prix design élégant matériau solide confortable"),
        nouns=_latin("Casque Sac Mixeur Lampe Clavier Veste Baskets Montre Bouilloire Enceinte Appareil Chaise"),
        adjectives=_latin("Sans-fil Portable Premium Compact Ergonomique Étanche Classique Intelligent Léger"),
        nav=_latin("Accueil Promotions Électronique Mode Cuisine Jardin Jouets Sports Livres Beauté Compte Panier Aide"),
        headings={"related": "Produits similaires", "reviews": "Avis clients", "desc": "À propos de cet article",
                  "deals": "Offres du jour", "list": "Prix conseillé:", "ratings": "évaluations", "stars": "sur 5 étoiles"},
        price_format="{v} €", decimal=",", group=" ",
    ),
    "de": Lexicon(
        filler=_latin("dieses produkt ist sehr gut und funktioniert einwandfrei im täglichen gebrauch mit toller "
                      "qualität schnelle lieferung einfach einzurichten akku hält lange ich empfehle es weiter "
                      "preis leistung stimmt schönes design stabiles material bequem passt perfekt"),
        nouns=_latin("Kopfhörer Rucksack Mixer Lampe Tastatur Jacke Turnschuhe Uhr Wasserkocher Lautsprecher Kamera Stuhl"),
        adjectives=_latin("Kabellos Tragbar Premium Kompakt Ergonomisch Wasserdicht Klassisch Smart Leicht"),
        nav=_latin("Startseite Angebote Elektronik Mode Küche Garten Spielzeug Sport Bücher Konto Warenkorb Hilfe"),
        headings={"related": "Ähnliche Artikel", "reviews": "Kundenrezensionen", "desc": "Über diesen Artikel",
                  "deals": "Angebote des Tages", "list": "UVP:", "ratings": "Bewertungen", "stars": "von 5 Sternen"},
        price_format="{v} €", decimal=",", group=".",
    ),
    "es": Lexicon(
        filler=_latin("este producto es muy bueno y funciona perfectamente para el uso diario con gran calidad "
                      "envío rápido fácil de instalar la batería dura mucho lo recomiendo buena relación calidad "
                      "precio diseño bonito material resistente cómodo"),
        nouns=_latin("Auriculares Mochila Batidora Lámpara Teclado Chaqueta Zapatillas Reloj Hervidor Altavoz Cámara Silla"),
        adjectives=_latin("Inalámbrico Portátil Premium Compacto Ergonómico Impermeable Clásico Inteligente Ligero"),
        nav=_latin("Inicio Ofertas Electrónica Moda Cocina Jardín Juguetes Deportes Libros Cuenta Carrito Ayuda"),
        headings={"related": "Productos relacionados", "reviews": "Opiniones de clientes", "desc": "Acerca de este producto",
                  "deals": "Ofertas del día", "list": "Precio recomendado:", "ratings": "valoraciones", "stars": "de 5 estrellas"},
        price_format="{v} €", decimal=",", group=".",
    ),
    "it": Lexicon(
        filler=_latin("questo prodotto è molto buono e funziona perfettamente per uso quotidiano con ottima qualità "
                      "spedizione veloce facile da installare la batteria dura a lungo lo consiglio ottimo rapporto "
                      "qualità prezzo design elegante materiale robusto comodo"),
        nouns=_latin("Cuffie Zaino Frullatore Lampada Tastiera Giacca Scarpe Orologio Bollitore Altoparlante Fotocamera Sedia"),
        adjectives=_latin("Wireless Portatile Premium Compatto Ergonomico Impermeabile Classico Smart Leggero"),
        nav=_latin("Home Offerte Elettronica Moda Cucina Giardino Giochi Sport Libri Account Carrello Aiuto"),
        headings={"related": "Prodotti correlati", "reviews": "Recensioni clienti", "desc": "Informazioni su questo articolo",
                  "deals": "Offerte del giorno", "list": "Prezzo consigliato:", "ratings": "voti", "stars": "su 5 stelle"},
        price_format="€ {v}", decimal=",", group=".",
    ),
    "ja": Lexicon(
        filler="この 商品 は とても 良い です 毎日 使って います 品質 が 高い 配送 が 早い 設定 が 簡単 "
               "バッテリー が 長持ち おすすめ します コスパ が 良い デザイン が きれい 丈夫 な 素材 快適".split(),
        nouns="ヘッドホン リュック ミキサー ランプ キーボード ジャケット スニーカー 腕時計 ケトル スピーカー カメラ 椅子".split(),
        adjectives="ワイヤレス ポータブル プレミアム コンパクト 防水 クラシック スマート 軽量".split(),
        nav="ホーム セール 家電 ファッション キッチン ガーデン おもちゃ スポーツ 本 アカウント カート ヘルプ".split(),
        headings={"related": "関連 商品", "reviews": "カスタマー レビュー", "desc": "この 商品 について",
                  "deals": "本日 の セール", "list": "参考価格:", "ratings": "件 の 評価", "stars": "5つ星 のうち"},
        price_format="¥{v}", titlecase=False, decimals=0, price_scale=100.0,
    ),
    "zh": Lexicon(
        filler="这个 产品 非常 好 日常 使用 效果 很好 质量 很高 发货 很快 安装 简单 电池 耐用 推荐 给 朋友 "
               "性价比 高 设计 漂亮 材料 结实 舒适".split(),
        nouns="耳机 背包 搅拌机 台灯 键盘 夹克 运动鞋 手表 水壶 音箱 相机 椅子".split(),
        adjectives="无线 便携 高级 紧凑 防水 经典 智能 轻量".split(),
        nav="首页 特价 电子 时尚 厨房 花园 玩具 运动 图书 账户 购物车 帮助".split(),
        headings={"related": "相关 商品", "reviews": "用户 评价", "desc": "商品 详情",
                  "deals": "今日 特价", "list": "原价:", "ratings": "条 评价", "stars": "星 满分 5"},
        price_format="¥{v}", titlecase=False, price_scale=7.0,
    ),
    "ko": Lexicon(
        filler="이 제품 은 매우 좋습니다 매일 사용 하고 있어요 품질 이 좋고 배송 이 빠릅니다 설치 가 쉽고 "
               "배터리 가 오래 갑니다 추천 합니다 가성비 좋아요 디자인 예뻐요 튼튼한 소재 편안함".split(),
        nouns="헤드폰 백팩 믹서기 램프 키보드 재킷 운동화 시계 주전자 스피커 카메라 의자".split(),
        adjectives="무선 휴대용 프리미엄 컴팩트 방수 클래식 스마트 초경량".split(),
        nav="홈 특가 전자제품 패션 주방 정원 장난감 스포츠 도서 계정 장바구니 도움말".split(),
        headings={"related": "관련 상품", "reviews": "고객 리뷰", "desc": "상품 정보",
                  "deals": "오늘의 특가", "list": "정가:", "ratings": "개 평가", "stars": "5점 만점"},
        price_format="₩{v}", titlecase=False, decimals=0, price_scale=1300.0,
    ),
    "ar": Lexicon(
        filler="هذا المنتج جيد جدا ويعمل بشكل ممتاز للاستخدام اليومي جودة عالية الشحن سريع سهل التركيب "
               "البطارية تدوم طويلا أنصح به السعر مناسب التصميم جميل خامة قوية مريح".split(),
        nouns="سماعات حقيبة خلاط مصباح لوحة سترة حذاء ساعة غلاية مكبر كاميرا كرسي".split(),
        adjectives="لاسلكي محمول فاخر مدمج مقاوم كلاسيكي ذكي خفيف".split(),
        nav="الرئيسية العروض الإلكترونيات الأزياء المطبخ الحديقة الألعاب الرياضة الكتب حسابي السلة مساعدة".split(),
        headings={"related": "منتجات ذات صلة", "reviews": "آراء العملاء", "desc": "حول هذا المنتج",
                  "deals": "عروض اليوم", "list": "السعر الأصلي:", "ratings": "تقييم", "stars": "من 5 نجوم"},
        price_format="{v} ر.س", titlecase=False, price_scale=3.75,
    ),
}

SHOPS = ["shopmart", "bazaarly", "cartnova", "dealhub", "marketon", "buyzen", "emporio", "tradepost"]
BRANDS = ["Acme", "Nordik", "Veltra", "Zenko", "Orbix", "Lumen", "Kairo", "Fjord", "Pixel", "Tamaro"]
ACCENT_COLORS = ["#B12704", "#C40000", "#D0021B", "#E47911", "#CC0C39", "#B00020"]
MUTED_COLORS = ["#565959", "#6F7373", "#888888", "#999999"]
BODY_COLORS = ["#0F1111", "#111111", "#222222", "#333333"]


def format_price(value: float, lex: Lexicon) -> str:
    value = value * lex.price_scale
    text = f"{value:,.{lex.decimals}f}"
    text = text.replace(",", "\x00").replace(".", lex.decimal).replace("\x00", lex.group)
    if lex.group == " ":
        text = text.replace(" ", "")  # keep the numeric part a single token
    return lex.price_format.format(v=text)


class _Page:
    """Per-page random choices and DOM assembly."""

    def __init__(self, rng: np.random.Generator, lex: Lexicon):
        self.rng = rng
        self.lex = lex
        self.marks: dict[int, Task] = {}
        self.shop = str(rng.choice(SHOPS))
        self.body_color = str(rng.choice(BODY_COLORS))
        self.accent = str(rng.choice(ACCENT_COLORS))

    def pick(self, seq, k: int | None = None):
        if k is None:
            return seq[int(self.rng.integers(len(seq)))]
        return [seq[int(i)] for i in self.rng.integers(len(seq), size=k)]

    def sentence(self, k: int) -> str:
        return " ".join(self.pick(self.lex.filler, k))

    def product_name(self) -> str:
        words = [str(self.pick(BRANDS))]
        words += self.pick(self.lex.adjectives, int(self.rng.integers(1, 3)))
        words.append(self.pick(self.lex.nouns))
        if self.rng.random() < 0.5:
            words.append(f"{chr(65 + int(self.rng.integers(26)))}{int(self.rng.integers(10, 999))}")
        if not self.lex.titlecase:
            return " ".join(words)
        return " ".join(w if w[0].isupper() else w.capitalize() for w in words)

    def price(self, low=5.0, high=900.0) -> str:
        return format_price(round(float(self.rng.uniform(low, high)), 2), self.lex)

    def image_url(self, kind: str) -> str:
        code = "".join(self.pick("abcdefghijklmnopqrstuvwxyz0123456789", 10))
        return f"https://img.{self.shop}.com/{kind}/{code}.jpg"

    def mark(self, node: DomNode, task: Task) -> DomNode:
        self.marks[id(node)] = task
        return node

    # -- sections ------------------------------------------------------------

    def nav(self) -> DomNode:
        nav = element("div", {"class": "nav", "style": "font-size:14px"})
        nav.append(element("img", {"src": f"https://{self.shop}.com/logo.png", "width": "120", "height": "40"}))
        nav.append(element("input", {"type": "search", "placeholder": "search"}))
        nav.append(element("button", {}, "Go"))
        for i, word in enumerate(self.pick(self.lex.nav, int(self.rng.integers(6, 14)))):
            nav.append(" ")
            nav.append(element("a", {"href": f"/c/{i}"}, word))
        return nav

    def breadcrumb(self) -> DomNode:
        div = element("div", {"class": "crumbs", "style": "font-size:12px"})
        for i, word in enumerate(self.pick(self.lex.nav, int(self.rng.integers(2, 4)))):
            if i:
                div.append(" › ")
            div.append(element("a", {"href": "#"}, word))
        return div

    def deal_card(self) -> DomNode:
        card = element("div", {"class": "deal"})
        card.append(element("img", {"src": self.image_url("deal"), "width": "160", "height": "160"}))
        card.append(element("a", {"href": "#", "style": "font-size:15px"}, self.product_name()))
        card.append(element("div", {"style": f"font-size:16px;font-weight:700;color:{self.body_color}"},
                            self.price()))
        card.append(element("p", {"style": "font-size:13px"}, self.sentence(int(self.rng.integers(10, 25)))))
        return card

    def deals(self, min_tokens: int) -> list[DomNode]:
        out = [element("h2", {"style": "font-size:20px"}, self.lex.headings["deals"])]
        while sum(count_tokens(n) for n in out) < min_tokens:
            out.append(self.deal_card())
        return out

    def product(self) -> DomNode:
        lex = self.lex
        box = element("div", {"class": "product"})
        image = self.mark(element("img", {"src": self.image_url("main"),
                                          "width": str(int(self.rng.integers(350, 500))),
                                          "height": str(int(self.rng.integers(350, 500)))}), Task.IMAGE)
        size = int(self.rng.integers(26, 37))
        name = self.mark(element("h1", {"style": f"font-size:{size}px;color:{self.body_color}"},
                                 self.product_name()), Task.NAME)
        rating = element("div", {"style": "font-size:14px"},
                         f"{self.rng.uniform(3, 5):.1f} {lex.headings['stars']} ",
                         element("a", {"href": "#reviews"}, f"{int(self.rng.integers(3, 9000))} {lex.headings['ratings']}"))
        main_price = float(self.rng.uniform(5, 900))
        price_size = int(self.rng.integers(22, 31))
        price_row = element("div", {"class": "price"})
        price_row.append(self.mark(element("span", {"style": f"font-size:{price_size}px;color:{self.accent}"},
                                           format_price(main_price, lex)), Task.PRICE))
        if self.rng.random() < 0.7:
            price_row.append(" ")
            price_row.append(element("span", {"style": f"font-size:13px;color:{self.pick(MUTED_COLORS)}"},
                                     f"{lex.headings['list']} {format_price(main_price * 1.3, lex)}"))
        thumbs = element("div", {"class": "thumbs"})
        for _ in range(int(self.rng.integers(0, 4))):
            thumbs.append(element("img", {"src": self.image_url("thumb"), "width": "60", "height": "60"}))
        parts = [image, thumbs, name, rating, price_row] if self.rng.random() < 0.5 else [name, rating, image, thumbs, price_row]
        for p in parts:
            box.append(p)
        return box

    def bullets(self) -> DomNode:
        ul = element("ul", {"style": "font-size:14px"})
        for _ in range(int(self.rng.integers(2, 6))):
            ul.append(element("li", {}, self.sentence(int(self.rng.integers(6, 16)))))
        return ul

    def related(self) -> DomNode:
        sec = element("div", {"class": "related"})
        sec.append(element("h2", {"style": "font-size:20px"}, self.lex.headings["related"]))
        for _ in range(int(self.rng.integers(3, 7))):
            item = element("div", {"class": "item"})
            item.append(element("a", {"href": "#"}, element("img", {"src": self.image_url("rel"), "width": "120", "height": "120"})))
            item.append(element("a", {"href": "#", "style": "font-size:14px"}, self.product_name()))
            item.append(element("div", {"style": "font-size:14px;color:#0F1111"}, self.price()))
            sec.append(item)
        return sec

    def review(self, n_tokens: int) -> DomNode:
        rev = element("div", {"class": "review"})
        title_len = min(n_tokens - 1, int(self.rng.integers(2, 6)))
        rev.append(element("b", {}, self.sentence(title_len)))
        rev.append(element("p", {"style": "font-size:14px"}, self.sentence(n_tokens - title_len)))
        return rev

    def hidden(self) -> list[DomNode]:
        return [
            element("div", {"style": "visibility:hidden"}, self.sentence(int(self.rng.integers(3, 8)))),
            element("div", {"style": "overflow:hidden;height:0px"},
                    element("span", {}, self.sentence(int(self.rng.integers(3, 8))))),
        ]

    def footer(self) -> DomNode:
        foot = element("div", {"class": "footer", "style": "font-size:12px;color:#DDDDDD"})
        for word in self.pick(self.lex.nav, int(self.rng.integers(5, 12))):
            foot.append(" ")
            foot.append(element("a", {"href": "#"}, word))
        return foot


def count_tokens(node: DomNode) -> int:
    return len(_walk_tokens(node, {}, [], {}))


def _walk_tokens(node: DomNode, marks: dict[int, Task], tokens: list[str],
                 found: dict[int, tuple[int, int]]) -> list[str]:
    """Document-order token listing used for gold span bookkeeping."""
    start = len(tokens)
    if node.is_text:
        tokens.extend((node.text or "").split())
    elif node.tag == "img":
        src = (node.attributes.get("src") or "").strip()
        if src:
            tokens.append("%20".join(src.split()))
    else:
        for c in node.children:
            if is_rendered(c):
                _walk_tokens(c, marks, tokens, found)
    if id(node) in marks:
        found[id(node)] = (start, len(tokens) - 1)
    return tokens


def _target_length(rng: np.random.Generator, config: GenConfig) -> int:
    return int(np.clip(round(rng.normal(config.length_mean, config.length_sd)),
                       config.length_min, config.length_max))


def page_id_for(seed: int, page_index: int) -> str:
    return f"s{seed}-p{page_index:06d}"


def generate_page(seed: int, page_index: int, config: GenConfig | None = None) -> tuple[str, PageRecord]:
    """Build one page; returns ``(html, gold_record)``."""
    config = config or GenConfig(seed=seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, page_index]))
    langs = sorted(config.language_mix)
    probs = np.array([config.language_mix[k] for k in langs])
    language = langs[int(rng.choice(len(langs), p=probs / probs.sum()))]
    page = _Page(rng, LEXICONS[language])
    target = _target_length(rng, config)
    early = rng.random() < config.entity_position_bias

    body = element("body", {"style": f"color:{page.body_color}"})
    before = [page.nav(), page.breadcrumb()]
    if not early:
        # push every entity past the first 200 tokens
        lead = sum(count_tokens(n) for n in before)
        before[1:1] = page.deals(200 - lead + int(rng.integers(0, 120)))
    after = [page.bullets(), page.related()]
    for n in before:
        body.append("\n")
        body.append(n)
    body.append("\n")
    body.append(page.product())
    for n in after:
        body.append("\n")
        body.append(n)

    reviews = element("div", {"class": "reviews"})
    reviews.append(element("h2", {"style": "font-size:20px"}, page.lex.headings["reviews"]))
    tail = page.hidden() + [page.footer()]
    fixed = count_tokens(body) + count_tokens(reviews) + sum(count_tokens(n) for n in tail)
    remaining = target - fixed
    while remaining > 0:
        n = int(min(remaining, rng.integers(20, 70)))
        if remaining - n < 4:
            n = remaining  # no tiny trailing review
        reviews.append(page.review(n))
        remaining -= n
    body.append("\n")
    body.append(reviews)
    for n in tail:
        body.append("\n")
        body.append(n)

    head = element("head", {}, element("title", {}, page.shop),
                   element("script", {}, "window.dataLayer = [];"))
    dom = element("#document", {}, element("html", {"lang": language}, head, body))

    html_text = "<!DOCTYPE html>\n" + to_html(dom)
    found: dict[int, tuple[int, int]] = {}
    tokens = _walk_tokens(dom, page.marks, [], found)
    spans = [EntitySpan(page.marks[k], s, e) for k, (s, e) in found.items()]
    url = f"https://www.{page.shop}.com/dp/{page_index:06d}"
    extracted = record_from_dom(dom, VIEWPORT, page_id_for(seed, page_index), language, url)
    if list(extracted.tokens) != tokens:
        raise AssertionError(f"token bookkeeping diverged from layout on page {page_index}")
    gold = PageRecord(extracted.page_id, language, extracted.tokens, extracted.features, spans, url)
    return html_text, gold


# -- corpus ------------------------------------------------------------------

SPLITS = ("train", "dev", "test")


def split_sizes(n: int) -> tuple[int, int, int]:
    """80/10/10 with remainders going to train."""
    n_dev = n // 10
    n_test = n // 10
    return n - n_dev - n_test, n_dev, n_test


def manifest_hash(manifest: dict) -> str:
    body = {k: v for k, v in manifest.items() if k != "hash"}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


def generate_corpus(config: GenConfig, out_dir: str | Path) -> dict:
    """Write ``{train,dev,test}.jsonl``, ``html/*.html`` and ``manifest.json``."""
    n = config.n_pages
    sizes = split_sizes(n)
    manifest = {
        "seed": config.seed,
        "n_pages": n,
        "config": asdict(config),
        "counts": dict(zip(SPLITS, sizes)),
        "splits": {s: [] for s in SPLITS},
    }
    if n == 0:
        manifest["hash"] = manifest_hash(manifest)
        return manifest
    out_dir = Path(out_dir)
    html_dir = out_dir / "html"
    try:
        html_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {html_dir}: {exc}") from exc
    order = np.random.default_rng(np.random.SeedSequence([config.seed, 0xC0FFEE])).permutation(n)
    bounds = np.cumsum((0,) + sizes)
    records: dict[str, list[PageRecord]] = {s: [] for s in SPLITS}
    for split, lo, hi in zip(SPLITS, bounds[:-1], bounds[1:]):
        for idx in sorted(int(i) for i in order[lo:hi]):
            html_text, gold = generate_page(config.seed, idx, config)
            path = html_dir / f"{gold.page_id}.html"
            try:
                path.write_text(html_text, encoding="utf-8")
            except OSError as exc:
                raise OSError(f"cannot write {path}: {exc}") from exc
            records[split].append(gold)
            manifest["splits"][split].append(gold.page_id)
    for split in SPLITS:
        write_records(records[split], out_dir / f"{split}.jsonl")
    manifest["hash"] = manifest_hash(manifest)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, ensure_ascii=False) + "\n",
                                           encoding="utf-8")
    log.info("wrote %d pages to %s", n, out_dir)
    return manifest
