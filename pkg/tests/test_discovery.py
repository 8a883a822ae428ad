from __future__ import annotations

import sys
import textwrap
from collections import Counter

import pytest

from cdnfront.discovery import (
    DiscoveredUrl,
    ExternalFetcher,
    Fetcher,
    build_url_sets,
    check_root_liveness,
    classify_resource,
    crawl_site,
    crawl_sites,
    css_urls,
    extract_links,
    registrable_domains,
    sample_slds_for_cdn,
)
from cdnfront.ingest import StableMapping
from cdnfront.mockcdn import Allow, MockOrigin, mint_certificate, spawn_cluster
from cdnfront.net import Resolver, make_tls_context


@pytest.mark.parametrize(
    "url, ctype, expected",
    [
        ("https://x.test/a.png", "image/png", "image"),
        ("https://x.test/page", "text/html", "non-static"),
        ("https://x.test/bundle.js", None, "script"),
        ("https://x.test/bundle.js", "", "script"),
        ("https://x.test/s.css", None, "stylesheet"),
        ("https://x.test/f.woff2", None, "font"),
        ("https://x.test/pic.webp", None, "image"),
        ("https://x.test/doc.pdf", None, "other-static"),
        ("https://x.test/api", None, "non-static"),
        ("https://x.test/x", "text/css; charset=utf-8", "stylesheet"),
        ("https://x.test/x", "font/woff2", "font"),
        ("https://x.test/app.js", "application/octet-stream", "script"),
        ("https://x.test/blob", "application/octet-stream", "other-static"),
        ("https://x.test/a.png", "text/html", "non-static"),
        ("https://x.test/data", "application/x-php", "non-static"),
    ],
)
def test_classify(url, ctype, expected):
    assert classify_resource(url, ctype) == expected


def test_extract_links_document_order():
    html = textwrap.dedent("""
        <base href="https://x.test/sub/">
        <link rel="stylesheet" href="s.css"><link rel="canonical" href="/c">
        <img src="a.png" srcset="b.png 1x, https://cdn.x.test/c.png 2x">
        <div style="background: url('d.png')"></div>
        <style>@import "e.css"; .k { background: url(f.png) }</style>
        <a href="page.html#frag">p</a><a href="mailto:x@y">m</a><a href="http://x.test/plain">h</a>
        <script src="data:text/javascript,1"></script>
    """)
    assert extract_links(html, "https://x.test/") == [
        ("resource", "https://x.test/sub/s.css"),
        ("resource", "https://x.test/sub/a.png"),
        ("resource", "https://x.test/sub/b.png"),
        ("resource", "https://cdn.x.test/c.png"),
        ("resource", "https://x.test/sub/d.png"),
        ("resource", "https://x.test/sub/e.css"),
        ("resource", "https://x.test/sub/f.png"),
        ("page", "https://x.test/sub/page.html"),
    ]
    assert css_urls('a{b:url("x.png")} @import \'y.css\';') == ["x.png", "y.css"]


def _fetcher(resolver, ctx):
    return Fetcher(resolver, ctx, timeout=5.0, min_interval=0)


def _paths(cdn):
    return Counter((e.host, e.path) for e in cdn.log())


def test_crawl_fixture_site(fixture_site):
    cdn, resolver, ctx = fixture_site
    res = crawl_site("shop.test", _fetcher(resolver, ctx))
    urls = [u.url for u in res.urls]
    assert urls[0] == "https://shop.test/"
    assert "https://shop.test/img/logo.png" in urls
    assert "https://shop.test/missing.css" not in urls
    assert "https://assets.shop.test/cdn/hero.webp" in urls
    hero = next(u for u in res.urls if u.url.endswith("hero.webp"))
    assert hero.host_fqdn == "assets.shop.test" and hero.resource_class == "image"
    # font and background image come from the stylesheet
    assert {"https://shop.test/fonts/shop.woff2", "https://shop.test/img/bg.png"} <= set(urls)
    seen = _paths(cdn)
    assert max(seen.values()) == 1  # nothing fetched twice despite the link cycle
    assert ("shop.test", "/private/admin.html") not in seen
    assert ("shop.test", "/blog/post2.html") not in seen  # past the depth limit
    assert ("elsewhere.test", "/") not in seen
    assert any("robots.txt disallows" in d for d in res.diagnostics)


def test_crawl_respects_budget_and_depth(fixture_site):
    _, resolver, ctx = fixture_site
    small = crawl_site("shop.test", _fetcher(resolver, ctx), page_budget=3)
    assert small.pages_fetched == 3 and small.truncated
    shallow = crawl_site("shop.test", _fetcher(resolver, ctx), depth_limit=1)
    pages = [u.url for u in shallow.urls if u.resource_class == "non-static"]
    assert "https://shop.test/blog/post1.html" not in pages and len(pages) == 5


def test_crawl_without_robots(fixture_site):
    cdn, resolver, ctx = fixture_site
    crawl_site("shop.test", _fetcher(resolver, ctx), honor_robots=False)
    assert ("shop.test", "/private/admin.html") in _paths(cdn)


def test_static_hash_stable(fixture_site):
    _, resolver, ctx = fixture_site
    a = crawl_site("shop.test", _fetcher(resolver, ctx))
    b = crawl_site("shop.test", _fetcher(resolver, ctx))
    assert [u.body_hash for u in a.urls] == [u.body_hash for u in b.urls]


def test_all_fetches_fail():
    fetcher = Fetcher(Resolver({}, use_system=False), make_tls_context(), timeout=1, min_interval=0)
    res = crawl_site("gone.test", fetcher)
    assert res.urls == [] and "every fetch failed" in res.diagnostics


def test_liveness_and_redirects():
    origins = [
        MockOrigin("up.test").add("/", "<html></html>", "text/html"),
        MockOrigin("down.test").add("/other", "x"),
        MockOrigin("moved.test").add("/", "https://www.moved.test/", status=301),
        MockOrigin("www.moved.test").add("/", "<html>new home</html>", "text/html"),
        MockOrigin("loop.test").add("/", "https://loop.test/", status=302),
    ]
    certs = [mint_certificate([o.host]) for o in origins]
    cdn = spawn_cluster(Allow(), origins, certs)
    try:
        resolver = Resolver({o.host: cdn.edges[0].address_str for o in origins}, use_system=False)
        fetcher = _fetcher(resolver, make_tls_context(cadata=cdn.trust_pem))
        up = check_root_liveness("up.test", fetcher)
        assert up.live and up.status == 200
        down = check_root_liveness("down.test", fetcher)
        assert not down.live and down.status == 404
        gone = check_root_liveness("nowhere.test", fetcher)
        assert not gone.live and gone.failure == "dns"
        moved = check_root_liveness("moved.test", fetcher)
        assert moved.live
        assert fetcher.get("https://moved.test/").url == "https://www.moved.test/"
        loop = check_root_liveness("loop.test", fetcher)
        assert not loop.live and loop.failure == "redirect"
        with pytest.raises(ValueError):
            check_root_liveness("", fetcher)
    finally:
        cdn.stop()


def _du(url, host, cls="script"):
    return DiscoveredUrl(url, host, "application/javascript", "0" * 40, cls)


def test_build_url_sets():
    stable = StableMapping({"assets.example.com": "fastly", "www.example.com": "akamai"}, set())
    js = _du("https://assets.example.com/app.js", "assets.example.com")
    page = _du("https://assets.example.com/", "assets.example.com", "non-static")
    assert build_url_sets([js, page], stable, "fastly") == {js.url}
    assert build_url_sets([js], stable, "akamai") == set()
    with pytest.raises(ValueError):
        build_url_sets([js], StableMapping({}, set()), "fastly")


def test_discovered_url_round_trip():
    u = _du("https://a.test/x.js?v=1", "a.test")
    assert DiscoveredUrl.from_json(u.to_json()) == u


def test_sampling():
    stable = StableMapping({"www.a.com": "c", "img.b.com": "c", "c.com": "c", "www.d.com": "other"}, set())
    live = {"a.com", "b.com", "c.com", "d.com", "zzz.com"}
    assert sample_slds_for_cdn(live, stable, "c", 100) == {"a.com", "b.com", "c.com"}
    assert sample_slds_for_cdn(live, stable, "none", 100) == set()
    assert registrable_domains(["a.b.com", "c.b.com", "com"]) == {"b.com": {"a.b.com", "c.b.com"}}
    with pytest.raises(ValueError):
        sample_slds_for_cdn(live, stable, "c", 0)


def test_sampling_seeds_differ():
    slds = [f"s{i}.com" for i in range(200)]
    stable = StableMapping({f"www.{s}": "c" for s in slds}, set())
    samples = {frozenset(sample_slds_for_cdn(slds, stable, "c", 100, seed=s)) for s in range(5)}
    assert len(samples) == 5


def test_external_fetcher(tmp_path):
    script = tmp_path / "fetch.py"
    script.write_text(textwrap.dedent("""
        import json, sys
        start = sys.argv[1]
        host = start.split("/")[2]
        print(json.dumps({"url": start + "a.js", "host_fqdn": host, "content_type": "application/javascript",
                          "body_hash": "0" * 40, "resource_class": "script"}))
        print(json.dumps({"url": "https://elsewhere.test/b.js", "host_fqdn": host, "content_type": "",
                          "body_hash": "0" * 40, "resource_class": "script"}))
        print("not json")
    """))
    res = ExternalFetcher([sys.executable, str(script)]).crawl("site.test")
    assert [u.url for u in res.urls] == ["https://site.test/a.js"]
    assert len(res.diagnostics) == 2
    failing = ExternalFetcher([sys.executable, "-c", "import sys; sys.exit(3)"]).crawl("site.test")
    assert failing.urls == [] and "exited 3" in failing.diagnostics[0]


def test_crawl_sites_sorted():
    out = crawl_sites(["b.test", "a.test", "b.test"], lambda s: s.upper())
    assert out == ["A.TEST", "B.TEST"]
