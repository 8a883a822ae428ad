"""Finding live sites and the static objects they load from CDN-served hosts.

The crawler is static: it fetches HTML, pulls subresource and link URLs
out of the markup (and ``url()`` references out of CSS), and fetches each
candidate once. Sites that need JavaScript can be handled by an external
fetcher process that prints the same line-JSON URL log.
"""

from __future__ import annotations

import json
import logging
import random
import re
import ssl
import subprocess
import threading
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from html.parser import HTMLParser
from typing import Iterable, Sequence
from urllib.parse import urldefrag, urljoin, urlsplit
from urllib.robotparser import RobotFileParser

from .ingest import StableMapping
from .names import normalize
from .net import USER_AGENT, FetchResult, Pacer, Resolver, hash_body, https_get
from .psl import SuffixRules, try_effective_sld

logger = logging.getLogger(__name__)

STATIC_CLASSES = ("image", "script", "stylesheet", "font", "other-static")
MAX_REDIRECTS = 5

_EXTENSIONS = {
    "image": (".png", ".jpg", ".jpeg", ".gif", ".webp", ".svg", ".ico", ".bmp", ".avif", ".tif", ".tiff"),
    "script": (".js", ".mjs"),
    "stylesheet": (".css",),
    "font": (".woff", ".woff2", ".ttf", ".otf", ".eot"),
    "other-static": (".json", ".xml", ".txt", ".pdf", ".mp4", ".webm", ".mp3", ".ogg", ".wasm", ".map", ".zip"),
}
_SCRIPT_TYPES = {"application/javascript", "text/javascript", "application/x-javascript", "application/ecmascript", "text/ecmascript", "module"}
_FONT_TYPES = {"application/font-woff", "application/x-font-ttf", "application/vnd.ms-fontobject", "application/x-font-woff"}
_OTHER_STATIC = {"application/json", "application/xml", "text/xml", "text/plain", "application/pdf", "application/wasm", "application/octet-stream"}


def classify_resource(url: str, content_type: str | None) -> str:
    """image / script / stylesheet / font / other-static / non-static."""
    media = (content_type or "").split(";")[0].strip().lower()
    if media:
        if media in ("text/html", "application/xhtml+xml"):
            return "non-static"
        if media.startswith("image/"):
            return "image"
        if media in _SCRIPT_TYPES:
            return "script"
        if media == "text/css":
            return "stylesheet"
        if media.startswith("font/") or media in _FONT_TYPES:
            return "font"
        if media.startswith(("video/", "audio/")) or media in _OTHER_STATIC:
            pass  # generic types: let the extension refine them below
        else:
            return "non-static"
    path = urlsplit(url).path.lower()
    for cls, exts in _EXTENSIONS.items():
        if path.endswith(exts):
            return cls
    if media.startswith(("video/", "audio/")) or media in _OTHER_STATIC:
        return "other-static"
    return "non-static"


@dataclass(frozen=True)
class DiscoveredUrl:
    url: str
    host_fqdn: str
    content_type: str
    body_hash: str
    resource_class: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "DiscoveredUrl":
        rec = json.loads(line)
        return cls(rec["url"], rec["host_fqdn"], rec.get("content_type", ""), rec.get("body_hash", ""), rec["resource_class"])


@dataclass(frozen=True)
class SiteLiveness:
    sld: str
    status: int | None
    live: bool
    failure: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class Response:
    url: str  # final URL after redirects
    status: int | None
    content_type: str
    body: bytes
    failure: str | None = None  # dns | tls | conn | timeout | redirect


def _failure_class(res: FetchResult) -> str:
    if res.error and res.error.startswith("dns:"):
        return "dns"
    return {"tls_error": "tls", "timeout": "timeout"}.get(res.transport, "conn")


class Fetcher:
    """HTTPS GETs with SNI = Host = URL host, redirects, per-host politeness."""

    def __init__(
        self,
        resolver: Resolver,
        context: ssl.SSLContext,
        timeout: float = 15.0,
        min_interval: float = 0.2,
        max_in_flight: int = 2,
    ):
        self.resolver = resolver
        self.context = context
        self.timeout = timeout
        self.pacer = Pacer(min_interval)
        self.max_in_flight = max_in_flight
        self._slots: dict[str, threading.BoundedSemaphore] = {}
        self._lock = threading.Lock()
        self.requests = 0

    def _slot(self, host: str) -> threading.BoundedSemaphore:
        with self._lock:
            if host not in self._slots:
                self._slots[host] = threading.BoundedSemaphore(self.max_in_flight)
            return self._slots[host]

    def _once(self, url: str) -> FetchResult:
        parts = urlsplit(url)
        host = normalize(parts.hostname or "")
        path = (parts.path or "/") + (f"?{parts.query}" if parts.query else "")
        with self._slot(host):
            self.pacer.wait(host)
            with self._lock:
                self.requests += 1
            return https_get(path, host, host, host, self.resolver, self.context, self.timeout)

    def get(self, url: str) -> Response:
        for _ in range(MAX_REDIRECTS + 1):
            res = self._once(url)
            if res.transport != "ok":
                return Response(url, None, "", b"", _failure_class(res))
            if res.status in (301, 302, 303, 307, 308) and res.headers.get("location"):
                nxt = urljoin(url, res.headers["location"])
                if urlsplit(nxt).scheme != "https":
                    return Response(url, res.status, "", b"", "redirect")
                url = nxt
                continue
            return Response(url, res.status, res.headers.get("content-type", ""), res.body or b"")
        return Response(url, None, "", b"", "redirect")


def check_root_liveness(sld: str, fetcher: Fetcher) -> SiteLiveness:
    if not sld:
        raise ValueError("empty domain")
    res = fetcher.get(f"https://{normalize(sld)}/")
    return SiteLiveness(normalize(sld), res.status, res.status == 200, res.failure)


# -- markup extraction ------------------------------------------------------------

_CSS_URL = re.compile(r"""url\(\s*(['"]?)([^'")\s]+)\1\s*\)|@import\s+(['"])([^'"]+)\3""", re.I)
_PAGE_TAGS = {"a": "href", "area": "href", "iframe": "src", "frame": "src"}
_RESOURCE_ATTRS = {
    "img": ("src", "srcset"),
    "source": ("src", "srcset"),
    "script": ("src",),
    "video": ("src", "poster"),
    "audio": ("src",),
    "track": ("src",),
    "embed": ("src",),
    "object": ("data",),
    "input": ("src",),
}
_SKIP_LINK_RELS = {"canonical", "alternate", "next", "prev", "author", "help", "license", "search", "bookmark", "dns-prefetch", "preconnect"}


def css_urls(text: str) -> list[str]:
    return [m.group(2) or m.group(4) for m in _CSS_URL.finditer(text)]


def _srcset(value: str) -> list[str]:
    return [part.strip().split()[0] for part in value.split(",") if part.strip()]


class _LinkExtractor(HTMLParser):
    """Collects ("page" | "resource", raw URL) in document order."""

    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.found: list[tuple[str, str]] = []
        self.base: str | None = None
        self._in_style = False

    def handle_starttag(self, tag, attrs):
        a = {k.lower(): (v or "") for k, v in attrs}
        if tag == "base" and a.get("href") and self.base is None:
            self.base = a["href"]
        if tag in _PAGE_TAGS and a.get(_PAGE_TAGS[tag]):
            self.found.append(("page", a[_PAGE_TAGS[tag]]))
        if tag == "link" and a.get("href"):
            rels = set(a.get("rel", "").lower().split())
            if not rels & _SKIP_LINK_RELS:
                self.found.append(("resource", a["href"]))
        for attr in _RESOURCE_ATTRS.get(tag, ()):
            value = a.get(attr)
            if not value:
                continue
            if attr == "srcset":
                self.found.extend(("resource", u) for u in _srcset(value))
            else:
                self.found.append(("resource", value))
        if a.get("style"):
            self.found.extend(("resource", u) for u in css_urls(a["style"]))
        if tag == "style":
            self._in_style = True

    def handle_endtag(self, tag):
        if tag == "style":
            self._in_style = False

    def handle_data(self, data):
        if self._in_style:
            self.found.extend(("resource", u) for u in css_urls(data))


def extract_links(html: str, page_url: str) -> list[tuple[str, str]]:
    """Absolute https (kind, url) pairs from a page, in document order."""
    parser = _LinkExtractor()
    parser.feed(html)
    parser.close()
    base = urljoin(page_url, parser.base) if parser.base else page_url
    out = []
    for kind, raw in parser.found:
        raw = raw.strip()
        if not raw or raw.startswith(("data:", "javascript:", "mailto:", "tel:", "#", "blob:")):
            continue
        url = urldefrag(urljoin(base, raw))[0]
        if urlsplit(url).scheme == "https":
            out.append((kind, url))
    return out


# -- crawling -------------------------------------------------------------------


@dataclass
class CrawlResult:
    sld: str
    urls: list[DiscoveredUrl] = field(default_factory=list)
    pages_fetched: int = 0
    truncated: bool = False
    diagnostics: list[str] = field(default_factory=list)

    def to_jsonl(self) -> str:
        return "".join(u.to_json() + "\n" for u in self.urls)


class _Robots:
    def __init__(self, fetcher: Fetcher):
        self.fetcher = fetcher
        self._by_host: dict[str, RobotFileParser | None] = {}

    def allowed(self, url: str) -> bool:
        host = normalize(urlsplit(url).hostname or "")
        if host not in self._by_host:
            res = self.fetcher.get(f"https://{host}/robots.txt")
            parser = None
            if res.status == 200:
                parser = RobotFileParser()
                parser.parse(res.body.decode("utf-8", "replace").splitlines())
            self._by_host[host] = parser
        parser = self._by_host[host]
        return parser is None or parser.can_fetch(USER_AGENT, url)


def crawl_site(
    sld: str,
    fetcher: Fetcher,
    page_budget: int = 20,
    depth_limit: int = 2,
    honor_robots: bool = True,
    suffix_rules: SuffixRules | None = None,
    max_resources: int = 2000,
) -> CrawlResult:
    """Breadth-first static crawl starting at ``https://sld/``.

    Pages are followed only within the site's registrable domain; every
    referenced subresource is fetched once wherever it is hosted. A
    DiscoveredUrl is recorded for each 200 response.
    """
    sld = normalize(sld)
    site = try_effective_sld(sld, suffix_rules) or sld
    result = CrawlResult(sld)
    robots = _Robots(fetcher) if honor_robots else None
    seen: set[str] = set()
    failures = 0
    attempts = 0
    start = f"https://{sld}/"
    queue: deque[tuple[str, int]] = deque([(start, 0)])
    seen.add(start)

    def record(res: Response) -> None:
        host = normalize(urlsplit(res.url).hostname or "")
        result.urls.append(
            DiscoveredUrl(res.url, host, res.content_type, hash_body(res.body), classify_resource(res.url, res.content_type))
        )

    def fetch(url: str) -> Response | None:
        nonlocal failures, attempts
        if robots is not None and not robots.allowed(url):
            result.diagnostics.append(f"robots.txt disallows {url}")
            return None
        attempts += 1
        res = fetcher.get(url)
        if res.status is None:
            failures += 1
            result.diagnostics.append(f"{url}: {res.failure} failure")
        return res

    def fetch_resources(urls: list[str]) -> None:
        pending = deque(urls)
        while pending:
            url = pending.popleft()
            if len(seen) >= max_resources:
                result.truncated = True
                return
            res = fetch(url)
            if res is None or res.status != 200:
                continue
            record(res)
            if classify_resource(res.url, res.content_type) == "stylesheet":
                for raw in css_urls(res.body.decode("utf-8", "replace")):
                    nxt = urldefrag(urljoin(res.url, raw))[0]
                    if urlsplit(nxt).scheme == "https" and nxt not in seen:
                        seen.add(nxt)
                        pending.append(nxt)

    while queue:
        url, depth = queue.popleft()
        if result.pages_fetched >= page_budget:
            result.truncated = True
            break
        res = fetch(url)
        if res is None:
            continue
        result.pages_fetched += 1
        if res.status != 200:
            continue
        record(res)
        if "html" not in res.content_type.lower():
            continue
        resources: list[str] = []
        for kind, link in extract_links(res.body.decode("utf-8", "replace"), res.url):
            if link in seen:
                continue
            if kind == "page":
                if depth + 1 > depth_limit:
                    continue
                host = normalize(urlsplit(link).hostname or "")
                if (try_effective_sld(host, suffix_rules) or host) != site:
                    continue
                seen.add(link)
                queue.append((link, depth + 1))
            else:
                seen.add(link)
                resources.append(link)
        fetch_resources(resources)

    if attempts and failures == attempts:
        result.urls.clear()
        result.diagnostics.append("every fetch failed")
    return result


def crawl_sites(
    slds: Iterable[str],
    crawl,
    max_workers: int = 4,
) -> list[CrawlResult]:
    """Crawl sites concurrently; results in sorted-SLD order."""
    ordered = sorted(set(slds))
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(crawl, ordered))


class ExternalFetcher:
    """Delegate crawling to a subprocess (e.g. a headless browser wrapper).

    The command gets the start URL as its last argument and must print one
    DiscoveredUrl JSON object per line on stdout.
    """

    def __init__(self, command: Sequence[str], timeout: float = 300.0):
        self.command = list(command)
        self.timeout = timeout

    def crawl(self, sld: str) -> CrawlResult:
        sld = normalize(sld)
        result = CrawlResult(sld)
        try:
            proc = subprocess.run(
                [*self.command, f"https://{sld}/"], capture_output=True, text=True, timeout=self.timeout, check=False
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            result.diagnostics.append(f"external fetcher failed: {exc}")
            return result
        if proc.returncode != 0:
            result.diagnostics.append(f"external fetcher exited {proc.returncode}: {proc.stderr.strip()[:200]}")
        for line in proc.stdout.splitlines():
            if not line.strip():
                continue
            try:
                item = DiscoveredUrl.from_json(line)
            except (ValueError, KeyError) as exc:
                result.diagnostics.append(f"bad URL log line: {exc}")
                continue
            if urlsplit(item.url).scheme != "https" or normalize(urlsplit(item.url).hostname or "") != item.host_fqdn:
                result.diagnostics.append(f"rejected {item.url}: not https or host mismatch")
                continue
            result.urls.append(item)
        return result


# -- URL sets ---------------------------------------------------------------------


def build_url_sets(discovered: Iterable[DiscoveredUrl], stable_map: StableMapping, cdn: str) -> set[str]:
    """Static URLs whose host is stably served by ``cdn``."""
    if not stable_map.stable:
        raise ValueError("empty stable mapping")
    return {
        d.url
        for d in discovered
        if d.resource_class in STATIC_CLASSES
        and urlsplit(d.url).scheme == "https"
        and stable_map.stable.get(d.host_fqdn) == cdn
    }


def registrable_domains(fqdns: Iterable[str], suffix_rules: SuffixRules | None = None) -> dict[str, set[str]]:
    """Registrable domain -> the FQDNs under it."""
    out: dict[str, set[str]] = {}
    for fqdn in fqdns:
        sld = try_effective_sld(fqdn, suffix_rules)
        if sld is not None:
            out.setdefault(sld, set()).add(fqdn)
    return out


def sample_slds_for_cdn(
    live_slds: Iterable[str],
    stable_map: StableMapping,
    cdn: str,
    cap: int = 100,
    seed: int = 0,
    suffix_rules: SuffixRules | None = None,
) -> set[str]:
    """Up to ``cap`` live registrable domains with at least one FQDN on ``cdn``."""
    if cap < 1:
        raise ValueError("cap must be >= 1")
    on_cdn = registrable_domains(stable_map.domains_for(cdn), suffix_rules)
    eligible = sorted(set(live_slds) & set(on_cdn))
    if not eligible:
        logger.warning("no live registrable domains for %s", cdn)
        return set()
    return set(random.Random(seed).sample(eligible, min(cap, len(eligible))))
