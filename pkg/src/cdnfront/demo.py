"""Offline end-to-end run against a mock CDN described by a harness config.

Harness config (TOML)::

    seed = 7
    days = 3                        # days of synthetic DNS log

    [cdn]
    name = "democdn"
    cname_suffix = "democdn-edge.net"
    edges = 4
    policy = "split"                # allow | enforce | split
    enforce_response = "status-421" # or "tls_close"
    enforcing_fraction = 0.5

    [synth]                         # generated sites: siteN.demo + static.siteN.demo
    sites = 8
    pages_per_site = 2
    assets_per_site = 3

    [[origin]]                      # explicit origins, optional
    host = "example-news.demo"
    edge = 0
    [[origin.route]]
    path = "/"
    content_type = "text/html"
    body = "<html>...</html>"       # or file = "relative/path"

    [[cert]]                        # explicit certificates, optional
    sans = ["example-news.demo", "*.example-news.demo"]

    [pacing]
    crawl_interval = 0.0
    probe_interval = 0.0

    [expect]
    prone = true
    partial_enforcement_hint = true
"""

from __future__ import annotations

import datetime as dt
import sys
import tempfile
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import tomli

from .config import PipelineConfig
from .mockcdn import (
    Allow,
    EdgePolicy,
    EnforceSniHostMatch,
    MintedCert,
    MockOrigin,
    SplitProxy,
    mint_certificate,
    spawn_edge,
    trust_bundle,
)
from .pipeline import cmd_discover, cmd_ingest, cmd_report, cmd_test
from .report import emit, load_reports

BUNDLED = ("allow", "enforce", "split")


@dataclass
class HarnessConfig:
    cdn: str
    cname_suffix: str
    policy: EdgePolicy
    n_edges: int
    origins: list[MockOrigin]
    edge_of: dict[str, int]
    certs: list[MintedCert]
    seed: int = 0
    days: int = 3
    crawl_interval: float = 0.0
    probe_interval: float = 0.0
    expect: dict = field(default_factory=dict)


def _policy(section: dict) -> EdgePolicy:
    kind = section.get("policy", "allow")
    response = section.get("enforce_response", "status-421")
    if kind == "allow":
        return Allow()
    if kind == "enforce":
        return EnforceSniHostMatch(response)
    if kind == "split":
        return SplitProxy(float(section.get("enforcing_fraction", 0.5)), response)
    raise ValueError(f"unknown policy {kind!r}")


def _synth_sites(n_sites: int, pages: int, assets: int, n_edges: int):
    """siteN.demo serves HTML; static.siteN.demo serves the assets it references."""
    origins, edge_of, certs = [], {}, []
    kinds = [("img/pic{}.png", "image/png"), ("js/app{}.js", "application/javascript"), ("css/style{}.css", "text/css")]
    for i in range(n_sites):
        site, static = f"site{i}.demo", f"static.site{i}.demo"
        root, cdn_host = MockOrigin(site), MockOrigin(static)
        refs = []
        for j in range(assets):
            pattern, ctype = kinds[j % len(kinds)]
            path = "/" + pattern.format(j)
            cdn_host.add(path, f"asset {j} of {static}\n".encode() * (j + 1), ctype)
            tag = {"image/png": '<img src="{}">', "application/javascript": '<script src="{}"></script>',
                   "text/css": '<link rel="stylesheet" href="{}">'}[ctype]
            refs.append(tag.format(f"https://{static}{path}"))
        root.add("/favicon.ico", f"icon of {site}".encode(), "image/x-icon")
        links = "".join(f'<a href="/page{k}.html">page {k}</a>' for k in range(1, pages + 1))
        body = f"<html><head>{''.join(refs)}</head><body><h1>{site}</h1>{links}" \
               f'<link rel="icon" href="/favicon.ico"></body></html>'
        root.add("/", body, "text/html")
        for k in range(1, pages + 1):
            root.add(f"/page{k}.html", f'<html><body>page {k} <a href="/">home</a></body></html>', "text/html")
        origins += [root, cdn_host]
        edge_of[site] = edge_of[static] = i % n_edges
        certs.append(mint_certificate([site, f"*.{site}"]))
    return origins, edge_of, certs


def parse_harness(text: str, base_dir: Path = Path(".")) -> HarnessConfig:
    data = tomli.loads(text)
    cdn = data.get("cdn", {})
    n_edges = int(cdn.get("edges", 1))
    origins, edge_of, certs = [], {}, []
    synth = data.get("synth")
    if synth:
        origins, edge_of, certs = _synth_sites(
            int(synth.get("sites", 4)), int(synth.get("pages_per_site", 1)), int(synth.get("assets_per_site", 2)), n_edges
        )
    for i, entry in enumerate(data.get("origin", [])):
        origin = MockOrigin(entry["host"].lower())
        for route in entry.get("route", []):
            if "file" in route:
                body = (base_dir / route["file"]).read_bytes()
            else:
                body = route.get("body", "").encode()
            origin.add(route["path"], body, route.get("content_type", "application/octet-stream"), int(route.get("status", 200)))
        origins.append(origin)
        edge_of[origin.host] = int(entry.get("edge", i % n_edges))
    certs += [mint_certificate(c["sans"]) for c in data.get("cert", [])]
    uncovered = [o.host for o in origins if not any(c.covers(o.host) for c in certs)]
    if uncovered:
        certs.append(mint_certificate(uncovered))
    pacing = data.get("pacing", {})
    return HarnessConfig(
        cdn=cdn.get("name", "democdn"),
        cname_suffix=cdn.get("cname_suffix", "democdn-edge.net"),
        policy=_policy(cdn),
        n_edges=n_edges,
        origins=origins,
        edge_of=edge_of,
        certs=certs,
        seed=int(data.get("seed", 0)),
        days=int(data.get("days", 3)),
        crawl_interval=float(pacing.get("crawl_interval", 0.0)),
        probe_interval=float(pacing.get("probe_interval", 0.0)),
        expect=dict(data.get("expect", {})),
    )


def bundled_harness(name: str) -> str:
    return resources.files("cdnfront.data.demos").joinpath(f"{name}.demo").read_text("utf-8")


def dns_log_for(h: HarnessConfig) -> str:
    """Synthetic DNS log: every origin host CNAMEs into the CDN, plus noise."""
    start = dt.date(2023, 3, 20)
    lines = []
    for d in range(h.days):
        day = (start + dt.timedelta(days=d)).isoformat()
        for o in sorted(h.origins, key=lambda o: o.host):
            label = o.host.replace(".", "-")
            edge_name = f"{label}.{h.cname_suffix}"
            lines.append(f"{day}\t{o.host}\tCNAME\t{o.host}\t{edge_name}")
            lines.append(f"{day}\t{o.host}\tA\t{edge_name}\t127.0.0.1")
        lines.append(f"{day}\tmail.unrelated.demo\tCNAME\tmail.unrelated.demo\tmx.elsewhere.demo")
    return "\n".join(lines) + "\n"


def check_expectations(report, expect: dict) -> list[str]:
    problems = []
    for key in ("prone", "partial_enforcement_hint"):
        if key in expect and getattr(report, key) != expect[key]:
            problems.append(f"expected {key}={expect[key]}, got {getattr(report, key)}")
    if "min_success" in expect and report.tuples_success < expect["min_success"]:
        problems.append(f"expected at least {expect['min_success']} successful tuples, got {report.tuples_success}")
    if expect.get("all_success") and report.tuples_success != report.tuples_total - report.tuples_skipped:
        problems.append("expected every attempted tuple to succeed")
    if expect.get("no_success") and report.tuples_success:
        problems.append(f"expected no successful tuples, got {report.tuples_success}")
    return problems


def run_demo(harness_text: str, out_dir: str | None = None, base_dir: Path = Path("."), stream=None) -> int:
    """Run the full pipeline against the mock; 0 when expectations hold."""
    stream = stream or sys.stdout
    h = parse_harness(harness_text, base_dir)
    edges = [spawn_edge(h.policy, h.origins, h.certs, index=i, n_edges=h.n_edges) for i in range(h.n_edges)]
    try:
        with tempfile.TemporaryDirectory(prefix="cdnfront-demo-") as tmp:
            work = Path(out_dir) if out_dir else Path(tmp)
            work.mkdir(parents=True, exist_ok=True)
            (work / "catalog.txt").write_text(f"{h.cdn}: {h.cname_suffix}\n", encoding="utf-8")
            (work / "dns.tsv").write_text(dns_log_for(h), encoding="utf-8")
            cfg = PipelineConfig(
                catalog=str(work / "catalog.txt"),
                dns_logs=[str(work / "dns.tsv")],
                seed=h.seed,
                out_dir=str(work / "artifacts"),
                resolver={o.host: edges[h.edge_of[o.host]].address_str for o in h.origins},
                use_system_dns=False,
            )
            cfg.crawl.min_interval = h.crawl_interval
            cfg.probe.min_interval = h.probe_interval
            cfg.probe.timeout = cfg.crawl.timeout = 5.0
            cfg.probe.ca_pem = trust_bundle(h.certs)
            cfg.validate()
            for stage in (cmd_ingest, cmd_discover, cmd_test, cmd_report):
                stage(cfg)
            reports = load_reports((cfg.out / "report.jsonl").read_text("utf-8"))
            stream.write(emit(reports, "table").decode())
            mine = [r for r in reports if r.cdn == h.cdn]
            if not mine:
                stream.write(f"FAIL: no report for {h.cdn}\n")
                return 1
            problems = check_expectations(mine[0], h.expect)
            for p in problems:
                stream.write(f"FAIL: {p}\n")
            if not problems:
                stream.write(f"OK: {h.cdn} prone={mine[0].prone} hint={mine[0].partial_enforcement_hint}\n")
            return 1 if problems else 0
    finally:
        for edge in edges:
            edge.stop()
