"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line that is printed in the pytest terminal
summary (and to stdout with ``-s``).
"""

from __future__ import annotations

import datetime as dt
import io
import itertools
import random
import time
from contextlib import contextmanager

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdnfront.catalog import Catalog
from cdnfront.cli import main as cli_main
from cdnfront.discovery import Fetcher, build_url_sets, crawl_site, sample_slds_for_cdn
from cdnfront.enrichment import (
    RankingTable,
    StubReputationClient,
    VerdictCache,
    band_histogram,
    check_reputation,
)
from cdnfront.ingest import StableMapping, extract_mappings, filter_stable, parse_dns_log
from cdnfront.mockcdn import Allow, EnforceSniHostMatch, SplitProxy
from cdnfront.report import aggregate
from cdnfront.tester import (
    ProbeResult,
    RequestBudget,
    TestTuple,
    TlsCertSource,
    Verdict,
    evaluate,
    generate_tuples,
    test_cdn as run_cdn,
)
from conftest import ACCEPTANCE_RESULTS
from mockworld import build_world, domain_name

pytestmark = pytest.mark.acceptance


@contextmanager
def criterion(n: int, text: str):
    ok = False
    start = time.monotonic()
    try:
        yield
        ok = True
    finally:
        elapsed = time.monotonic() - start
        ACCEPTANCE_RESULTS[n] = (ok, f"{text} ({elapsed:.2f}s)")
        print(f"{'PASS' if ok else 'FAIL'} criterion {n}: {text} ({elapsed:.2f}s)")


# -- 1. verdict truth table ------------------------------------------------------

H1 = "a" * 40
H2 = "b" * 40
VARIANTS = {
    "h1": ProbeResult("ok", 200, H1, 10),
    "h2": ProbeResult("ok", 200, H2, 10),
    "404": ProbeResult("ok", 404, "c" * 40, 9),
    "err": ProbeResult("tls_error", error="handshake failed"),
}


def reference_verdict(t: str, v: str, f: str) -> Verdict:
    """Hand-derived: baseline must be a 200 body, the fronted response must be
    that same body, and the control must not also serve it."""
    if t not in ("h1", "h2"):
        return Verdict.FAIL_BASELINE
    if v != t:
        return Verdict.FAIL_FRONT_BLOCKED
    if f == t:
        return Verdict.INVALID_SHARED_RESOURCE
    return Verdict.SUCCESS


def test_criterion_01_verdict_truth_table():
    with criterion(1, "evaluate() matches the hand-derived mapping on all 64 cases, <1 s"):
        start = time.monotonic()
        cases = list(itertools.product(VARIANTS, repeat=3))
        assert len(cases) == 64
        mismatches = [
            (t, v, f)
            for t, v, f in cases
            if evaluate(VARIANTS[t], VARIANTS[v], VARIANTS[f]) is not reference_verdict(t, v, f)
        ]
        assert mismatches == []
        counts = {}
        for t, v, f in cases:
            verdict = evaluate(VARIANTS[t], VARIANTS[v], VARIANTS[f])
            counts[verdict] = counts.get(verdict, 0) + 1
        # frozen from enumerating the table by hand
        assert counts == {
            Verdict.FAIL_BASELINE: 32,
            Verdict.FAIL_FRONT_BLOCKED: 24,
            Verdict.INVALID_SHARED_RESOURCE: 2,
            Verdict.SUCCESS: 6,
        }
        assert time.monotonic() - start < 1.0


# -- 2/3. soundness and completeness ---------------------------------------------


def _run_policy(policy, n_domains=30, urls_per_domain=2, seed=11):
    world = build_world(policy, n_domains, urls_per_domain=urls_per_domain)
    try:
        tuples = generate_tuples(world.domains, world.all_urls, 25, 10, seed=seed, cdn="mock")
        run = run_cdn("mock", tuples, world.resolver, RequestBudget(), world.settings, TlsCertSource(world.resolver, 5.0))
        return tuples, run
    finally:
        world.stop()


def test_criterion_02_soundness_enforce():
    with criterion(2, "Enforce mock: 0 Success over >=50 tuples (status-421 and tls_close), <30 s"):
        start = time.monotonic()
        for response in ("status-421", "tls_close"):
            tuples, run = _run_policy(EnforceSniHostMatch(response))
            assert len(run.outcomes) == len(tuples) >= 50
            assert not run.truncated
            assert sum(o.verdict is Verdict.SUCCESS for o in run.outcomes) == 0
            assert {o.verdict for o in run.outcomes} == {Verdict.FAIL_FRONT_BLOCKED}
        assert time.monotonic() - start < 30


def test_criterion_03_completeness_allow():
    with criterion(3, "Allow mock with disjoint bodies: 100% Success over >=50 tuples, <30 s"):
        start = time.monotonic()
        tuples, run = _run_policy(Allow())
        assert len(run.outcomes) == len(tuples) >= 50
        assert all(o.verdict is Verdict.SUCCESS for o in run.outcomes)
        assert time.monotonic() - start < 30


# -- 4. partial enforcement -------------------------------------------------------


def test_criterion_04_partial_enforcement():
    with criterion(4, "SplitProxy(0.5), 4 edges, 24 tuples: prone, mixed verdicts, hint, <60 s"):
        start = time.monotonic()
        world = build_world(SplitProxy(0.5, "status-421"), 8, n_edges=4, urls_per_domain=3)
        try:
            assert [e.enforcing for e in world.cdn.edges] == [False, False, True, True]
            tuples = generate_tuples(world.domains, world.all_urls, 25, 10, seed=3, cdn="split")
            assert len(tuples) == 24
            run = run_cdn("split", tuples, world.resolver, RequestBudget(), world.settings,
                          TlsCertSource(world.resolver, 5.0))
        finally:
            world.stop()
        verdicts = {o.verdict for o in run.outcomes}
        assert Verdict.SUCCESS in verdicts and Verdict.FAIL_FRONT_BLOCKED in verdicts
        # a front on an allowing edge succeeds, on an enforcing edge it is blocked
        for o in run.outcomes:
            front_enforces = world.edge_of[o.tuple.front_domain] >= 2
            assert o.verdict is (Verdict.FAIL_FRONT_BLOCKED if front_enforces else Verdict.SUCCESS)
        (report,) = aggregate(run.outcomes, runs=[run])
        assert report.prone is True
        assert report.partial_enforcement_hint is True
        assert time.monotonic() - start < 60


# -- 5. tuple validation ----------------------------------------------------------

SIBLING_PAIRS = [("a.sib0.test", "b.sib0.test"), ("www.sib1.test", "api.sib1.test"), ("sib2.test", "cdn.sib2.test")]
SHARED_SAN_PAIRS = [("a.example-1.com", "b.example-2.net"), ("www.brand-x.test", "www.brand-y.test")]
SHARED_CERTS = [["*.example-1.com", "*.example-2.net"], ["www.brand-x.test", "www.brand-y.test"]]


def test_criterion_05_related_pairs_skipped_unprobed():
    with criterion(5, "3 sibling + 2 shared-SAN pairs of 10 are SkippedRelated and never probed"):
        unrelated = [(domain_name(i), domain_name(i + 5)) for i in range(5)]
        pairs = SIBLING_PAIRS + SHARED_SAN_PAIRS + unrelated
        related = set(SIBLING_PAIRS + SHARED_SAN_PAIRS)
        domains = [d for pair in pairs for d in pair]
        world = build_world(Allow(), domains, extra_certs=SHARED_CERTS)
        try:
            tuples = [TestTuple(f, t, world.urls[t][0], "mock") for f, t in pairs]
            run = run_cdn("mock", tuples, world.resolver, RequestBudget(), world.settings,
                          TlsCertSource(world.resolver, 5.0))
            log = world.cdn.log()
        finally:
            world.stop()
        skipped = {(o.tuple.front_domain, o.tuple.target_domain) for o in run.outcomes if o.verdict is Verdict.SKIPPED_RELATED}
        assert skipped == related
        assert all(o.requests == 0 for o in run.outcomes if o.verdict is Verdict.SKIPPED_RELATED)
        related_names = {d for pair in related for d in pair}
        assert not [e for e in log if e.sni in related_names or e.host in related_names]
        assert len(log) == 3 * len(unrelated)


# -- 6. budget --------------------------------------------------------------------


def test_criterion_06_budget_truncates():
    with criterion(6, "cap 7 with 5 three-probe tuples: <=7 logged requests and truncation"):
        world = build_world(Allow(), 6)
        try:
            tuples = generate_tuples(world.domains, world.all_urls, seed=5, cdn="mock")[:5]
            assert len(tuples) == 5
            run = run_cdn("mock", tuples, world.resolver, RequestBudget(7), world.settings)
            log = world.cdn.log()
        finally:
            world.stop()
        assert len(log) <= 7
        assert run.truncated is True
        assert run.requests_spent == 7
        assert len(run.outcomes) == 2


# -- 7. DNS pipeline oracle ------------------------------------------------------


def _ground_truth_log(n_fqdns=10_000, n_dual=36, n_cdns=5, days=3, seed=7):
    rng = random.Random(seed)
    cdns = [f"cdn{k}" for k in range(n_cdns)]
    suffix = {c: f"{c}-edge.net" for c in cdns}
    truth = {f"www{i}.site{i // 2}.com": cdns[i % n_cdns] for i in range(n_fqdns)}
    dual = set(rng.sample(sorted(truth), n_dual))
    start = dt.date(2023, 3, 20)
    lines = []
    for fqdn, cdn in truth.items():
        label = fqdn.replace(".", "-")
        for d in range(days):
            day = (start + dt.timedelta(days=d)).isoformat()
            serving = cdn
            if fqdn in dual and d == days - 1:
                serving = cdns[(cdns.index(cdn) + 1) % n_cdns]
            edge = f"{label}.{suffix[serving]}"
            lines.append(f"{day}\t{fqdn}\tCNAME\t{fqdn}\t{edge}")
            lines.append(f"{day}\t{fqdn}\tA\t{edge}\t192.0.2.{d + 1}")
    lines.append(f"{start.isoformat()}\tmail.other.org\tCNAME\tmail.other.org\tmx.hosting.example")
    rng.shuffle(lines)
    catalog = Catalog.from_mapping({c: [s] for c, s in suffix.items()})
    window = (start, start + dt.timedelta(days=days - 1))
    return "\n".join(lines) + "\n", catalog, truth, dual, window


def test_criterion_07_dns_oracle_equivalence():
    with criterion(7, "10,000 FQDNs / 5 CDNs / 36 dual: ground truth reproduced, ratio 0.9964, <10 s"):
        text, catalog, truth, dual, window = _ground_truth_log()
        start = time.monotonic()
        mapping = extract_mappings(parse_dns_log(io.BytesIO(text.encode())), catalog, window)
        stable = filter_stable(mapping)
        elapsed = time.monotonic() - start
        assert len(mapping) == 10_000
        assert stable.unstable == dual
        assert stable.stable == {f: c for f, c in truth.items() if f not in dual}
        assert len(stable.stable) == 9964
        assert stable.stability_ratio == 0.9964
        assert elapsed < 10


# -- 8. crawler ------------------------------------------------------------------

CDN_URLS = {"https://assets.shop.test/cdn/hero.webp", "https://assets.shop.test/cdn/widget.js"}


def test_criterion_08_crawler(fixture_site):
    with criterion(8, "fixture site: the CDN URL set is exactly the 2 CDN-hosted assets; URL logs byte-identical"):
        _, resolver, ctx = fixture_site
        logs, results = [], []
        for _ in range(2):
            fetcher = Fetcher(resolver, ctx, timeout=5.0, min_interval=0)
            res = crawl_site("shop.test", fetcher, page_budget=20, depth_limit=2)
            results.append(res)
            logs.append(res.to_jsonl().encode())
        assert logs[0] == logs[1]
        res = results[0]
        assert res.pages_fetched == 6 and not res.truncated
        static = [u for u in res.urls if u.resource_class != "non-static"]
        assert len(static) == 12
        stable = StableMapping({"assets.shop.test": "fixturecdn", "shop.test": "othercdn"}, set())
        assert build_url_sets(res.urls, stable, "fixturecdn") == CDN_URLS


# -- 9. sampling caps -------------------------------------------------------------


def test_criterion_09_sampling_caps():
    with criterion(9, "200 SLDs / 40 domains / 30 URLs each: caps 100/25/10 exact and seed-reproducible"):
        slds = [f"site{i}.com" for i in range(200)]
        stable = StableMapping({f"www.{s}": "cdnx" for s in slds}, set())
        picks = [sample_slds_for_cdn(slds, stable, "cdnx", 100, seed=42) for _ in range(2)]
        assert len(picks[0]) == 100 and picks[0] == picks[1]
        assert sample_slds_for_cdn(slds, stable, "cdnx", 100, seed=43) != picks[0]

        domains = [f"www.dom{i}.com" for i in range(40)]
        urls = [f"https://{d}/file{k}.js" for d in domains for k in range(30)]
        runs = [generate_tuples(domains, urls, 25, 10, seed=9, cdn="cdnx") for _ in range(2)]
        assert runs[0] == runs[1]
        tuples = runs[0]
        referenced = {t.target_domain for t in tuples} | {t.front_domain for t in tuples}
        assert len(referenced) == 25
        per_target: dict[str, set[str]] = {}
        for t in tuples:
            per_target.setdefault(t.target_domain, set()).add(t.target_url)
        assert len(per_target) == 25
        assert all(len(u) == 10 for u in per_target.values())
        assert generate_tuples(domains, urls, 25, 10, seed=10, cdn="cdnx") != tuples


# -- 10. enrichment ---------------------------------------------------------------

_labels = st.from_regex(r"[a-z][a-z0-9]{0,6}", fullmatch=True)


@st.composite
def histogram_inputs(draw):
    slds = draw(st.lists(_labels.map(lambda s: f"{s}.com"), min_size=1, max_size=15, unique=True))
    fqdns = draw(st.lists(st.tuples(_labels, st.sampled_from(slds)), max_size=40).map(
        lambda pairs: [f"{h}.{s}" for h, s in pairs]))
    fqdns = sorted(set(fqdns) | set(slds))
    cdns = draw(st.lists(st.sampled_from(["a", "b", "c", "d"]), min_size=len(fqdns), max_size=len(fqdns)))
    ranked = draw(st.lists(st.sampled_from(fqdns), unique=True))
    ranks = draw(st.lists(st.integers(1, 3_000_000), min_size=len(ranked), max_size=len(ranked), unique=True))
    bands = sorted(draw(st.sets(st.integers(1, 2_000_000), min_size=1, max_size=5)))
    return dict(zip(fqdns, cdns)), RankingTable(dict(zip(ranked, ranks)), "fixture"), bands


@settings(max_examples=1000, deadline=None)
@given(histogram_inputs(), st.sampled_from(["sld", "fqdn"]))
def _band_conservation(data, use):
    domains, table, bands = data
    hist = band_histogram(domains, table, bands, use=use)
    expected: dict[str, int] = {}
    for cdn in domains.values():
        expected[cdn] = expected.get(cdn, 0) + 1
    assert {cdn: sum(row.values()) for cdn, row in hist.items()} == expected


def test_criterion_10_enrichment():
    with criterion(10, "band_histogram conserves counts on 1,000 random fixtures; threshold-2 flags exact"):
        _band_conservation()
        flags = {f"host{i}.example.org": i % 6 for i in range(60)}
        client = StubReputationClient(flags)
        cache = VerdictCache()
        verdicts = [check_reputation(d, client, cache, now=1_700_000_000.0) for d in sorted(flags)]
        assert [v.vendor_flags for v in verdicts] == [flags[d] for d in sorted(flags)]
        flagged = {v.domain for v in verdicts if v.is_malicious(2)}
        assert flagged == {d for d, n in flags.items() if n >= 2}
        assert len(flagged) == 40
        assert client.calls == 60


# -- 11. end-to-end demo ----------------------------------------------------------


def test_criterion_11_demo(capsys):
    with criterion(11, "demo allow/enforce/split exits 0 with expected verdicts, offline, <3 min"):
        start = time.monotonic()
        status = cli_main(["demo"])
        out = capsys.readouterr().out
        assert status == 0, out
        assert "OK: democdn prone=True hint=False" in out
        assert "OK: democdn prone=False hint=False" in out
        assert "OK: democdn prone=True hint=True" in out
        assert "FAIL" not in out
        assert time.monotonic() - start < 180
