"""Domain fronting tester.

A test unit is a tuple (front domain, target domain, target URL) of two
unrelated domains on the same CDN. Three probes are issued:

1. baseline  - resolve target, SNI target, Host target   -> r_t
2. fronted   - resolve front,  SNI front,  Host target   -> r_v
3. control   - resolve front,  SNI front,  Host front    -> r_f

The tuple succeeds when r_t is a 200, r_v carries the same body as r_t, and
the front does not itself serve that body at the same path.
"""

from __future__ import annotations

import enum
import json
import logging
import random
import socket
import ssl
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Protocol
from urllib.parse import urlsplit

from .mockcdn import sans_from_der
from .names import normalize, san_matches
from .net import DEFAULT_TIMEOUT, Pacer, Resolver, ResolutionError, hash_body, https_get
from .psl import SuffixRules, try_effective_sld

logger = logging.getLogger(__name__)

ETHICS_REQUEST_CAP = 4000
PROBES_PER_TUPLE = 3


class BudgetExhausted(RuntimeError):
    pass


@dataclass
class RequestBudget:
    per_cdn_cap: int = ETHICS_REQUEST_CAP
    spent: int = 0

    def charge(self) -> None:
        if self.spent >= self.per_cdn_cap:
            raise BudgetExhausted(f"request budget of {self.per_cdn_cap} spent")
        self.spent += 1

    @property
    def remaining(self) -> int:
        return self.per_cdn_cap - self.spent


@dataclass(frozen=True)
class TestTuple:
    front_domain: str
    target_domain: str
    target_url: str
    cdn: str = ""

    __test__ = False  # not a pytest class

    def __post_init__(self) -> None:
        object.__setattr__(self, "front_domain", normalize(self.front_domain))
        object.__setattr__(self, "target_domain", normalize(self.target_domain))
        if self.front_domain == self.target_domain:
            raise ValueError("front and target domain must differ")
        parts = urlsplit(self.target_url)
        if parts.scheme != "https" or normalize(parts.hostname or "") != normalize(self.target_domain):
            raise ValueError(f"{self.target_url} is not an https URL on {self.target_domain}")

    @property
    def path(self) -> str:
        parts = urlsplit(self.target_url)
        return (parts.path or "/") + (f"?{parts.query}" if parts.query else "")


@dataclass(frozen=True)
class ProbeResult:
    transport: str  # ok | tls_error | conn_error | timeout
    status: int | None = None
    body_hash: str | None = None
    body_length: int | None = None
    served_by: str | None = None
    error: str | None = None

    @property
    def has_body(self) -> bool:
        return self.transport == "ok" and self.status == 200 and bool(self.body_length)


class Verdict(str, enum.Enum):
    SUCCESS = "Success"
    FAIL_BASELINE = "FailBaseline"
    FAIL_FRONT_BLOCKED = "FailFrontBlocked"
    INVALID_SHARED_RESOURCE = "InvalidSharedResource"
    SKIPPED_RELATED = "SkippedRelated"


@dataclass(frozen=True)
class TupleOutcome:
    tuple: TestTuple
    r_t: ProbeResult | None
    r_v: ProbeResult | None
    r_f: ProbeResult | None
    verdict: Verdict
    note: str | None = None

    @property
    def requests(self) -> int:
        return sum(r is not None for r in (self.r_t, self.r_v, self.r_f))

    def to_json(self) -> str:
        rec = {
            "cdn": self.tuple.cdn,
            "front_domain": self.tuple.front_domain,
            "target_domain": self.tuple.target_domain,
            "target_url": self.tuple.target_url,
            "r_t": asdict(self.r_t) if self.r_t else None,
            "r_v": asdict(self.r_v) if self.r_v else None,
            "r_f": asdict(self.r_f) if self.r_f else None,
            "verdict": self.verdict.value,
            "note": self.note,
        }
        return json.dumps(rec, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "TupleOutcome":
        rec = json.loads(line)
        probe = lambda r: ProbeResult(**r) if r else None  # noqa: E731
        return cls(
            TestTuple(rec["front_domain"], rec["target_domain"], rec["target_url"], rec["cdn"]),
            probe(rec["r_t"]),
            probe(rec["r_v"]),
            probe(rec["r_f"]),
            Verdict(rec["verdict"]),
            rec.get("note"),
        )


# -- tuple generation ---------------------------------------------------------


def generate_tuples(
    domains: Iterable[str],
    urls: Iterable[str],
    domain_cap: int = 25,
    urls_per_domain_cap: int = 10,
    seed: int = 0,
    cdn: str = "",
    suffix_rules: SuffixRules | None = None,
) -> list[TestTuple]:
    """Seeded sample of (front, target, URL) tuples for one CDN.

    Domains that host URLs are sampled first since only they can be targets;
    the rest of the domain cap is filled with front-only domains. Fronts are
    drawn among the sampled domains, preferring a different registrable domain.
    """
    domain_set = {normalize(d) for d in domains}
    by_host: dict[str, list[str]] = {}
    for url in sorted(set(urls)):
        host = normalize(urlsplit(url).hostname or "")
        by_host.setdefault(host, []).append(url)
    domain_set |= set(by_host)
    if len(domain_set) < 2:
        raise ValueError("fronting needs at least two distinct domains")
    if not by_host:
        raise ValueError("no URLs to test")

    rng = random.Random(seed)
    with_urls = sorted(d for d in domain_set if d in by_host)
    without = sorted(d for d in domain_set if d not in by_host)
    rng.shuffle(with_urls)
    rng.shuffle(without)
    sampled = (with_urls + without)[:domain_cap]
    sampled_sorted = sorted(sampled)
    sld = {d: try_effective_sld(d, suffix_rules) or d for d in sampled_sorted}

    tuples: list[TestTuple] = []
    for target in sampled:
        if target not in by_host:
            continue
        candidates = [d for d in sampled_sorted if d != target]
        if not candidates:
            continue
        unrelated = [d for d in candidates if sld[d] != sld[target]]
        pool = unrelated or candidates
        host_urls = by_host[target]
        chosen = rng.sample(host_urls, min(urls_per_domain_cap, len(host_urls)))
        for url in chosen:
            tuples.append(TestTuple(rng.choice(pool), target, url, cdn))
    return tuples


# -- relatedness ----------------------------------------------------------------


class CertSource(Protocol):
    def sans_for(self, name: str) -> list[str] | None:
        """SAN DNS names of the certificate presented for ``name``; None on failure."""


class StaticCertSource:
    def __init__(self, table: Mapping[str, Iterable[str]]):
        self.table = {normalize(k): [normalize(s) for s in v] for k, v in table.items()}

    def sans_for(self, name: str) -> list[str] | None:
        return self.table.get(normalize(name))


class TlsCertSource:
    """Fetch the certificate an endpoint presents for an SNI, via the resolver."""

    def __init__(self, resolver: Resolver, timeout: float = DEFAULT_TIMEOUT):
        self.resolver = resolver
        self.timeout = timeout
        self._cache: dict[str, list[str] | None] = {}

    def sans_for(self, name: str) -> list[str] | None:
        name = normalize(name)
        if name not in self._cache:
            self._cache[name] = self._fetch(name)
        return self._cache[name]

    def _fetch(self, name: str) -> list[str] | None:
        ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_CLIENT)
        ctx.check_hostname = False
        ctx.verify_mode = ssl.CERT_NONE
        try:
            address = self.resolver.resolve(name)
            with socket.create_connection(address, self.timeout) as sock:
                with ctx.wrap_socket(sock, server_hostname=name) as tls:
                    der = tls.getpeercert(binary_form=True)
        except (ResolutionError, OSError, ssl.SSLError) as exc:
            logger.info("certificate fetch for %s failed: %s", name, exc)
            return None
        return sans_from_der(der) if der else None


def are_related(
    front: str,
    target: str,
    cert_source: CertSource | None = None,
    suffix_rules: SuffixRules | None = None,
) -> bool | None:
    """Sibling domains or co-listed in one certificate. None means unknown."""
    front, target = normalize(front), normalize(target)
    sld_f = try_effective_sld(front, suffix_rules)
    if sld_f is not None and sld_f == try_effective_sld(target, suffix_rules):
        return True
    if cert_source is None:
        return False
    unknown = False
    for name in (front, target):
        sans = cert_source.sans_for(name)
        if sans is None:
            unknown = True
            continue
        if any(san_matches(front, s) for s in sans) and any(san_matches(target, s) for s in sans):
            return True
    return None if unknown else False


# -- probing ----------------------------------------------------------------------


@dataclass
class ProbeSettings:
    context: ssl.SSLContext
    timeout: float = DEFAULT_TIMEOUT
    pacer: Pacer | None = field(default_factory=lambda: Pacer(0.5))


def probe(
    url_path_and_query: str,
    resolve_domain: str,
    sni: str,
    host_header: str,
    resolver: Resolver,
    budget: RequestBudget,
    settings: ProbeSettings,
) -> ProbeResult:
    """One GET with independent resolution, SNI and Host. Costs one request."""
    budget.charge()
    res = https_get(
        url_path_and_query, resolve_domain, sni, host_header, resolver,
        settings.context, settings.timeout, settings.pacer,
    )
    if res.transport != "ok":
        return ProbeResult(res.transport, served_by=res.served_by, error=res.error)
    body = res.body or b""
    return ProbeResult("ok", res.status, hash_body(body), len(body), res.served_by)


def evaluate(r_t: ProbeResult, r_v: ProbeResult | None, r_f: ProbeResult | None) -> Verdict:
    if not (r_t.transport == "ok" and r_t.status == 200):
        return Verdict.FAIL_BASELINE
    if r_v is None or not (r_v.transport == "ok" and r_v.status == 200 and r_v.body_hash == r_t.body_hash):
        return Verdict.FAIL_FRONT_BLOCKED
    if r_f is not None and r_f.has_body and r_f.body_hash == r_t.body_hash:
        return Verdict.INVALID_SHARED_RESOURCE
    return Verdict.SUCCESS


def run_test(
    tup: TestTuple,
    resolver: Resolver,
    budget: RequestBudget,
    settings: ProbeSettings,
    cert_source: CertSource | None = None,
    suffix_rules: SuffixRules | None = None,
    preflight: bool = True,
) -> TupleOutcome:
    """Pre-flight relatedness check, then the three probes in order."""
    if preflight:
        related = are_related(tup.front_domain, tup.target_domain, cert_source, suffix_rules)
        if related is not False:
            note = "related" if related else "relatedness unknown"
            return TupleOutcome(tup, None, None, None, Verdict.SKIPPED_RELATED, note)
    path = tup.path
    d_f, d_t = tup.front_domain, tup.target_domain
    r_t = probe(path, d_t, d_t, d_t, resolver, budget, settings)
    if evaluate(r_t, None, None) is Verdict.FAIL_BASELINE:
        return TupleOutcome(tup, r_t, None, None, Verdict.FAIL_BASELINE)
    r_v = probe(path, d_f, d_f, d_t, resolver, budget, settings)
    r_f = probe(path, d_f, d_f, d_f, resolver, budget, settings)
    return TupleOutcome(tup, r_t, r_v, r_f, evaluate(r_t, r_v, r_f))


@dataclass
class CdnRun:
    cdn: str
    outcomes: list[TupleOutcome]
    truncated: bool
    requests_spent: int
    request_cap: int

    def summary(self) -> dict:
        return {
            "cdn": self.cdn,
            "tuples_attempted": len(self.outcomes),
            "truncated": self.truncated,
            "requests_spent": self.requests_spent,
            "request_cap": self.request_cap,
        }


def test_cdn(
    cdn: str,
    tuples: list[TestTuple],
    resolver: Resolver,
    budget: RequestBudget,
    settings: ProbeSettings,
    cert_source: CertSource | None = None,
    suffix_rules: SuffixRules | None = None,
) -> CdnRun:
    """Run tuples in order; a tuple cut short by the budget is discarded."""
    outcomes: list[TupleOutcome] = []
    truncated = False
    for tup in tuples:
        if tup.cdn and tup.cdn != cdn:
            raise ValueError(f"tuple for {tup.cdn} passed to run for {cdn}")
        try:
            outcomes.append(run_test(tup, resolver, budget, settings, cert_source, suffix_rules))
        except BudgetExhausted:
            truncated = True
            logger.warning("%s: request budget of %d exhausted after %d tuples", cdn, budget.per_cdn_cap, len(outcomes))
            break
    return CdnRun(cdn, outcomes, truncated, budget.spent, budget.per_cdn_cap)


test_cdn.__test__ = False  # type: ignore[attr-defined]


def test_cdns(
    plans: Mapping[str, list[TestTuple]],
    resolver: Resolver,
    settings: ProbeSettings,
    request_cap: int = ETHICS_REQUEST_CAP,
    cert_source: CertSource | None = None,
    suffix_rules: SuffixRules | None = None,
    max_workers: int = 4,
) -> list[CdnRun]:
    """CDNs in parallel, each sequential with its own budget. Order follows ``plans``."""
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = [
            pool.submit(test_cdn, cdn, tuples, resolver, RequestBudget(request_cap), settings, cert_source, suffix_rules)
            for cdn, tuples in plans.items()
        ]
        return [f.result() for f in futures]


test_cdns.__test__ = False  # type: ignore[attr-defined]
