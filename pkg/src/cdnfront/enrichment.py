"""Popularity ranks and reputation flags for CDN-served domains."""

from __future__ import annotations

import csv
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Protocol

import requests

from .names import normalize
from .psl import SuffixRules, try_effective_sld

logger = logging.getLogger(__name__)

DEFAULT_BANDS = (10_000, 100_000, 500_000, 1_000_000)
UNRANKED = "unranked"
MALICIOUS_THRESHOLD = 2


class RankingError(ValueError):
    pass


@dataclass(frozen=True)
class RankingTable:
    ranks: Mapping[str, int]
    provenance: str = "<memory>"

    def __len__(self) -> int:
        return len(self.ranks)

    def get(self, domain: str) -> int | None:
        return self.ranks.get(normalize(domain))


def load_ranking(path: str | os.PathLike[str], max_bad_ratio: float = 0.01) -> RankingTable:
    """Read a ``rank,domain`` CSV (Tranco style). A header row is skipped."""
    ranks: dict[str, int] = {}
    rows = bad = dupes = 0
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip():
                continue
            if lineno == 1 and row and not row[0].strip().isdigit():
                continue  # header
            rows += 1
            try:
                rank = int(row[0])
                domain = normalize(row[1])
                if rank < 1 or not domain:
                    raise ValueError
            except (ValueError, IndexError):
                bad += 1
                continue
            if domain in ranks:
                dupes += 1
                continue
            ranks[domain] = rank
    if rows and bad / rows > max_bad_ratio:
        raise RankingError(f"{path}: {bad} of {rows} rows unparsable")
    if dupes:
        logger.warning("%s: %d duplicate domains, kept first occurrence", path, dupes)
    return RankingTable(ranks, str(path))


@dataclass(frozen=True)
class DomainPopularity:
    fqdn_rank: int | None
    sld_rank: int | None


def popularity_of(fqdn: str, table: RankingTable, suffix_rules: SuffixRules | None = None) -> DomainPopularity:
    sld = try_effective_sld(fqdn, suffix_rules)
    return DomainPopularity(table.get(fqdn), table.get(sld) if sld else None)


def band_label(threshold: int) -> str:
    if threshold % 1_000_000 == 0:
        return f"≤{threshold // 1_000_000}M"
    if threshold % 1_000 == 0:
        return f"≤{threshold // 1_000}k"
    return f"≤{threshold}"


def band_labels(bands: Iterable[int]) -> list[str]:
    bands = list(bands)
    return [band_label(b) for b in bands] + [f">{band_label(bands[-1])[1:]}", UNRANKED]


def band_histogram(
    domains: Mapping[str, str],
    table: RankingTable,
    bands: Iterable[int] = DEFAULT_BANDS,
    suffix_rules: SuffixRules | None = None,
    use: str = "sld",
) -> dict[str, dict[str, int]]:
    """Per-CDN domain counts per popularity band.

    ``domains`` maps FQDN -> CDN. Each domain lands in the first band whose
    threshold is >= its rank, past the last band, or in "unranked".
    """
    bands = list(bands)
    if not bands:
        raise ValueError("bands must not be empty")
    if any(b >= c for b, c in zip(bands, bands[1:])):
        raise ValueError("bands must be strictly increasing")
    if use not in ("sld", "fqdn"):
        raise ValueError("use must be 'sld' or 'fqdn'")
    labels = band_labels(bands)
    out: dict[str, dict[str, int]] = {}
    for fqdn, cdn in domains.items():
        row = out.setdefault(cdn, dict.fromkeys(labels, 0))
        pop = popularity_of(fqdn, table, suffix_rules)
        rank = pop.sld_rank if use == "sld" else pop.fqdn_rank
        if rank is None:
            row[UNRANKED] += 1
            continue
        for label, threshold in zip(labels, bands):
            if rank <= threshold:
                row[label] += 1
                break
        else:
            row[labels[len(bands)]] += 1
    return out


# -- reputation -----------------------------------------------------------------


@dataclass(frozen=True)
class ReputationVerdict:
    domain: str
    vendor_flags: int | None
    checked_at: float
    source: str

    def is_malicious(self, threshold: int = MALICIOUS_THRESHOLD) -> bool:
        return self.vendor_flags is not None and self.vendor_flags >= threshold


def is_malicious(verdict: ReputationVerdict, threshold: int = MALICIOUS_THRESHOLD) -> bool:
    return verdict.is_malicious(threshold)


class ReputationClient(Protocol):
    name: str

    def vendor_flags(self, domain: str) -> int:
        """Number of vendors flagging ``domain`` malicious. Raises on service failure."""


class StubReputationClient:
    """Fixed answers with a call counter, for tests and offline runs."""

    name = "stub"

    def __init__(self, flags: Mapping[str, int], default: int = 0):
        self.flags = {normalize(k): v for k, v in flags.items()}
        self.default = default
        self.calls = 0
        self._lock = threading.Lock()

    def vendor_flags(self, domain: str) -> int:
        with self._lock:
            self.calls += 1
        return self.flags.get(normalize(domain), self.default)


class HttpReputationClient:
    """Generic JSON-over-HTTP reputation lookup.

    ``GET endpoint.format(domain=...)`` with the credential in ``auth_header``;
    the flag count is read from the dotted ``flags_field`` path of the JSON body.
    """

    name = "http"

    def __init__(
        self,
        endpoint: str,
        credential: str | None = None,
        auth_header: str = "x-apikey",
        flags_field: str = "vendor_flags",
        timeout: float = 15.0,
    ):
        self.endpoint = endpoint
        self.credential = credential
        self.auth_header = auth_header
        self.flags_field = flags_field
        self.timeout = timeout
        self.session = requests.Session()

    @classmethod
    def from_env(cls, endpoint: str, env_var: str = "CDNFRONT_REPUTATION_KEY", **kw) -> "HttpReputationClient":
        return cls(endpoint, os.environ.get(env_var), **kw)

    def vendor_flags(self, domain: str) -> int:
        headers = {self.auth_header: self.credential} if self.credential else {}
        resp = self.session.get(self.endpoint.format(domain=domain), headers=headers, timeout=self.timeout)
        resp.raise_for_status()
        value = resp.json()
        for key in self.flags_field.split("."):
            value = value[key]
        return int(value)


class RateLimiter:
    """Minimum interval between calls, shared by all threads."""

    def __init__(self, per_second: float):
        self.interval = 1.0 / per_second if per_second > 0 else 0.0
        self._next = 0.0
        self._lock = threading.Lock()

    def wait(self) -> None:
        with self._lock:
            now = time.monotonic()
            start = max(now, self._next)
            self._next = start + self.interval
        if start > now:
            time.sleep(start - now)


class VerdictCache:
    """Line-JSON verdict cache; last writer wins per domain."""

    def __init__(self, path: str | os.PathLike[str] | None = None, ttl: float = 7 * 86400):
        self.path = path
        self.ttl = ttl
        self._items: dict[str, ReputationVerdict] = {}
        self._lock = threading.Lock()
        if path and os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        v = ReputationVerdict(**json.loads(line))
                        self._items[v.domain] = v

    def get(self, domain: str, now: float | None = None) -> ReputationVerdict | None:
        now = time.time() if now is None else now
        with self._lock:
            v = self._items.get(domain)
        if v is None or v.source == "unavailable" or now - v.checked_at > self.ttl:
            return None
        return v

    def put(self, verdict: ReputationVerdict) -> None:
        with self._lock:
            self._items[verdict.domain] = verdict
            if self.path:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(asdict(verdict), sort_keys=True) + "\n")

    def all(self) -> list[ReputationVerdict]:
        with self._lock:
            return sorted(self._items.values(), key=lambda v: v.domain)


def check_reputation(
    domain: str,
    client: ReputationClient | None,
    cache: VerdictCache,
    limiter: RateLimiter | None = None,
    now: float | None = None,
) -> ReputationVerdict:
    """Cached verdict if fresh, else one rate-limited query. ``client=None`` is cache-only."""
    domain = normalize(domain)
    cached = cache.get(domain, now)
    if cached is not None:
        return cached
    now = time.time() if now is None else now
    if client is None:
        return ReputationVerdict(domain, None, now, "cache-only")
    if limiter is not None:
        limiter.wait()
    try:
        flags = client.vendor_flags(domain)
    except Exception as exc:  # the service must never take the pipeline down
        logger.warning("reputation lookup for %s failed: %s", domain, exc)
        return ReputationVerdict(domain, None, now, "unavailable")
    verdict = ReputationVerdict(domain, max(0, int(flags)), now, client.name)
    cache.put(verdict)
    return verdict


def check_many(
    domains: Iterable[str],
    client: ReputationClient | None,
    cache: VerdictCache,
    limiter: RateLimiter | None = None,
    parallelism: int = 4,
) -> list[ReputationVerdict]:
    ordered = sorted({normalize(d) for d in domains})
    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        return list(pool.map(lambda d: check_reputation(d, client, cache, limiter), ordered))
