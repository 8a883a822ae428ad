"""DNS log ingestion: CNAME records -> customer FQDN to CDN mapping.

Log format, one record per line, tab separated::

    YYYY-MM-DD  qname  rtype  record_name  record_data

The question name of a response is the customer domain; every CNAME record
in the response is matched on its own against the catalog.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
import os
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator

from .catalog import Catalog, match_cname
from .names import is_valid_name, normalize

logger = logging.getLogger(__name__)

RECORD_TYPES = ("CNAME", "A", "AAAA")


class DnsLogError(ValueError):
    pass


@dataclass(frozen=True)
class DnsObservation:
    day: dt.date
    qname: str
    record_name: str
    record_type: str  # CNAME, A, AAAA or "other"
    record_data: str


@dataclass
class ParseStats:
    lines: int = 0
    parsed: int = 0
    malformed: int = 0
    examples: list[str] = field(default_factory=list)

    def reject(self, lineno: int, reason: str) -> None:
        self.malformed += 1
        if len(self.examples) < 5:
            self.examples.append(f"line {lineno}: {reason}")


def _parse_line(line: str) -> DnsObservation:
    cols = line.split("\t")
    if len(cols) != 5:
        raise ValueError(f"expected 5 tab-separated columns, got {len(cols)}")
    day_s, qname, rtype, rname, rdata = (c.strip() for c in cols)
    day = dt.date.fromisoformat(day_s)
    qname, rname = normalize(qname), normalize(rname)
    if not is_valid_name(qname) or not is_valid_name(rname):
        raise ValueError("invalid qname or record name")
    rtype = rtype.upper()
    if rtype not in RECORD_TYPES:
        rtype = "other"
    if rtype == "CNAME":
        rdata = normalize(rdata)
        if not is_valid_name(rdata):
            raise ValueError(f"invalid CNAME target {rdata!r}")
    return DnsObservation(day, qname, rname, rtype, rdata)


def parse_dns_log(
    stream: IO[bytes] | Iterable[bytes],
    stats: ParseStats | None = None,
    max_malformed_ratio: float = 0.5,
) -> Iterator[DnsObservation]:
    """Yield observations in stream order, skipping malformed lines.

    Raises DnsLogError once the stream is exhausted if more than
    ``max_malformed_ratio`` of the non-blank lines were malformed.
    """
    stats = stats if stats is not None else ParseStats()
    for lineno, raw in enumerate(stream, start=1):
        try:
            line = raw.decode("utf-8").rstrip("\r\n")
        except UnicodeDecodeError:
            stats.lines += 1
            stats.reject(lineno, "not UTF-8")
            continue
        if not line.strip() or line.startswith("#"):
            continue
        stats.lines += 1
        try:
            obs = _parse_line(line)
        except ValueError as exc:
            stats.reject(lineno, str(exc))
            continue
        stats.parsed += 1
        yield obs
    if stats.lines and stats.malformed / stats.lines > max_malformed_ratio:
        raise DnsLogError(
            f"{stats.malformed}/{stats.lines} lines malformed; wrong input format? "
            + "; ".join(stats.examples)
        )
    if stats.malformed:
        logger.warning("skipped %d malformed DNS log lines", stats.malformed)


@dataclass
class DomainCdnMap:
    """FQDN -> {CDN -> days observed} over an observation window."""

    entries: dict[str, dict[str, set[dt.date]]] = field(default_factory=dict)
    window: tuple[dt.date, dt.date] | None = None

    def add(self, fqdn: str, cdn: str, day: dt.date) -> None:
        self.entries.setdefault(fqdn, {}).setdefault(cdn, set()).add(day)
        if self.window is None:
            self.window = (day, day)
        else:
            self.window = (min(self.window[0], day), max(self.window[1], day))

    def merge(self, other: "DomainCdnMap") -> "DomainCdnMap":
        """Union of two shards; associative and commutative."""
        out = DomainCdnMap()
        for src in (self, other):
            for fqdn, cdns in src.entries.items():
                for cdn, days in cdns.items():
                    out.entries.setdefault(fqdn, {}).setdefault(cdn, set()).update(days)
        windows = [w for w in (self.window, other.window) if w is not None]
        if windows:
            out.window = (min(w[0] for w in windows), max(w[1] for w in windows))
        return out

    def domains_for(self, cdn: str) -> set[str]:
        return {fqdn for fqdn, cdns in self.entries.items() if cdn in cdns}

    def __len__(self) -> int:
        return len(self.entries)


def extract_mappings(
    observations: Iterable[DnsObservation],
    catalog: Catalog,
    window: tuple[dt.date, dt.date] | None = None,
) -> DomainCdnMap:
    result = DomainCdnMap()
    for obs in observations:
        if window is not None and not (window[0] <= obs.day <= window[1]):
            raise ValueError(f"observation day {obs.day} outside window {window[0]}..{window[1]}")
        if obs.record_type != "CNAME":
            continue
        cdn = match_cname(obs.record_data, catalog)
        if cdn is None:
            continue
        # CDN-internal names (a CNAME hop inside the CDN) are not customers.
        if match_cname(obs.qname, catalog) is not None:
            continue
        result.add(obs.qname, cdn, obs.day)
    if window is not None:
        result.window = window
    return result


@dataclass
class StableMapping:
    stable: dict[str, str]
    unstable: set[str]
    days: dict[str, list[dt.date]] = field(default_factory=dict)
    unstable_cdns: dict[str, list[str]] = field(default_factory=dict)

    @property
    def stability_ratio(self) -> float:
        total = len(self.stable) + len(self.unstable)
        return len(self.stable) / total if total else 0.0

    def domains_for(self, cdn: str) -> set[str]:
        return {fqdn for fqdn, c in self.stable.items() if c == cdn}

    def cdns(self) -> list[str]:
        return sorted(set(self.stable.values()))

    def to_jsonl(self) -> str:
        lines = []
        for fqdn in sorted(set(self.stable) | self.unstable):
            days = [d.isoformat() for d in self.days.get(fqdn, [])]
            if fqdn in self.stable:
                rec = {"fqdn": fqdn, "cdn": self.stable[fqdn], "days": days}
            else:
                rec = {"fqdn": fqdn, "cdn": None, "days": days, "cdns": self.unstable_cdns.get(fqdn, [])}
            lines.append(json.dumps(rec, sort_keys=True))
        return "".join(line + "\n" for line in lines)

    @classmethod
    def from_jsonl(cls, text: str) -> "StableMapping":
        stable: dict[str, str] = {}
        unstable: set[str] = set()
        days: dict[str, list[dt.date]] = {}
        unstable_cdns: dict[str, list[str]] = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            fqdn = rec["fqdn"]
            days[fqdn] = [dt.date.fromisoformat(d) for d in rec.get("days", [])]
            if rec.get("cdn"):
                stable[fqdn] = rec["cdn"]
            else:
                unstable.add(fqdn)
                unstable_cdns[fqdn] = list(rec.get("cdns", []))
        return cls(stable, unstable, days, unstable_cdns)


def filter_stable(mapping: DomainCdnMap) -> StableMapping:
    """Split FQDNs into single-CDN (stable) and multi-CDN (unstable) sets."""
    if not mapping.entries:
        raise ValueError("cannot filter an empty domain-to-CDN map")
    stable: dict[str, str] = {}
    unstable: set[str] = set()
    days: dict[str, list[dt.date]] = {}
    unstable_cdns: dict[str, list[str]] = {}
    for fqdn, cdns in mapping.entries.items():
        days[fqdn] = sorted(set().union(*cdns.values()))
        if len(cdns) == 1:
            stable[fqdn] = next(iter(cdns))
        else:
            unstable.add(fqdn)
            unstable_cdns[fqdn] = sorted(cdns)
    return StableMapping(stable, unstable, days, unstable_cdns)


def ingest_files(paths: Iterable[str | os.PathLike[str]], catalog: Catalog) -> tuple[StableMapping, ParseStats]:
    """Parse every log, extract, filter. Convenience for the CLI."""
    stats = ParseStats()
    total = DomainCdnMap()
    for path in paths:
        with open(path, "rb") as fh:
            total = total.merge(extract_mappings(parse_dns_log(fh, stats), catalog))
    return filter_stable(total), stats
