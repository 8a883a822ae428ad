"""Per-CDN aggregation of tuple outcomes and output formats.

A CDN is reported *prone* when at least one tested target domain had a
successful fronting tuple. ``partial_enforcement_hint`` flags CDNs where
successes and blocked attempts were answered by disjoint sets of servers,
which suggests only part of the infrastructure enforces SNI/Host matching.
It is a hint for manual follow-up, not a finding.
"""

from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Mapping

from .tester import ETHICS_REQUEST_CAP, CdnRun, TupleOutcome, Verdict

FORMATS = ("json", "table", "plotdata")
PLOT_HEADER = ("cdn", "domains_tested", "domains_with_success", "success_rate")


@dataclass
class CdnReport:
    cdn: str
    domains_tested: int = 0
    domains_with_success: int = 0
    tuples_total: int = 0
    tuples_success: int = 0
    tuples_failed: int = 0
    tuples_invalid: int = 0
    tuples_skipped: int = 0
    verdict_counts: dict[str, int] = field(default_factory=dict)
    invalid_reasons: dict[str, int] = field(default_factory=dict)
    prone: bool = False
    partial_enforcement_hint: bool = False
    served_by_clusters: dict[str, list[str]] = field(default_factory=dict)
    requests_spent: int = 0
    request_cap: int = ETHICS_REQUEST_CAP
    truncated: bool = False
    enrichment: dict[str, int] = field(default_factory=dict)

    @property
    def domain_success_rate(self) -> float:
        return self.domains_with_success / self.domains_tested if self.domains_tested else 0.0

    @property
    def tuple_success_rate(self) -> float:
        attempted = self.tuples_total - self.tuples_skipped
        return self.tuples_success / attempted if attempted else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["domain_success_rate"] = round(self.domain_success_rate, 4)
        d["tuple_success_rate"] = round(self.tuple_success_rate, 4)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "CdnReport":
        names = cls.__dataclass_fields__
        return cls(**{k: v for k, v in d.items() if k in names})


def _classify(outcome: TupleOutcome, served_by_cdn: Callable[[str | None], str | None] | None) -> tuple[str, str | None]:
    """(bucket, invalid reason). Buckets partition the outcomes."""
    v = outcome.verdict
    if v is Verdict.SKIPPED_RELATED:
        return "skipped", None
    if served_by_cdn is not None:
        for probe in (outcome.r_t, outcome.r_v):
            other = served_by_cdn(probe.served_by) if probe is not None else None
            if other is not None and other != outcome.tuple.cdn:
                return "invalid", "cross_cdn"
    if v is Verdict.SUCCESS:
        return "success", None
    if v is Verdict.INVALID_SHARED_RESOURCE:
        return "invalid", "shared_resource"
    return "failed", None


def aggregate(
    outcomes: Iterable[TupleOutcome],
    enrichment: Mapping[str, Mapping[str, int]] | None = None,
    runs: Iterable[CdnRun | Mapping] | None = None,
    served_by_cdn: Callable[[str | None], str | None] | None = None,
) -> list[CdnReport]:
    """Group outcomes by CDN into reports, sorted by CDN name.

    ``served_by_cdn`` optionally attributes a responding-server identity to a
    CDN; answers from another CDN are counted as invalid ("cross_cdn").
    """
    by_cdn: dict[str, list[TupleOutcome]] = defaultdict(list)
    for o in outcomes:
        by_cdn[o.tuple.cdn].append(o)
    run_info: dict[str, Mapping] = {}
    for run in runs or ():
        info = run.summary() if isinstance(run, CdnRun) else run
        run_info[info["cdn"]] = info

    reports = []
    for cdn in sorted(by_cdn):
        rep = CdnReport(cdn)
        tested: set[str] = set()
        succeeded: set[str] = set()
        success_servers: set[str] = set()
        blocked_servers: set[str] = set()
        counts: dict[str, int] = defaultdict(int)
        reasons: dict[str, int] = defaultdict(int)
        for o in by_cdn[cdn]:
            rep.tuples_total += 1
            counts[o.verdict.value] += 1
            rep.requests_spent += o.requests
            bucket, reason = _classify(o, served_by_cdn)
            if bucket == "skipped":
                rep.tuples_skipped += 1
                continue
            tested.add(o.tuple.target_domain)
            if bucket == "success":
                rep.tuples_success += 1
                succeeded.add(o.tuple.target_domain)
                if o.r_v is not None and o.r_v.served_by:
                    success_servers.add(o.r_v.served_by)
            elif bucket == "invalid":
                rep.tuples_invalid += 1
                reasons[reason or "unknown"] += 1
            else:
                rep.tuples_failed += 1
                if o.verdict is Verdict.FAIL_FRONT_BLOCKED and o.r_v is not None and o.r_v.served_by:
                    blocked_servers.add(o.r_v.served_by)
        rep.domains_tested = len(tested)
        rep.domains_with_success = len(succeeded)
        rep.prone = rep.domains_with_success >= 1
        rep.verdict_counts = dict(sorted(counts.items()))
        rep.invalid_reasons = dict(sorted(reasons.items()))
        rep.served_by_clusters = {
            Verdict.SUCCESS.value: sorted(success_servers),
            Verdict.FAIL_FRONT_BLOCKED.value: sorted(blocked_servers),
        }
        rep.partial_enforcement_hint = bool(
            success_servers and blocked_servers and success_servers.isdisjoint(blocked_servers)
        )
        info = run_info.get(cdn)
        if info is not None:
            rep.requests_spent = int(info.get("requests_spent", rep.requests_spent))
            rep.request_cap = int(info.get("request_cap", rep.request_cap))
            rep.truncated = bool(info.get("truncated", False))
        if enrichment and cdn in enrichment:
            rep.enrichment = dict(enrichment[cdn])
        reports.append(rep)
    return reports


def _table(reports: list[CdnReport]) -> str:
    header = f"{'cdn':<16} {'tested':>6} {'success':>7} {'rate':>7} {'tuples':>6} {'ok':>5} {'fail':>5} {'inval':>5} {'skip':>5} {'reqs':>6}  {'prone':<5} hint"
    lines = [header, "-" * len(header)]
    for r in reports:
        lines.append(
            f"{r.cdn[:16]:<16} {r.domains_tested:>6} {r.domains_with_success:>7} {r.domain_success_rate:>7.1%} "
            f"{r.tuples_total:>6} {r.tuples_success:>5} {r.tuples_failed:>5} {r.tuples_invalid:>5} "
            f"{r.tuples_skipped:>5} {r.requests_spent:>6}  {'yes' if r.prone else 'no':<5} "
            f"{'partial' if r.partial_enforcement_hint else '-'}"
        )
    prone = sum(r.prone for r in reports)
    lines.append(f"{prone} of {len(reports)} CDNs prone to domain fronting")
    return "\n".join(lines) + "\n"


def _plotdata(reports: list[CdnReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PLOT_HEADER)
    for r in reports:
        writer.writerow([r.cdn, r.domains_tested, r.domains_with_success, f"{r.domain_success_rate:.4f}"])
    return buf.getvalue()


def emit(reports: list[CdnReport], format: str = "json") -> bytes:  # noqa: A002
    if not reports:
        raise ValueError("no reports to emit")
    if format == "json":
        text = "".join(json.dumps(r.to_dict(), sort_keys=True, ensure_ascii=False) + "\n" for r in reports)
    elif format == "table":
        text = _table(reports)
    elif format == "plotdata":
        text = _plotdata(reports)
    else:
        raise ValueError(f"unknown format {format!r}; expected one of {', '.join(FORMATS)}")
    return text.encode("utf-8")


def load_reports(text: str) -> list[CdnReport]:
    return [CdnReport.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]
