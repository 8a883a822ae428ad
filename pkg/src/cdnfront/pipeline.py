"""Pipeline stages. Each reads its predecessor's files from the output
directory and writes its own, so stages can be re-run individually."""

from __future__ import annotations

import json
import logging
from pathlib import Path

from .catalog import bundled_catalog, load_catalog
from .config import PipelineConfig
from .discovery import (
    ExternalFetcher,
    Fetcher,
    build_url_sets,
    check_root_liveness,
    crawl_site,
    crawl_sites,
    registrable_domains,
    sample_slds_for_cdn,
)
from .enrichment import (
    HttpReputationClient,
    RankingTable,
    RateLimiter,
    VerdictCache,
    band_histogram,
    check_many,
    load_ranking,
    popularity_of,
)
from .ingest import StableMapping, ingest_files
from .net import Pacer, Resolver, make_tls_context
from .psl import load_suffix_rules
from .report import aggregate, emit
from .tester import ProbeSettings, TlsCertSource, TupleOutcome, generate_tuples, test_cdns

logger = logging.getLogger(__name__)

# artifact file -> stage that produces it
ARTIFACTS = {
    "stable_mapping.jsonl": "ingest",
    "liveness.jsonl": "discover",
    "urls.jsonl": "discover",
    "url_sets.jsonl": "discover",
    "outcomes.jsonl": "test",
    "runs.jsonl": "test",
    "enrichment.jsonl": "enrich",
    "report.jsonl": "report",
}


class MissingArtifact(FileNotFoundError):
    pass


def _require(cfg: PipelineConfig, name: str) -> Path:
    path = cfg.out / name
    if not path.exists():
        stage = ARTIFACTS[name]
        raise MissingArtifact(f"{path} not found; run the '{stage}' stage (cmd_{stage}) first")
    return path


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def _jsonl(records) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


def _rules(cfg: PipelineConfig):
    return load_suffix_rules(cfg.suffix_list, cfg.include_private_suffixes)


def _resolver(cfg: PipelineConfig) -> Resolver:
    return Resolver(cfg.resolver, use_system=cfg.use_system_dns)


def _tls(cfg: PipelineConfig):
    return make_tls_context(cadata=cfg.probe.ca_pem, cafile=cfg.probe.ca_file)


def cmd_ingest(cfg: PipelineConfig) -> Path:
    if not cfg.dns_logs:
        raise ValueError("no DNS logs configured (dns_logs)")
    catalog = load_catalog(cfg.catalog) if cfg.catalog else bundled_catalog()
    stable, stats = ingest_files(cfg.dns_logs, catalog)
    out = _write(cfg.out / "stable_mapping.jsonl", stable.to_jsonl())
    summary = {
        "catalog": catalog.source_path,
        "lines": stats.lines,
        "malformed": stats.malformed,
        "fqdns": len(stable.stable) + len(stable.unstable),
        "stable": len(stable.stable),
        "unstable": len(stable.unstable),
        "stability_ratio": round(stable.stability_ratio, 6),
        "per_cdn": {cdn: len(stable.domains_for(cdn)) for cdn in stable.cdns()},
    }
    _write(cfg.out / "ingest_summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return out


def load_stable(cfg: PipelineConfig) -> StableMapping:
    return StableMapping.from_jsonl(_require(cfg, "stable_mapping.jsonl").read_text("utf-8"))


def cmd_discover(cfg: PipelineConfig) -> Path:
    stable = load_stable(cfg)
    rules = _rules(cfg)
    fetcher = Fetcher(_resolver(cfg), _tls(cfg), cfg.crawl.timeout, cfg.crawl.min_interval)

    # D_s: registrable domains of all stable FQDNs; D'_s: those answering 200 at "/".
    slds = sorted(registrable_domains(stable.stable, rules))
    liveness = crawl_sites(slds, lambda s: check_root_liveness(s, fetcher), cfg.crawl.parallelism)
    _write(cfg.out / "liveness.jsonl", "".join(l.to_json() + "\n" for l in liveness))
    live = {l.sld for l in liveness if l.live}

    sampled = {
        cdn: sample_slds_for_cdn(live, stable, cdn, cfg.caps.slds_per_cdn, cfg.stage_seed("discover", cdn), rules)
        for cdn in stable.cdns()
    }
    if cfg.crawl.external_fetcher:
        crawler = ExternalFetcher(cfg.crawl.external_fetcher).crawl
    else:
        def crawler(sld):
            return crawl_site(sld, fetcher, cfg.crawl.page_budget, cfg.crawl.depth_limit, cfg.crawl.honor_robots, rules)
    to_crawl = sorted(set().union(*sampled.values())) if sampled else []
    crawls = {c.sld: c for c in crawl_sites(to_crawl, crawler, cfg.crawl.parallelism)}

    # Dedup by full URL (query string included), first sighting wins.
    seen: set[str] = set()
    url_lines = []
    for sld in to_crawl:
        for d in crawls[sld].urls:
            if d.url not in seen:
                seen.add(d.url)
                url_lines.append(d.to_json() + "\n")
    _write(cfg.out / "urls.jsonl", "".join(url_lines))

    url_sets = []
    for cdn in stable.cdns():
        found = [d for sld in sorted(sampled[cdn]) for d in crawls[sld].urls]
        for url in sorted(build_url_sets(found, stable, cdn)):
            url_sets.append({"cdn": cdn, "url": url})
    out = _write(cfg.out / "url_sets.jsonl", _jsonl(url_sets))
    summary = {
        "registrable_domains": len(slds),
        "live": len(live),
        "crawled": len(to_crawl),
        "truncated_crawls": sorted(s for s, c in crawls.items() if c.truncated),
        "urls": len(seen),
        "url_dedup": "full URL including query string",
        "url_sets": {cdn: sum(1 for u in url_sets if u["cdn"] == cdn) for cdn in stable.cdns()},
    }
    _write(cfg.out / "discover_summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return out


def load_url_sets(cfg: PipelineConfig) -> dict[str, list[str]]:
    sets: dict[str, list[str]] = {}
    for line in _require(cfg, "url_sets.jsonl").read_text("utf-8").splitlines():
        if line.strip():
            rec = json.loads(line)
            sets.setdefault(rec["cdn"], []).append(rec["url"])
    return sets


def plan_tuples(cfg: PipelineConfig) -> dict:
    stable = load_stable(cfg)
    rules = _rules(cfg)
    url_sets = load_url_sets(cfg)
    live = set()
    for line in _require(cfg, "liveness.jsonl").read_text("utf-8").splitlines():
        if line.strip():
            rec = json.loads(line)
            if rec["live"]:
                live.add(rec["sld"])
    plans = {}
    for cdn in sorted(url_sets):
        # D'_f restricted to this CDN.
        fqdns = {fq for sld, fqs in registrable_domains(stable.domains_for(cdn), rules).items() if sld in live for fq in fqs}
        try:
            plans[cdn] = generate_tuples(
                fqdns, url_sets[cdn], cfg.caps.domains_per_cdn, cfg.caps.urls_per_domain,
                cfg.stage_seed("test", cdn), cdn, rules,
            )
        except ValueError as exc:
            logger.warning("skipping %s: %s", cdn, exc)
    return plans


def cmd_test(cfg: PipelineConfig) -> Path:
    cfg.validate()
    plans = plan_tuples(cfg)
    resolver = _resolver(cfg)
    settings = ProbeSettings(_tls(cfg), cfg.probe.timeout, Pacer(cfg.probe.min_interval))
    runs = test_cdns(
        plans, resolver, settings, cfg.caps.requests_per_cdn,
        TlsCertSource(resolver, cfg.probe.timeout), _rules(cfg), cfg.probe.parallelism,
    )
    out = _write(cfg.out / "outcomes.jsonl", "".join(o.to_json() + "\n" for r in runs for o in r.outcomes))
    _write(cfg.out / "runs.jsonl", _jsonl(r.summary() for r in runs))
    return out


def cmd_enrich(cfg: PipelineConfig) -> Path:
    stable = load_stable(cfg)
    rules = _rules(cfg)
    table = load_ranking(cfg.ranking) if cfg.ranking else RankingTable({}, "none")
    rep = cfg.reputation
    client = None
    if rep.endpoint:
        client = HttpReputationClient.from_env(rep.endpoint, rep.credential_env, auth_header=rep.auth_header, flags_field=rep.flags_field)
    cache = VerdictCache(rep.cache, ttl=rep.ttl_days * 86400)
    verdicts = {v.domain: v for v in check_many(stable.stable, client, cache, RateLimiter(rep.rate_per_second), rep.parallelism)}
    records = []
    for fqdn in sorted(stable.stable):
        pop = popularity_of(fqdn, table, rules)
        v = verdicts[fqdn]
        records.append({
            "fqdn": fqdn,
            "cdn": stable.stable[fqdn],
            "fqdn_rank": pop.fqdn_rank,
            "sld_rank": pop.sld_rank,
            "vendor_flags": v.vendor_flags,
            "reputation_source": v.source,
            "malicious": v.is_malicious(rep.threshold),
        })
    out = _write(cfg.out / "enrichment.jsonl", _jsonl(records))
    hist = band_histogram(stable.stable, table, cfg.bands, rules, cfg.rank_by)
    _write(cfg.out / "bands.json", json.dumps(hist, indent=2, sort_keys=True, ensure_ascii=False) + "\n")
    return out


def enrichment_overlay(cfg: PipelineConfig) -> dict[str, dict[str, int]]:
    path = cfg.out / "enrichment.jsonl"
    if not path.exists():
        return {}
    overlay: dict[str, dict[str, int]] = {}
    popular = cfg.bands[0]
    for line in path.read_text("utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        row = overlay.setdefault(rec["cdn"], {"domains": 0, "popular_domains": 0, "malicious_domains": 0})
        row["domains"] += 1
        rank = rec["sld_rank"] if cfg.rank_by == "sld" else rec["fqdn_rank"]
        if rank is not None and rank <= popular:
            row["popular_domains"] += 1
        if rec["malicious"]:
            row["malicious_domains"] += 1
    return overlay


def cmd_report(cfg: PipelineConfig) -> Path:
    outcomes = [TupleOutcome.from_json(l) for l in _require(cfg, "outcomes.jsonl").read_text("utf-8").splitlines() if l.strip()]
    runs = [json.loads(l) for l in _require(cfg, "runs.jsonl").read_text("utf-8").splitlines() if l.strip()]
    if not outcomes:
        raise ValueError("no tuple outcomes to report on")
    reports = aggregate(outcomes, enrichment_overlay(cfg), runs)
    out = cfg.out / "report.jsonl"
    out.write_bytes(emit(reports, "json"))
    (cfg.out / "report.txt").write_bytes(emit(reports, "table"))
    (cfg.out / "plotdata.csv").write_bytes(emit(reports, "plotdata"))
    return out
