"""Measure CDN susceptibility to domain fronting from DNS observations."""

from .catalog import Catalog, CdnProfile, load_catalog, match_cname
from .ingest import DnsObservation, DomainCdnMap, StableMapping, extract_mappings, filter_stable, parse_dns_log
from .psl import effective_sld
from .tester import (
    ProbeResult,
    RequestBudget,
    TestTuple,
    TupleOutcome,
    Verdict,
    are_related,
    evaluate,
    generate_tuples,
    hash_body,
    probe,
    run_test,
    test_cdn,
)

__all__ = [
    "Catalog",
    "CdnProfile",
    "load_catalog",
    "match_cname",
    "DnsObservation",
    "DomainCdnMap",
    "StableMapping",
    "extract_mappings",
    "filter_stable",
    "parse_dns_log",
    "effective_sld",
    "ProbeResult",
    "RequestBudget",
    "TestTuple",
    "TupleOutcome",
    "Verdict",
    "are_related",
    "evaluate",
    "generate_tuples",
    "hash_body",
    "probe",
    "run_test",
    "test_cdn",
]

__version__ = "0.1.0"
