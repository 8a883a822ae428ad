"""Pipeline configuration (TOML).

Example::

    catalog = "cdns.txt"            # omit to use the bundled seed catalog
    dns_logs = ["logs/day1.tsv", "logs/day2.tsv"]
    ranking = "tranco.csv"          # optional
    seed = 7
    out_dir = "run"

    [caps]
    slds_per_cdn = 100
    domains_per_cdn = 25
    urls_per_domain = 10
    requests_per_cdn = 4000

    [crawl]
    page_budget = 20
    depth_limit = 2
    honor_robots = true
    min_interval = 0.2
    # external_fetcher = ["node", "crawl.js"]

    [probe]
    timeout = 15.0
    min_interval = 0.5
    # ca_file = "extra-roots.pem"

    [resolver]
    "www.example.com" = "127.0.0.1:8443"

    [reputation]                    # optional; omit for cache-only
    endpoint = "https://rep.example/api/domains/{domain}"
    credential_env = "CDNFRONT_REPUTATION_KEY"
    flags_field = "vendor_flags"
    cache = "verdicts.jsonl"
    ttl_days = 7
    rate_per_second = 4
    parallelism = 4
    threshold = 2

    [enrich]
    bands = [10000, 100000, 500000, 1000000]
    rank_by = "sld"
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import tomli

from .enrichment import DEFAULT_BANDS, MALICIOUS_THRESHOLD
from .tester import ETHICS_REQUEST_CAP


class ConfigError(ValueError):
    pass


@dataclass
class Caps:
    slds_per_cdn: int = 100
    domains_per_cdn: int = 25
    urls_per_domain: int = 10
    requests_per_cdn: int = ETHICS_REQUEST_CAP


@dataclass
class CrawlSettings:
    page_budget: int = 20
    depth_limit: int = 2
    honor_robots: bool = True
    min_interval: float = 0.2
    timeout: float = 15.0
    external_fetcher: list[str] | None = None
    parallelism: int = 4


@dataclass
class ProbeConfig:
    timeout: float = 15.0
    min_interval: float = 0.5
    ca_file: str | None = None
    ca_pem: str | None = None
    parallelism: int = 4


@dataclass
class ReputationSettings:
    endpoint: str | None = None
    credential_env: str = "CDNFRONT_REPUTATION_KEY"
    auth_header: str = "x-apikey"
    flags_field: str = "vendor_flags"
    cache: str | None = None
    ttl_days: float = 7.0
    rate_per_second: float = 4.0
    parallelism: int = 4
    threshold: int = MALICIOUS_THRESHOLD


@dataclass
class PipelineConfig:
    catalog: str | None = None
    dns_logs: list[str] = field(default_factory=list)
    ranking: str | None = None
    suffix_list: str | None = None
    include_private_suffixes: bool = False
    seed: int = 0
    out_dir: str = "cdnfront-out"
    caps: Caps = field(default_factory=Caps)
    crawl: CrawlSettings = field(default_factory=CrawlSettings)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    resolver: dict[str, str] = field(default_factory=dict)
    use_system_dns: bool = True
    reputation: ReputationSettings = field(default_factory=ReputationSettings)
    bands: list[int] = field(default_factory=lambda: list(DEFAULT_BANDS))
    rank_by: str = "sld"
    acknowledge_request_cap: bool = False

    def validate(self) -> "PipelineConfig":
        for name, value in vars(self.caps).items():
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"caps.{name} must be a positive integer, got {value!r}")
        if self.caps.requests_per_cdn > ETHICS_REQUEST_CAP and not self.acknowledge_request_cap:
            raise ConfigError(
                f"caps.requests_per_cdn={self.caps.requests_per_cdn} exceeds the {ETHICS_REQUEST_CAP} "
                "requests-per-CDN ethics cap; pass --acknowledge-request-cap to override"
            )
        if self.rank_by not in ("sld", "fqdn"):
            raise ConfigError("enrich.rank_by must be 'sld' or 'fqdn'")
        return self

    def stage_seed(self, *parts: str) -> int:
        return derive_seed(self.seed, *parts)

    @property
    def out(self) -> Path:
        return Path(self.out_dir)


def derive_seed(seed: int, *parts: str) -> int:
    """Stable per-stage seed from the run seed."""
    digest = hashlib.sha256(":".join([str(seed), *parts]).encode()).digest()
    return int.from_bytes(digest[:8], "big")


def _update(obj: Any, table: dict, section: str) -> None:
    for key, value in table.items():
        if not hasattr(obj, key):
            raise ConfigError(f"unknown setting {section}{key}")
        setattr(obj, key, value)


def config_from_dict(data: dict, base_dir: str | os.PathLike[str] = ".") -> PipelineConfig:
    data = dict(data)
    cfg = PipelineConfig()
    base = Path(base_dir)

    def rel(p: str | None) -> str | None:
        return None if p is None else str(base / p)

    for section, target in (("caps", cfg.caps), ("crawl", cfg.crawl), ("probe", cfg.probe), ("reputation", cfg.reputation)):
        _update(target, data.pop(section, {}), f"{section}.")
    cfg.resolver = {str(k): str(v) for k, v in data.pop("resolver", {}).items()}
    enrich = data.pop("enrich", {})
    cfg.bands = list(enrich.get("bands", cfg.bands))
    cfg.rank_by = enrich.get("rank_by", cfg.rank_by)
    _update(cfg, data, "")
    cfg.catalog = rel(cfg.catalog)
    cfg.ranking = rel(cfg.ranking)
    cfg.suffix_list = rel(cfg.suffix_list)
    cfg.dns_logs = [str(base / p) for p in cfg.dns_logs]
    cfg.probe.ca_file = rel(cfg.probe.ca_file)
    cfg.reputation.cache = rel(cfg.reputation.cache)
    return cfg


def load_config(path: str | os.PathLike[str]) -> PipelineConfig:
    with open(path, "rb") as fh:
        try:
            data = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(data, Path(path).parent)
