"""CDN catalog: which CNAME second-level domains belong to which CDN.

Catalog file format (UTF-8)::

    # comment
    akamai: edgekey.net, edgesuite.net, akamaiedge.net
    fastly: fastly.net

One CDN per line. Suffixes are normalized to lowercase without the trailing
dot. A suffix may only belong to a single CDN.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable

from .names import is_valid_name, normalize


class CatalogError(ValueError):
    pass


@dataclass(frozen=True)
class CdnProfile:
    name: str
    sld_suffixes: frozenset[str]


@dataclass(frozen=True)
class Catalog:
    profiles: tuple[CdnProfile, ...]
    source_path: str = field(default="<memory>", compare=False)
    _index: dict[str, str] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        if not self.profiles:
            raise CatalogError(f"{self.source_path}: catalog is empty")
        index: dict[str, str] = {}
        names: set[str] = set()
        for profile in self.profiles:
            if not profile.name:
                raise CatalogError(f"{self.source_path}: empty CDN name")
            if profile.name in names:
                raise CatalogError(f"{self.source_path}: CDN {profile.name!r} listed twice")
            names.add(profile.name)
            for suffix in profile.sld_suffixes:
                if not is_valid_name(suffix, min_labels=2):
                    raise CatalogError(
                        f"{self.source_path}: invalid suffix {suffix!r} for {profile.name}"
                    )
                owner = index.get(suffix)
                if owner is not None and owner != profile.name:
                    raise CatalogError(
                        f"{self.source_path}: duplicate suffix {suffix!r} "
                        f"listed under both {owner!r} and {profile.name!r}"
                    )
                index[suffix] = profile.name
        self._index.update(index)

    @classmethod
    def from_mapping(cls, mapping: dict[str, Iterable[str]], source_path: str = "<memory>") -> "Catalog":
        profiles = tuple(
            CdnProfile(name.strip(), frozenset(normalize(s) for s in suffixes))
            for name, suffixes in mapping.items()
        )
        return cls(profiles, source_path)

    @property
    def cdn_names(self) -> list[str]:
        return [p.name for p in self.profiles]

    def suffixes(self) -> dict[str, str]:
        """Suffix -> CDN name."""
        return dict(self._index)

    def serialize(self) -> str:
        lines = [f"# source: {self.source_path}"]
        for profile in self.profiles:
            lines.append(f"{profile.name}: {', '.join(sorted(profile.sld_suffixes))}")
        return "\n".join(lines) + "\n"

    def match(self, cname_target: str) -> str | None:
        return match_cname(cname_target, self)


def parse_catalog(text: str, source_path: str = "<memory>") -> Catalog:
    mapping: dict[str, set[str]] = {}
    seen_at: dict[str, tuple[str, int]] = {}
    order: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        name, sep, rest = line.partition(":")
        name = name.strip()
        if not sep or not name:
            raise CatalogError(f"{source_path}:{lineno}: expected 'name: suffix[, suffix]*'")
        suffixes = [normalize(s) for s in rest.split(",") if s.strip()]
        if not suffixes:
            raise CatalogError(f"{source_path}:{lineno}: CDN {name!r} has no suffixes")
        for suffix in suffixes:
            if not is_valid_name(suffix, min_labels=2):
                raise CatalogError(f"{source_path}:{lineno}: invalid suffix {suffix!r}")
            prev = seen_at.get(suffix)
            if prev is not None and prev[0] != name:
                raise CatalogError(
                    f"{source_path}:{lineno}: duplicate suffix {suffix!r} listed under both "
                    f"{prev[0]!r} (line {prev[1]}) and {name!r}"
                )
            seen_at.setdefault(suffix, (name, lineno))
        if name not in mapping:
            mapping[name] = set()
            order.append(name)
        mapping[name].update(suffixes)
    if not mapping:
        raise CatalogError(f"{source_path}: catalog is empty")
    profiles = tuple(CdnProfile(n, frozenset(mapping[n])) for n in order)
    return Catalog(profiles, source_path)


def load_catalog(path: str | os.PathLike[str]) -> Catalog:
    with open(path, encoding="utf-8") as fh:
        return parse_catalog(fh.read(), str(path))


def bundled_catalog() -> Catalog:
    """Seed catalog shipped with the package. Fixture data, not ground truth."""
    text = resources.files("cdnfront.data").joinpath("cdns.txt").read_text("utf-8")
    return parse_catalog(text, "cdnfront/data/cdns.txt")


def match_cname(cname_target: str, catalog: Catalog) -> str | None:
    """Return the CDN owning the longest suffix of ``cname_target``, if any."""
    name = normalize(cname_target)
    labels = name.split(".")
    # Longest candidate first; each candidate is label aligned by construction.
    for i in range(len(labels) - 1):
        candidate = ".".join(labels[i:])
        cdn = catalog._index.get(candidate)
        if cdn is not None:
            return cdn
    return None
