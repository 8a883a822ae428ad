"""Public-suffix rules and effective second-level domain computation.

Implements the standard rule-matching algorithm (exact, wildcard and
exception rules, implicit ``*`` default) over a rule snapshot. The bundled
snapshot is the Mozilla list; pass a different file to override it.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Iterable

from .names import normalize


class NoRegistrableDomain(ValueError):
    """The name is itself a public suffix."""


def _ascii(rule: str) -> str:
    try:
        return rule.encode("idna").decode("ascii")
    except UnicodeError:
        return rule


@dataclass(frozen=True)
class SuffixRules:
    exact: frozenset[str]
    wildcards: frozenset[str]  # base of "*.base"
    exceptions: frozenset[str]  # name of "!name"

    @classmethod
    def from_lines(cls, lines: Iterable[str], include_private: bool = False) -> "SuffixRules":
        exact: set[str] = set()
        wildcards: set[str] = set()
        exceptions: set[str] = set()
        for raw in lines:
            line = raw.strip()
            if "===BEGIN PRIVATE DOMAINS===" in line and not include_private:
                break
            if not line or line.startswith("//"):
                continue
            rule = line.split()[0].lower()
            if rule.startswith("!"):
                exceptions.add(_ascii(rule[1:]))
            elif rule.startswith("*."):
                wildcards.add(_ascii(rule[2:]))
            else:
                exact.add(_ascii(rule))
        return cls(frozenset(exact), frozenset(wildcards), frozenset(exceptions))

    def public_suffix_length(self, labels: list[str]) -> int:
        """Number of trailing labels forming the public suffix of ``labels``."""
        n = len(labels)
        for k in range(n, 0, -1):
            if ".".join(labels[n - k:]) in self.exceptions:
                return k - 1
        for k in range(n, 0, -1):
            candidate = ".".join(labels[n - k:])
            if candidate in self.exact:
                return k
            if k >= 2 and ".".join(labels[n - k + 1:]) in self.wildcards:
                return k
        return 1

    def public_suffix(self, fqdn: str) -> str:
        labels = normalize(fqdn).split(".")
        return ".".join(labels[len(labels) - self.public_suffix_length(labels):])


def load_suffix_rules(path: str | os.PathLike[str] | None = None, include_private: bool = False) -> SuffixRules:
    if path is None:
        return default_rules(include_private)
    with open(path, encoding="utf-8") as fh:
        return SuffixRules.from_lines(fh, include_private)


@lru_cache(maxsize=2)
def default_rules(include_private: bool = False) -> SuffixRules:
    text = resources.files("cdnfront.data").joinpath("public_suffix_list.dat").read_text("utf-8")
    return SuffixRules.from_lines(text.splitlines(), include_private)


def effective_sld(fqdn: str, suffix_rules: SuffixRules | None = None) -> str:
    """Registrable domain of ``fqdn``: its public suffix plus one label."""
    rules = suffix_rules if suffix_rules is not None else default_rules()
    labels = normalize(fqdn).split(".")
    ps_len = rules.public_suffix_length(labels)
    if ps_len >= len(labels):
        raise NoRegistrableDomain(f"{fqdn!r} is a public suffix")
    return ".".join(labels[-(ps_len + 1):])


def try_effective_sld(fqdn: str, suffix_rules: SuffixRules | None = None) -> str | None:
    try:
        return effective_sld(fqdn, suffix_rules)
    except NoRegistrableDomain:
        return None
