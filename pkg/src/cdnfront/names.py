"""DNS name helpers shared across the pipeline."""

from __future__ import annotations

import re

_LABEL = re.compile(r"^(?!-)[a-z0-9_-]{1,63}(?<!-)$")


def normalize(name: str) -> str:
    """Lowercase and strip surrounding whitespace and the trailing root dot."""
    return name.strip().rstrip(".").lower()


def is_valid_name(name: str, min_labels: int = 1) -> bool:
    """Syntactic check for a (normalized) DNS name.

    Underscores are tolerated since they show up in real CNAME data.
    """
    if not name or len(name) > 253:
        return False
    labels = name.split(".")
    if len(labels) < min_labels:
        return False
    return all(_LABEL.match(label) for label in labels)


def is_valid_pattern(name: str) -> bool:
    """Valid DNS name, optionally with a single leading ``*`` label."""
    if name.startswith("*."):
        return is_valid_name(name[2:], min_labels=1)
    return is_valid_name(name)


def has_suffix(name: str, suffix: str) -> bool:
    """True if ``name`` equals ``suffix`` or ends with ``.suffix`` (label aligned)."""
    return name == suffix or name.endswith("." + suffix)


def san_matches(name: str, pattern: str) -> bool:
    """Certificate-style name match. ``*.x.y`` covers exactly one extra label."""
    name = normalize(name)
    pattern = normalize(pattern)
    if pattern.startswith("*."):
        base = pattern[2:]
        head, _, rest = name.partition(".")
        return bool(head) and rest == base
    return name == pattern
