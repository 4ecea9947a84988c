"""Artifact plumbing: config digests, stats reports, CSV and SVG emission.

Every artifact embeds the digest of the canonical-JSON config that produced
it together with the seed, so a rerun with the same config is byte
identical and any drift is visible in the digest.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "canonical_json",
    "config_digest",
    "StatsReport",
    "write_csv",
    "SvgCanvas",
]


def canonical_json(obj) -> str:
    """JSON with sorted keys and no whitespace variance."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_digest(config: dict) -> str:
    """Stable short hash of a canonical-JSON config."""
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()[:16]


@dataclass
class StatsReport:
    """Named scalar statistics with their Monte Carlo standard errors."""

    config: dict
    statistics: list[dict] = field(default_factory=list)

    def add(self, name: str, value: float, se: float = 0.0, replicas: int = 1) -> None:
        self.statistics.append({
            "statistic": name,
            "value": float(value),
            "se": float(se),
            "replicas": int(replicas),
        })

    def digest(self) -> str:
        return config_digest(self.config)

    def to_json(self) -> str:
        entries = [dict(s, config_digest=self.digest()) for s in self.statistics]
        return json.dumps({
            "config": self.config,
            "config_digest": self.digest(),
            "statistics": entries,
        }, sort_keys=True, indent=2)

    def write(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.to_json() + "\n")

    def to_csv(self, path) -> None:
        dg = self.digest()
        rows = [[s["statistic"], repr(s["value"]), repr(s["se"]),
                 s["replicas"], dg] for s in self.statistics]
        write_csv(path, ["statistic", "value", "se", "replicas", "config_digest"],
                  rows)


def write_csv(path, header: list, rows, comment: str | None = None) -> None:
    """RFC-4180 CSV with an optional leading comment row."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, quoting=csv.QUOTE_MINIMAL)
        if comment is not None:
            w.writerow([f"# {comment}"])
        w.writerow(header)
        for row in rows:
            w.writerow(row)


class SvgCanvas:
    """Minimal hand-emitted SVG: rectangles, circles, text."""

    def __init__(self, width: int, height: int, title: str = ""):
        self.width = width
        self.height = height
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}">'
        ]
        if title:
            self.parts.append(f"<title>{title}</title>")

    def rect(self, x, y, w, h, fill: str, stroke: str = "none") -> None:
        self.parts.append(
            f'<rect x="{x:g}" y="{y:g}" width="{w:g}" height="{h:g}" '
            f'fill="{fill}" stroke="{stroke}"/>')

    def circle(self, cx, cy, r, fill: str) -> None:
        self.parts.append(f'<circle cx="{cx:g}" cy="{cy:g}" r="{r:g}" fill="{fill}"/>')

    def text(self, x, y, s: str, size: int = 12, fill: str = "black") -> None:
        self.parts.append(
            f'<text x="{x:g}" y="{y:g}" font-family="monospace" '
            f'font-size="{size}" fill="{fill}">{s}</text>')

    def comment(self, s: str) -> None:
        self.parts.append(f"<!-- {s} -->")

    def to_string(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"

    def write(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.to_string())
