"""Corpus runs against a labelled manifest, with precision and recall per kind.

A manifest is either a JSON list of entries or an object
``{"name": ..., "entries": [...]}``. Each entry is::

    {"target": "hex/foo.hex" | "0x<address>", "expected": ["HiddenMint", ...]}

Relative file targets resolve against the manifest's directory. An entry
may carry its own ``"rpc_url"``; otherwise the run-wide endpoint is used.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from .config import Config
from .detectors import BACKDOOR_KINDS, FindingKind
from .errors import AnalysisError, InvalidInputError
from .pipeline import analyze, parse_hex_input
from .rpc import fetch_code, is_address

log = logging.getLogger(__name__)

METRIC_KINDS = tuple(sorted(k.value for k in BACKDOOR_KINDS))
_ALL_KINDS = {k.value for k in FindingKind}


@dataclass(frozen=True)
class Entry:
    target: str
    expected: frozenset[str]
    rpc_url: str | None = None

    @property
    def is_address(self) -> bool:
        return is_address(self.target)


@dataclass
class Manifest:
    name: str
    entries: list[Entry]

    @classmethod
    def from_data(cls, data, base_dir: str = ".", name: str = "corpus") -> "Manifest":
        if isinstance(data, dict):
            name = data.get("name", name)
            data = data.get("entries")
        if not isinstance(data, list):
            raise InvalidInputError("manifest must be a list of entries or an object with 'entries'")
        entries = []
        for i, raw in enumerate(data):
            if not isinstance(raw, dict) or "target" not in raw:
                raise InvalidInputError(f"manifest entry {i} needs a 'target'")
            expected = frozenset(raw.get("expected", []))
            unknown = expected - _ALL_KINDS
            if unknown:
                raise InvalidInputError(f"manifest entry {i}: unknown kinds {sorted(unknown)}")
            target = str(raw["target"])
            if not is_address(target) and not os.path.isabs(target):
                target = os.path.normpath(os.path.join(base_dir, target))
            entries.append(Entry(target, expected, raw.get("rpc_url")))
        return cls(name, entries)

    @classmethod
    def load(cls, path: str) -> "Manifest":
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidInputError(f"cannot read manifest {path}: {exc}") from None
        stem = os.path.splitext(os.path.basename(path))[0]
        return cls.from_data(data, os.path.dirname(os.path.abspath(path)), stem)


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float | None:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else None

    @property
    def recall(self) -> float | None:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else None

    @property
    def f1(self) -> float | None:
        p, r = self.precision, self.recall
        if p is None or r is None or p + r == 0:
            return None
        return 2 * p * r / (p + r)

    def to_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }


@dataclass
class TargetResult:
    target: str
    expected: frozenset[str]
    predicted: frozenset[str] = frozenset()
    report: dict | None = None
    error: str | None = None
    error_code: str | None = None

    def to_dict(self) -> dict:
        out = {
            "target": self.target,
            "expected": sorted(self.expected),
            "predicted": sorted(self.predicted),
        }
        if self.error is not None:
            out["error"] = {"code": self.error_code, "message": self.error}
        return out


@dataclass
class BatchResult:
    name: str
    results: list[TargetResult]
    per_kind: dict[str, Counts] = field(default_factory=dict)
    overall: Counts = field(default_factory=Counts)

    @property
    def failures(self) -> list[TargetResult]:
        return [r for r in self.results if r.error is not None]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "targets": len(self.results),
            "failed": len(self.failures),
            "overall": self.overall.to_dict(),
            "per_kind": {k: c.to_dict() for k, c in sorted(self.per_kind.items())},
            "results": [r.to_dict() for r in self.results],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        def fmt(x: float | None) -> str:
            return "  n/a" if x is None else f"{x:5.3f}"

        lines = [f"corpus {self.name}: {len(self.results)} targets, {len(self.failures)} failed", ""]
        lines.append(f"{'kind':<20} {'TP':>4} {'FP':>4} {'FN':>4} {'prec':>6} {'recall':>6} {'F1':>6}")
        rows = [(k, self.per_kind[k]) for k in sorted(self.per_kind)] + [("overall", self.overall)]
        for name, c in rows:
            lines.append(
                f"{name:<20} {c.tp:>4} {c.fp:>4} {c.fn:>4} {fmt(c.precision):>6} {fmt(c.recall):>6} {fmt(c.f1):>6}"
            )
        mismatches = [r for r in self.results if r.error is None and r.predicted != r.expected]
        if mismatches or self.failures:
            lines.append("")
        for r in mismatches:
            lines.append(
                f"mismatch {r.target}: expected {sorted(r.expected) or '-'} got {sorted(r.predicted) or '-'}"
            )
        for r in self.failures:
            lines.append(f"failed   {r.target}: [{r.error_code}] {r.error}")
        return "\n".join(lines) + "\n"


def score(results: list[TargetResult]) -> tuple[dict[str, Counts], Counts]:
    """Contract-level counts per kind; a failed target contributes its expected kinds as misses."""
    per_kind = {k: Counts() for k in METRIC_KINDS}
    for r in results:
        expected = r.expected & set(METRIC_KINDS)
        for kind in METRIC_KINDS:
            c = per_kind[kind]
            if kind in r.predicted and kind in expected:
                c.tp += 1
            elif kind in r.predicted:
                c.fp += 1
            elif kind in expected:
                c.fn += 1
    overall = Counts(
        sum(c.tp for c in per_kind.values()),
        sum(c.fp for c in per_kind.values()),
        sum(c.fn for c in per_kind.values()),
    )
    return per_kind, overall


def _load_target(entry: Entry, config: Config, cache_dir: str | None, rpc_url: str | None):
    if entry.is_address:
        return fetch_code(entry.target, entry.rpc_url or rpc_url, config.rpc, cache_dir)
    try:
        with open(entry.target, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise InvalidInputError(f"cannot read {entry.target}: {exc.strerror}") from None
    return parse_hex_input(text)


def _run_one(
    entry: Entry, config: Config, cache_dir: str | None, rpc_url: str | None
) -> TargetResult:
    try:
        report = analyze(_load_target(entry, config, cache_dir, rpc_url), config)
    except AnalysisError as exc:
        return TargetResult(entry.target, entry.expected, error=str(exc), error_code=exc.code)
    except Exception as exc:  # one bad target must not sink the corpus run
        log.exception("analysis of %s crashed", entry.target)
        return TargetResult(entry.target, entry.expected, error=repr(exc), error_code="internal")
    return TargetResult(
        entry.target, entry.expected, frozenset(report.backdoor_kinds), report=report.to_dict()
    )


def run_batch(
    manifest: Manifest,
    config: Config | None = None,
    jobs: int | None = None,
    cache_dir: str | None = None,
    rpc_url: str | None = None,
) -> BatchResult:
    config = config or Config()
    jobs = jobs or os.cpu_count() or 1
    args = [(e, config, cache_dir, rpc_url) for e in manifest.entries]
    if jobs == 1 or len(args) <= 1:
        results = [_run_one(*a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(args))) as pool:
            results = list(pool.map(_run_one, *zip(*args)))
    per_kind, overall = score(results)
    log.info("batch %s: %d targets, %d failed", manifest.name, len(results), sum(r.error is not None for r in results))
    return BatchResult(manifest.name, results, per_kind, overall)


def write_reports(result: BatchResult, out_dir: str) -> list[str]:
    """One JSON report per analysed target, named by position and file stem."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for i, r in enumerate(result.results):
        stem = os.path.splitext(os.path.basename(r.target))[0]
        path = os.path.join(out_dir, f"{i:03d}_{stem}.json")
        body = r.report if r.report is not None else r.to_dict()
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(body, fh, indent=2, sort_keys=True)
            fh.write("\n")
        paths.append(path)
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        fh.write(result.to_json())
    return paths
