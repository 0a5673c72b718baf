"""Paths and cached analyses for the committed bytecode fixtures."""

from __future__ import annotations

import json
from functools import lru_cache
from pathlib import Path

from rugscan.config import Config
from rugscan.pipeline import Analysis, run_analysis

TESTS = Path(__file__).resolve().parent.parent
FIXTURES = TESTS / "fixtures"
HEX_DIR = FIXTURES / "hex"
CORPUS_DIR = FIXTURES / "corpus"
CORPUS_MANIFEST = CORPUS_DIR / "manifest.json"
GOLDEN_DIR = FIXTURES / "golden"
ASM_DIR = FIXTURES / "asm"


def hex_path(stem: str) -> Path:
    return HEX_DIR / f"{stem}.hex"


def fixture_hex(stem: str) -> str:
    return hex_path(stem).read_text().strip()


def fixture_meta(stem: str) -> dict:
    return json.loads((HEX_DIR / f"{stem}.meta.json").read_text())


def compiled_stems() -> list[str]:
    return sorted(p.name[: -len(".meta.json")] for p in HEX_DIR.glob("*.meta.json"))


def all_hex_paths() -> list[Path]:
    return sorted(HEX_DIR.glob("*.hex")) + sorted((CORPUS_DIR / "hex").glob("*.hex"))


def slot_of(stem: str, label: str) -> int:
    (entry,) = [s for s in fixture_meta(stem)["storage"] if s["label"] == label]
    return entry["slot"]


@lru_cache(maxsize=None)
def analysis(stem: str) -> Analysis:
    return run_analysis(fixture_hex(stem), Config())
