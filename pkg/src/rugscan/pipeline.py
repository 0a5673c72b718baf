"""End-to-end analysis of one contract and the report it produces."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

from Crypto.Hash import keccak

from . import __version__
from .cfg import Cfg, build_cfg
from .config import Config
from .datalog import FactStore
from .detectors import BACKDOOR_KINDS, Finding, Severity, close_detectors, detect_all
from .errors import InvalidInputError
from .evm import Bytecode, InvalidHexError, disassemble, parse_hex, strip_metadata
from .relations import extract_facts
from .symbolic import Limits

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1


def keccak256(data: bytes) -> bytes:
    return keccak.new(digest_bits=256, data=data).digest()


@dataclass
class Report:
    analyzer_version: str
    code_hash: str
    stats: dict
    findings: list[Finding] = field(default_factory=list)

    @property
    def has_high_severity(self) -> bool:
        return any(f.severity is Severity.HIGH for f in self.findings)

    @property
    def backdoor_kinds(self) -> set[str]:
        return {f.kind.value for f in self.findings if f.kind in BACKDOOR_KINDS}

    def to_dict(self) -> dict:
        return {
            "analyzer_version": self.analyzer_version,
            "schema_version": REPORT_SCHEMA_VERSION,
            "code_hash": self.code_hash,
            "stats": self.stats,
            "findings": [f.to_json() for f in self.findings],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        s = self.stats
        lines = [
            f"code hash  {self.code_hash}",
            f"code       {s['code_size']} bytes, {s['instructions']} instructions",
            f"cfg        {s['blocks']} blocks ({s['reachable_blocks']} reachable), "
            f"{s['unresolved_jumps']} unresolved jumps",
            f"functions  {s['functions']} public: {', '.join(s['selectors']) or '-'}",
        ]
        if not self.findings:
            lines.append("findings   none")
        for f in self.findings:
            target = f" on {f.variable}" if f.variable else ""
            lines.append(f"[{f.severity.value}] {f.kind.value} in {f.function}{target}")
            for ev in f.evidence:
                where = f"  @ {', '.join(f'{o:#x}' for o in ev.offsets)}" if ev.offsets else ""
                lines.append(f"    {ev.predicate}({', '.join(ev.args)}){where}")
        return "\n".join(lines) + "\n"


@dataclass
class Analysis:
    """Intermediate products kept for dumps and debugging."""

    bytecode: Bytecode
    cfg: Cfg
    base_facts: FactStore
    facts: FactStore
    report: Report


def coerce_bytecode(code: Bytecode | bytes | bytearray | str) -> Bytecode:
    if isinstance(code, Bytecode):
        return code
    if isinstance(code, str):
        try:
            return Bytecode.from_hex(code)
        except InvalidHexError as exc:
            raise InvalidInputError(f"not a hex string: {exc}") from None
    if isinstance(code, (bytes, bytearray)):
        return strip_metadata(bytes(code))
    raise InvalidInputError(f"unsupported input type {type(code).__name__}")


def run_analysis(code: Bytecode | bytes | str, config: Config | None = None) -> Analysis:
    config = config or Config()
    bytecode = coerce_bytecode(code)
    instructions = disassemble(bytecode)
    limits = Limits(max_stack=config.max_stack, max_expr_depth=config.max_expr_depth)
    cfg = build_cfg(instructions, max_states=config.max_states, limits=limits)
    base = extract_facts(cfg, config)
    closed = close_detectors(base)
    findings = detect_all(closed, cfg)
    public = [f for f in cfg.functions if f.is_public]
    stats = {
        "code_size": len(bytecode.code),
        "metadata_trailer_len": bytecode.metadata_trailer_len,
        "instructions": len(instructions),
        "blocks": len(cfg.blocks),
        "reachable_blocks": sum(1 for b in cfg.blocks.values() if b.reachable),
        "context_nodes": len(cfg.reachable_nodes),
        "state_bound_hit": any(cfg.nodes[n].overflow for n in cfg.reachable_nodes),
        "unresolved_jumps": len(cfg.unresolved_jumps),
        "functions": len(public),
        "selectors": [f.name for f in public],
        "facts": sum(len(r) for r in base.relations.values()),
    }
    report = Report(
        analyzer_version=__version__,
        code_hash="0x" + keccak256(bytecode.bytes).hex(),
        stats=stats,
        findings=findings,
    )
    log.info("analysed %d bytes: %d findings", len(bytecode.bytes), len(findings))
    return Analysis(bytecode, cfg, base, closed, report)


def analyze(code: Bytecode | bytes | str, config: Config | None = None) -> Report:
    """Disassemble, build the CFG, extract facts, run the rules and report."""
    return run_analysis(code, config).report


def parse_hex_input(text: str) -> Bytecode:
    try:
        return strip_metadata(parse_hex(text))
    except InvalidHexError as exc:
        raise InvalidInputError(str(exc)) from None
