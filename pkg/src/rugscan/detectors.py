"""Backdoor findings from the detector rules, plus the proxy-forwarding flag."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .cfg import FALLBACK, Cfg
from .datalog import FactStore, Rule, evaluate, explain
from .features import DETECTOR_RULES, FEATURE_RULES, FLOW_RULES, close_features, load_program
from .symbolic import Kind, Site, StackValue, render, strip_address_mask


class FindingKind(str, enum.Enum):
    HIDDEN_MINT = "HiddenMint"
    LIMITING_SELL_ORDER = "LimitingSellOrder"
    LEAKING_TOKEN_DIRECT = "LeakingTokenDirect"
    LEAKING_TOKEN_FEE = "LeakingTokenFee"
    PROXY_RISK = "ProxyRisk"


class Severity(str, enum.Enum):
    HIGH = "high"
    MEDIUM = "medium"


BACKDOOR_KINDS = frozenset(k for k in FindingKind if k is not FindingKind.PROXY_RISK)
# derivations through these closures are summarised, not expanded, in evidence
_OPAQUE = frozenset({"Derives", "DataFlows", "FlagFlow", "FlowEdge"})
_EVIDENCE_DEPTH = 4


@dataclass(frozen=True)
class Evidence:
    predicate: str
    args: tuple[str, ...]
    offsets: tuple[int, ...] = ()

    def to_json(self) -> dict:
        return {
            "predicate": self.predicate,
            "args": list(self.args),
            "offsets": [f"{o:#x}" for o in self.offsets],
        }


@dataclass(frozen=True)
class Finding:
    kind: FindingKind
    function: str
    severity: Severity
    evidence: tuple[Evidence, ...] = field(default=(), compare=False)
    variable: str | None = None

    @property
    def sort_key(self) -> tuple[str, str, str]:
        return (self.kind.value, self.function, self.variable or "")

    def to_json(self) -> dict:
        out = {
            "kind": self.kind.value,
            "selector": self.function,
            "severity": self.severity.value,
            "evidence": [e.to_json() for e in self.evidence],
        }
        if self.variable is not None:
            out["variable"] = self.variable
        return out


def detector_program():
    return load_program(DETECTOR_RULES)


def close_detectors(store: FactStore) -> FactStore:
    store = close_features(store)
    if any(r.head.pred not in store.schemas for r in detector_program().rules):
        store = evaluate(store, detector_program())
    return store


def _offsets(store: FactStore, pred: str, tup: tuple, depth: int, seen: set) -> set[int]:
    found = {a.offset for a in tup if isinstance(a, Site)}
    if depth == 0 or pred in _OPAQUE or (pred, tup) in seen:
        return found
    seen.add((pred, tup))
    program = load_program(FLOW_RULES, FEATURE_RULES, DETECTOR_RULES)
    for rule in program.rules:
        if rule.head.pred != pred:
            continue
        proof = explain(store, rule, tup)
        if proof is None:
            continue
        for lit, ground in proof:
            if lit.negated:
                continue
            found |= _offsets(store, lit.pred, ground, depth - 1, seen)
        break
    return found


def _evidence(store: FactStore, rule: Rule, head: tuple) -> tuple[Evidence, ...]:
    proof = explain(store, rule, head)
    if proof is None:  # pragma: no cover - head tuples come from this rule
        raise RuntimeError(f"no derivation of {rule.head.pred}{head}")
    items = []
    for lit, ground in proof:
        name = ("!" if lit.negated else "") + lit.pred
        args = tuple("_" if a is None else str(a) for a in ground)
        offsets = () if lit.negated else tuple(sorted(_offsets(store, lit.pred, ground, _EVIDENCE_DEPTH, set())))
        items.append(Evidence(name, args, offsets))
    return tuple(items)


def _detect(store: FactStore, kind: FindingKind) -> list[Finding]:
    closed = close_detectors(store)
    (rule,) = [r for r in detector_program().rules if r.head.pred == kind.value]
    findings = []
    for head in sorted(closed.get(kind.value), key=lambda t: tuple(map(str, t))):
        findings.append(
            Finding(
                kind,
                str(head[0]),
                Severity.HIGH,
                _evidence(closed, rule, head),
                variable=str(head[1]) if len(head) > 1 else None,
            )
        )
    return findings


def detect_hidden_mint(store: FactStore) -> list[Finding]:
    return _detect(store, FindingKind.HIDDEN_MINT)


def detect_limiting_sell(store: FactStore) -> list[Finding]:
    return _detect(store, FindingKind.LIMITING_SELL_ORDER)


def detect_leaking_token(store: FactStore) -> list[Finding]:
    return _detect(store, FindingKind.LEAKING_TOKEN_DIRECT) + _detect(
        store, FindingKind.LEAKING_TOKEN_FEE
    )


def _fixed_target(value: StackValue) -> bool:
    """Target addresses computed only from storage reads and constants."""
    value = strip_address_mask(value)
    if value.kind in (Kind.CONSTANT, Kind.STORAGE_LOAD):
        return True
    if value.kind is Kind.ARITH:
        return all(_fixed_target(a) for a in value.args)
    return False


def detect_proxy_risk(cfg: Cfg) -> list[Finding]:
    """Flag a fallback that forwards calls with DELEGATECALL to a fixed or stored address."""
    try:
        fallback = cfg.function(FALLBACK)
    except KeyError:
        return []
    evidence = []
    for nid in sorted(fallback.body_nodes):
        run = cfg.nodes[nid].run
        if run is None:
            continue
        for step in run.steps:
            if step.ins.name == "DELEGATECALL" and _fixed_target(step.args[1]):
                evidence.append(Evidence("Delegatecall", (render(step.args[1]),), (step.ins.offset,)))
    if not evidence:
        return []
    evidence = sorted(set(evidence), key=lambda e: (e.offsets, e.args))
    return [Finding(FindingKind.PROXY_RISK, FALLBACK, Severity.MEDIUM, tuple(evidence))]


def detect_all(store: FactStore, cfg: Cfg) -> list[Finding]:
    findings = (
        detect_hidden_mint(store)
        + detect_limiting_sell(store)
        + detect_leaking_token(store)
        + detect_proxy_risk(cfg)
    )
    return sorted(findings, key=lambda f: f.sort_key)
