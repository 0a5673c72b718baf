"""Feature predicates over base facts, evaluated from the shipped rule files."""

from __future__ import annotations

import functools
from dataclasses import dataclass
from importlib import resources

from .datalog import FactStore, Program, evaluate, parse_program

FLOW_RULES = "flows.dl"
FEATURE_RULES = "features.dl"
DETECTOR_RULES = "detectors.dl"

BALANCE_PREDICATES = ("LoadTokenBalances", "StoreTokenBalances", "LoadandStoreBalances")
CHECK_PREDICATES = ("CheckTokenBalances", "CheckBalancesofInput")
OWNER_PREDICATES = ("PublicFuncForOwner",)
MODIFY_PREDICATES = ("FunctionModifyStorage",)
ROLE_PREDICATES = ("VartoLimitTransfer", "VarforFee")
TRANSFER_PREDICATES = ("FunctionTransfer",)
FEATURE_PREDICATES = (
    BALANCE_PREDICATES
    + CHECK_PREDICATES
    + OWNER_PREDICATES
    + MODIFY_PREDICATES
    + ROLE_PREDICATES
    + TRANSFER_PREDICATES
)


@dataclass(frozen=True, order=True)
class FeatureFact:
    predicate: str
    args: tuple

    def __str__(self) -> str:
        return f"{self.predicate}({', '.join(map(str, self.args))})"


def rule_text(name: str) -> str:
    return resources.files("rugscan.rules").joinpath(name).read_text(encoding="utf-8")


@functools.lru_cache(maxsize=None)
def load_program(*names: str) -> Program:
    program = Program()
    for name in names:
        program = program.extend(parse_program(rule_text(name)))
    return program


def feature_program() -> Program:
    return load_program(FLOW_RULES, FEATURE_RULES)


def close_features(store: FactStore) -> FactStore:
    """Evaluate the flow and feature rules unless ``store`` already holds them."""
    if all(p in store.schemas for p in FEATURE_PREDICATES) and store.strata:
        return store
    return evaluate(store, feature_program())


def _collect(store: FactStore, predicates: tuple[str, ...]) -> list[FeatureFact]:
    closed = close_features(store)
    return sorted(
        (FeatureFact(p, tup) for p in predicates for tup in closed.get(p)),
        key=lambda f: (f.predicate, tuple(map(str, f.args))),
    )


def derive_balance_facts(store: FactStore) -> list[FeatureFact]:
    return _collect(store, BALANCE_PREDICATES)


def derive_check_balances(store: FactStore) -> list[FeatureFact]:
    return _collect(store, CHECK_PREDICATES)


def derive_owner_only(store: FactStore) -> list[FeatureFact]:
    return _collect(store, OWNER_PREDICATES)


def derive_modify_storage(store: FactStore) -> list[FeatureFact]:
    return _collect(store, MODIFY_PREDICATES)


def derive_var_roles(store: FactStore) -> list[FeatureFact]:
    return _collect(store, ROLE_PREDICATES)


def derive_transfer(store: FactStore) -> list[FeatureFact]:
    return _collect(store, TRANSFER_PREDICATES)
