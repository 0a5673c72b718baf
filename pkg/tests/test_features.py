import random

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from rugscan.datalog import FactStore
from rugscan.features import (
    close_features,
    derive_balance_facts,
    derive_check_balances,
    derive_modify_storage,
    derive_owner_only,
    derive_transfer,
    derive_var_roles,
)
from support.expected import MAPPING_LABELS, expected_selector
from support.fixtures import GOLDEN_DIR, analysis, fixture_meta, slot_of

GOLDEN_PREDICATES = (
    "BalanceVar",
    "LoadandStoreBalances",
    "CheckTokenBalances",
    "CheckBalancesofInput",
    "PublicFuncForOwner",
    "FunctionModifyStorage",
    "FunctionTransfer",
    "VartoLimitTransfer",
    "VarforFee",
)
GOLDEN_STEMS = sorted(p.stem for p in GOLDEN_DIR.glob("*.facts"))


def _translate(stem, atom):
    signatures = fixture_meta(stem)["methodIdentifiers"]
    if atom in signatures:
        return expected_selector(atom)
    prefix = "map" if atom in MAPPING_LABELS else "slot"
    return f"{prefix}:{slot_of(stem, atom):#x}"


def golden(stem):
    out = set()
    for line in (GOLDEN_DIR / f"{stem}.facts").read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        pred, *args = line.split("\t")
        out.add((pred, tuple(_translate(stem, a) for a in args)))
    return out


def derived(stem):
    closed = close_features(analysis(stem).base_facts)
    return {(p, tuple(map(str, t))) for p in GOLDEN_PREDICATES for t in closed.get(p)}


def test_golden_files_cover_the_pattern_fixtures():
    assert {"hidden_mint", "limit_sell_flag", "freeze_account", "leak_token", "fee_modification"} <= set(
        GOLDEN_STEMS
    )


@pytest.mark.parametrize("stem", GOLDEN_STEMS)
def test_features_match_golden_file(stem):
    assert derived(stem) == golden(stem)


def test_named_feature_operations_agree_with_closure():
    facts = analysis("leak_token").base_facts
    closed = close_features(facts)
    everything = (
        derive_balance_facts(facts)
        + derive_check_balances(facts)
        + derive_owner_only(facts)
        + derive_modify_storage(facts)
        + derive_var_roles(facts)
        + derive_transfer(facts)
    )
    for fact in everything:
        assert fact.args in closed.get(fact.predicate)
    assert [str(f) for f in derive_owner_only(facts)] == ["PublicFuncForOwner(0xd8960fd9)"]


def test_clamped_setter_is_not_storage_modification():
    closed = close_features(analysis("ownable_clamped").base_facts)
    fee_slot = f"slot:{slot_of('ownable_clamped', 'fee'):#x}"
    set_fee = expected_selector("setFee(uint256)")
    assert (set_fee, fee_slot) not in closed.get("FunctionModifyStorage")
    assert (fee_slot,) in closed.get("VarforFee")


def test_open_setter_is_not_owner_only():
    closed = close_features(analysis("pausable_anyone").base_facts)
    assert not closed.get("PublicFuncForOwner")
    assert (f"slot:{slot_of('pausable_anyone', 'paused'):#x}",) in closed.get("VartoLimitTransfer")


def check_invariants(closed):
    public = closed.get("IsPublicFunction")
    balance_funcs = closed.get("LoadandStoreBalances")
    checked = closed.get("CheckTokenBalances")
    for (f,) in closed.get("FunctionTransfer"):
        assert (f,) in balance_funcs
    for (f,) in closed.get("CheckBalancesofInput"):
        assert (f,) in checked
    for (f,) in closed.get("PublicFuncForOwner"):
        assert (f,) in public
    balance_vars = closed.get("BalanceVar")
    for (v,) in closed.get("VartoLimitTransfer"):
        assert (v,) not in balance_vars


@pytest.mark.parametrize("stem", GOLDEN_STEMS + ["erc20_minimal", "ownable_clamped", "pausable_anyone"])
def test_feature_invariants_on_fixtures(stem):
    check_invariants(close_features(analysis(stem).base_facts))


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(
    st.sampled_from(["hidden_mint", "leak_token", "fee_modification", "freeze_account"]),
    st.integers(0, 2**32 - 1),
    st.floats(0.0, 0.3),
)
def test_feature_invariants_survive_dropped_facts(stem, seed, drop):
    rng = random.Random(seed)
    base = analysis(stem).base_facts
    thinned = FactStore(schemas=base.schemas)
    for name, schema in base.schemas.items():
        thinned.declare(schema)
        thinned.add_all(name, (t for t in base.get(name) if rng.random() >= drop))
    check_invariants(close_features(thinned))
