from collections import deque

import pytest

from rugscan.cfg import build_cfg
from rugscan.evm import disassemble
from rugscan.relations import (
    BASE_SCHEMAS,
    controls_with,
    doomed_nodes,
    extract_facts,
    extract_is_public,
    is_address_constant,
    revert_branches,
)
from rugscan.symbolic import Site
from support.asm import assemble_text
from support.fixtures import analysis, compiled_stems, fixture_meta, slot_of
from support.programs import PROGRAMS


def _reach(cfg, skip=None):
    start = cfg.reachable_nodes[0]
    seen, todo = {start}, deque([start])
    while todo:
        n = todo.popleft()
        for succ, kind in cfg.nodes[n].successors:
            if (n, kind) == skip or succ in seen:
                continue
            seen.add(succ)
            todo.append(succ)
    return seen


def brute_force_controls(cfg):
    """(jumpi site, node) pairs where removing one branch edge cuts the node off."""
    everything = _reach(cfg)
    out = set()
    for nid in cfg.reachable_nodes:
        ctx = cfg.nodes[nid]
        block = cfg.blocks[ctx.block]
        if block.last.name != "JUMPI" or len({s for s, _ in ctx.successors}) < 2:
            continue
        if ctx.run.condition is None or ctx.run.condition.site is None:
            continue
        for _, kind in ctx.successors:
            for lost in everything - _reach(cfg, skip=(nid, kind)):
                out.add((Site(block.last.offset, nid), lost))
    return out


CASES = sorted(PROGRAMS) + ["hidden_mint", "limit_sell_flag", "erc20_minimal", "ownable_clamped"]


def _cfg_for(case):
    if case in PROGRAMS:
        return build_cfg(disassemble(assemble_text(PROGRAMS[case])))
    return analysis(case).cfg


@pytest.mark.parametrize("case", CASES)
def test_controls_with_matches_edge_removal(case):
    cfg = _cfg_for(case)
    if not cfg.reachable_nodes:
        pytest.skip("no code")
    got = {(j, n) for j, n, _ in controls_with(cfg)}
    assert got == brute_force_controls(cfg)


def test_controls_with_reports_the_condition_site():
    cfg = analysis("hidden_mint").cfg
    for jumpi, _, cond in controls_with(cfg):
        assert cfg.nodes[jumpi.node].run.condition.site == cond


def test_doomed_nodes_end_in_revert():
    cfg = _cfg_for("bad_destination_and_revert")
    doomed = doomed_nodes(cfg)
    assert doomed
    for nid in doomed:
        ctx = cfg.nodes[nid]
        assert cfg.blocks[ctx.block].last.name in ("REVERT", "INVALID") or all(
            s in doomed for s, _ in ctx.successors
        )


def test_dispatcher_fallthrough_counts_as_revert_branch():
    cfg = _cfg_for("two_selector_dispatch")
    # the second selector test falls through to the revert block
    assert len(revert_branches(cfg)) == 1


def test_storage_variables_follow_compiler_layout():
    facts = analysis("hidden_mint").base_facts
    variables = {v for (v,) in facts.get("StorageVariable")}
    assert f"map:{slot_of('hidden_mint', '_balances'):#x}" in variables
    assert f"slot:{slot_of('hidden_mint', '_owner'):#x}" in variables
    declared = {s["slot"] for s in fixture_meta("hidden_mint")["storage"]}
    assert all(int(v.split(":")[1], 16) in declared for v in variables)


def test_nested_allowance_mapping_keys():
    facts = analysis("erc20_minimal").base_facts
    root = f"map:{slot_of('erc20_minimal', '_allowances'):#x}"
    keys = {k for _, v, k in facts.get("LoadFromStorage") if v == root}
    assert keys == {"cd[0x4]/caller"}
    stored = {k for _, v, k, _ in facts.get("StoreToStorage") if v == root}
    assert stored == {"caller/cd[0x4]", "cd[0x4]/caller"}


def test_balance_keys_distinguish_sender_and_recipient():
    facts = analysis("erc20_minimal").base_facts
    keys = {k for _, v, k in facts.get("LoadFromStorage") if v == "map:0x0"}
    assert {"caller", "cd[0x4]", "cd[0x24]"} <= keys


@pytest.mark.parametrize("stem", compiled_stems())
def test_is_public_function_matches_abi(stem):
    expected = {(f"0x{s}",) for s in fixture_meta(stem)["methodIdentifiers"].values()}
    assert extract_is_public(analysis(stem).cfg) == expected


@pytest.mark.parametrize("stem", ["hidden_mint", "erc20_minimal", "fee_modification"])
def test_fact_arities_and_site_closure(stem):
    facts = analysis(stem).base_facts
    for name, schema in BASE_SCHEMAS.items():
        assert all(len(t) == schema.arity for t in facts.get(name)), name
    nodes = {s for s, _ in facts.get("NodeOf")}
    for a, b in facts.get("Flow"):
        assert a in nodes and b in nodes
    values = {v for (v,) in facts.get("Value")}
    for _, _, _, value in facts.get("StoreToStorage"):
        assert value in values


def test_extraction_is_deterministic():
    cfg = analysis("leak_token").cfg
    assert extract_facts(cfg).as_dict() == extract_facts(cfg).as_dict()


def test_address_constant_heuristic():
    assert is_address_constant(0x5FBDB2315678AFECB367F032D93F642F64180AA3)
    assert not is_address_constant((1 << 160) - 1)  # the address mask itself
    assert not is_address_constant(10_000)
