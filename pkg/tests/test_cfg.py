import pytest

from rugscan.cfg import FALLBACK, EdgeKind, build_cfg
from rugscan.evm import Bytecode, disassemble
from support.asm import assemble_text
from support.fixtures import all_hex_paths, analysis, compiled_stems, fixture_meta
from support.micro_evm import explore, uncovered
from support.programs import PROGRAMS


def _cfg(name):
    return build_cfg(disassemble(assemble_text(PROGRAMS[name])))


@pytest.mark.parametrize("name", sorted(PROGRAMS))
def test_concrete_transitions_are_cfg_edges(name):
    code = assemble_text(PROGRAMS[name])
    cfg = build_cfg(disassemble(code))
    ex = explore(code)
    assert uncovered(cfg, ex.transitions) == set()
    assert not cfg.unresolved_jumps


def test_oracle_comparison_detects_a_missing_edge():
    code = assemble_text(PROGRAMS["shared_subroutine"])
    cfg = build_cfg(disassemble(code))
    ex = explore(code)
    (victim,) = [b for b in cfg.blocks.values() if b.last.name == "JUMP" and len(b.successors) == 2]
    victim.successors = {min(victim.successors)}
    assert uncovered(cfg, ex.transitions)


def test_oracle_reaches_both_return_sites():
    ex = explore(assemble_text(PROGRAMS["shared_subroutine"]))
    fn_jump = max(s for s, _ in ex.transitions)
    assert len({d for s, d in ex.transitions if s == fn_jump}) == 2


def test_return_sites_are_kept_apart_by_context():
    cfg = _cfg("shared_subroutine")
    fn_block = max(cfg.blocks)
    contexts = [c for c in cfg.nodes.values() if c.block == fn_block]
    assert len(contexts) == 2
    assert all(len(c.successors) == 1 for c in contexts)
    targets = {cfg.nodes[c.successors[0][0]].block for c in contexts}
    assert len(targets) == 2


def test_jumpi_edges_are_labelled():
    cfg = _cfg("if_else")
    kinds = {k for b in cfg.blocks.values() for _, k in b.successors}
    assert {EdgeKind.BRANCH_TRUE, EdgeKind.BRANCH_FALSE, EdgeKind.JUMP} <= kinds


def test_invalid_destination_is_not_an_edge():
    cfg = _cfg("bad_destination_and_revert")
    for b in cfg.blocks.values():
        for target, _ in b.successors:
            assert target is None or cfg.blocks[target].starts_with_jumpdest or target == b.end_offset


def test_dispatcher_functions_are_recovered():
    cfg = _cfg("two_selector_dispatch")
    public = sorted(f.name for f in cfg.functions if f.is_public)
    assert public == ["0x095ea7b3", "0xa9059cbb"]
    assert "fallback" in {f.name for f in cfg.functions}


def test_code_without_dispatcher_is_all_fallback():
    cfg = _cfg("straight_line")
    assert [f.name for f in cfg.functions] == [FALLBACK]


def test_empty_code_has_no_blocks():
    cfg = build_cfg(disassemble(b""))
    assert cfg.blocks == {} and not cfg.functions


@pytest.mark.parametrize("path", all_hex_paths(), ids=lambda p: p.stem)
def test_all_fixture_jumps_resolve(path):
    cfg = build_cfg(disassemble(Bytecode.from_hex(path.read_text())))
    assert cfg.unresolved_jumps == set()


@pytest.mark.parametrize("stem", compiled_stems())
def test_recovered_selectors_match_compiler_abi(stem):
    expected = {f"0x{s}" for s in fixture_meta(stem)["methodIdentifiers"].values()}
    found = {f.name for f in analysis(stem).cfg.functions if f.is_public}
    assert found == expected


def test_cfg_dump_lists_reachable_edges():
    text = _cfg("if_else").dump()
    assert "[branch_true]" in text and "[branch_false]" in text
    assert all(line.startswith("block@") for line in text.splitlines())
