"""Ground facts extracted from a resolved CFG.

Sites (:class:`~rugscan.symbolic.Site`) are the variable identities: an
instruction offset inside a context node. State variables are named
``slot:0x..`` for fixed slots, ``map:0x..`` for mappings and arrays rooted
at a declared slot, and ``storage?<site>`` for addresses we cannot classify.
Mapping keys are identified by a structural fingerprint (see
:func:`key_fingerprint`), so two accesses with the same symbolic key share
the same key atom.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable

import networkx as nx

from .cfg import Cfg, EdgeKind
from .config import Config
from .datalog import FactStore, Schema
from .evm import Category
from .symbolic import (
    ADDRESS_MASK,
    Kind,
    RefKind,
    Site,
    StackValue,
    StorageRef,
    render,
    storage_ref,
    strip_address_mask,
)

log = logging.getLogger(__name__)


def _schema(name: str, *kinds: str) -> Schema:
    return Schema(name, len(kinds), kinds)


BASE_SCHEMAS: dict[str, Schema] = {
    s.name: s
    for s in [
        # the six program relations
        _schema("StorageVariable", "var"),
        _schema("LoadFromStorage", "site", "var", "key"),
        _schema("StoreToStorage", "site", "var", "key", "site"),
        _schema("IsPublicFunction", "func"),
        _schema("ControlsWith", "site", "node", "site"),
        # def-use edges closed into DataFlows by the rule program
        _schema("Flow", "site", "site"),
        _schema("StoreFlow", "site", "var"),
        _schema("LoadFlow", "var", "site"),
        # auxiliary structure the feature rules join against
        _schema("Value", "site"),
        _schema("Op", "site", "op"),
        _schema("Arg", "site", "int", "site"),
        _schema("ConstSite", "site"),
        _schema("AddressConst", "site"),
        _schema("DivisorValue", "site", "int"),
        _schema("Caller", "site"),
        _schema("CalldataLoad", "site"),
        _schema("NodeOf", "site", "node"),
        _schema("NodeBlock", "node", "block"),
        _schema("NodeInFunction", "node", "func"),
        _schema("Jumpi", "site", "site"),
        _schema("RevertBranch", "site"),
        _schema("StateModifying", "site"),
        _schema("AddressKeyed", "site"),
        _schema("StorageKey", "site", "site"),
        _schema("FlagStep", "site", "site"),
        _schema("FeeDivisor", "int"),
        _schema("ConstantOwnerAllowed", "flag"),
    ]
}

STATE_MODIFYING = frozenset(
    {"SSTORE", "CALL", "CALLCODE", "DELEGATECALL", "SELFDESTRUCT", "CREATE", "CREATE2"}
)
# ops through which a stored flag keeps its identity when compared to constants
FLAG_OPS = frozenset(
    {"AND", "OR", "XOR", "NOT", "ISZERO", "EQ", "SHR", "SHL", "SAR", "DIV", "BYTE", "SIGNEXTEND"}
)
# no value flows from these ops' operands into their result
_NO_OPERAND_FLOW = frozenset({"SLOAD", "MLOAD", "SHA3"})
_MIN_ADDRESS_CONST = 1 << 32
NO_KEY = "-"


def key_fingerprint(ref: StorageRef) -> str:
    """Canonical text for the key path of a storage reference."""
    if ref.kind is not RefKind.MAPPING:
        return NO_KEY
    part = render(strip_address_mask(ref.key)) if ref.key is not None else "?"
    if ref.field_offset:
        part += f"+{ref.field_offset}"
    if ref.base is None:
        return part
    return f"{key_fingerprint(ref.base)}/{part}"


def key_values(ref: StorageRef) -> list[StackValue]:
    out: list[StackValue] = []
    while ref is not None and ref.kind is RefKind.MAPPING:
        if ref.key is not None:
            out.append(ref.key)
        ref = ref.base
    return out


def is_address_shaped(key: StackValue) -> bool:
    """Keys that look like an account: caller, a masked word, a param or a stored address."""
    stripped = strip_address_mask(key)
    if stripped is not key and key.is_op("AND"):
        return True
    return stripped.kind in (Kind.CALLER, Kind.CALLDATA, Kind.STORAGE_LOAD, Kind.UNKNOWN)


def is_address_constant(value: int) -> bool:
    return _MIN_ADDRESS_CONST <= value <= ADDRESS_MASK and value & (value + 1) != 0


@dataclass
class _Facts:
    rows: dict[str, set[tuple]] = field(default_factory=lambda: defaultdict(set))

    def add(self, name: str, *atoms: object) -> None:
        self.rows[name].add(atoms)


def _scan_values(cfg: Cfg, facts: _Facts) -> None:
    for nid in cfg.reachable_nodes:
        ctx = cfg.nodes[nid]
        if ctx.run is None:
            continue
        for value in ctx.entry_stack:
            site = value.site
            if site is not None and site.node == nid and site.index:
                facts.add("Value", site)
                facts.add("NodeOf", site, nid)
        for step in ctx.run.steps:
            _scan_step(nid, step, facts)
        for succ, _ in ctx.successors:
            entry = cfg.nodes[succ].entry_stack
            exit_ = ctx.run.exit_stack
            for depth in range(1, min(len(entry), len(exit_)) + 1):
                src, dst = exit_[-depth].site, entry[-depth].site
                if src is not None and dst is not None and src != dst:
                    facts.add("Flow", src, dst)
                    facts.add("FlagStep", src, dst)


def _scan_step(nid: int, step, facts: _Facts) -> None:
    ins, args, result = step.ins, step.args, step.result
    name = ins.name
    site = Site(ins.offset, nid)
    defines = result is not None and result.site == site
    if defines:
        facts.add("Value", site)
    if defines or result is None:
        facts.add("Op", site, name)
        facts.add("NodeOf", site, nid)
    for pos, arg in enumerate(args):
        if arg.site is None:
            continue
        if defines or result is None:
            facts.add("Arg", site, pos, arg.site)
        if arg.is_const:
            facts.add("ConstSite", arg.site)
            if is_address_constant(arg.value):
                facts.add("AddressConst", arg.site)
        if defines and name not in _NO_OPERAND_FLOW:
            facts.add("Flow", arg.site, site)
    if defines and name in FLAG_OPS:
        for pos, arg in enumerate(args):
            others = args[:pos] + args[pos + 1 :]
            if arg.site is not None and not arg.is_const and all(o.is_const for o in others):
                facts.add("FlagStep", arg.site, site)
    if name in STATE_MODIFYING:
        facts.add("StateModifying", site)
    if not defines:
        if name == "SSTORE":
            _store(site, args, facts)
        elif name == "JUMPI" and args[1].site is not None:
            facts.add("Jumpi", site, args[1].site)
        return
    if name == "CALLER":
        facts.add("Caller", site)
    elif name == "CALLDATALOAD":
        facts.add("CalldataLoad", site)
    elif name == "SLOAD" and result.kind is Kind.STORAGE_LOAD:
        ref = result.ref
        facts.add("LoadFromStorage", site, ref.variable, key_fingerprint(ref))
        facts.add("StorageVariable", ref.variable)
        facts.add("LoadFlow", ref.variable, site)
        _keys(site, ref, facts)
    elif name == "SHA3":
        for word in result.args:
            if word.site is not None:
                facts.add("Flow", word.site, site)
    elif name in ("DIV", "SDIV") and args[1].is_const:
        facts.add("DivisorValue", site, args[1].value)


def _store(site: Site, args: tuple[StackValue, ...], facts: _Facts) -> None:
    addr, value = args
    ref = storage_ref(addr, site)
    value_site = value.site if value.site is not None else site
    facts.add("StoreToStorage", site, ref.variable, key_fingerprint(ref), value_site)
    facts.add("StorageVariable", ref.variable)
    if value.site is not None:
        facts.add("StoreFlow", value.site, ref.variable)
    _keys(site, ref, facts)


def _keys(site: Site, ref: StorageRef, facts: _Facts) -> None:
    for key in key_values(ref):
        if key.site is not None:
            facts.add("StorageKey", site, key.site)
    if (
        ref.kind is RefKind.MAPPING
        and ref.depth == 1
        and not ref.field_offset
        and ref.key is not None
        and is_address_shaped(ref.key)
    ):
        facts.add("AddressKeyed", site)


# ---- control facts ---------------------------------------------------------


def doomed_nodes(cfg: Cfg) -> set[int]:
    """Context nodes from which every path ends in REVERT or an invalid opcode."""
    doomed: set[int] = set()
    preds: dict[int, set[int]] = defaultdict(set)
    pending: dict[int, int] = {}
    todo: list[int] = []
    for nid in cfg.reachable_nodes:
        ctx = cfg.nodes[nid]
        last = cfg.blocks[ctx.block].last
        succs = {s for s, _ in ctx.successors}
        for s in succs:
            preds[s].add(nid)
        if last.name in ("REVERT", "INVALID") or last.opcode.category is Category.INVALID:
            todo.append(nid)
        elif succs and not ctx.unresolved:
            pending[nid] = len(succs)
        else:
            pending[nid] = -1  # halts normally or escapes analysis
    while todo:
        nid = todo.pop()
        if nid in doomed:
            continue
        doomed.add(nid)
        for p in preds[nid]:
            if pending.get(p, -1) > 0:
                pending[p] -= 1
                if pending[p] == 0:
                    todo.append(p)
    return doomed


_ANY = ("any",)


def control_graph(cfg: Cfg) -> tuple[nx.DiGraph, dict[tuple, tuple[Site, Site]]]:
    """Context graph with one extra vertex per conditional-branch edge.

    Unresolved jumps lead to a synthetic vertex connected to every
    JUMPDEST context, which can only shrink dominated sets.
    """
    graph = nx.DiGraph()
    branch_edges: dict[tuple, tuple[Site, Site]] = {}
    jumpdest_nodes = []
    any_used = False
    for nid in cfg.reachable_nodes:
        ctx = cfg.nodes[nid]
        graph.add_node(("n", nid))
        block = cfg.blocks[ctx.block]
        if block.starts_with_jumpdest:
            jumpdest_nodes.append(nid)
        targets = {s for s, _ in ctx.successors}
        cond = ctx.run.condition if ctx.run is not None else None
        conditional = block.last.name == "JUMPI" and len(targets) > 1 and cond is not None and cond.site
        for succ, kind in ctx.successors:
            if conditional:
                edge = ("e", nid, kind.value)
                graph.add_edge(("n", nid), edge)
                graph.add_edge(edge, ("n", succ))
                branch_edges[edge] = (Site(block.last.offset, nid), cond.site)
            else:
                graph.add_edge(("n", nid), ("n", succ))
        if ctx.unresolved:
            graph.add_edge(("n", nid), _ANY)
            any_used = True
    if any_used:
        for nid in jumpdest_nodes:
            graph.add_edge(_ANY, ("n", nid))
    return graph, branch_edges


def controls_with(cfg: Cfg) -> set[tuple[Site, int, Site]]:
    if not cfg.reachable_nodes:
        return set()
    graph, branch_edges = control_graph(cfg)
    idom = nx.immediate_dominators(graph, ("n", cfg.reachable_nodes[0]))
    children: dict[tuple, list[tuple]] = defaultdict(list)
    for v, d in idom.items():
        if v != d:
            children[d].append(v)
    out: set[tuple[Site, int, Site]] = set()
    for edge, (jumpi, cond) in branch_edges.items():
        stack = list(children.get(edge, ()))
        while stack:
            v = stack.pop()
            if v[0] == "n":
                out.add((jumpi, v[1], cond))
            stack.extend(children.get(v, ()))
    return out


def revert_branches(cfg: Cfg, doomed: set[int] | None = None) -> set[Site]:
    doomed = doomed_nodes(cfg) if doomed is None else doomed
    out = set()
    for nid in cfg.reachable_nodes:
        ctx = cfg.nodes[nid]
        block = cfg.blocks[ctx.block]
        if block.last.name != "JUMPI" or nid in doomed:
            continue
        if any(s in doomed for s, kind in ctx.successors if kind is not EdgeKind.UNRESOLVED):
            out.add(Site(block.last.offset, nid))
    return out


# ---- public extraction operations ------------------------------------------


def _value_facts(cfg: Cfg) -> _Facts:
    facts = _Facts()
    _scan_values(cfg, facts)
    return facts


def extract_storage_variable(cfg: Cfg) -> set[tuple]:
    return _value_facts(cfg).rows["StorageVariable"]


def extract_load_store(cfg: Cfg) -> tuple[set[tuple], set[tuple]]:
    rows = _value_facts(cfg).rows
    return rows["LoadFromStorage"], rows["StoreToStorage"]


def extract_data_flows(cfg: Cfg) -> dict[str, set[tuple]]:
    """Def-use edges; the rule program closes them into ``DataFlows``."""
    rows = _value_facts(cfg).rows
    return {name: rows[name] for name in ("Flow", "StoreFlow", "LoadFlow", "Value")}


def extract_controls_with(cfg: Cfg) -> set[tuple]:
    return controls_with(cfg)


def extract_is_public(cfg: Cfg) -> set[tuple]:
    return {(f.name,) for f in cfg.functions if f.is_public}


def extract_facts(cfg: Cfg, config: Config | None = None) -> FactStore:
    """All base relations for one contract."""
    config = config or Config()
    facts = _value_facts(cfg)
    rows = facts.rows
    rows["IsPublicFunction"] = extract_is_public(cfg)
    rows["ControlsWith"] = controls_with(cfg)
    doomed = doomed_nodes(cfg)
    rows["RevertBranch"] = {(s,) for s in revert_branches(cfg, doomed)}
    for fn in cfg.functions:
        for nid in fn.body_nodes:
            facts.add("NodeInFunction", nid, fn.name)
    for nid in cfg.reachable_nodes:
        facts.add("NodeBlock", nid, cfg.nodes[nid].block)
    rows["FeeDivisor"] = {(d,) for d in config.fee_divisors}
    if config.owner_guard == "storage-or-constant":
        facts.add("ConstantOwnerAllowed", "yes")
    store = FactStore(schemas=BASE_SCHEMAS)
    for schema in BASE_SCHEMAS.values():
        store.declare(schema)
        store.add_all(schema.name, rows.get(schema.name, ()))
    log.debug("extracted base facts: %s", store.sizes())
    return store


def iter_sites(store: FactStore, names: Iterable[str]) -> Iterable[Site]:
    for name in names:
        for tup in store.relation(name):
            for atom in tup:
                if isinstance(atom, Site):
                    yield atom
