"""Basic blocks, jump resolution and public-function recovery.

Jump targets are resolved by abstract interpretation over *context nodes*:
a context is a basic block paired with the jump-relevant constants on its
entry stack (the return addresses pushed by internal calls). Data values
that differ between incoming edges are merged into per-context phi values,
so the number of contexts only grows with distinct return-address stacks.
Each block holds at most ``max_states`` contexts; further arrivals share a
single overflow context where differing entries collapse to unknowns.
"""

from __future__ import annotations

import enum
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .evm import Instruction
from .symbolic import (
    SELECTOR_SHIFT,
    BlockRun,
    Kind,
    Limits,
    Site,
    StackValue,
    run_block,
    unknown,
)

log = logging.getLogger(__name__)

FALLBACK = "fallback"
RECEIVE = "receive"


class EdgeKind(str, enum.Enum):
    FALLTHROUGH = "fallthrough"
    JUMP = "jump"
    BRANCH_TRUE = "branch_true"
    BRANCH_FALSE = "branch_false"
    UNRESOLVED = "unresolved"


@dataclass
class BasicBlock:
    id: int
    instructions: list[Instruction]
    successors: set[tuple[int | None, EdgeKind]] = field(default_factory=set)
    reachable: bool = False

    @property
    def start_offset(self) -> int:
        return self.id

    @property
    def end_offset(self) -> int:
        return self.instructions[-1].next_offset

    @property
    def last(self) -> Instruction:
        return self.instructions[-1]

    @property
    def starts_with_jumpdest(self) -> bool:
        return self.instructions[0].name == "JUMPDEST"


@dataclass
class Context:
    """A block analysed under one family of entry stacks."""

    id: int
    block: int
    key: tuple
    entry_stack: tuple[StackValue, ...]
    entry_memory: dict[int, StackValue]
    run: BlockRun | None = None
    successors: list[tuple[int, EdgeKind]] = field(default_factory=list)
    unresolved: bool = False
    overflow: bool = False


@dataclass(frozen=True)
class FunctionInfo:
    selector: int | str
    entry_block: int
    body_blocks: frozenset[int]
    is_public: bool
    entry_nodes: frozenset[int] = frozenset()
    body_nodes: frozenset[int] = frozenset()

    @property
    def name(self) -> str:
        return selector_name(self.selector)


def selector_name(selector: int | str) -> str:
    return selector if isinstance(selector, str) else f"0x{selector:08x}"


@dataclass
class Cfg:
    instructions: list[Instruction]
    blocks: dict[int, BasicBlock]
    entry: int = 0
    nodes: dict[int, Context] = field(default_factory=dict)
    reachable_nodes: list[int] = field(default_factory=list)
    functions: list[FunctionInfo] = field(default_factory=list)
    unresolved_jumps: set[int] = field(default_factory=set)

    def node_successors(self, node: int) -> list[tuple[int, EdgeKind]]:
        return self.nodes[node].successors

    def function(self, selector: int | str) -> FunctionInfo:
        for fn in self.functions:
            if fn.selector == selector:
                return fn
        raise KeyError(selector)

    @property
    def public_functions(self) -> list[FunctionInfo]:
        return [f for f in self.functions if f.is_public]

    def dump(self) -> str:
        """Edge list, one ``block@offset -> block@offset [kind]`` per line."""
        lines = []
        for bid in sorted(self.blocks):
            block = self.blocks[bid]
            if not block.reachable:
                continue
            for target, kind in sorted(block.successors, key=lambda e: (e[0] is None, e[0] or 0, e[1].value)):
                dest = "?" if target is None else f"block@{target:#06x}"
                lines.append(f"block@{bid:#06x} -> {dest} [{kind.value}]")
        return "\n".join(lines) + ("\n" if lines else "")


# ---- block partition -------------------------------------------------------


def split_blocks(instrs: Sequence[Instruction]) -> dict[int, BasicBlock]:
    blocks: dict[int, BasicBlock] = {}
    current: list[Instruction] = []
    for ins in instrs:
        if current and (ins.name == "JUMPDEST" or current[-1].opcode.is_terminator):
            blocks[current[0].offset] = BasicBlock(current[0].offset, current)
            current = []
        current.append(ins)
    if current:
        blocks[current[0].offset] = BasicBlock(current[0].offset, current)
    return blocks


# ---- jump resolution -------------------------------------------------------


def _merge_stacks(
    ctx: Context, incoming: tuple[StackValue, ...]
) -> tuple[tuple[StackValue, ...], bool]:
    current = ctx.entry_stack
    n = min(len(current), len(incoming))
    changed = n != len(current)
    merged: list[StackValue] = []
    for depth in range(n, 0, -1):
        old, new = current[-depth], incoming[-depth]
        if old == new or (old.kind is Kind.UNKNOWN and isinstance(old.tag, tuple) and old.tag[:2] == ("phi", ctx.id)):
            merged.append(old)
        else:
            merged.append(
                unknown(("phi", ctx.id, depth), Site(ctx.block, ctx.id, depth))
            )
            changed = True
    return tuple(merged), changed


def _merge_memory(ctx: Context, incoming: dict[int, StackValue]) -> bool:
    stale = [a for a, v in ctx.entry_memory.items() if incoming.get(a) != v]
    for addr in stale:
        del ctx.entry_memory[addr]
    return bool(stale)


class _Resolver:
    def __init__(self, blocks: dict[int, BasicBlock], max_states: int, limits: Limits):
        self.blocks = blocks
        self.max_states = max_states
        self.limits = limits
        self.jumpdests = {b for b, blk in blocks.items() if blk.starts_with_jumpdest}
        order = sorted(blocks)
        self.next_block = {a: b for a, b in zip(order, order[1:])}
        self.nodes: dict[int, Context] = {}
        self.by_block: dict[int, dict[tuple, int]] = {}
        self.overflow: dict[int, int] = {}
        self.worklist: deque[int] = deque()
        self.queued: set[int] = set()

    def key(self, stack: Iterable[StackValue]) -> tuple:
        return tuple(
            v.value if v.is_const and v.value in self.jumpdests else None for v in stack
        )

    def _new(self, block: int, key: tuple, stack, memory, overflow=False) -> Context:
        ctx = Context(len(self.nodes), block, key, tuple(stack), dict(memory), overflow=overflow)
        self.nodes[ctx.id] = ctx
        return ctx

    def enqueue(self, ctx: Context) -> None:
        if ctx.id not in self.queued:
            self.queued.add(ctx.id)
            self.worklist.append(ctx.id)

    def arrive(self, block: int, stack: tuple[StackValue, ...], memory: dict) -> int:
        key = self.key(stack)
        known = self.by_block.setdefault(block, {})
        if key in known:
            ctx = self.nodes[known[key]]
        elif len(known) < self.max_states:
            ctx = self._new(block, key, stack, memory)
            known[key] = ctx.id
            self.enqueue(ctx)
            return ctx.id
        elif block in self.overflow:
            ctx = self.nodes[self.overflow[block]]
        else:
            log.debug("state bound reached at block %#x", block)
            ctx = self._new(block, key, stack, memory, overflow=True)
            self.overflow[block] = ctx.id
            self.enqueue(ctx)
            return ctx.id
        ctx.entry_stack, changed = _merge_stacks(ctx, stack)
        changed |= _merge_memory(ctx, memory)
        if changed:
            self.enqueue(ctx)
        return ctx.id

    def step(self, ctx: Context) -> None:
        block = self.blocks[ctx.block]
        run = run_block(block.instructions, ctx.id, ctx.entry_stack, ctx.entry_memory, self.limits)
        ctx.run = run
        ctx.unresolved = False
        targets: list[tuple[int, EdgeKind]] = []
        last = block.last
        name = last.name
        if name == "JUMP":
            tgt = run.jump_target
            if tgt is not None and tgt.is_const:
                if tgt.value in self.jumpdests:
                    targets.append((tgt.value, EdgeKind.JUMP))
            else:
                ctx.unresolved = True
        elif name == "JUMPI":
            tgt, cond = run.jump_target, run.condition
            taken = not (cond is not None and cond.is_const and cond.value == 0)
            falls = not (cond is not None and cond.is_const and cond.value != 0)
            if taken:
                if tgt is not None and tgt.is_const:
                    if tgt.value in self.jumpdests:
                        targets.append((tgt.value, EdgeKind.BRANCH_TRUE))
                else:
                    ctx.unresolved = True
            nxt = self.next_block.get(ctx.block)
            if falls and nxt is not None:
                targets.append((nxt, EdgeKind.BRANCH_FALSE))
        elif not last.opcode.is_terminator:
            nxt = self.next_block.get(ctx.block)
            if nxt is not None and block.end_offset == nxt:
                targets.append((nxt, EdgeKind.FALLTHROUGH))
        succ = []
        for target, kind in targets:
            succ.append((self.arrive(target, run.exit_stack, run.exit_memory), kind))
        ctx.successors = succ

    def solve(self) -> None:
        if 0 not in self.blocks:
            return
        root = self._new(0, (), (), {})
        self.by_block[0] = {(): root.id}
        self.enqueue(root)
        while self.worklist:
            cid = self.worklist.popleft()
            self.queued.discard(cid)
            self.step(self.nodes[cid])


def resolve_jumps(
    blocks: dict[int, BasicBlock],
    instructions: list[Instruction] | None = None,
    max_states: int = 32,
    limits: Limits = Limits(),
) -> Cfg:
    resolver = _Resolver(blocks, max_states, limits)
    resolver.solve()
    if instructions is None:
        instructions = [ins for b in sorted(blocks) for ins in blocks[b].instructions]
    cfg = Cfg(instructions, blocks, nodes=resolver.nodes)

    seen: set[int] = set()
    order: list[int] = []
    todo = deque([0] if resolver.nodes else [])
    while todo:
        nid = todo.popleft()
        if nid in seen:
            continue
        seen.add(nid)
        order.append(nid)
        todo.extend(s for s, _ in resolver.nodes[nid].successors)
    cfg.reachable_nodes = sorted(order)

    for block in blocks.values():
        block.successors = set()
        block.reachable = False
    for nid in cfg.reachable_nodes:
        ctx = resolver.nodes[nid]
        block = blocks[ctx.block]
        block.reachable = True
        for succ, kind in ctx.successors:
            block.successors.add((resolver.nodes[succ].block, kind))
        if ctx.unresolved:
            block.successors.add((None, EdgeKind.UNRESOLVED))
            cfg.unresolved_jumps.add(block.last.offset)
    return cfg


# ---- function recovery -----------------------------------------------------


def _strip_mask(v: StackValue, mask: int) -> StackValue:
    while v.is_op("AND"):
        a, b = v.args
        if b.is_const and b.value == mask:
            v = a
        elif a.is_const and a.value == mask:
            v = b
        else:
            break
    return v


def is_selector(v: StackValue) -> bool:
    """Recognise ``calldata[0:4]`` as computed by compiler dispatchers."""
    v = _strip_mask(v, 0xFFFFFFFF)
    if v.is_op("SHR"):
        shift, word = v.args
        return shift.is_const and shift.value == SELECTOR_SHIFT and _is_word0(word)
    if v.is_op("DIV"):
        word, divisor = v.args
        return divisor.is_const and divisor.value == 1 << SELECTOR_SHIFT and _is_word0(word)
    return False


def _is_word0(v: StackValue) -> bool:
    return v.kind is Kind.CALLDATA and v.value == 0


def dispatch_selector(cond: StackValue | None) -> int | None:
    if cond is None or not cond.is_op("EQ"):
        return None
    a, b = cond.args
    for c, other in ((a, b), (b, a)):
        if c.is_const and c.value < 1 << 32 and is_selector(other):
            return c.value
    return None


def _reach(cfg: Cfg, starts: Iterable[int], stop_blocks: set[int]) -> set[int]:
    seen: set[int] = set()
    todo = list(starts)
    while todo:
        nid = todo.pop()
        if nid in seen:
            continue
        seen.add(nid)
        for succ, _ in cfg.nodes[nid].successors:
            if cfg.nodes[succ].block not in stop_blocks:
                todo.append(succ)
    return seen


def recover_functions(cfg: Cfg) -> Cfg:
    entries: dict[int, set[int]] = {}
    for nid in cfg.reachable_nodes:
        ctx = cfg.nodes[nid]
        if ctx.run is None or cfg.blocks[ctx.block].last.name != "JUMPI":
            continue
        selector = dispatch_selector(ctx.run.condition)
        if selector is None:
            continue
        hits = {s for s, kind in ctx.successors if kind is EdgeKind.BRANCH_TRUE}
        if hits:
            entries.setdefault(selector, set()).update(hits)

    entry_blocks = {sel: {cfg.nodes[n].block for n in nodes} for sel, nodes in entries.items()}
    all_entry_blocks = set().union(*entry_blocks.values()) if entry_blocks else set()
    functions = []
    for selector in sorted(entries):
        own = entry_blocks[selector]
        body = _reach(cfg, entries[selector], all_entry_blocks - own)
        functions.append(
            FunctionInfo(
                selector=selector,
                entry_block=min(own),
                body_blocks=frozenset(cfg.nodes[n].block for n in body),
                is_public=True,
                entry_nodes=frozenset(entries[selector]),
                body_nodes=frozenset(body),
            )
        )
    if cfg.reachable_nodes:
        body = _reach(cfg, [0], all_entry_blocks)
        functions.append(
            FunctionInfo(
                selector=FALLBACK,
                entry_block=0,
                body_blocks=frozenset(cfg.nodes[n].block for n in body),
                is_public=False,
                entry_nodes=frozenset([0]),
                body_nodes=frozenset(body),
            )
        )
    cfg.functions = functions
    return cfg


def build_cfg(instructions: list[Instruction], max_states: int = 32, limits: Limits = Limits()) -> Cfg:
    blocks = split_blocks(instructions)
    cfg = resolve_jumps(blocks, instructions, max_states=max_states, limits=limits)
    return recover_functions(cfg)
