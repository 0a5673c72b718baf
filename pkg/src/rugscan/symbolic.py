"""Symbolic stack values and the per-block abstract transfer function.

Values are immutable expression trees. Structural equality ignores the
definition site, so two reads of ``msg.sender`` compare equal while still
carrying distinct sites for data-flow bookkeeping.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

from .evm import Category, Instruction

WORD = 1 << 256
MASK256 = WORD - 1
ADDRESS_MASK = (1 << 160) - 1
SELECTOR_SHIFT = 224


class Site(NamedTuple):
    """A definition site: instruction offset within a context node.

    ``index`` is non-zero only for merge values created at block entry.
    """

    offset: int
    node: int
    index: int = 0

    def __str__(self) -> str:
        if self.index:
            return f"phi{self.offset:#x}.{self.index}@{self.node}"
        return f"{self.offset:#x}@{self.node}"


class Kind(str, enum.Enum):
    CONSTANT = "constant"
    UNKNOWN = "unknown"
    CALLDATA = "calldata_word"
    CALLER = "caller"
    STORAGE_LOAD = "storage_load"
    HASH = "hash_result"
    ARITH = "arithmetic"


@dataclass(frozen=True, eq=False)
class StackValue:
    kind: Kind
    value: int | None = None
    op: str | None = None
    args: tuple["StackValue", ...] = ()
    ref: "StorageRef | None" = None
    tag: object = None
    site: Site | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        key = (self.kind, self.value, self.op, self.args, self.ref, self.tag)
        object.__setattr__(self, "_key", key)
        object.__setattr__(self, "_hash", hash(key))
        depth = 1 + max((a.depth for a in self.args), default=0)
        object.__setattr__(self, "depth", depth)

    def __hash__(self) -> int:
        return self._hash  # type: ignore[attr-defined]

    def __eq__(self, other: object) -> bool:
        if self is other:
            return True
        if not isinstance(other, StackValue) or self._hash != other._hash:  # type: ignore[attr-defined]
            return False
        return self._key == other._key  # type: ignore[attr-defined]

    @property
    def is_const(self) -> bool:
        return self.kind is Kind.CONSTANT

    def is_op(self, *names: str) -> bool:
        return self.kind is Kind.ARITH and self.op in names

    def __repr__(self) -> str:
        return render(self)


def const(value: int, site: Site | None = None) -> StackValue:
    return StackValue(Kind.CONSTANT, value=value % WORD, site=site)


def unknown(tag: object, site: Site | None = None) -> StackValue:
    return StackValue(Kind.UNKNOWN, tag=tag, site=site)


def render(v: StackValue) -> str:
    """Structural fingerprint used for key equality and readable dumps."""
    k = v.kind
    if k is Kind.CONSTANT:
        return hex(v.value or 0)
    if k is Kind.CALLER:
        return "caller"
    if k is Kind.CALLDATA:
        return f"cd[{render(v.args[0])}]"
    if k is Kind.STORAGE_LOAD:
        return f"sload({v.ref})"
    if k is Kind.HASH:
        if not v.args:
            return f"sha3?{v.tag}"
        return "sha3(" + ",".join(render(a) for a in v.args) + ")"
    if k is Kind.ARITH:
        return f"{v.op}(" + ",".join(render(a) for a in v.args) + ")"
    return f"?{v.tag}"


def strip_address_mask(v: StackValue) -> StackValue:
    """Drop AND masks that keep at least the low 160 bits (address cleanup)."""
    while v.is_op("AND") and len(v.args) == 2:
        a, b = v.args
        if b.is_const and a.is_const:
            break
        if b.is_const and _is_low_mask(b.value, 160):
            v = a
        elif a.is_const and _is_low_mask(a.value, 160):
            v = b
        else:
            break
    return v


def _is_low_mask(value: int | None, min_bits: int) -> bool:
    return value is not None and value >= (1 << min_bits) - 1 and value & (value + 1) == 0


class RefKind(str, enum.Enum):
    SLOT = "slot"
    MAPPING = "mapping_entry"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class StorageRef:
    kind: RefKind
    slot: int | None = None
    base: "StorageRef | None" = None
    key: StackValue | None = None
    field_offset: int = 0
    tag: object = None

    @property
    def root(self) -> int | None:
        if self.kind is RefKind.SLOT:
            return self.slot
        if self.kind is RefKind.MAPPING:
            return self.slot if self.base is None else self.base.root
        return None

    @property
    def depth(self) -> int:
        if self.kind is not RefKind.MAPPING:
            return 0
        return 1 if self.base is None else 1 + self.base.depth

    @property
    def variable(self) -> str:
        """Identity of the declared state variable this reference belongs to."""
        if self.kind is RefKind.SLOT:
            return f"slot:{self.slot:#x}"
        if self.kind is RefKind.MAPPING:
            return f"map:{self.root:#x}"
        return f"storage?{self.tag}"

    def __str__(self) -> str:
        if self.kind is RefKind.SLOT:
            return f"slot {self.slot:#x}"
        if self.kind is RefKind.MAPPING:
            base = f"{self.slot:#x}" if self.base is None else str(self.base)
            suffix = f"+{self.field_offset}" if self.field_offset else ""
            return f"{base}[{render(self.key) if self.key is not None else '?'}]{suffix}"
        return f"storage?{self.tag}"


def storage_ref(addr: StackValue, site: Site) -> StorageRef:
    """Classify a storage address computed by the program."""
    if addr.is_const:
        return StorageRef(RefKind.SLOT, slot=addr.value)
    if addr.kind is Kind.HASH and addr.args:
        if len(addr.args) == 2:
            key, base = addr.args
            if base.is_const:
                return StorageRef(RefKind.MAPPING, slot=base.value, key=key)
            inner = storage_ref(base, site)
            if inner.kind is RefKind.MAPPING:
                return StorageRef(RefKind.MAPPING, base=inner, key=key)
        if len(addr.args) == 1 and addr.args[0].is_const:
            return StorageRef(RefKind.MAPPING, slot=addr.args[0].value, key=const(0))
    if addr.is_op("ADD") and len(addr.args) == 2:
        for hashed, other in (addr.args, addr.args[::-1]):
            if hashed.kind is not Kind.HASH or not hashed.args:
                continue
            inner = storage_ref(hashed, site)
            if inner.kind is not RefKind.MAPPING:
                continue
            if len(hashed.args) == 1:
                # dynamic array element: keccak(slot) + index
                return StorageRef(RefKind.MAPPING, slot=inner.slot, key=other)
            if other.is_const and other.value < 256:
                return StorageRef(
                    RefKind.MAPPING, slot=inner.slot, base=inner.base,
                    key=inner.key, field_offset=other.value,
                )
    return StorageRef(RefKind.UNKNOWN, tag=str(site))


# ---- concrete folding ------------------------------------------------------


def _signed(x: int) -> int:
    return x - WORD if x >> 255 else x


def fold(op: str, args: Sequence[int]) -> int | None:
    """Concrete semantics for pure ops; ``None`` when the op is not pure."""
    a = args[0] if args else 0
    b = args[1] if len(args) > 1 else 0
    if op == "ADD":
        return (a + b) % WORD
    if op == "MUL":
        return (a * b) % WORD
    if op == "SUB":
        return (a - b) % WORD
    if op == "DIV":
        return 0 if b == 0 else a // b
    if op == "SDIV":
        if b == 0:
            return 0
        sa, sb = _signed(a), _signed(b)
        q = abs(sa) // abs(sb)
        return (-q if (sa < 0) != (sb < 0) else q) % WORD
    if op == "MOD":
        return 0 if b == 0 else a % b
    if op == "SMOD":
        if b == 0:
            return 0
        sa, sb = _signed(a), _signed(b)
        r = abs(sa) % abs(sb)
        return (-r if sa < 0 else r) % WORD
    if op == "ADDMOD":
        return 0 if args[2] == 0 else (a + b) % args[2]
    if op == "MULMOD":
        return 0 if args[2] == 0 else (a * b) % args[2]
    if op == "EXP":
        return pow(a, b, WORD)
    if op == "SIGNEXTEND":
        if a >= 31:
            return b
        bit = 8 * a + 7
        return b | (WORD - (1 << bit)) if b >> bit & 1 else b & ((1 << bit) - 1)
    if op == "LT":
        return int(a < b)
    if op == "GT":
        return int(a > b)
    if op == "SLT":
        return int(_signed(a) < _signed(b))
    if op == "SGT":
        return int(_signed(a) > _signed(b))
    if op == "EQ":
        return int(a == b)
    if op == "ISZERO":
        return int(a == 0)
    if op == "AND":
        return a & b
    if op == "OR":
        return a | b
    if op == "XOR":
        return a ^ b
    if op == "NOT":
        return MASK256 ^ a
    if op == "BYTE":
        return 0 if a >= 32 else (b >> (8 * (31 - a))) & 0xFF
    if op == "SHL":
        return 0 if a >= 256 else (b << a) % WORD
    if op == "SHR":
        return 0 if a >= 256 else b >> a
    if op == "SAR":
        if a >= 256:
            return MASK256 if b >> 255 else 0
        return (_signed(b) >> a) % WORD
    return None


PURE_OPS = frozenset(
    "ADD MUL SUB DIV SDIV MOD SMOD ADDMOD MULMOD EXP SIGNEXTEND LT GT SLT SGT "
    "EQ ISZERO AND OR XOR NOT BYTE SHL SHR SAR".split()
)


# ---- block execution -------------------------------------------------------


@dataclass(frozen=True)
class Step:
    ins: Instruction
    args: tuple[StackValue, ...]
    result: StackValue | None


@dataclass
class BlockRun:
    steps: list[Step]
    exit_stack: tuple[StackValue, ...]
    exit_memory: dict[int, StackValue]
    jump_target: StackValue | None = None
    condition: StackValue | None = None


@dataclass(frozen=True)
class Limits:
    max_stack: int = 32
    max_expr_depth: int = 16


def _clear_memory(memory: dict[int, StackValue], start: StackValue, length: StackValue | None) -> None:
    if not start.is_const or length is None or not length.is_const:
        memory.clear()
        return
    lo, hi = start.value, start.value + length.value
    for addr in [a for a in memory if a < hi and a + 32 > lo]:
        del memory[addr]


def run_block(
    instructions: Sequence[Instruction],
    node: int,
    entry_stack: Sequence[StackValue],
    entry_memory: dict[int, StackValue],
    limits: Limits = Limits(),
) -> BlockRun:
    """Symbolically execute one basic block from the given entry state."""
    stack = list(entry_stack)
    memory = dict(entry_memory)
    steps: list[Step] = []
    run = BlockRun(steps, (), memory)
    underflow = 0

    def pop() -> StackValue:
        nonlocal underflow
        if stack:
            return stack.pop()
        underflow += 1
        return unknown(("underflow", node, underflow))

    for ins in instructions:
        op = ins.opcode
        name = op.mnemonic
        site = Site(ins.offset, node)
        result: StackValue | None = None

        if op.category is Category.INVALID:
            steps.append(Step(ins, (), None))
            break
        if op.is_push:
            result = const(ins.immediate or 0, site)
            stack.append(result)
            steps.append(Step(ins, (), result))
            continue
        if name.startswith("DUP"):
            n = op.stack_in
            value = stack[-n] if len(stack) >= n else unknown(("underflow", node, n), site)
            stack.append(value)
            continue
        if name.startswith("SWAP"):
            n = op.stack_in
            while len(stack) < n:
                stack.insert(0, unknown(("underflow", node, len(stack)), site))
            stack[-1], stack[-n] = stack[-n], stack[-1]
            continue
        if name == "JUMPDEST":
            continue

        args = tuple(pop() for _ in range(op.stack_in))

        if name in PURE_OPS:
            if all(a.is_const for a in args):
                result = const(fold(name, [a.value for a in args]), site)
            else:
                result = StackValue(Kind.ARITH, op=name, args=args, site=site)
        elif name == "CALLER":
            result = StackValue(Kind.CALLER, site=site)
        elif name == "CALLDATALOAD":
            result = StackValue(Kind.CALLDATA, value=args[0].value, args=args, site=site)
        elif name == "SLOAD":
            result = StackValue(Kind.STORAGE_LOAD, ref=storage_ref(args[0], site), site=site)
        elif name == "SHA3":
            start, length = args
            words = None
            if start.is_const and length.is_const and length.value % 32 == 0 and 0 < length.value <= 128:
                addrs = range(start.value, start.value + length.value, 32)
                if all(a in memory for a in addrs):
                    words = tuple(memory[a] for a in addrs)
            if words is None:
                result = StackValue(Kind.HASH, tag=str(site), site=site)
            else:
                result = StackValue(Kind.HASH, args=words, site=site)
        elif name == "MLOAD":
            addr = args[0]
            if addr.is_const and addr.value in memory:
                result = memory[addr.value]
                stack.append(result)
                steps.append(Step(ins, args, result))
                continue
            result = unknown(str(site), site)
        elif name in ("MSTORE", "MSTORE8"):
            addr, value = args
            if name == "MSTORE" and addr.is_const and addr.value % 32 == 0:
                _clear_memory(memory, addr, const(32))
                memory[addr.value] = value
            else:
                _clear_memory(memory, addr, const(32 if name == "MSTORE" else 1))
        elif name in ("CALLDATACOPY", "CODECOPY", "RETURNDATACOPY"):
            _clear_memory(memory, args[0], args[2])
        elif name == "EXTCODECOPY":
            _clear_memory(memory, args[1], args[3])
        elif name in ("CALL", "CALLCODE"):
            _clear_memory(memory, args[5], args[6])
        elif name in ("DELEGATECALL", "STATICCALL"):
            _clear_memory(memory, args[4], args[5])
        if name == "JUMP":
            run.jump_target = args[0]
        elif name == "JUMPI":
            run.jump_target, run.condition = args

        if op.stack_out and result is None:
            result = StackValue(Kind.ARITH, op=name, args=args, site=site)
        if result is not None and result.depth > limits.max_expr_depth:
            result = unknown(str(site), site)
        if result is not None:
            stack.append(result)
        steps.append(Step(ins, args, result))
        if op.is_terminator:
            break

    run.exit_stack = tuple(stack[-limits.max_stack :])
    return run
