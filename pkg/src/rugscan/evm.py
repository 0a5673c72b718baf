"""EVM opcode table, runtime-bytecode container and linear-sweep disassembler."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Sequence


class Category(str, enum.Enum):
    ARITHMETIC = "arithmetic"
    COMPARISON = "comparison"
    HASH = "hash"
    ENVIRONMENT = "environment"
    STORAGE = "storage"
    MEMORY = "memory"
    STACK = "stack"
    CONTROL = "control"
    CALL = "call"
    LOG = "log"
    SYSTEM = "system"
    INVALID = "invalid"


@dataclass(frozen=True)
class Opcode:
    byte: int
    mnemonic: str
    immediate_len: int
    stack_in: int
    stack_out: int
    category: Category

    @property
    def is_push(self) -> bool:
        return 0x5F <= self.byte <= 0x7F and self.category is not Category.INVALID

    @property
    def is_terminator(self) -> bool:
        """True for instructions that end a basic block."""
        if self.category is Category.INVALID:
            return True
        return self.category is Category.CONTROL and self.mnemonic != "JUMPDEST"


def _table() -> dict[int, Opcode]:
    A, C, H, E = Category.ARITHMETIC, Category.COMPARISON, Category.HASH, Category.ENVIRONMENT
    S, M, K, X = Category.STORAGE, Category.MEMORY, Category.STACK, Category.CONTROL
    rows: list[tuple[int, str, int, int, Category]] = [
        (0x00, "STOP", 0, 0, X),
        (0x01, "ADD", 2, 1, A),
        (0x02, "MUL", 2, 1, A),
        (0x03, "SUB", 2, 1, A),
        (0x04, "DIV", 2, 1, A),
        (0x05, "SDIV", 2, 1, A),
        (0x06, "MOD", 2, 1, A),
        (0x07, "SMOD", 2, 1, A),
        (0x08, "ADDMOD", 3, 1, A),
        (0x09, "MULMOD", 3, 1, A),
        (0x0A, "EXP", 2, 1, A),
        (0x0B, "SIGNEXTEND", 2, 1, A),
        (0x10, "LT", 2, 1, C),
        (0x11, "GT", 2, 1, C),
        (0x12, "SLT", 2, 1, C),
        (0x13, "SGT", 2, 1, C),
        (0x14, "EQ", 2, 1, C),
        (0x15, "ISZERO", 1, 1, C),
        (0x16, "AND", 2, 1, A),
        (0x17, "OR", 2, 1, A),
        (0x18, "XOR", 2, 1, A),
        (0x19, "NOT", 1, 1, A),
        (0x1A, "BYTE", 2, 1, A),
        (0x1B, "SHL", 2, 1, A),
        (0x1C, "SHR", 2, 1, A),
        (0x1D, "SAR", 2, 1, A),
        (0x20, "SHA3", 2, 1, H),
        (0x30, "ADDRESS", 0, 1, E),
        (0x31, "BALANCE", 1, 1, E),
        (0x32, "ORIGIN", 0, 1, E),
        (0x33, "CALLER", 0, 1, E),
        (0x34, "CALLVALUE", 0, 1, E),
        (0x35, "CALLDATALOAD", 1, 1, E),
        (0x36, "CALLDATASIZE", 0, 1, E),
        (0x37, "CALLDATACOPY", 3, 0, M),
        (0x38, "CODESIZE", 0, 1, E),
        (0x39, "CODECOPY", 3, 0, M),
        (0x3A, "GASPRICE", 0, 1, E),
        (0x3B, "EXTCODESIZE", 1, 1, E),
        (0x3C, "EXTCODECOPY", 4, 0, M),
        (0x3D, "RETURNDATASIZE", 0, 1, E),
        (0x3E, "RETURNDATACOPY", 3, 0, M),
        (0x3F, "EXTCODEHASH", 1, 1, E),
        (0x40, "BLOCKHASH", 1, 1, E),
        (0x41, "COINBASE", 0, 1, E),
        (0x42, "TIMESTAMP", 0, 1, E),
        (0x43, "NUMBER", 0, 1, E),
        (0x44, "PREVRANDAO", 0, 1, E),
        (0x45, "GASLIMIT", 0, 1, E),
        (0x46, "CHAINID", 0, 1, E),
        (0x47, "SELFBALANCE", 0, 1, E),
        (0x48, "BASEFEE", 0, 1, E),
        (0x50, "POP", 1, 0, K),
        (0x51, "MLOAD", 1, 1, M),
        (0x52, "MSTORE", 2, 0, M),
        (0x53, "MSTORE8", 2, 0, M),
        (0x54, "SLOAD", 1, 1, S),
        (0x55, "SSTORE", 2, 0, S),
        (0x56, "JUMP", 1, 0, X),
        (0x57, "JUMPI", 2, 0, X),
        (0x58, "PC", 0, 1, E),
        (0x59, "MSIZE", 0, 1, M),
        (0x5A, "GAS", 0, 1, E),
        (0x5B, "JUMPDEST", 0, 0, X),
        (0x5F, "PUSH0", 0, 1, K),
        (0xF0, "CREATE", 3, 1, Category.SYSTEM),
        (0xF1, "CALL", 7, 1, Category.CALL),
        (0xF2, "CALLCODE", 7, 1, Category.CALL),
        (0xF3, "RETURN", 2, 0, X),
        (0xF4, "DELEGATECALL", 6, 1, Category.CALL),
        (0xF5, "CREATE2", 4, 1, Category.SYSTEM),
        (0xFA, "STATICCALL", 6, 1, Category.CALL),
        (0xFD, "REVERT", 2, 0, X),
        (0xFE, "INVALID", 0, 0, X),
        (0xFF, "SELFDESTRUCT", 1, 0, X),
    ]
    table = {b: Opcode(b, name, 0, sin, sout, cat) for b, name, sin, sout, cat in rows}
    for n in range(1, 33):
        table[0x5F + n] = Opcode(0x5F + n, f"PUSH{n}", n, 0, 1, K)
    for n in range(1, 17):
        table[0x7F + n] = Opcode(0x7F + n, f"DUP{n}", 0, n, n + 1, K)
        table[0x8F + n] = Opcode(0x8F + n, f"SWAP{n}", 0, n + 1, n + 1, K)
    for n in range(5):
        table[0xA0 + n] = Opcode(0xA0 + n, f"LOG{n}", 0, n + 2, 0, Category.LOG)
    return table


OPCODES: dict[int, Opcode] = _table()
BY_NAME: dict[str, Opcode] = {op.mnemonic: op for op in OPCODES.values()}


def unknown_opcode(byte: int, available: int = 0) -> Opcode:
    """Pseudo-opcode for an undefined byte or a PUSH truncated by end-of-code."""
    known = OPCODES.get(byte)
    name = f"INVALID_{byte:02x}" if known is None else f"{known.mnemonic}(truncated)"
    return Opcode(byte, name, available, 0, 0, Category.INVALID)


@dataclass(frozen=True)
class Instruction:
    offset: int
    opcode: Opcode
    immediate: int | None = None

    @property
    def name(self) -> str:
        return self.opcode.mnemonic

    @property
    def size(self) -> int:
        return 1 + self.opcode.immediate_len

    @property
    def next_offset(self) -> int:
        return self.offset + self.size

    def encode(self) -> bytes:
        data = bytes([self.opcode.byte])
        if self.opcode.immediate_len:
            data += (self.immediate or 0).to_bytes(self.opcode.immediate_len, "big")
        return data

    def __str__(self) -> str:
        if self.immediate is None:
            return f"{self.offset:#06x} {self.name}"
        return f"{self.offset:#06x} {self.name} {self.immediate:#x}"


@dataclass(frozen=True)
class Bytecode:
    """Runtime bytecode with the length of any stripped metadata trailer."""

    bytes: bytes
    metadata_trailer_len: int = 0

    @property
    def code(self) -> bytes:
        return self.bytes[: len(self.bytes) - self.metadata_trailer_len]

    @classmethod
    def from_hex(cls, text: str) -> "Bytecode":
        return strip_metadata(parse_hex(text))


class InvalidHexError(ValueError):
    pass


def parse_hex(text: str) -> bytes:
    text = text.strip()
    if text[:2].lower() == "0x":
        text = text[2:]
    text = "".join(text.split())
    if len(text) % 2:
        raise InvalidHexError("odd-length hex string")
    try:
        return bytes.fromhex(text)
    except ValueError as exc:
        raise InvalidHexError(str(exc)) from None


# ---- CBOR metadata trailer -------------------------------------------------

_METADATA_KEYS = {"ipfs", "bzzr0", "bzzr1", "solc"}


class _CborError(Exception):
    pass


def _cbor_head(data: bytes, pos: int) -> tuple[int, int, int]:
    if pos >= len(data):
        raise _CborError("truncated")
    major, info = data[pos] >> 5, data[pos] & 0x1F
    pos += 1
    if info < 24:
        return major, info, pos
    width = {24: 1, 25: 2, 26: 4, 27: 8}.get(info)
    if width is None or pos + width > len(data):
        raise _CborError("unsupported length encoding")
    return major, int.from_bytes(data[pos : pos + width], "big"), pos + width


def _cbor_item(data: bytes, pos: int) -> tuple[object, int]:
    major, arg, pos = _cbor_head(data, pos)
    if major == 0:
        return arg, pos
    if major in (2, 3):
        if pos + arg > len(data):
            raise _CborError("truncated string")
        chunk = data[pos : pos + arg]
        return (chunk.decode("utf-8", "replace") if major == 3 else chunk), pos + arg
    if major == 7 and arg in (20, 21):
        return arg == 21, pos
    raise _CborError(f"unexpected major type {major}")


def _parse_metadata_map(data: bytes) -> dict[str, object]:
    major, count, pos = _cbor_head(data, 0)
    if major != 5:
        raise _CborError("not a map")
    result: dict[str, object] = {}
    for _ in range(count):
        key, pos = _cbor_item(data, pos)
        if not isinstance(key, str):
            raise _CborError("non-text key")
        result[key], pos = _cbor_item(data, pos)
    if pos != len(data):
        raise _CborError("trailing bytes")
    return result


def strip_metadata(raw: bytes) -> Bytecode:
    """Detect the compiler's CBOR metadata trailer; code bytes are kept intact."""
    raw = bytes(raw)
    if len(raw) < 2:
        return Bytecode(raw, 0)
    length = int.from_bytes(raw[-2:], "big")
    if length == 0 or length + 2 > len(raw):
        return Bytecode(raw, 0)
    try:
        fields = _parse_metadata_map(raw[-2 - length : -2])
    except _CborError:
        return Bytecode(raw, 0)
    if not _METADATA_KEYS & fields.keys():
        return Bytecode(raw, 0)
    return Bytecode(raw, length + 2)


# ---- disassembly -----------------------------------------------------------


def disassemble(code: Bytecode | bytes) -> list[Instruction]:
    data = code.code if isinstance(code, Bytecode) else bytes(code)
    out: list[Instruction] = []
    pc, end = 0, len(data)
    while pc < end:
        byte = data[pc]
        op = OPCODES.get(byte)
        if op is None:
            out.append(Instruction(pc, unknown_opcode(byte)))
            pc += 1
            continue
        if op.immediate_len:
            chunk = data[pc + 1 : pc + 1 + op.immediate_len]
            if len(chunk) < op.immediate_len:
                bad = unknown_opcode(byte, len(chunk))
                out.append(Instruction(pc, bad, int.from_bytes(chunk, "big") if chunk else None))
                pc = end
                continue
            out.append(Instruction(pc, op, int.from_bytes(chunk, "big")))
        else:
            out.append(Instruction(pc, op))
        pc += 1 + op.immediate_len
    return out


def assemble(instructions: Iterable[Instruction]) -> bytes:
    return b"".join(ins.encode() for ins in instructions)


def format_listing(instructions: Sequence[Instruction]) -> str:
    return "\n".join(str(ins) for ins in instructions)
