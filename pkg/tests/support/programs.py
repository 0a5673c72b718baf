"""Hand-built bytecode programs with bounded branching for the CFG oracle."""

PROGRAMS = {
    "straight_line": """
        PUSH1 1
        PUSH1 2
        ADD
        POP
        STOP
    """,
    "if_else": """
        PUSH1 0
        CALLDATALOAD
        PUSH1 @else
        JUMPI
        PUSH1 1
        PUSH1 @end
        JUMP
    else:
        JUMPDEST
        PUSH1 2
    end:
        JUMPDEST
        PUSH1 0
        SSTORE
        STOP
    """,
    "counting_loop": """
        PUSH1 0
    loop:
        JUMPDEST
        PUSH1 1
        ADD
        DUP1
        PUSH1 3
        GT
        PUSH1 @loop
        JUMPI
        POP
        STOP
    """,
    "shared_subroutine": """
        PUSH1 @ret1
        PUSH1 5
        PUSH1 @fn
        JUMP
    ret1:
        JUMPDEST
        PUSH1 @ret2
        SWAP1
        PUSH1 @fn
        JUMP
    ret2:
        JUMPDEST
        POP
        STOP
    fn:
        JUMPDEST
        PUSH1 1
        ADD
        SWAP1
        JUMP
    """,
    "two_selector_dispatch": """
        PUSH1 0
        CALLDATALOAD
        PUSH1 0xe0
        SHR
        DUP1
        PUSH4 0xa9059cbb
        EQ
        PUSH1 @f1
        JUMPI
        DUP1
        PUSH4 0x095ea7b3
        EQ
        PUSH1 @f2
        JUMPI
        PUSH1 0
        DUP1
        REVERT
    f1:
        JUMPDEST
        PUSH1 1
        PUSH1 0
        SSTORE
        STOP
    f2:
        JUMPDEST
        PUSH1 2
        PUSH1 0
        SSTORE
        STOP
    """,
    "computed_target": """
        PUSH1 @target
        PUSH1 0x10
        ADD
        PUSH1 0x10
        SWAP1
        SUB
        JUMP
        INVALID
    target:
        JUMPDEST
        STOP
    """,
    "nested_calls": """
        PUSH1 @done
        PUSH1 @a
        JUMP
    done:
        JUMPDEST
        STOP
    a:
        JUMPDEST
        PUSH1 @aret
        PUSH1 @b
        JUMP
    aret:
        JUMPDEST
        JUMP
    b:
        JUMPDEST
        JUMP
    """,
    "branch_to_next": """
        PUSH1 0
        CALLDATALOAD
        PUSH1 @next
        JUMPI
    next:
        JUMPDEST
        STOP
    """,
    "return_address_in_memory": """
        PUSH1 @back
        PUSH1 0x40
        MSTORE
        PUSH1 @sub
        JUMP
    back:
        JUMPDEST
        STOP
    sub:
        JUMPDEST
        PUSH1 0x40
        MLOAD
        JUMP
    """,
    "bad_destination_and_revert": """
        PUSH1 0
        CALLDATALOAD
        PUSH1 @ok
        JUMPI
        PUSH1 3
        JUMP
    ok:
        JUMPDEST
        PUSH1 0
        PUSH1 0
        REVERT
    """,
}
