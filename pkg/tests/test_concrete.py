"""Reference-interpreter tests.

Expected values are frozen from hand computation; the same programs are
cross-checked against an independent engine by the conformance suite.
"""
import itertools

import pytest

from wacg import concrete
from wacg.frontend import parse_and_validate


def run_src(src, entry="main", args=(), **kw):
    vm = parse_and_validate(src)
    return concrete.run(vm, vm.export_index(entry), list(args), **kw)


def expr_main(body, params=0):
    ps = " ".join("(param i32)" for _ in range(params))
    return f'(module (func (export "main") {ps} (result i32) {body}))'


@pytest.mark.parametrize("body,expected", [
    ("(i32.add (i32.const 2) (i32.const 3))", 5),
    # operand order: the left operand is pushed first
    ("(i32.sub (i32.const 7) (i32.const 2))", 5),
    ("(i32.mul (i32.const -4) (i32.const 6))", -24),
    ("(i32.div_s (i32.const -7) (i32.const 2))", -3),
    ("(i32.rem_s (i32.const -7) (i32.const 2))", -1),
    ("(i32.div_u (i32.const -1) (i32.const 2))", 2147483647),
    ("(i32.eqz (i32.const 0))", 1),
    ("(i32.eqz (i32.const 9))", 0),
    ("(i32.clz (i32.const 1))", 31),
    ("(i32.ctz (i32.const 8))", 3),
    ("(i32.popcnt (i32.const 7))", 3),
    ("(i32.lt_s (i32.const -1) (i32.const 0))", 1),
    ("(i32.lt_u (i32.const -1) (i32.const 0))", 0),
    ("(i32.shr_s (i32.const -8) (i32.const 1))", -4),
    ("(i32.shr_u (i32.const -8) (i32.const 1))", 2147483644),
    # 32-bit wraparound
    ("(i32.add (i32.const 2147483647) (i32.const 1))", -2147483648),
    ("(i32.mul (i32.const 65536) (i32.const 65536))", 0),
])
def test_arithmetic(body, expected):
    assert run_src(expr_main(body)).result == [expected]


@pytest.mark.parametrize("body,kind", [
    ("(i32.div_s (i32.const 1) (i32.const 0))", "div-by-zero"),
    ("(i32.rem_u (i32.const 1) (i32.const 0))", "div-by-zero"),
    ("(i32.div_s (i32.const -2147483648) (i32.const -1))", "int-overflow"),
])
def test_arithmetic_traps(body, kind):
    t = run_src(expr_main(body))
    assert t.trap == kind
    assert t.result is None


def test_tee_equals_set_then_get():
    # local.tee x must behave as local.set x; local.get x
    tee = expr_main("(local $x i32) (i32.add (local.tee $x (local.get 0)) "
                    "(local.get $x))", params=1).replace("(result i32) (local",
                                                         "(result i32) (local")
    desugared = expr_main("(local $x i32) local.get 0 local.set $x "
                          "local.get $x local.get $x i32.add", params=1)
    for v in range(-3, 4):
        assert run_src(tee, args=[v]).result == run_src(desugared, args=[v]).result


def test_loop_sums_first_n():
    src = """
    (module
      (func (export "main") (param $n i32) (result i32)
        (local $i i32) (local $acc i32)
        (block $done
          (loop $top
            (br_if $done (i32.ge_s (local.get $i) (local.get $n)))
            (local.set $i (i32.add (local.get $i) (i32.const 1)))
            (local.set $acc (i32.add (local.get $acc) (local.get $i)))
            (br $top)))
        (local.get $acc)))
    """
    for n in range(0, 7):
        assert run_src(src, args=[n]).result == [n * (n + 1) // 2]


FACT = """
(module
  (func $fact (export "fact") (param $n i32) (result i32)
    (if (result i32) (i32.le_s (local.get $n) (i32.const 1))
      (then (i32.const 1))
      (else (i32.mul (local.get $n)
                     (call $fact (i32.sub (local.get $n) (i32.const 1))))))))
"""


def test_factorial_and_edge_log():
    t = run_src(FACT, entry="fact", args=[4])
    assert t.result == [24]
    # three recursive invocations, all at the same site
    assert len(t.log) == 3
    assert t.edge_pairs == {(0, 0)}
    assert len(t.edges) == 1


def test_call_indirect_resolves_table_slot():
    src = """
    (module
      (type $t (func (result i32)))
      (func $a (type $t) (i32.const 11))
      (func $b (type $t) (i32.const 22))
      (table funcref (elem $a $b))
      (func (export "main") (param i32) (result i32)
        (call_indirect (type $t) (local.get 0))))
    """
    assert run_src(src, args=[0]).result == [11]
    assert run_src(src, args=[1]).result == [22]
    assert run_src(src, args=[2]).trap == "table-out-of-bounds"
    # the index is interpreted unsigned
    assert run_src(src, args=[-1]).trap == "table-out-of-bounds"


def test_call_indirect_type_mismatch_traps():
    src = """
    (module
      (type $t0 (func (result i32)))
      (type $t1 (func (param i32) (result i32)))
      (func $a (type $t1) (local.get 0))
      (table funcref (elem $a))
      (func (export "main") (result i32)
        (call_indirect (type $t0) (i32.const 0))))
    """
    assert run_src(src).trap == "type-mismatch"


def test_call_indirect_empty_slot_traps():
    src = """
    (module
      (type $t (func (result i32)))
      (func $a (type $t) (i32.const 1))
      (table 3 funcref)
      (elem (i32.const 0) func $a)
      (func (export "main") (result i32)
        (call_indirect (type $t) (i32.const 2))))
    """
    assert run_src(src).trap == "undefined-table-entry"


def test_fuel_exhaustion_on_divergence():
    src = '(module (func (export "main") (loop (br 0))))'
    t = run_src(src, fuel=500)
    assert t.fuel_exhausted
    assert t.trap is None and t.result is None


def test_import_stub_cycles():
    src = """
    (module
      (import "env" "read" (func $read (result i32)))
      (func (export "main") (result i32)
        (i32.sub (call $read) (call $read))))
    """
    assert run_src(src, import_stub=[10, 3]).result == [7]
    assert run_src(src, import_stub=[5]).result == [0]
    t = run_src(src, import_stub=[10, 3])
    assert t.edge_pairs == {(1, 0)}


def test_mutable_global_resets_per_run():
    src = """
    (module
      (global $g (mut i32) (i32.const 1))
      (func (export "main") (result i32)
        (global.set $g (i32.add (global.get $g) (i32.const 1)))
        (global.get $g)))
    """
    vm = parse_and_validate(src)
    first = concrete.run(vm, 0, [])
    second = concrete.run(vm, 0, [])
    assert first.result == second.result == [2]


def test_branch_out_of_nested_blocks_keeps_result():
    src = expr_main("""
      (block (result i32)
        (block
          (br_if 1 (i32.const 1) (i32.const 1))
          drop)
        (i32.const 99))
    """)
    # br_if to the outer block carries the value 1 past the inner block
    assert run_src(src).result == [1]


def test_determinism():
    vm = parse_and_validate(FACT)
    a = concrete.run(vm, 0, [5])
    b = concrete.run(vm, 0, [5])
    assert a.result == b.result and a.log == b.log and a.steps == b.steps


def test_trace_covers_all_inputs_consistently():
    src = """
    (module
      (type $t (func (result i32)))
      (func $a (type $t) (i32.const 1))
      (func $b (type $t) (i32.const 2))
      (table funcref (elem $a $b))
      (func (export "main") (param i32) (result i32)
        (if (result i32) (local.get 0)
          (then (call_indirect (type $t) (i32.const 0)))
          (else (call_indirect (type $t) (i32.const 1))))))
    """
    vm = parse_and_validate(src)
    seen = set()
    for v in range(-2, 3):
        seen |= concrete.run(vm, 2, [v]).edge_pairs
    assert seen == {(2, 0), (2, 1)}
