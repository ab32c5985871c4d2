"""Abstract-interpretation engine tests.

Soundness statements are checked against the concrete interpreter by
enumerating small inputs; precision statements pin the exact callee sets.
"""
import itertools
import time

from wacg import concrete, domain as D
from wacg.analysis import AnalysisConfig, analyze, resolve_roots
from wacg.domain import AbsValue
from wacg.frontend import parse_and_validate


def analyzed(src, **cfg_kw):
    vm = parse_and_validate(src)
    return vm, analyze(vm, AnalysisConfig(**cfg_kw))


def site_callees(result):
    """{(func, site): frozenset(callees)} for easy assertions."""
    return {k: cs.callees for k, cs in result.sites.items()}


def oracle_pairs(vm, entry, arg_range=range(-2, 4)):
    ft = vm.module.func_type(entry)
    pairs = set()
    for args in itertools.product(arg_range, repeat=ft.params):
        pairs |= concrete.run(vm, entry, list(args)).edge_pairs
    return pairs


def edge_pairs(result):
    return {(c, t) for c, t, _ in result.edges()}


# -- transfer precision -----------------------------------------------------

def test_constant_folding_through_straight_line_code():
    src = """
    (module
      (func $main (export "main") (result i32)
        (i32.add (i32.mul (i32.const 3) (i32.const 4)) (i32.const 5))))
    """
    _, r = analyzed(src)
    (res,) = r.summaries[0].exit_results
    assert res.values == frozenset({17})


def test_locals_and_globals_tracked():
    src = """
    (module
      (global $g (mut i32) (i32.const 7))
      (func $main (export "main") (result i32)
        (local $x i32)
        (local.set $x (global.get $g))
        (global.set $g (i32.const 9))
        (local.get $x)))
    """
    _, r = analyzed(src)
    s = r.summaries[0]
    assert s.exit_results[0].values == frozenset({7})
    assert s.exit_globals[0].values == frozenset({9})


def test_if_join_merges_both_arms():
    src = """
    (module
      (func $main (export "main") (param i32) (result i32)
        (if (result i32) (local.get 0)
          (then (i32.const 1))
          (else (i32.const 2)))))
    """
    _, r = analyzed(src)
    assert r.summaries[0].exit_results[0].values == frozenset({1, 2})


def test_dead_arm_is_pruned_on_constant_condition():
    src = """
    (module
      (func $f (result i32) (i32.const 1))
      (func $g (result i32) (i32.const 2))
      (func $main (export "main") (result i32)
        (if (result i32) (i32.const 1)
          (then (call $f))
          (else (call $g)))))
    """
    _, r = analyzed(src)
    assert edge_pairs(r) == {(2, 0)}


# -- indirect resolution ----------------------------------------------------

TWO_TARGETS = """
(module
  (type $t (func (result i32)))
  (func $f (type $t) (i32.const 10))
  (func $g (type $t) (i32.const 20))
  (table funcref (elem $f $g))
  (func $main (export "main") {params} (result i32)
    {body}))
"""


def two_targets(body, params=""):
    return TWO_TARGETS.format(body=body, params=params)


def test_constant_index_resolves_one_callee():
    _, r = analyzed(two_targets("(call_indirect (type $t) (i32.const 1))"))
    assert edge_pairs(r) == {(2, 1)}
    (cs,) = r.sites.values()
    assert cs.kind == "indirect" and not cs.fallback


def test_top_index_falls_back_to_type_matches():
    _, r = analyzed(two_targets("(call_indirect (type $t) (local.get 0))",
                                params="(param i32)"))
    (cs,) = r.sites.values()
    assert cs.fallback
    assert cs.callees == frozenset({0, 1})


def test_type_filter_restricts_fallback():
    src = """
    (module
      (type $t0 (func (result i32)))
      (type $t1 (func (param i32) (result i32)))
      (func $a (type $t0) (i32.const 1))
      (func $b (type $t1) (local.get 0))
      (table funcref (elem $a $b))
      (func $main (export "main") (param i32) (result i32)
        (call_indirect (type $t0) (local.get 0))))
    """
    _, r = analyzed(src)
    (cs,) = r.sites.values()
    assert cs.callees == frozenset({0})  # $b has the wrong type


def test_certainly_out_of_bounds_site_has_no_callees():
    _, r = analyzed(two_targets("(call_indirect (type $t) (i32.const 7))"))
    (cs,) = r.sites.values()
    assert cs.callees == frozenset()
    assert edge_pairs(r) == set()


def test_branch_filter_splits_callees_per_arm():
    src = """
    (module
      (type $t (func (result i32)))
      (func $f (type $t) (i32.const 10))
      (func $g (type $t) (i32.const 20))
      (table funcref (elem $f $g))
      (func $main (export "main") (param $x i32) (result i32)
        (if (result i32) (i32.lt_s (local.get $x) (i32.const 1))
          (then (call_indirect (type $t) (i32.const 0)))
          (else (call_indirect (type $t) (i32.const 1))))))
    """
    vm, r = analyzed(src)
    callees = sorted(cs.callees for cs in r.sites.values())
    assert callees == [frozenset({0}), frozenset({1})]
    assert oracle_pairs(vm, 2) <= edge_pairs(r)


def test_relational_filter_on_index_variable():
    # the branch condition constrains the same local that feeds the index
    src = two_targets(
        """
        (if (result i32) (i32.lt_u (local.get 0) (i32.const 2))
          (then (call_indirect (type $t) (local.get 0)))
          (else (i32.const -1)))
        """,
        params="(param i32)")
    vm, r = analyzed(src)
    # lt_u is not filterable, so this stays a fallback; the point is that
    # the oracle edges are still covered
    assert oracle_pairs(vm, 2) <= edge_pairs(r)


def test_filtered_loop_index_stays_in_table_range():
    src = """
    (module
      (type $t (func (result i32)))
      (func $t0 (type $t) (i32.const 0))
      (func $t1 (type $t) (i32.const 1))
      (func $t2 (type $t) (i32.const 2))
      (table funcref (elem $t0 $t1 $t2))
      (func $main (export "main") (result i32)
        (local $i i32) (local $acc i32)
        (block $done
          (loop $top
            (br_if $done (i32.ge_s (local.get $i) (i32.const 3)))
            (local.set $acc (i32.add (local.get $acc)
                                     (call_indirect (type $t) (local.get $i))))
            (local.set $i (i32.add (local.get $i) (i32.const 1)))
            (br $top)))
        (local.get $acc)))
    """
    _, r = analyzed(src)
    (cs,) = r.sites.values()
    assert cs.callees == frozenset({0, 1, 2})
    assert not cs.fallback  # widening + filter keeps the index enumerable


# -- interprocedural summaries ----------------------------------------------

def test_summary_flows_results_back():
    src = """
    (module
      (func $five (result i32) (i32.const 5))
      (func $main (export "main") (result i32)
        (i32.add (call $five) (i32.const 1))))
    """
    _, r = analyzed(src)
    assert r.summaries[1].exit_results[0].values == frozenset({6})


def test_import_results_are_top():
    src = """
    (module
      (import "env" "ext" (func $ext (result i32)))
      (func $main (export "main") (result i32) (call $ext)))
    """
    _, r = analyzed(src)
    assert r.summaries[1].exit_results[0].is_top
    assert edge_pairs(r) == {(1, 0)}
    assert 0 in r.reachable


def test_callee_mutated_globals_propagate():
    src = """
    (module
      (global $g (mut i32) (i32.const 0))
      (func $bump (global.set $g (i32.const 3)))
      (func $main (export "main") (result i32)
        (call $bump)
        (global.get $g)))
    """
    _, r = analyzed(src)
    assert r.summaries[1].exit_results[0].values == frozenset({3})


def test_direct_recursion_stabilizes_and_covers_oracle():
    src = """
    (module
      (func $fact (export "fact") (param $n i32) (result i32)
        (if (result i32) (i32.le_s (local.get $n) (i32.const 1))
          (then (i32.const 1))
          (else (i32.mul (local.get $n)
                         (call $fact (i32.sub (local.get $n) (i32.const 1))))))))
    """
    vm, r = analyzed(src)
    assert edge_pairs(r) == {(0, 0)}
    for n in range(0, 5):
        res = concrete.run(vm, 0, [n]).result[0]
        assert r.summaries[0].exit_results[0].contains(res)


def test_overwritten_variable_invalidates_filter():
    # the branch condition mentions local 0, which is overwritten between
    # the comparison and the branch; filtering on the stale relation would
    # wrongly prune the $g edge
    src = two_targets(
        """
        (local $cond i32)
        (local.set $cond (i32.eq (local.get 0) (i32.const 0)))
        (local.set 0 (i32.const 1))
        (if (result i32) (local.get $cond)
          (then (call_indirect (type $t) (local.get 0)))
          (else (i32.const -1)))
        """,
        params="(param i32)")
    vm, r = analyzed(src)
    assert oracle_pairs(vm, 2) <= edge_pairs(r)
    assert (2, 1) in edge_pairs(r)


# -- termination ------------------------------------------------------------

def test_divergent_loop_analysis_terminates():
    src = '(module (func $spin (export "spin") (loop (br 0))))'
    t0 = time.monotonic()
    _, r = analyzed(src)
    assert time.monotonic() - t0 < 10
    # no terminating path: the summary records no exit state
    assert r.summaries[0].exit_results is None


def test_unbounded_counter_terminates_via_widening():
    src = """
    (module
      (func $main (export "main") (param $n i32) (result i32)
        (local $i i32)
        (block $done
          (loop $top
            (br_if $done (i32.ge_s (local.get $i) (local.get $n)))
            (local.set $i (i32.add (local.get $i) (i32.const 1)))
            (br $top)))
        (local.get $i)))
    """
    t0 = time.monotonic()
    vm, r = analyzed(src)
    assert time.monotonic() - t0 < 10
    res = r.summaries[0].exit_results[0]
    for n in (-1, 0, 3, 7):
        assert res.contains(concrete.run(vm, 0, [n]).result[0])


def test_mutual_recursion_terminates():
    src = """
    (module
      (func $even (param i32) (result i32)
        (if (result i32) (i32.le_s (local.get 0) (i32.const 0))
          (then (i32.const 1))
          (else (call $odd (i32.sub (local.get 0) (i32.const 1))))))
      (func $odd (param i32) (result i32)
        (if (result i32) (i32.le_s (local.get 0) (i32.const 0))
          (then (i32.const 0))
          (else (call $even (i32.sub (local.get 0) (i32.const 1))))))
      (func $main (export "main") (param i32) (result i32)
        (call $even (local.get 0))))
    """
    vm, r = analyzed(src)
    assert edge_pairs(r) == {(2, 0), (0, 1), (1, 0)}
    assert oracle_pairs(vm, 2, range(0, 5)) <= edge_pairs(r)


# -- configuration ----------------------------------------------------------

def test_root_args_pin_entry_values():
    src = two_targets("(call_indirect (type $t) (local.get 0))",
                      params="(param i32)")
    vm = parse_and_validate(src)
    r = analyze(vm, AnalysisConfig(),
                root_args={2: (AbsValue.const(1),)})
    assert edge_pairs(r) == {(2, 1)}


def test_open_tables_add_roots():
    src = """
    (module
      (type $t (func (result i32)))
      (func $hidden (type $t) (i32.const 1))
      (table (export "tbl") funcref (elem $hidden))
      (func $main (export "main") (result i32) (i32.const 0)))
    """
    vm = parse_and_validate(src)
    closed = resolve_roots(vm, AnalysisConfig())
    opened = resolve_roots(vm, AnalysisConfig(open_tables=True))
    assert 0 not in closed
    assert 0 in opened


def test_context_sensitivity_is_no_less_precise():
    src = """
    (module
      (type $t (func (result i32)))
      (func $f (type $t) (i32.const 10))
      (func $g (type $t) (i32.const 20))
      (table funcref (elem $f $g))
      (func $pick (param $i i32) (result i32)
        (call_indirect (type $t) (local.get $i)))
      (func $main (export "main") (result i32)
        (i32.add (call $pick (i32.const 0)) (call $pick (i32.const 1)))))
    """
    vm = parse_and_validate(src)
    r0 = analyze(vm, AnalysisConfig(context_depth=0))
    r1 = analyze(vm, AnalysisConfig(context_depth=1))
    assert edge_pairs(r1) <= edge_pairs(r0)
    assert oracle_pairs(vm, 3) <= edge_pairs(r1)
