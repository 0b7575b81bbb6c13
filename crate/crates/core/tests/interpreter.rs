mod common;

use crow_core::dag::Dag;
use crow_core::interp::{invoke, read_trace, write_trace, Event, InterpConfig, Outcome, Trap};
use crow_core::wat::{parse_module, print_module, validate, FuncDef, Instr, Module};
use proptest::prelude::*;

fn module_for(d: &Dag, arity: u32) -> Module {
    let body = d.to_instrs(&mut |k| vec![Instr::LocalGet(k)]);
    let mut m = Module::default();
    m.functions.push(FuncDef { params: arity, results: 1, locals: 0, body });
    m.exports.insert("main".into(), 0);
    m
}

fn run(m: &Module, args: &[i32]) -> (Outcome, Vec<Event>) {
    let e = invoke(m, "main", args, InterpConfig::default()).unwrap();
    (e.outcome, e.events)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    // The interpreter running emitted stack code agrees with direct DAG
    // evaluation, and the column evaluator agrees with both.
    #[test]
    fn interpreter_matches_dag_evaluator(d in common::arb_dag(3, 6), args in any::<[i32; 3]>()) {
        let m = module_for(&d, 3);
        prop_assert!(validate(&m).is_empty());
        let (outcome, events) = run(&m, &args);
        prop_assert_eq!(outcome, Outcome::Result(Some(d.eval_i32(&args))));
        let cols: Vec<Vec<u32>> = args.iter().map(|&a| vec![a as u32]).collect();
        prop_assert_eq!(d.eval_columns(&cols, 1, 32)[0] as i32, d.eval_i32(&args));

        // straight-line code: every pushed value is popped except the result
        let pushes = events.iter().filter(|e| matches!(e, Event::Push(_))).count();
        let pops = events.iter().filter(|e| matches!(e, Event::Pop(_))).count();
        prop_assert_eq!(pushes, pops + 1);
    }

    #[test]
    fn reduced_width_column_eval_matches_scalar(d in common::arb_dag(2, 5), a in any::<u32>(), b in any::<u32>(), w in 2u32..=32) {
        let cols = vec![vec![a, b, a ^ b], vec![b, a, 0]];
        let out = d.eval_columns(&cols, 3, w);
        for j in 0..3 {
            prop_assert_eq!(out[j], d.eval(&[cols[0][j], cols[1][j]], w));
        }
    }
}

#[test]
fn trace_round_trips_through_files() {
    for (name, m) in common::corpus() {
        let args = vec![2; common::main_arity(&m)];
        let (outcome, events) = run(&m, &args);
        let mut buf = Vec::new();
        write_trace(&mut buf, "main", &events, &outcome).unwrap();
        let back = read_trace(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back.events, events, "{name}");
        assert_eq!(back.outcome, outcome, "{name}");
    }
}

#[test]
fn corpus_round_trips_through_printer() {
    for (name, m) in common::corpus() {
        let text = print_module(&m);
        let again = parse_module(&text).unwrap();
        assert_eq!(again, m, "{name}");
        assert_eq!(print_module(&again), text, "{name}");
        assert!(validate(&m).is_empty(), "{name}");
    }
}

#[test]
fn known_corpus_results() {
    let expect = [
        ("running_example", vec![], 30),
        ("fibonacci", vec![10], 55),
        ("gcd", vec![20, 5], 3),
        ("factorial", vec![5], 120),
        ("popcount", vec![255], 8),
        ("array_sum", vec![2], 56),
    ];
    let corpus = common::corpus();
    for (name, args, want) in expect {
        let (_, m) = corpus.iter().find(|(n, _)| n == name).unwrap();
        assert_eq!(run(m, &args).0, Outcome::Result(Some(want)), "{name}");
    }
}

#[test]
fn traps_and_fuel() {
    let m = parse_module(
        r#"(module
          (func (param i32 i32) (result i32) local.get 0 local.get 1 i32.div_s)
          (func (result i32) loop br 0 end i32.const 0)
          (func (result i32) call 2)
          (export "div" (func 0)) (export "spin" (func 1)) (export "deep" (func 2)))"#,
    )
    .unwrap();
    let go = |name: &str, args: &[i32]| invoke(&m, name, args, InterpConfig { fuel: 10_000, record: false }).unwrap().outcome;
    assert_eq!(go("div", &[7, 0]), Outcome::Trap(Trap::DivByZero));
    assert_eq!(go("div", &[i32::MIN, -1]), Outcome::Trap(Trap::IntOverflow));
    assert_eq!(go("div", &[-7, 2]), Outcome::Result(Some(-3)));
    assert_eq!(go("spin", &[]), Outcome::FuelExhausted);
    assert_eq!(go("deep", &[]), Outcome::Trap(Trap::CallStackExhausted));
    assert!(invoke(&m, "nope", &[], InterpConfig::default()).is_err());
    assert!(invoke(&m, "div", &[1], InterpConfig::default()).is_err());
}
