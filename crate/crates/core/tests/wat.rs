mod common;

use crow_core::wat::{
    parse_module, print_module, validate, BinOp, BlockType, FuncDef, Global, Instr, Module, ParseError,
};
use proptest::prelude::*;

/// Wraps a random expression in locals, globals, memory and control flow.
fn arb_module() -> impl Strategy<Value = Module> {
    (common::arb_dag(2, 6), common::arb_dag(2, 4), any::<i32>(), 0u32..64).prop_map(|(d1, d2, g, off)| {
        let get = |k: u32| vec![Instr::LocalGet(k)];
        let mut body = vec![Instr::Const(off as i32)];
        body.extend(d1.to_instrs(&mut |k| get(k)));
        body.push(Instr::LocalTee(2));
        body.push(Instr::Store { offset: off });
        body.push(Instr::Block(BlockType::I32));
        body.push(Instr::LocalGet(2));
        body.push(Instr::GlobalGet(0));
        body.push(Instr::BrIf(0));
        body.push(Instr::Drop);
        body.extend(d2.to_instrs(&mut |k| get(k)));
        body.push(Instr::End);
        body.push(Instr::Const(off as i32));
        body.push(Instr::Load { offset: off });
        body.push(Instr::Binary(BinOp::Add));
        let mut m = Module {
            globals: vec![Global { mutable: true, init: g }],
            memory: Some(1),
            ..Module::default()
        };
        m.functions.push(FuncDef { params: 2, results: 1, locals: 1, body });
        m.exports.insert("main".into(), 0);
        m
    })
}

proptest! {
    #[test]
    fn print_parse_round_trip(m in arb_module()) {
        prop_assert!(validate(&m).is_empty(), "{:?}", validate(&m));
        let text = print_module(&m);
        let back = parse_module(&text).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(print_module(&back), text);
    }
}

#[test]
fn names_and_folded_forms() {
    let named = parse_module(
        r#"(module
          (global $g (mut i32) (i32.const -5))
          (func $add (param $a i32) (param $b i32) (result i32)
            (local $t i32)
            local.get $a local.get $b i32.add local.tee $t)
          (export "add" (func $add)))"#,
    )
    .unwrap();
    let f = &named.functions[0];
    assert_eq!((f.params, f.locals), (2, 1));
    assert_eq!(f.body.last(), Some(&Instr::LocalTee(2)));
    assert_eq!(named.globals, vec![Global { mutable: true, init: -5 }]);
    assert_eq!(named.export_index("add"), Some(0));
}

#[test]
fn rejects_outside_subset() {
    for src in [
        "(module (func (result i64) i64.const 1))",
        "(module (import \"env\" \"f\" (func)))",
        "(module (func (result i32) (i32.add (i32.const 1) (i32.const 2))))",
        "(module (func f32.const 1))",
        "(module (table 1 funcref))",
    ] {
        assert!(matches!(parse_module(src), Err(ParseError::Unsupported { .. })), "{src}");
    }
    for src in ["(module", "(module (func i32.const))", "module"] {
        assert!(parse_module(src).is_err(), "{src}");
    }
}

#[test]
fn validation_catches_stack_errors() {
    for src in [
        "(module (func (result i32) i32.add))",
        "(module (func (result i32) i32.const 1 i32.const 2))",
        "(module (func local.get 0 drop))",
        "(module (func (result i32) i32.const 0 i32.load))",
        "(module (global i32 (i32.const 0)) (func i32.const 1 global.set 0))",
        "(module (func br 3))",
    ] {
        let m = parse_module(src).unwrap_or_else(|e| panic!("{src}: {e}"));
        assert!(!validate(&m).is_empty(), "{src}");
    }
}
