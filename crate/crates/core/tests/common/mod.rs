#![allow(dead_code)]

use std::path::PathBuf;

use crow_core::dag::{Dag, DagBuilder, PureOp};
use crow_core::equivalence::biased_value;
use crow_core::wat::{parse_module, Module};
use proptest::prelude::*;
use rand::Rng;

pub fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("corpus")
}

pub fn corpus() -> Vec<(String, Module)> {
    let mut files: Vec<_> = std::fs::read_dir(corpus_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "wat"))
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            let m = parse_module(&std::fs::read_to_string(&p).unwrap()).unwrap();
            (name, m)
        })
        .collect()
}

pub fn main_arity(m: &Module) -> usize {
    let f = m.export_index("main").expect("corpus programs export main");
    m.functions[f as usize].params as usize
}

/// Mostly small inputs so loops stay short, with some 32-bit corners.
pub fn input_vector(rng: &mut impl Rng, arity: usize) -> Vec<i32> {
    (0..arity)
        .map(|_| if rng.gen_bool(0.8) { rng.gen_range(-40..=40) } else { biased_value(rng) })
        .collect()
}

/// Random well-formed DAG over `arity` inputs.
pub fn arb_dag(arity: u32, max_ops: usize) -> impl Strategy<Value = Dag> {
    let ops = PureOp::ALL.to_vec();
    let leaf = prop_oneof![
        (0..arity.max(1)).prop_map(|k| (true, k as i32)),
        any::<i32>().prop_map(|c| (false, c)),
        (-4i32..=33).prop_map(|c| (false, c)),
    ];
    (
        prop::collection::vec(leaf, 1..=4),
        prop::collection::vec((prop::sample::select(ops), any::<[prop::sample::Index; 3]>()), 0..=max_ops),
    )
        .prop_map(move |(leaves, steps)| {
            let mut b = DagBuilder::new();
            let mut ids: Vec<u32> = leaves
                .iter()
                .map(|&(input, v)| if input && arity > 0 { b.input(v as u32) } else { b.constant(v) })
                .collect();
            for (op, picks) in steps {
                let args: Vec<u32> = picks[..op.arity()].iter().map(|ix| ids[ix.index(ids.len())]).collect();
                ids.push(b.op(op, &args));
            }
            b.finish(*ids.last().unwrap())
        })
}
