mod common;

use std::collections::BTreeSet;

use crow_core::dag::{Dag, NodeKind, PureOp};
use crow_core::equivalence::{CheckerConfig, Tier};
use crow_core::region::{extract_module_blocks, PureBlock, DEFAULT_MAX_BLOCK_NODES};
use crow_core::synth::{enumerate_candidates, synthesize_replacements, SynthesisConfig, Vocabulary};
use crow_core::wat::parse_module;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn largest_block(src: &str) -> PureBlock {
    let m = parse_module(src).unwrap();
    extract_module_blocks(&m, DEFAULT_MAX_BLOCK_NODES).into_iter().max_by_key(|b| b.size()).unwrap()
}

/// Independent equivalence judgement: every 16-bit pattern (zero and sign
/// extended) plus 20 000 uniform 32-bit values, evaluated one at a time.
fn oracle_equivalent(a: &Dag, b: &Dag) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let lows = (0..=u16::MAX).flat_map(|v| [v as i32, v as i16 as i32]);
    let randoms = (0..20_000).map(|_| rng.gen::<i32>()).collect::<Vec<_>>();
    lows.chain(randoms).all(|x| a.eval_i32(&[x]) == b.eval_i32(&[x]))
}

fn has_op(d: &Dag, op: PureOp) -> bool {
    d.nodes.iter().any(|n| n.kind == NodeKind::Op(op))
}

#[test]
fn replacements_match_brute_force_oracle() {
    let b = largest_block("(module (func (param i32) (result i32) local.get 0 i32.const 8 i32.mul))");
    let cfg = SynthesisConfig {
        max_size: 2,
        vocabulary: Vocabulary::parse("add,sub,shl,mul,xor,const").unwrap(),
        max_replacements: usize::MAX,
        ..SynthesisConfig::default()
    };
    let report = synthesize_replacements(&b, &cfg, &CheckerConfig::default());
    assert!(!report.budget_exhausted && !report.capped);
    let found: BTreeSet<String> = report.replacements.iter().map(|r| r.candidate.dag.to_string()).collect();

    let (all, truncated) = enumerate_candidates(&b, &cfg, u64::MAX);
    assert!(!truncated);
    let own = b.dag.to_tree();
    let expected: BTreeSet<String> = all
        .iter()
        .filter(|c| c.dag != own && oracle_equivalent(&b.dag, &c.dag))
        .map(|c| c.dag.to_string())
        .collect();
    assert_eq!(found, expected);
    assert!(found.contains("shl(in0, 3)"), "{found:?}");
    assert!(found.contains("shl(in0, add(1, 2))"), "{found:?}");
    assert!(!found.contains("mul(in0, 8)"));
    assert!(report.replacements.iter().all(|r| r.tier() != Tier::Rejected));
}

#[test]
fn candidate_stream_is_deterministic_and_ordered() {
    let b = largest_block("(module (func (param i32 i32) (result i32) local.get 0 local.get 1 i32.sub))");
    let cfg = SynthesisConfig { max_size: 2, ..SynthesisConfig::default() };
    let (a, _) = enumerate_candidates(&b, &cfg, 5_000);
    let (c, _) = enumerate_candidates(&b, &cfg, 5_000);
    assert_eq!(a, c);
    assert!(a.windows(2).all(|w| w[0].dag.op_count() <= w[1].dag.op_count()));
    assert!(a.iter().enumerate().all(|(i, c)| c.index == Some(i as u64)));
    let r1 = synthesize_replacements(&b, &cfg, &CheckerConfig::default());
    let r2 = synthesize_replacements(&b, &cfg, &CheckerConfig::default());
    assert_eq!(r1.replacements, r2.replacements);
}

#[test]
fn transformation_families() {
    let cases: [(&str, &dyn Fn(&Dag) -> bool); 4] = [
        ("(module (func (param i32) (result i32) local.get 0 i32.const 8 i32.mul))", &|d| has_op(d, PureOp::Shl)),
        ("(module (func (param i32) (result i32) local.get 0 i32.const 10 i32.gt_s))", &|d| {
            d.to_string() == "le_s(11, in0)"
        }),
        ("(module (func (param i32) (result i32) local.get 0 i32.const -3 i32.sub))", &|d| {
            d.to_string() == "add(in0, 3)"
        }),
        ("(module (func (result i32) i32.const 4 i32.const 6316 i32.mul))", &|d| *d == Dag::constant(25264)),
    ];
    for (src, realizes) in cases {
        let b = largest_block(src);
        let r = synthesize_replacements(&b, &SynthesisConfig::default(), &CheckerConfig::default());
        assert!(r.replacements.iter().any(|r| realizes(&r.candidate.dag)), "{src}");
    }
}

#[test]
fn zero_input_blocks_fold_to_verified_constants() {
    let b = largest_block("(module (func (result i32) i32.const 4 i32.const 6316 i32.mul))");
    assert!(b.inputs.is_empty());
    let r = synthesize_replacements(&b, &SynthesisConfig::default(), &CheckerConfig::default());
    let first = &r.replacements[0];
    assert_eq!(first.candidate.dag, Dag::constant(25264));
    assert_eq!(first.candidate.index, None);
    assert!(r.replacements.iter().all(|r| r.tier() == Tier::Verified));
}

#[test]
fn vocabulary_parsing() {
    let v = Vocabulary::parse("i32.add, shl ,const").unwrap();
    assert_eq!(v.to_string(), "add,shl,const");
    assert!(Vocabulary::parse("div_s").is_err());
    assert!(Vocabulary::parse("frobnicate").is_err());
    assert!(Vocabulary::parse("").is_err());
    let cfg = SynthesisConfig { max_size: 0, ..SynthesisConfig::default() };
    assert!(cfg.validate().is_err());
    let cfg = SynthesisConfig { max_size: 51, ..SynthesisConfig::default() };
    assert!(cfg.validate().is_err());
}
