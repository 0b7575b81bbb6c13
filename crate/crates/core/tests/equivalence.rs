mod common;

use std::time::Duration;

use crow_core::dag::{Dag, DagBuilder, PureOp};
use crow_core::equivalence::{
    check_dags, emit_smtlib, exhaustive_check, CheckError, CheckMode, CheckerConfig, Method, SolverConfig, Tier,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unary(op: PureOp, c: i32, input_first: bool) -> Dag {
    let mut b = DagBuilder::new();
    let (x, k) = if input_first {
        let x = b.input(0);
        (x, b.constant(c))
    } else {
        let k = b.constant(c);
        (b.input(0), k)
    };
    let root = if input_first { b.op(op, &[x, k]) } else { b.op(op, &[k, x]) };
    b.finish(root)
}

fn unary_const(op: PureOp, a: i32, c: i32) -> Dag {
    let mut b = DagBuilder::new();
    let x = b.constant(a);
    let k = b.constant(c);
    let r = b.op(op, &[x, k]);
    b.finish(r)
}

/// `gt_s(x, c)` and `le_s(c + 1, x)`.
fn gt_pair(c: i32, bump: i32) -> (Dag, Dag) {
    (unary(PureOp::GtS, c, true), unary(PureOp::LeS, c.wrapping_add(1).wrapping_add(bump), false))
}

fn xor_self() -> Dag {
    let mut b = DagBuilder::new();
    let x = b.input(0);
    let r = b.op(PureOp::Xor, &[x, x]);
    b.finish(r)
}

/// One known-equivalent pair and one single-constant mutation of it.
fn trial(rng: &mut ChaCha8Rng) -> ((Dag, Dag), (Dag, Dag)) {
    let delta = loop {
        let d: i32 = rng.gen_range(-300..=300);
        if d != 0 {
            break d;
        }
    };
    match rng.gen_range(0..4) {
        0 => {
            let k = rng.gen_range(0..31);
            let shl = unary(PureOp::Shl, k, true);
            (
                (unary(PureOp::Mul, 1 << k, true), shl.clone()),
                (unary(PureOp::Mul, (1i32 << k).wrapping_add(delta), true), shl),
            )
        }
        1 => {
            let n: i32 = rng.gen();
            let add = unary(PureOp::Add, n, true);
            ((unary(PureOp::Sub, n.wrapping_neg(), true), add.clone()), (unary(PureOp::Sub, n.wrapping_neg().wrapping_add(delta), true), add))
        }
        2 => {
            let c = rng.gen_range(i32::MIN..i32::MAX);
            (gt_pair(c, 0), {
                // skip the bump that lands on the excluded edge
                let d = if c.wrapping_add(1).wrapping_add(delta) == i32::MIN { delta + 1 } else { delta };
                gt_pair(c, d)
            })
        }
        _ => ((xor_self(), Dag::constant(0)), (xor_self(), Dag::constant(delta))),
    }
}

#[test]
fn metamorphic_trials() {
    let cfg = CheckerConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..400 {
        let ((b, c), (mb, mc)) = trial(&mut rng);
        let v = check_dags(&b, &c, 1, &CheckerConfig { seed: i, ..cfg.clone() });
        assert_ne!(v.tier, Tier::Rejected, "{b} vs {c}: {v:?}");
        let v = check_dags(&mb, &mc, 1, &CheckerConfig { seed: i, ..cfg.clone() });
        assert_eq!(v.tier, Tier::Rejected, "{mb} vs {mc}");
        let cex = v.counterexample.unwrap();
        assert_ne!(mb.eval_i32(&cex), mc.eval_i32(&cex));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn rejected_counterexamples_replay(b in common::arb_dag(2, 3), c in common::arb_dag(2, 3)) {
        let cfg = CheckerConfig { samples: 2_000, ..CheckerConfig::default() };
        let v = check_dags(&b, &c, 2, &cfg);
        if v.tier == Tier::Rejected {
            let cex = v.counterexample.clone().unwrap();
            prop_assert_eq!(cex.len(), 2);
            prop_assert_ne!(b.eval_i32(&cex), c.eval_i32(&cex));
        } else {
            prop_assert!(v.counterexample.is_none());
        }
        prop_assert_eq!(check_dags(&b, &b, 2, &cfg).tier == Tier::Rejected, false);
    }
}

#[test]
fn tiers_for_reference_pairs() {
    let cfg = CheckerConfig::default();
    let (gt, le) = gt_pair(10, 0);
    let v = check_dags(&gt, &le, 1, &cfg);
    assert_eq!((v.tier, v.method), (Tier::Probable, Method::ReducedWidth));

    // and(x, 0) against 0: one free 32-bit input is beyond the budget
    let and0 = unary(PureOp::And, 0, true);
    assert_eq!(check_dags(&and0, &Dag::constant(0), 1, &cfg).tier, Tier::Probable);
    let v = check_dags(&Dag::constant(12), &unary_const(PureOp::Mul, 3, 4), 0, &cfg);
    assert_eq!((v.tier, v.method), (Tier::Verified, Method::Exhaustive));

    assert_eq!(
        exhaustive_check(&gt, &le, 3, 32, cfg.exhaustive_budget),
        Err(CheckError::InfeasibleDomain { bits: 96 })
    );
    let v = exhaustive_check(&gt, &le, 1, 8, cfg.exhaustive_budget).unwrap();
    assert_eq!(v.tier, Tier::Probable);
}

fn z3() -> Option<SolverConfig> {
    let path = ["/usr/local/bin/z3", "/usr/bin/z3"].into_iter().find(|p| std::path::Path::new(p).exists())?;
    SolverConfig::from_command_line(&format!("{path} -in"), Duration::from_secs(10))
}

#[test]
fn smt_verifies_and_refutes() {
    let Some(solver) = z3() else {
        eprintln!("z3 not found; skipping");
        return;
    };
    let cfg = CheckerConfig { mode: CheckMode::Smt, solver: Some(solver), ..CheckerConfig::default() };
    let (gt, le) = gt_pair(10, 0);
    let v = check_dags(&gt, &le, 1, &cfg);
    assert_eq!((v.tier, v.method), (Tier::Verified, Method::Smt));
    let v = check_dags(&unary(PureOp::Mul, 8, true), &unary(PureOp::Shl, 3, true), 1, &cfg);
    assert_eq!(v.tier, Tier::Verified);

    // differs only at x = 0x1234_5678
    let mut b = DagBuilder::new();
    let x = b.input(0);
    let k = b.constant(0x1234_5678);
    let eq = b.op(PureOp::Eq, &[x, k]);
    let r = b.op(PureOp::Add, &[x, eq]);
    let tricky = b.finish(r);
    let mut b = DagBuilder::new();
    let x = b.input(0);
    let k = b.constant(0);
    let r = b.op(PureOp::Add, &[x, k]);
    let plain = b.finish(r);
    let v = check_dags(&tricky, &plain, 1, &cfg);
    assert_eq!(v.tier, Tier::Rejected);
    assert_eq!(v.counterexample, Some(vec![0x1234_5678]));
}

#[test]
fn smtlib_shape() {
    let (gt, le) = gt_pair(10, 0);
    let q = emit_smtlib(&gt, &le, 1);
    assert!(q.contains("QF_BV"));
    assert!(q.contains("(declare-const in0 (_ BitVec 32))"));
    assert!(q.contains("bvsgt") || q.contains("bvslt"));
    assert!(q.contains("(check-sat)"));
}
