use std::fmt::Write as _;
use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use crate::dag::{Dag, NodeKind, PureOp};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SolverConfig {
    /// Program and arguments; the script is written to its standard input.
    pub argv: Vec<String>,
    pub timeout: Duration,
}

impl SolverConfig {
    /// Splits a command line on whitespace.
    pub fn from_command_line(cmd: &str, timeout: Duration) -> Option<SolverConfig> {
        let argv: Vec<String> = cmd.split_whitespace().map(String::from).collect();
        (!argv.is_empty()).then_some(SolverConfig { argv, timeout })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SolverAnswer {
    Unsat,
    /// Model values for `in0..inN`; unassigned inputs default to 0.
    Sat(Vec<i32>),
    Unknown,
}

fn lit(v: i32) -> String {
    format!("#x{:08x}", v as u32)
}

fn bool_to_bv(cond: String) -> String {
    format!("(ite {cond} #x00000001 #x00000000)")
}

struct Emitter<'a> {
    dag: &'a Dag,
    prefix: &'a str,
    uses: Vec<usize>,
    defs: String,
}

impl Emitter<'_> {
    fn new<'a>(dag: &'a Dag, prefix: &'a str) -> Emitter<'a> {
        let mut uses = vec![0; dag.nodes.len()];
        for n in &dag.nodes {
            for &a in &n.args {
                uses[a as usize] += 1;
            }
        }
        Emitter { dag, prefix, uses, defs: String::new() }
    }

    /// Nodes with several users become `define-fun`s; the rest are inlined.
    fn term(&mut self, i: usize, top: bool) -> String {
        let n = &self.dag.nodes[i];
        match n.kind {
            NodeKind::Const(v) => lit(v),
            NodeKind::Input(k) => format!("in{k}"),
            NodeKind::Op(op) => {
                let args: Vec<String> = n.args.clone().iter().map(|&a| self.term(a as usize, false)).collect();
                let consts: Vec<Option<i32>> = n
                    .args
                    .iter()
                    .map(|&a| match self.dag.nodes[a as usize].kind {
                        NodeKind::Const(v) => Some(v),
                        _ => None,
                    })
                    .collect();
                let body = op_term(op, &args, &consts);
                if !top && self.uses[i] > 1 {
                    let name = format!("{}{}", self.prefix, i);
                    if !self.defs.contains(&format!("(define-fun {name} ")) {
                        let _ = writeln!(self.defs, "(define-fun {name} () (_ BitVec 32) {body})");
                    }
                    name
                } else {
                    body
                }
            }
        }
    }
}

fn shift_count(arg: &str, konst: Option<i32>) -> String {
    match konst {
        Some(v) => lit(v & 31),
        None => format!("(bvand {arg} #x0000001f)"),
    }
}

fn op_term(op: PureOp, a: &[String], k: &[Option<i32>]) -> String {
    let bin = |f: &str| format!("({f} {} {})", a[0], a[1]);
    let cmp = |f: &str| bool_to_bv(format!("({f} {} {})", a[0], a[1]));
    match op {
        PureOp::Add => bin("bvadd"),
        PureOp::Sub => bin("bvsub"),
        PureOp::Mul => bin("bvmul"),
        PureOp::And => bin("bvand"),
        PureOp::Or => bin("bvor"),
        PureOp::Xor => bin("bvxor"),
        PureOp::Shl => format!("(bvshl {} {})", a[0], shift_count(&a[1], k[1])),
        PureOp::ShrS => format!("(bvashr {} {})", a[0], shift_count(&a[1], k[1])),
        PureOp::ShrU => format!("(bvlshr {} {})", a[0], shift_count(&a[1], k[1])),
        PureOp::Rotl | PureOp::Rotr => {
            let left = op == PureOp::Rotl;
            if let Some(v) = k[1] {
                let dir = if left { "rotate_left" } else { "rotate_right" };
                format!("((_ {dir} {}) {})", v & 31, a[0])
            } else {
                let n = shift_count(&a[1], None);
                let (first, second) = if left { ("bvshl", "bvlshr") } else { ("bvlshr", "bvshl") };
                // a shift by 32 yields 0, so a zero count leaves `a` intact
                format!("(bvor ({first} {x} {n}) ({second} {x} (bvsub #x00000020 {n})))", x = a[0])
            }
        }
        PureOp::Eq => bool_to_bv(format!("(= {} {})", a[0], a[1])),
        PureOp::Ne => bool_to_bv(format!("(distinct {} {})", a[0], a[1])),
        PureOp::LtS => cmp("bvslt"),
        PureOp::LtU => cmp("bvult"),
        PureOp::GtS => cmp("bvsgt"),
        PureOp::GtU => cmp("bvugt"),
        PureOp::LeS => cmp("bvsle"),
        PureOp::LeU => cmp("bvule"),
        PureOp::GeS => cmp("bvsge"),
        PureOp::GeU => cmp("bvuge"),
        PureOp::Eqz => bool_to_bv(format!("(= {} #x00000000)", a[0])),
        PureOp::Select => format!("(ite (distinct {} #x00000000) {} {})", a[2], a[0], a[1]),
    }
}

/// A QF_BV script asking for an input on which the two DAGs differ;
/// `unsat` means they are equivalent.
pub fn emit_smtlib(b: &Dag, c: &Dag, arity: usize) -> String {
    let mut out = String::from("(set-option :produce-models true)\n(set-logic QF_BV)\n");
    for k in 0..arity.max(b.input_arity()).max(c.input_arity()) {
        let _ = writeln!(out, "(declare-const in{k} (_ BitVec 32))");
    }
    let mut eb = Emitter::new(b, "b");
    let tb = eb.term(b.root(), true);
    let mut ec = Emitter::new(c, "c");
    let tc = ec.term(c.root(), true);
    out.push_str(&eb.defs);
    out.push_str(&ec.defs);
    let _ = writeln!(out, "(assert (distinct {tb} {tc}))");
    out.push_str("(check-sat)\n(get-model)\n");
    out
}

pub(super) fn solve(b: &Dag, c: &Dag, arity: usize, cfg: &SolverConfig) -> Result<SolverAnswer, String> {
    let script = emit_smtlib(b, c, arity);
    let output = run(&script, cfg)?;
    parse_answer(&output, arity)
}

fn run(script: &str, cfg: &SolverConfig) -> Result<String, String> {
    let mut child = Command::new(&cfg.argv[0])
        .args(&cfg.argv[1..])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| format!("cannot start {}: {e}", cfg.argv[0]))?;
    let mut stdin = child.stdin.take().unwrap();
    let mut stdout = child.stdout.take().unwrap();
    let script = script.to_owned();
    let writer = std::thread::spawn(move || {
        let _ = stdin.write_all(script.as_bytes());
    });
    let reader = std::thread::spawn(move || {
        let mut s = String::new();
        let _ = stdout.read_to_string(&mut s);
        s
    });
    let deadline = Instant::now() + cfg.timeout;
    loop {
        match child.try_wait() {
            Ok(Some(_)) => break,
            Ok(None) if Instant::now() >= deadline => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(format!("timed out after {:?}", cfg.timeout));
            }
            Ok(None) => std::thread::sleep(Duration::from_millis(2)),
            Err(e) => return Err(e.to_string()),
        }
    }
    let _ = writer.join();
    reader.join().map_err(|_| "reader thread panicked".to_string())
}

pub(super) fn parse_answer(output: &str, arity: usize) -> Result<SolverAnswer, String> {
    let first = output.split_whitespace().next().unwrap_or("");
    match first {
        "unsat" => Ok(SolverAnswer::Unsat),
        "unknown" => Ok(SolverAnswer::Unknown),
        "sat" => Ok(SolverAnswer::Sat(parse_model(output, arity))),
        "" => Err("empty solver output".into()),
        other => Err(format!("unexpected solver answer {other:?}")),
    }
}

/// Pulls `inK` values out of a `(get-model)` response. Tolerates both the
/// `(model ...)` wrapper and its absence.
fn parse_model(output: &str, arity: usize) -> Vec<i32> {
    let mut vals = vec![0i32; arity];
    let mut rest = output;
    while let Some(pos) = rest.find("(define-fun ") {
        rest = &rest[pos + "(define-fun ".len()..];
        let name: String = rest.chars().take_while(|c| !c.is_whitespace() && *c != '(').collect();
        let Some(k) = name.strip_prefix("in").and_then(|s| s.parse::<usize>().ok()) else { continue };
        let end = rest.find("(define-fun ").unwrap_or(rest.len());
        if let Some(v) = parse_bv_literal(&rest[..end]) {
            if k < arity {
                vals[k] = v;
            }
        }
    }
    vals
}

fn parse_bv_literal(s: &str) -> Option<i32> {
    // skip past the sort `(_ BitVec 32)`
    let body = &s[s.find("BitVec 32)")? + "BitVec 32)".len()..];
    let body = body.trim_start();
    if let Some(hex) = body.strip_prefix("#x") {
        let digits: String = hex.chars().take_while(|c| c.is_ascii_hexdigit()).collect();
        return u32::from_str_radix(&digits, 16).ok().map(|v| v as i32);
    }
    if let Some(bin) = body.strip_prefix("#b") {
        let digits: String = bin.chars().take_while(|c| *c == '0' || *c == '1').collect();
        return u32::from_str_radix(&digits, 2).ok().map(|v| v as i32);
    }
    if let Some(dec) = body.strip_prefix("(_ bv") {
        let digits: String = dec.chars().take_while(|c| c.is_ascii_digit()).collect();
        return digits.parse::<u64>().ok().map(|v| v as u32 as i32);
    }
    None
}
