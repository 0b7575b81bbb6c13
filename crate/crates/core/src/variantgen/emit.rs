//! Re-emission of a region with replacement candidates substituted.
//!
//! Each replaced block loses the pure instructions whose values only flowed
//! into it: constants, pure operators and local reads. Everything with an
//! effect stays in place. Values the candidate needs are captured into fresh
//! locals where they are produced (`local.tee`, or `local.set` when the
//! block was their only consumer), and the candidate is emitted where the
//! block's root used to be. Regions without replacements are copied
//! verbatim.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::dag::{Dag, PureOp};
use crate::region::{build_regions, InputOrigin, PureBlock, Region, RegionGraph, SlotSrc};
use crate::wat::{validate, FuncDef, Instr, Module};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum EmitError {
    #[error("block {0} does not belong to this module")]
    UnknownBlock(String),
    #[error("replaced blocks {0} and {1} share instructions")]
    Overlap(String, String),
    #[error("emitted module does not validate: {0}")]
    Invalid(String),
}

/// Substitutes `dag` for each block and returns the rewritten module.
pub fn substitute(m: &Module, subs: &[(&PureBlock, &Dag)]) -> Result<Module, EmitError> {
    let mut by_func: BTreeMap<u32, Vec<(&PureBlock, &Dag)>> = BTreeMap::new();
    for &(b, d) in subs {
        by_func.entry(b.id.func).or_default().push((b, d));
    }
    let mut out = m.clone();
    for (func, mut subs) in by_func {
        let f = m.functions.get(func as usize).ok_or_else(|| EmitError::UnknownBlock(subs[0].0.id.to_string()))?;
        subs.sort_by_key(|(b, _)| b.id);
        let regions = build_regions(m, func);
        let mut next_local = f.local_count();
        let mut body = f.body.clone();
        // splice back to front so earlier indices stay valid
        let mut per_region: BTreeMap<usize, Vec<(&PureBlock, &Dag)>> = BTreeMap::new();
        for (b, d) in subs {
            let r = regions
                .iter()
                .position(|r| r.start <= b.id.root_site && b.id.root_site < r.end)
                .ok_or_else(|| EmitError::UnknownBlock(b.id.to_string()))?;
            per_region.entry(r).or_default().push((b, d));
        }
        let mut rewritten = Vec::new();
        for (&ri, subs) in &per_region {
            let code = rewrite_region(m, f, &regions[ri], subs, &mut next_local)?;
            rewritten.push((ri, code));
        }
        for (ri, code) in rewritten.into_iter().rev() {
            let r = &regions[ri];
            body.splice(r.start..r.end, code);
        }
        let nf = &mut out.functions[func as usize];
        nf.body = body;
        nf.locals = next_local - nf.params;
    }
    let diags = validate(&out);
    if let Some(d) = diags.first() {
        return Err(EmitError::Invalid(d.to_string()));
    }
    Ok(out)
}

fn removable(ins: &Instr) -> bool {
    matches!(ins, Instr::Const(_) | Instr::LocalGet(_)) || PureOp::from_instr(ins).is_some()
}

fn rewrite_region(
    m: &Module,
    f: &FuncDef,
    r: &Region,
    subs: &[(&PureBlock, &Dag)],
    next_local: &mut u32,
) -> Result<Vec<Instr>, EmitError> {
    let g = RegionGraph::build(m, f, r);
    let at = |site: usize| site - r.start;
    let popper_of = |site: usize| g.pushed[at(site)].and_then(|s| g.slots[s].popper);

    // instructions removed by each substitution
    let mut removed: BTreeMap<usize, usize> = BTreeMap::new();
    let mut roots: BTreeMap<usize, usize> = BTreeMap::new();
    for (i, (b, _)) in subs.iter().enumerate() {
        let root = b.id.root_site;
        let mut set = BTreeSet::from([root]);
        for s in (r.start..root).rev() {
            if removable(&f.body[s]) && popper_of(s).is_some_and(|p| set.contains(&p)) {
                set.insert(s);
            }
        }
        for s in set {
            if let Some(&j) = removed.get(&s) {
                return Err(EmitError::Overlap(subs[j].0.id.to_string(), b.id.to_string()));
            }
            removed.insert(s, i);
        }
        roots.insert(root, i);
    }
    let feeds_removed = |site: usize| popper_of(site).is_some_and(|p| removed.contains_key(&p));

    // entry-stack values consumed by removed code, by depth
    let mut entry_orphans = BTreeSet::new();
    for slot in &g.slots {
        if let (SlotSrc::Entry(d), Some(p)) = (slot.src, slot.popper) {
            if removed.contains_key(&p) {
                entry_orphans.insert(d);
            }
        }
    }

    // how each candidate reads each of its inputs
    let mut local_for_origin: BTreeMap<InputOrigin, u32> = BTreeMap::new();
    let mut captures: BTreeMap<usize, u32> = BTreeMap::new();
    let mut param_captures: Vec<(u32, u32)> = Vec::new();
    let mut entry_needed: BTreeSet<usize> = entry_orphans.clone();
    let fresh = |n: &mut u32| {
        let t = *n;
        *n += 1;
        t
    };
    let mut readers: Vec<BTreeMap<u32, u32>> = Vec::new();
    for (b, cand) in subs {
        let mut reader = BTreeMap::new();
        for (k, origin) in b.inputs.iter().enumerate() {
            let k = k as u32;
            if !cand.uses_input(k) {
                continue;
            }
            if let Some(&l) = local_for_origin.get(origin) {
                reader.insert(k, l);
                continue;
            }
            let local = match *origin {
                InputOrigin::Param { index } | InputOrigin::LocalAtEntry { index } => {
                    // the reader is shared by every block of the region, so any
                    // write in the region forces a capture
                    let written = f.body[r.start..r.end]
                        .iter()
                        .any(|ins| matches!(ins, Instr::LocalSet(j) | Instr::LocalTee(j) if *j == index));
                    if written {
                        let t = fresh(next_local);
                        param_captures.push((index, t));
                        t
                    } else {
                        index
                    }
                }
                InputOrigin::EntryStack { depth } => {
                    entry_needed.insert(depth);
                    continue;
                }
                InputOrigin::Global { site, .. }
                | InputOrigin::Load { site }
                | InputOrigin::CallResult { site }
                | InputOrigin::TrapOpResult { site } => {
                    let t = fresh(next_local);
                    captures.insert(site, t);
                    t
                }
            };
            local_for_origin.insert(*origin, local);
            reader.insert(k, local);
        }
        readers.push(reader);
    }

    let mut out = Vec::new();
    let depth = entry_needed.iter().next_back().map_or(0, |d| d + 1);
    let entry_temps: Vec<u32> = (0..depth).map(|_| fresh(next_local)).collect();
    for &t in &entry_temps {
        out.push(Instr::LocalSet(t));
    }
    for d in (0..depth).rev() {
        if !entry_orphans.contains(&d) {
            out.push(Instr::LocalGet(entry_temps[d]));
        }
    }
    for &(index, t) in &param_captures {
        out.push(Instr::LocalGet(index));
        out.push(Instr::LocalSet(t));
    }
    for (i, (b, _)) in subs.iter().enumerate() {
        for (k, origin) in b.inputs.iter().enumerate() {
            if let InputOrigin::EntryStack { depth } = origin {
                if subs[i].1.uses_input(k as u32) {
                    readers[i].insert(k as u32, entry_temps[*depth]);
                }
            }
        }
    }

    for site in r.start..r.end {
        if let Some(&i) = roots.get(&site) {
            let reader = &readers[i];
            out.extend(subs[i].1.to_instrs(&mut |k| vec![Instr::LocalGet(reader[&k])]));
            continue;
        }
        if removed.contains_key(&site) {
            continue;
        }
        let ins = f.body[site];
        let orphan = feeds_removed(site);
        match ins {
            Instr::LocalTee(k) if orphan => {
                out.push(Instr::LocalSet(k));
                continue;
            }
            _ => out.push(ins),
        }
        match (captures.get(&site), orphan) {
            (Some(&t), true) => out.push(Instr::LocalSet(t)),
            (Some(&t), false) => out.push(Instr::LocalTee(t)),
            (None, true) => out.push(Instr::Drop),
            (None, false) => {}
        }
    }
    Ok(out)
}
