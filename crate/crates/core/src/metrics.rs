//! Dynamic time warping over instruction streams and stack traces.

use num_traits::{Bounded, SaturatingAdd, Unsigned};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interp::Event;
use crate::wat::Module;

/// Alignment cost with 0/1 token distance.
pub type Cost = u64;

/// Normalized dynamic distance at or above which a variant counts as
/// significantly different from the original.
pub const SIGNIFICANT_DT_DYN: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DtwResult {
    pub cost: Cost,
    pub len_a: usize,
    pub len_b: usize,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("cannot normalize by an empty original trace")]
    EmptyOriginal,
}

/// Canonical instruction tokens over all function bodies in index order.
pub fn tokenize(m: &Module) -> Vec<String> {
    m.functions.iter().flat_map(|f| f.body.iter().map(|i| i.to_string())).collect()
}

/// Full DTW with two rolling rows. `C` is the accumulator; it saturates
/// instead of overflowing, with `C::max_value()` standing in for infinity.
pub fn dtw_generic<T: PartialEq, C>(a: &[T], b: &[T]) -> C
where
    C: Unsigned + Bounded + SaturatingAdd + Copy + Ord + TryFrom<usize>,
{
    let len_as_cost = |n: usize| C::try_from(n).unwrap_or_else(|_| C::max_value());
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return C::zero(),
        (true, false) => return len_as_cost(b.len()),
        (false, true) => return len_as_cost(a.len()),
        _ => {}
    }
    let inf = C::max_value();
    let mut prev = vec![inf; b.len() + 1];
    let mut cur = vec![inf; b.len() + 1];
    prev[0] = C::zero();
    for x in a {
        cur[0] = inf;
        for (j, y) in b.iter().enumerate() {
            let d = if x == y { C::zero() } else { C::one() };
            let best = prev[j].min(prev[j + 1]).min(cur[j]);
            cur[j + 1] = best.saturating_add(&d);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn dtw<T: PartialEq>(a: &[T], b: &[T]) -> DtwResult {
    DtwResult { cost: dtw_generic::<T, Cost>(a, b), len_a: a.len(), len_b: b.len() }
}

pub fn dt_static(m1: &Module, m2: &Module) -> Cost {
    dtw(&tokenize(m1), &tokenize(m2)).cost
}

pub fn dt_dyn(t1: &[Event], t2: &[Event]) -> Cost {
    dtw(t1, t2).cost
}

pub fn normalized_dt_dyn(original: &[Event], variant: &[Event]) -> Result<f64, MetricError> {
    if original.is_empty() {
        return Err(MetricError::EmptyOriginal);
    }
    Ok(dt_dyn(original, variant) as f64 / original.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wat::parse_module;

    #[test]
    fn small_cases() {
        assert_eq!(dtw(b"ABC", b"ABC").cost, 0);
        assert_eq!(dtw(b"ABC", b"AC").cost, 1);
        assert_eq!(dtw(b"AB", b"BA").cost, 2);
        assert_eq!(dtw(b"", b"ABC").cost, 3);
        assert_eq!(dtw::<u8>(b"", b"").cost, 0);
        assert_eq!(dtw(b"AAB", b"AB").cost, 0);
    }

    #[test]
    fn narrow_cost_saturates() {
        let a = vec![0u8; 300];
        let b = vec![1u8; 300];
        assert_eq!(dtw_generic::<u8, u8>(&a, &b), u8::MAX);
        assert_eq!(dtw_generic::<u8, u16>(&a, &b), 300);
    }

    #[test]
    fn tokens_follow_bodies() {
        let m = parse_module(
            r#"(module
              (func (param i32) (result i32) local.get 0 local.get 0 i32.const 2 i32.mul i32.add)
              (func (result i32) i32.const 10 call 0))"#,
        )
        .unwrap();
        let t = tokenize(&m);
        assert_eq!(&t[..5], ["local.get 0", "local.get 0", "i32.const 2", "i32.mul", "i32.add"]);
        assert_eq!(t.len(), 7);
        assert!(tokenize(&Module::default()).is_empty());
    }

    #[test]
    fn normalization() {
        let t: Vec<Event> = (0..100).map(Event::Push).collect();
        let mut v = t.clone();
        for e in v.iter_mut().take(50) {
            *e = Event::Pop(-1);
        }
        assert_eq!(normalized_dt_dyn(&t, &t).unwrap(), 0.0);
        assert_eq!(normalized_dt_dyn(&t, &v).unwrap(), 0.5);
        assert_eq!(normalized_dt_dyn(&[], &t), Err(MetricError::EmptyOriginal));
    }
}
