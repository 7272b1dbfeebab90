//! Ordering search spaces: all `n!` permutations, or the `(n-1)!` subset
//! that keeps the most similar example in front.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::prompt::{check_permutation, Ordering, OrderingSource};

/// Largest plan size allowed unless the caller raises it (6! = 720).
pub const DEFAULT_PERMUTATION_CAP: usize = 720;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanStrategy {
    Exhaustive,
    Anchored,
    SingleTopk,
    SingleRandom,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderingPlan {
    pub orderings: Vec<Ordering>,
    pub strategy: PlanStrategy,
}

impl OrderingPlan {
    pub fn len(&self) -> usize {
        self.orderings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orderings.is_empty()
    }
}

/// `n!`, or `None` on overflow.
pub fn factorial(n: usize) -> Option<usize> {
    (1..=n).try_fold(1usize, |acc, k| acc.checked_mul(k))
}

/// Fails with `CapExceeded` when `n!` is larger than `cap`.
pub fn check_cap(n: usize, cap: usize) -> Result<usize> {
    match factorial(n) {
        Some(count) if count <= cap => Ok(count),
        _ => Err(Error::CapExceeded { n, cap }),
    }
}

/// Rearranges `items` into the next lexicographic permutation; returns false
/// after the last one.
fn next_permutation(items: &mut [usize]) -> bool {
    if items.len() < 2 {
        return false;
    }
    let mut i = items.len() - 1;
    while i > 0 && items[i - 1] >= items[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = items.len() - 1;
    while items[j] <= items[i - 1] {
        j -= 1;
    }
    items.swap(i - 1, j);
    items[i..].reverse();
    true
}

fn lexicographic(mut items: Vec<usize>) -> Vec<Vec<usize>> {
    items.sort_unstable();
    let mut out = Vec::new();
    loop {
        out.push(items.clone());
        if !next_permutation(&mut items) {
            return out;
        }
    }
}

/// All permutations of `0..n` in lexicographic order, ranked from 0.
pub fn enumerate_orderings(n: usize, cap: usize) -> Result<OrderingPlan> {
    if n == 0 {
        return Err(Error::InvalidOrdering("cannot order an empty example pool".into()));
    }
    check_cap(n, cap)?;
    let orderings = lexicographic((0..n).collect())
        .into_iter()
        .enumerate()
        .map(|(rank, indices)| Ordering::new(indices, OrderingSource::Exhaustive { rank }))
        .collect();
    Ok(OrderingPlan {
        orderings,
        strategy: PlanStrategy::Exhaustive,
    })
}

/// Keeps `ranked[0]` first and permutes the rest lexicographically.
pub fn anchored_orderings(ranked: &[usize], cap: usize) -> Result<OrderingPlan> {
    if ranked.is_empty() {
        return Err(Error::InvalidOrdering("cannot order an empty example pool".into()));
    }
    check_permutation(ranked, ranked.len())?;
    check_cap(ranked.len() - 1, cap)?;
    let anchor = ranked[0];
    let orderings = lexicographic(ranked[1..].to_vec())
        .into_iter()
        .enumerate()
        .map(|(rank, tail)| {
            let mut indices = Vec::with_capacity(ranked.len());
            indices.push(anchor);
            indices.extend(tail);
            Ordering::new(indices, OrderingSource::Anchored { rank })
        })
        .collect();
    Ok(OrderingPlan {
        orderings,
        strategy: PlanStrategy::Anchored,
    })
}

/// The ordering with lexicographic rank `rank` among permutations of `0..n`,
/// computed directly through the factorial number system.
pub fn nth_permutation(n: usize, mut rank: usize) -> Option<Vec<usize>> {
    let total = factorial(n)?;
    if rank >= total {
        return None;
    }
    let mut pool: Vec<usize> = (0..n).collect();
    let mut out = Vec::with_capacity(n);
    for k in (0..n).rev() {
        let block = factorial(k)?;
        out.push(pool.remove(rank / block));
        rank %= block;
    }
    Some(out)
}
