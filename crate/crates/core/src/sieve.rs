//! Prime generation: a plain sieve for small bounds and a segmented,
//! parallel sieve that streams primes in increasing order.

use crate::error::{RaceError, Result};
use rayon::prelude::*;

pub const MAX_SIEVE_BOUND: u64 = 10_000_000_000;
pub const MIN_SEGMENT_SIZE: usize = 1 << 16;
pub const DEFAULT_SEGMENT_SIZE: usize = 1 << 18;

/// Segments sieved concurrently before their primes are handed out in order.
const SEGMENTS_PER_BATCH: usize = 32;

/// All primes `≤ n` by the textbook sieve of Eratosthenes.
pub fn simple_sieve(n: u64) -> Vec<u64> {
    if n < 2 {
        return Vec::new();
    }
    let n = n as usize;
    let mut composite = vec![false; n + 1];
    let mut i = 2;
    while i * i <= n {
        if !composite[i] {
            let mut j = i * i;
            while j <= n {
                composite[j] = true;
                j += i;
            }
        }
        i += 1;
    }
    (2..=n).filter(|&k| !composite[k]).map(|k| k as u64).collect()
}

fn check_bounds(x: u64, segment_size: usize) -> Result<()> {
    if x > MAX_SIEVE_BOUND {
        return Err(RaceError::Config(format!(
            "sieve bound {x} exceeds the supported maximum {MAX_SIEVE_BOUND}"
        )));
    }
    if segment_size < MIN_SEGMENT_SIZE {
        return Err(RaceError::Config(format!(
            "segment size {segment_size} is below the minimum {MIN_SEGMENT_SIZE}"
        )));
    }
    Ok(())
}

/// Odd primes in `[lo, hi)`, `lo` odd, using the odd base primes.
fn sieve_segment(lo: u64, hi: u64, base: &[u64]) -> Vec<u64> {
    debug_assert!(lo % 2 == 1);
    let len = ((hi - lo + 1) / 2) as usize;
    let mut composite = vec![false; len];
    for &p in base {
        if p * p >= hi {
            break;
        }
        // first odd multiple of p that is ≥ max(p², lo)
        let mut start = p * p;
        if start < lo {
            start = lo.div_ceil(p) * p;
            if start % 2 == 0 {
                start += p;
            }
        }
        let mut idx = ((start - lo) / 2) as usize;
        while idx < len {
            composite[idx] = true;
            idx += p as usize;
        }
    }
    composite
        .iter()
        .enumerate()
        .filter(|(_, &c)| !c)
        .map(|(i, _)| lo + 2 * i as u64)
        .filter(|&n| n < hi && n > 1)
        .collect()
}

/// Stream every prime `≤ x` to `visit` in increasing order.
///
/// Segments are sieved in parallel batches and merged in order, so the
/// visitor sees exactly the sequence a serial sieve would produce.
pub fn segmented_sieve<F: FnMut(u64)>(x: u64, segment_size: usize, visit: F) -> Result<()> {
    segmented_sieve_range(0, x, segment_size, visit)
}

/// Stream the primes in `(after, x]` in increasing order.
pub fn segmented_sieve_range<F: FnMut(u64)>(
    after: u64,
    x: u64,
    segment_size: usize,
    mut visit: F,
) -> Result<()> {
    check_bounds(x, segment_size)?;
    if x < 2 || after >= x {
        return Ok(());
    }
    if after < 2 {
        visit(2);
    }
    let root = (x as f64).sqrt() as u64 + 2;
    let base: Vec<u64> = simple_sieve(root).into_iter().filter(|&p| p != 2).collect();
    let span = 2 * segment_size as u64;
    let end = x + 1;
    // first odd number above `after`, and at least 3
    let mut lo = (after + 1).max(3) | 1;
    while lo < end {
        let starts: Vec<u64> = (0..SEGMENTS_PER_BATCH as u64)
            .map(|k| lo + k * span)
            .take_while(|&s| s < end)
            .collect();
        let batch: Vec<Vec<u64>> = starts
            .par_iter()
            .map(|&s| sieve_segment(s, (s + span).min(end), &base))
            .collect();
        for primes in batch {
            primes.into_iter().for_each(&mut visit);
        }
        lo = starts.last().copied().unwrap_or(lo) + span;
    }
    Ok(())
}

/// Like [`segmented_sieve`], passing each prime together with its residue mod `q`.
pub fn segmented_sieve_tagged<F: FnMut(u64, u64)>(
    x: u64,
    segment_size: usize,
    q: u64,
    mut visit: F,
) -> Result<()> {
    if q == 0 {
        return Err(RaceError::Config("modulus must be positive".into()));
    }
    segmented_sieve(x, segment_size, |p| visit(p, p % q))
}

pub fn primes_up_to(x: u64) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    segmented_sieve(x, DEFAULT_SEGMENT_SIZE, |p| out.push(p))?;
    Ok(out)
}

pub fn prime_pi(x: u64) -> Result<u64> {
    let mut n = 0u64;
    segmented_sieve(x, DEFAULT_SEGMENT_SIZE, |_| n += 1)?;
    Ok(n)
}
