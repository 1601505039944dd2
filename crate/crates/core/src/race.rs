//! Empirical races: per-class prime counts from the sieve and the exact
//! logarithmic measure of each ordering over [2, X].

use crate::arith::{factorize, Residue};
use crate::characters::Neumaier;
use crate::densities::permutations;
use crate::error::{domain, RaceError, Result};
use crate::sieve::{segmented_sieve_range, DEFAULT_SEGMENT_SIZE};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Pairwise comparisons are packed two bits each into a u64.
pub const MAX_CLASSES: usize = 8;

/// Counts π(x; q, a_j) at checkpoints and at every point where the relative
/// order of the counts changes.
///
/// Row i holds the counts of primes ≤ `x[i]`; they stay constant on
/// [x[i], x[i+1]) and the last row extends to `x_max`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RaceTrace {
    pub q: u64,
    pub classes: Vec<u64>,
    pub schedule: Vec<u64>,
    pub x_max: u64,
    x: Vec<u64>,
    pi: Vec<u64>,
    counts: Vec<u64>,
    checkpoint: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRow<'a> {
    pub x: u64,
    /// π(x).
    pub pi: u64,
    pub counts: &'a [u64],
    pub checkpoint: bool,
}

impl RaceTrace {
    pub fn r(&self) -> usize {
        self.classes.len()
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn row(&self, i: usize) -> TraceRow<'_> {
        let r = self.r();
        TraceRow {
            x: self.x[i],
            pi: self.pi[i],
            counts: &self.counts[i * r..(i + 1) * r],
            checkpoint: self.checkpoint[i],
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = TraceRow<'_>> {
        (0..self.len()).map(|i| self.row(i))
    }

    pub fn checkpoints(&self) -> impl Iterator<Item = TraceRow<'_>> {
        self.rows().filter(|row| row.checkpoint)
    }

    /// Exact counts at a recorded point. Between recorded points only the
    /// relative order of the counts is known.
    pub fn counts_at(&self, x: u64) -> Option<&[u64]> {
        self.x.binary_search(&x).ok().map(|i| self.row(i).counts)
    }

    /// Whether the classes are all the units mod q.
    pub fn exhausts_units(&self) -> bool {
        self.r() as u64 == crate::arith::euler_phi(self.q)
    }

    /// Primes dividing q; they lie in no unit class.
    pub fn ramified_primes(&self) -> Vec<u64> {
        factorize(self.q).into_iter().map(|(p, _)| p).collect()
    }

    fn push(&mut self, x: u64, pi: u64, counts: &[u64], checkpoint: bool) {
        if self.x.last() == Some(&x) {
            let i = self.len() - 1;
            self.checkpoint[i] |= checkpoint;
            return;
        }
        self.x.push(x);
        self.pi.push(pi);
        self.counts.extend_from_slice(counts);
        self.checkpoint.push(checkpoint);
    }

    /// Sieve on to a larger bound, keeping everything already counted.
    pub fn extend(&mut self, x: u64, schedule: &[u64]) -> Result<()> {
        if x < self.x_max {
            return domain(format!("cannot shrink a trace from {} to {x}", self.x_max));
        }
        let mut points: Vec<u64> = schedule.iter().copied().filter(|&c| c > self.x_max && c <= x).collect();
        points.push(x);
        points.sort_unstable();
        points.dedup();
        let r = self.r();
        let last = self.len() - 1;
        let mut counts = self.row(last).counts.to_vec();
        let mut pi = self.pi[last];
        let mut pattern = order_pattern(&counts);
        let classes = self.classes.clone();
        let q = self.q;
        let mut next = 0usize;
        segmented_sieve_range(self.x_max, x, DEFAULT_SEGMENT_SIZE, |p| {
            while next < points.len() && points[next] < p {
                self.push(points[next], pi, &counts, true);
                next += 1;
            }
            pi += 1;
            let residue = p % q;
            let mut changed = false;
            if let Some(j) = classes.iter().position(|&a| a == residue) {
                counts[j] += 1;
                let fresh = order_pattern(&counts);
                changed = fresh != pattern;
                pattern = fresh;
            }
            let at_checkpoint = next < points.len() && points[next] == p;
            if changed || at_checkpoint || p == 2 {
                self.push(p, pi, &counts, at_checkpoint);
            }
            if at_checkpoint {
                next += 1;
            }
        })?;
        for &c in &points[next..] {
            self.push(c, pi, &counts, true);
        }
        debug_assert_eq!(self.counts.len(), self.len() * r);
        self.schedule.extend(points);
        self.x_max = x;
        Ok(())
    }

    /// CSV with header `x,count_<a1>,…,count_<ar>`, one line per row.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = self.classes.iter().map(|a| format!("count_{a}")).collect();
        writeln!(out, "x,{}", header.join(","))?;
        for row in self.rows() {
            let cells: Vec<String> = row.counts.iter().map(u64::to_string).collect();
            writeln!(out, "{},{}", row.x, cells.join(","))?;
        }
        Ok(())
    }
}

/// Two bits per pair (j < k): 0 for less, 1 for equal, 2 for greater.
fn order_pattern(counts: &[u64]) -> u64 {
    let mut bits = 0u64;
    let mut shift = 0;
    for j in 0..counts.len() {
        for k in j + 1..counts.len() {
            bits |= ((counts[j].cmp(&counts[k]) as i64 + 1) as u64) << shift;
            shift += 2;
        }
    }
    bits
}

/// 2 and roughly `per_decade` geometrically spaced points per power of ten up to x.
pub fn geometric_schedule(x: u64, per_decade: u32) -> Vec<u64> {
    let mut out = vec![2u64];
    if per_decade > 0 && x > 2 {
        let step = 10f64.powf(1.0 / per_decade as f64);
        let mut t = 10f64;
        while t < x as f64 {
            out.push(t.round() as u64);
            t *= step;
        }
    }
    out.push(x.max(2));
    out.dedup();
    out
}

/// Exact counts π(x; q, a_j) for x ≤ `x`, recording every change in the
/// relative order of the counts.
pub fn race_counts(q: u64, classes: &[i64], x: u64, schedule: &[u64]) -> Result<RaceTrace> {
    let r = classes.len();
    if !(1..=MAX_CLASSES).contains(&r) {
        return domain(format!("between 1 and {MAX_CLASSES} classes are supported, got {r}"));
    }
    if x < 3 {
        return domain(format!("the race needs X ≥ 3, got {x}"));
    }
    let residues = classes
        .iter()
        .map(|&a| Residue::unit(a, q).map(|u| u.value))
        .collect::<Result<Vec<_>>>()?;
    for i in 0..r {
        if residues[i + 1..].contains(&residues[i]) {
            return domain(format!("class {} is repeated modulo {q}", classes[i]));
        }
    }
    if let Some(&bad) = schedule.iter().find(|&&c| c < 2) {
        return domain(format!("checkpoints start at 2, got {bad}"));
    }
    // Seed with the empty state just below 2, then drop it once 2 is recorded.
    let mut trace = RaceTrace {
        q,
        classes: residues,
        schedule: Vec::new(),
        x_max: 1,
        x: vec![1],
        pi: vec![0],
        counts: vec![0; r],
        checkpoint: vec![false],
    };
    trace.extend(x, schedule)?;
    trace.x.remove(0);
    trace.pi.remove(0);
    trace.counts.drain(..r);
    trace.checkpoint.remove(0);
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDensity {
    /// Positions into the trace's classes, leader first.
    pub ordering: Vec<usize>,
    /// The same ordering as residues.
    pub classes: Vec<u64>,
    pub strict_measure: f64,
    /// Log-measure of the points where any two counts are equal.
    pub tie_measure: f64,
    pub x_max: u64,
    /// Times the ordering starts or stops holding, tied stretches skipped.
    pub lead_changes: u64,
}

/// Strict-order state of one row: the ordering (leader first) or `None` on a tie.
fn strict_order(counts: &[u64]) -> Option<Vec<usize>> {
    let mut idx: Vec<usize> = (0..counts.len()).collect();
    idx.sort_by(|&a, &b| counts[b].cmp(&counts[a]));
    idx.windows(2).all(|w| counts[w[0]] > counts[w[1]]).then_some(idx)
}

/// Intervals [x_i, x_{i+1}) with their log-lengths, ending at x_max.
fn log_lengths(trace: &RaceTrace) -> impl Iterator<Item = (usize, f64)> + '_ {
    (0..trace.len()).map(move |i| {
        let lo = trace.x[i] as f64;
        let hi = trace.x.get(i + 1).copied().unwrap_or(trace.x_max);
        (i, ((hi as f64 - lo) / lo).ln_1p())
    })
}

/// (1/log(X/2)) times the log-measure of {t ∈ [2, X] : ordering holds strictly}.
pub fn empirical_log_density(trace: &RaceTrace, ordering: &[usize]) -> Result<EmpiricalDensity> {
    let r = trace.r();
    let mut seen = vec![false; r];
    if ordering.len() != r || ordering.iter().any(|&i| i >= r || std::mem::replace(&mut seen[i], true)) {
        return domain(format!("{ordering:?} is not a permutation of the {r} classes"));
    }
    let norm = (trace.x_max as f64 / 2.0).ln();
    let mut strict = Neumaier::default();
    let mut ties = Neumaier::default();
    let mut lead_changes = 0u64;
    let mut last: Option<bool> = None;
    for (i, len) in log_lengths(trace) {
        if len == 0.0 {
            continue;
        }
        match strict_order(trace.row(i).counts) {
            None => ties.add(len),
            Some(order) => {
                let holds = order == ordering;
                if holds {
                    strict.add(len);
                }
                if last.is_some_and(|prev| prev != holds) {
                    lead_changes += 1;
                }
                last = Some(holds);
            }
        }
    }
    Ok(EmpiricalDensity {
        ordering: ordering.to_vec(),
        classes: ordering.iter().map(|&i| trace.classes[i]).collect(),
        strict_measure: strict.value() / norm,
        tie_measure: ties.value() / norm,
        x_max: trace.x_max,
        lead_changes,
    })
}

/// Every ordering of the trace's classes, in lexicographic order.
pub fn all_orderings(trace: &RaceTrace) -> Result<Vec<EmpiricalDensity>> {
    permutations(trace.r())
        .iter()
        .map(|o| empirical_log_density(trace, o))
        .collect()
}

const TRACE_MAGIC: &[u8; 8] = b"RACETRCE";
const TRACE_VERSION: u32 = 1;

fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| RaceError::Format("trace file is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn varint(&mut self) -> Result<u64> {
        let mut v = 0u64;
        for shift in (0..64).step_by(7) {
            let b = self.take(1)?[0];
            v |= u64::from(b & 0x7f) << shift;
            if b < 0x80 {
                return Ok(v);
            }
        }
        Err(RaceError::Format("varint overflows 64 bits".into()))
    }
}

/// Header (q, r, classes, X, schedule) in little-endian words, then one
/// record per row: a checkpoint flag byte and varint deltas of x, π(x) and
/// each count.
pub fn encode_trace(trace: &RaceTrace) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + trace.len() * (3 + trace.r()));
    out.extend_from_slice(TRACE_MAGIC);
    out.extend_from_slice(&TRACE_VERSION.to_le_bytes());
    out.extend_from_slice(&trace.q.to_le_bytes());
    out.extend_from_slice(&(trace.r() as u32).to_le_bytes());
    for a in &trace.classes {
        out.extend_from_slice(&a.to_le_bytes());
    }
    out.extend_from_slice(&trace.x_max.to_le_bytes());
    out.extend_from_slice(&(trace.schedule.len() as u64).to_le_bytes());
    for c in &trace.schedule {
        out.extend_from_slice(&c.to_le_bytes());
    }
    out.extend_from_slice(&(trace.len() as u64).to_le_bytes());
    let r = trace.r();
    let mut prev_x = 0;
    let mut prev_pi = 0;
    let mut prev = vec![0u64; r];
    for row in trace.rows() {
        out.push(u8::from(row.checkpoint));
        put_varint(&mut out, row.x - prev_x);
        put_varint(&mut out, row.pi - prev_pi);
        for (p, &c) in prev.iter_mut().zip(row.counts) {
            put_varint(&mut out, c - *p);
            *p = c;
        }
        prev_x = row.x;
        prev_pi = row.pi;
    }
    out
}

pub fn decode_trace(bytes: &[u8]) -> Result<RaceTrace> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8)? != TRACE_MAGIC {
        return Err(RaceError::Format("not a race trace file".into()));
    }
    let version = cur.u32()?;
    if version != TRACE_VERSION {
        return Err(RaceError::Format(format!("unsupported trace version {version}")));
    }
    let q = cur.u64()?;
    let r = cur.u32()? as usize;
    if !(1..=MAX_CLASSES).contains(&r) {
        return Err(RaceError::Format(format!("bad class count {r}")));
    }
    let classes = (0..r).map(|_| cur.u64()).collect::<Result<Vec<_>>>()?;
    let x_max = cur.u64()?;
    let n_sched = cur.u64()? as usize;
    let schedule = (0..n_sched.min(bytes.len())).map(|_| cur.u64()).collect::<Result<Vec<_>>>()?;
    let n_rows = cur.u64()? as usize;
    let cap = n_rows.min(bytes.len());
    let mut trace = RaceTrace {
        q,
        classes,
        schedule,
        x_max,
        x: Vec::with_capacity(cap),
        pi: Vec::with_capacity(cap),
        counts: Vec::with_capacity(cap * r),
        checkpoint: Vec::with_capacity(cap),
    };
    let (mut x, mut pi) = (0u64, 0u64);
    let mut counts = vec![0u64; r];
    for _ in 0..n_rows {
        let flag = cur.take(1)?[0];
        x += cur.varint()?;
        pi += cur.varint()?;
        for c in counts.iter_mut() {
            *c += cur.varint()?;
        }
        trace.x.push(x);
        trace.pi.push(pi);
        trace.counts.extend_from_slice(&counts);
        trace.checkpoint.push(flag != 0);
    }
    if cur.pos != bytes.len() {
        return Err(RaceError::Format("trailing bytes after trace rows".into()));
    }
    if trace.x.windows(2).any(|w| w[0] >= w[1]) || trace.x.last().is_some_and(|&l| l > x_max) {
        return Err(RaceError::Format("trace rows are out of order".into()));
    }
    Ok(trace)
}

pub fn save_trace(trace: &RaceTrace, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::File::create(&tmp)?.write_all(&encode_trace(trace))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_trace(path: &Path) -> Result<RaceTrace> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_trace(&bytes)
}

/// [`race_counts`] backed by a trace file: a stored trace for the same
/// modulus and classes is extended rather than recomputed.
pub fn race_counts_resumable(
    q: u64,
    classes: &[i64],
    x: u64,
    schedule: &[u64],
    path: &Path,
) -> Result<RaceTrace> {
    let fresh = || race_counts(q, classes, x, schedule);
    let wanted = classes
        .iter()
        .map(|&a| Residue::unit(a, q).map(|u| u.value))
        .collect::<Result<Vec<_>>>()?;
    let trace = match load_trace(path) {
        Ok(mut t) if t.q == q && t.classes == wanted && t.x_max <= x => {
            t.extend(x, schedule)?;
            t
        }
        _ => fresh()?,
    };
    save_trace(&trace, path)?;
    Ok(trace)
}
