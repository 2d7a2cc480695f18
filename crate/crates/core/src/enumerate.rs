//! Exact sums of `k(s f(t))` over the lattice points of `P B`.
//!
//! The sweep walks the innermost axis by forward differences (one add per
//! degree per point) and splits the outermost axis into slabs; diagonal
//! forms can skip the walk entirely by convolving one-axis value counts.
//!
//! Every total comes in two flavours: the closed box, and a trapezoid
//! weighting where a point lying exactly on a face of `P B` counts `1/2` per
//! face. The weighted totals are stored as integers in units of `2^{-n}`.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forms::{IntegerForm, LatticeBox};
use crate::kernels::{Kernel, KernelTable};

pub const DEFAULT_POINT_BUDGET: u128 = 1_000_000_000;
/// Largest value range a census table may span.
pub const CENSUS_LIMIT: u128 = 50_000_000;
/// Kernel tables above this size fall back to per-value evaluation.
pub const SWEEP_TABLE_LIMIT: u64 = 1 << 24;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMethod {
    /// Census convolution for diagonal forms when the range allows, else a
    /// sweep.
    #[default]
    Auto,
    Sweep,
    Census,
}

#[derive(Clone, Debug)]
pub struct SweepOptions {
    /// Chunks the outermost axis is split into; 0 lets rayon decide.
    pub slabs: usize,
    pub budget: u128,
    pub progress: bool,
    pub method: SweepMethod,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            slabs: 0,
            budget: DEFAULT_POINT_BUDGET,
            progress: false,
            method: SweepMethod::Auto,
        }
    }
}

mod i128_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &i128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<i128, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepResult {
    pub kernel: String,
    pub p: u64,
    pub s: i8,
    /// `total = total_scaled / scale`, exact.
    #[serde(with = "i128_string")]
    pub total_scaled: i128,
    pub scale: i64,
    pub total: f64,
    /// Face-weighted total in units of `scale * 2^n`.
    #[serde(with = "i128_string")]
    pub trapezoid_scaled: i128,
    pub trapezoid_total: f64,
    pub points_visited: u128,
    pub positive_values: u128,
    pub zero_values: u128,
    pub negative_values: u128,
    pub max_abs_value: u128,
    pub method: SweepMethod,
    /// Wall time; kept out of deterministic reports.
    #[serde(skip)]
    pub elapsed: f64,
}

/// Exact census of `#{t in Z^n cap P B : f(t) = nu}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValueCensus {
    /// Value of index 0.
    pub offset: i128,
    pub counts: Vec<u128>,
    /// Face-weighted counts in units of `2^{-n}`.
    pub weighted: Vec<u128>,
    pub n: usize,
}

impl ValueCensus {
    pub fn count(&self, nu: i128) -> u128 {
        let i = nu - self.offset;
        if i < 0 || i >= self.counts.len() as i128 {
            0
        } else {
            self.counts[i as usize]
        }
    }

    pub fn total(&self) -> u128 {
        self.counts.iter().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (i128, u128, u128)> + '_ {
        self.counts
            .iter()
            .zip(&self.weighted)
            .enumerate()
            .filter(|(_, (c, _))| **c > 0)
            .map(move |(i, (&c, &w))| (self.offset + i as i128, c, w))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CountResult {
    pub count: u128,
    /// Face-weighted count in units of `2^{-n}`.
    pub weighted: u128,
    pub points: u128,
}

impl CountResult {
    pub fn trapezoid(&self, n: usize) -> f64 {
        self.weighted as f64 / (1u128 << n) as f64
    }
}

// ---------------------------------------------------------------- geometry

struct Geometry {
    n: usize,
    d: u32,
    ranges: Vec<(i64, i64)>,
    faces: Vec<(bool, bool)>,
    terms: Vec<(Vec<u32>, i128)>,
    /// Bound on `|f|` over the lattice box.
    bound: u128,
    /// Bound on every forward difference used by the walk.
    diff_bound: f64,
}

impl Geometry {
    fn new(form: &IntegerForm, bx: &LatticeBox, p: u64) -> Result<Self> {
        if bx.dim() != form.n() {
            return Err(Error::DimensionMismatch {
                expected: form.n(),
                found: bx.dim(),
            });
        }
        let terms = form
            .small_terms()
            .ok_or_else(|| Error::Overflow("coefficients exceed 128 bits".into()))?;
        let ranges = bx.lattice_ranges(p);
        let faces = bx.faces_on_lattice(p);
        let n = form.n();
        let d = form.degree();
        let maxabs: Vec<f64> = ranges
            .iter()
            .map(|&(lo, hi)| (lo.unsigned_abs().max(hi.unsigned_abs())) as f64)
            .collect();
        let mut bound = 0.0f64;
        let mut ext = 0.0f64;
        for (e, c) in &terms {
            let c = (*c as f64).abs();
            let mut v = c;
            let mut w = c;
            for j in 0..n {
                v *= maxabs[j].powi(e[j] as i32);
                let m = if j + 1 == n { maxabs[j] + d as f64 } else { maxabs[j] };
                w *= m.powi(e[j] as i32);
            }
            bound += v;
            ext += w;
        }
        if bound > 1.0e36 {
            return Err(Error::Overflow(format!("|f| may reach {bound:.3e}, beyond 128-bit values")));
        }
        // exact integer bound for range checks
        let mut exact: u128 = 0;
        for (e, c) in &terms {
            let mut v = c.unsigned_abs();
            for j in 0..n {
                let m = ranges[j].0.unsigned_abs().max(ranges[j].1.unsigned_abs()) as u128;
                for _ in 0..e[j] {
                    v = v.saturating_mul(m);
                }
            }
            exact = exact.saturating_add(v);
        }
        Ok(Self {
            n,
            d,
            ranges,
            faces,
            terms,
            bound: exact,
            diff_bound: ext * 2f64.powi(d as i32),
        })
    }

    fn points(&self) -> u128 {
        self.ranges
            .iter()
            .map(|&(lo, hi)| if hi >= lo { (hi - lo + 1) as u128 } else { 0 })
            .product()
    }

    fn is_empty(&self) -> bool {
        self.ranges.iter().any(|&(lo, hi)| hi < lo)
    }

    /// Trapezoid weight of coordinate `t` on axis `j`: 2 inside, 1 on a face.
    fn axis_weight(&self, j: usize, t: i64) -> u32 {
        let (lo, hi) = self.ranges[j];
        let (flo, fhi) = self.faces[j];
        2 - ((flo && t == lo) as u32) - ((fhi && t == hi) as u32)
    }
}

// ---------------------------------------------------------------- sinks

trait Sink: Send {
    fn push(&mut self, v: i128, w: u32);
    fn merge(&mut self, other: Self);
}

trait Lane: Copy + Send + Sync + std::ops::AddAssign + Into<i128> {
    fn from_i128(v: i128) -> Self;
}

impl Lane for i64 {
    fn from_i128(v: i128) -> Self {
        v as i64
    }
}

impl Lane for i128 {
    fn from_i128(v: i128) -> Self {
        v
    }
}

fn ipow(b: i128, e: u32) -> i128 {
    let mut r = 1i128;
    for _ in 0..e {
        r *= b;
    }
    r
}

/// Walks every row whose outermost coordinate lies in `outer`.
fn walk<L: Lane, S: Sink>(g: &Geometry, outer: (i64, i64), sink: &mut S, counter: &AtomicU64) {
    let n = g.n;
    let d = g.d as usize;
    let (y0, y1) = g.ranges[n - 1];
    let mut prefix: Vec<i64> = Vec::with_capacity(n - 1);
    for j in 0..n - 1 {
        prefix.push(if j == 0 { outer.0 } else { g.ranges[j].0 });
    }
    let mut poly = vec![0i128; d + 1];
    let mut diffs = vec![L::from_i128(0); d + 1];
    let mut vals = vec![0i128; d + 1];
    let row_len = (y1 - y0 + 1) as u64;
    loop {
        // prefix weight in units: product of axis weights
        let mut pw: u32 = 1;
        for (j, &t) in prefix.iter().enumerate() {
            pw *= g.axis_weight(j, t);
        }
        for c in poly.iter_mut() {
            *c = 0;
        }
        for (e, c) in &g.terms {
            let mut v = *c;
            for (j, &t) in prefix.iter().enumerate() {
                v *= ipow(t as i128, e[j]);
            }
            poly[e[n - 1] as usize] += v;
        }
        for (k, val) in vals.iter_mut().enumerate() {
            let y = (y0 + k as i64) as i128;
            *val = poly.iter().rev().fold(0i128, |acc, &c| acc * y + c);
        }
        // forward differences at y0
        for k in 0..=d {
            diffs[k] = L::from_i128(vals[0]);
            for i in 0..d - k {
                vals[i] = vals[i + 1] - vals[i];
            }
        }
        let (flo, fhi) = g.faces[n - 1];
        let mut y = y0;
        while y <= y1 {
            let w = pw * (2 - ((flo && y == y0) as u32) - ((fhi && y == y1) as u32));
            sink.push(diffs[0].into(), w);
            for k in 0..d {
                let next = diffs[k + 1];
                diffs[k] += next;
            }
            y += 1;
        }
        counter.fetch_add(row_len, Ordering::Relaxed);
        // advance the prefix odometer (axis 0 bounded by the slab)
        let mut j = n - 1;
        loop {
            if j == 0 {
                return;
            }
            j -= 1;
            let hi = if j == 0 { outer.1 } else { g.ranges[j].1 };
            if prefix[j] < hi {
                prefix[j] += 1;
                for (k, slot) in prefix.iter_mut().enumerate().skip(j + 1) {
                    *slot = g.ranges[k].0;
                }
                break;
            }
        }
    }
}

fn slab_bounds(g: &Geometry, slabs: usize) -> Vec<(i64, i64)> {
    if g.n == 1 {
        return vec![(0, 0)];
    }
    let (lo, hi) = g.ranges[0];
    let len = (hi - lo + 1) as usize;
    let parts = if slabs == 0 { len } else { slabs.min(len).max(1) };
    let base = len / parts;
    let extra = len % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = lo;
    for i in 0..parts {
        let size = base + (i < extra) as usize;
        out.push((start, start + size as i64 - 1));
        start += size as i64;
    }
    out
}

fn run_sweep<S, F>(g: &Geometry, opts: &SweepOptions, make: F) -> Result<S>
where
    S: Sink,
    F: Fn() -> S + Sync + Send,
{
    let points = g.points();
    if points > opts.budget {
        return Err(Error::BudgetExceeded {
            needed: points as f64,
            budget: opts.budget.min(u64::MAX as u128) as u64,
        });
    }
    let counter = AtomicU64::new(0);
    if g.is_empty() {
        return Ok(make());
    }
    let small = g.diff_bound < 4.0e18;
    let start = Instant::now();
    let last_report = AtomicU64::new(0);
    let report = |c: &AtomicU64| {
        if !opts.progress {
            return;
        }
        let done = c.load(Ordering::Relaxed);
        let secs = start.elapsed().as_secs();
        if secs > last_report.load(Ordering::Relaxed) + 1 {
            last_report.store(secs, Ordering::Relaxed);
            let rate = done as f64 / start.elapsed().as_secs_f64();
            let eta = (points as f64 - done as f64) / rate.max(1.0);
            eprintln!("sweep: {done}/{points} points, {rate:.3e} pts/s, eta {eta:.0}s");
        }
    };
    let slabs = slab_bounds(g, opts.slabs);
    let result = slabs
        .par_iter()
        .map(|&outer| {
            let mut s = make();
            if g.n == 1 {
                // a single row; the prefix is empty
                if small {
                    walk::<i64, S>(g, outer, &mut s, &counter)
                } else {
                    walk::<i128, S>(g, outer, &mut s, &counter)
                }
            } else if small {
                walk::<i64, S>(g, outer, &mut s, &counter)
            } else {
                walk::<i128, S>(g, outer, &mut s, &counter)
            }
            report(&counter);
            s
        })
        .reduce_with(|mut a, b| {
            a.merge(b);
            a
        })
        .unwrap_or_else(&make);
    Ok(result)
}

struct KernelSink<'a> {
    kernel: &'a Kernel,
    table: Option<&'a KernelTable>,
    tmax: i128,
    s: i128,
    closed: i128,
    weighted: i128,
    pos: u128,
    zero: u128,
    neg: u128,
    maxabs: u128,
    err: Option<Error>,
}

impl KernelSink<'_> {
    #[inline]
    fn value(&mut self, sv: i128) -> i64 {
        if sv <= self.tmax {
            return self.table.unwrap().values[sv as usize];
        }
        match u64::try_from(sv).map_err(|_| Error::Overflow(format!("value {sv} beyond 64 bits"))).and_then(|m| self.kernel.eval_exact(m)) {
            Ok(k) => k,
            Err(e) => {
                self.err.get_or_insert(e);
                0
            }
        }
    }
}

impl Sink for KernelSink<'_> {
    #[inline]
    fn push(&mut self, v: i128, w: u32) {
        match v.signum() {
            1 => self.pos += 1,
            0 => self.zero += 1,
            _ => self.neg += 1,
        }
        let a = v.unsigned_abs();
        if a > self.maxabs {
            self.maxabs = a;
        }
        let sv = self.s * v;
        if sv > 0 {
            let k = self.value(sv) as i128;
            self.closed += k;
            self.weighted += w as i128 * k;
        }
    }

    fn merge(&mut self, o: Self) {
        self.closed += o.closed;
        self.weighted += o.weighted;
        self.pos += o.pos;
        self.zero += o.zero;
        self.neg += o.neg;
        self.maxabs = self.maxabs.max(o.maxabs);
        if self.err.is_none() {
            self.err = o.err;
        }
    }
}

struct CensusSink {
    offset: i128,
    counts: Vec<u128>,
    weighted: Vec<u128>,
}

impl Sink for CensusSink {
    #[inline]
    fn push(&mut self, v: i128, w: u32) {
        let i = (v - self.offset) as usize;
        self.counts[i] += 1;
        self.weighted[i] += w as u128;
    }

    fn merge(&mut self, o: Self) {
        for (a, b) in self.counts.iter_mut().zip(o.counts) {
            *a += b;
        }
        for (a, b) in self.weighted.iter_mut().zip(o.weighted) {
            *a += b;
        }
    }
}

struct PredicateSink<'a> {
    pred: &'a (dyn Fn(i128) -> bool + Sync),
    count: u128,
    weighted: u128,
}

impl Sink for PredicateSink<'_> {
    fn push(&mut self, v: i128, w: u32) {
        if (self.pred)(v) {
            self.count += 1;
            self.weighted += w as u128;
        }
    }

    fn merge(&mut self, o: Self) {
        self.count += o.count;
        self.weighted += o.weighted;
    }
}

// ---------------------------------------------------------------- census

/// Census of a diagonal form by convolving the per-axis value counts.
fn diagonal_census(g: &Geometry, coeffs: &[i64]) -> Result<ValueCensus> {
    let mut lo_total: i128 = 0;
    let mut hi_total: i128 = 0;
    let mut axes = Vec::with_capacity(g.n);
    for (j, &c) in coeffs.iter().enumerate() {
        let (lo, hi) = g.ranges[j];
        let mut entries: Vec<(i128, u128, u128)> = Vec::new();
        for t in lo..=hi {
            let v = c as i128 * ipow(t as i128, g.d);
            entries.push((v, 1, g.axis_weight(j, t) as u128));
        }
        entries.sort_by_key(|e| e.0);
        let mut merged: Vec<(i128, u128, u128)> = Vec::new();
        for e in entries {
            match merged.last_mut() {
                Some(m) if m.0 == e.0 => {
                    m.1 += e.1;
                    m.2 += e.2;
                }
                _ => merged.push(e),
            }
        }
        lo_total += merged.first().map_or(0, |e| e.0);
        hi_total += merged.last().map_or(0, |e| e.0);
        axes.push(merged);
    }
    let span = (hi_total - lo_total + 1) as u128;
    if span > CENSUS_LIMIT {
        return Err(Error::BudgetExceeded {
            needed: span as f64,
            budget: CENSUS_LIMIT as u64,
        });
    }
    // running convolution, values relative to the running minimum
    let mut offset: i128 = 0;
    let mut counts = vec![1u128];
    let mut weighted = vec![1u128];
    for axis in &axes {
        let amin = axis[0].0;
        let amax = axis.last().unwrap().0;
        let len = counts.len() + (amax - amin) as usize;
        let mut nc = vec![0u128; len];
        let mut nw = vec![0u128; len];
        for &(v, c, w) in axis {
            let shift = (v - amin) as usize;
            let dst_c = &mut nc[shift..shift + counts.len()];
            for (d, &s) in dst_c.iter_mut().zip(&counts) {
                *d += s * c;
            }
            let dst_w = &mut nw[shift..shift + weighted.len()];
            for (d, &s) in dst_w.iter_mut().zip(&weighted) {
                *d += s * w;
            }
        }
        offset += amin;
        counts = nc;
        weighted = nw;
    }
    Ok(ValueCensus {
        offset,
        counts,
        weighted,
        n: g.n,
    })
}

/// Census by sweep (any form) or convolution (diagonal forms).
pub fn value_census_with(form: &IntegerForm, bx: &LatticeBox, p: u64, opts: &SweepOptions) -> Result<ValueCensus> {
    let g = Geometry::new(form, bx, p)?;
    if g.is_empty() {
        return Ok(ValueCensus {
            offset: 0,
            counts: Vec::new(),
            weighted: Vec::new(),
            n: g.n,
        });
    }
    let diag = form.diagonal_coefficients();
    if opts.method != SweepMethod::Sweep {
        if let Some(c) = &diag {
            return diagonal_census(&g, c);
        }
        if opts.method == SweepMethod::Census {
            return Err(Error::InvalidArgument("census convolution needs a diagonal form".into()));
        }
    }
    let span = 2 * g.bound + 1;
    if span > CENSUS_LIMIT / 4 {
        return Err(Error::BudgetExceeded {
            needed: span as f64,
            budget: (CENSUS_LIMIT / 4) as u64,
        });
    }
    let offset = -(g.bound as i128);
    let sink = run_sweep(&g, opts, || CensusSink {
        offset,
        counts: vec![0; span as usize],
        weighted: vec![0; span as usize],
    })?;
    // trim to the occupied range
    let first = sink.counts.iter().position(|&c| c > 0).unwrap_or(0);
    let last = sink.counts.iter().rposition(|&c| c > 0).unwrap_or(0);
    Ok(ValueCensus {
        offset: offset + first as i128,
        counts: sink.counts[first..=last].to_vec(),
        weighted: sink.weighted[first..=last].to_vec(),
        n: g.n,
    })
}

pub fn value_census(form: &IntegerForm, bx: &LatticeBox, p: u64) -> Result<ValueCensus> {
    value_census_with(form, bx, p, &SweepOptions::default())
}

fn kernel_table_for(kernel: &Kernel, bound: u128) -> Result<Option<KernelTable>> {
    if let crate::kernels::KernelKind::DeltaHecke { x_max } = kernel.kind() {
        if bound > *x_max as u128 {
            return Err(Error::KernelRange {
                needed: bound.min(u64::MAX as u128) as u64,
                available: *x_max,
            });
        }
    }
    kernel.table(bound.min(SWEEP_TABLE_LIMIT as u128) as u64).map(Some)
}

/// `sum k(s f(t))` over `t in Z^n cap P B` with `s f(t) > 0`.
pub fn lattice_sweep_with(
    form: &IntegerForm,
    bx: &LatticeBox,
    p: u64,
    kernel: &Kernel,
    s: i8,
    opts: &SweepOptions,
) -> Result<SweepResult> {
    if s != 1 && s != -1 {
        return Err(Error::InvalidArgument(format!("sign must be +1 or -1, got {s}")));
    }
    let start = Instant::now();
    let g = Geometry::new(form, bx, p)?;
    let table = kernel_table_for(kernel, g.bound)?;
    let tmax = table.as_ref().map_or(0, |t| t.max() as i128);
    let scale = kernel.scale();
    let n = g.n;
    let finish = |closed: i128, weighted: i128, pos, zero, neg, maxabs, method| SweepResult {
        kernel: kernel.name(),
        p,
        s,
        total_scaled: closed,
        scale,
        total: closed as f64 / scale as f64,
        trapezoid_scaled: weighted,
        trapezoid_total: weighted as f64 / scale as f64 / (1u128 << n) as f64,
        points_visited: g.points(),
        positive_values: pos,
        zero_values: zero,
        negative_values: neg,
        max_abs_value: maxabs,
        method,
        elapsed: start.elapsed().as_secs_f64(),
    };
    let use_census = match opts.method {
        SweepMethod::Sweep => false,
        SweepMethod::Census => true,
        SweepMethod::Auto => form.is_diagonal(),
    };
    if use_census && !g.is_empty() {
        let census = value_census_with(form, bx, p, opts)?;
        let mut sink = KernelSink {
            kernel,
            table: table.as_ref(),
            tmax,
            s: s as i128,
            closed: 0,
            weighted: 0,
            pos: 0,
            zero: 0,
            neg: 0,
            maxabs: 0,
            err: None,
        };
        for (v, c, w) in census.iter() {
            match v.signum() {
                1 => sink.pos += c,
                0 => sink.zero += c,
                _ => sink.neg += c,
            }
            sink.maxabs = sink.maxabs.max(v.unsigned_abs());
            let sv = s as i128 * v;
            if sv > 0 {
                let k = sink.value(sv) as i128;
                sink.closed += k * c as i128;
                sink.weighted += k * w as i128;
            }
        }
        if let Some(e) = sink.err {
            return Err(e);
        }
        return Ok(finish(sink.closed, sink.weighted, sink.pos, sink.zero, sink.neg, sink.maxabs, SweepMethod::Census));
    }
    let sink = run_sweep(&g, opts, || KernelSink {
        kernel,
        table: table.as_ref(),
        tmax,
        s: s as i128,
        closed: 0,
        weighted: 0,
        pos: 0,
        zero: 0,
        neg: 0,
        maxabs: 0,
        err: None,
    })?;
    if let Some(e) = sink.err {
        return Err(e);
    }
    Ok(finish(sink.closed, sink.weighted, sink.pos, sink.zero, sink.neg, sink.maxabs, SweepMethod::Sweep))
}

pub fn lattice_sweep(form: &IntegerForm, bx: &LatticeBox, p: u64, kernel: &Kernel, s: i8) -> Result<SweepResult> {
    lattice_sweep_with(form, bx, p, kernel, s, &SweepOptions::default())
}

/// `#{t : f(t) in A}` for a membership predicate on values.
pub fn count_in_set_with(
    form: &IntegerForm,
    bx: &LatticeBox,
    p: u64,
    member: &(dyn Fn(i128) -> bool + Sync),
    opts: &SweepOptions,
) -> Result<CountResult> {
    let g = Geometry::new(form, bx, p)?;
    let points = g.points();
    let census_ok = opts.method != SweepMethod::Sweep && form.is_diagonal();
    if census_ok && !g.is_empty() {
        let c = value_census_with(form, bx, p, opts)?;
        let (mut count, mut weighted) = (0u128, 0u128);
        for (v, n, w) in c.iter() {
            if member(v) {
                count += n;
                weighted += w;
            }
        }
        return Ok(CountResult { count, weighted, points });
    }
    let sink = run_sweep(&g, opts, || PredicateSink {
        pred: member,
        count: 0,
        weighted: 0,
    })?;
    Ok(CountResult {
        count: sink.count,
        weighted: sink.weighted,
        points,
    })
}

pub fn count_in_set(form: &IntegerForm, bx: &LatticeBox, p: u64, member: &(dyn Fn(i128) -> bool + Sync)) -> Result<CountResult> {
    count_in_set_with(form, bx, p, member, &SweepOptions::default())
}

/// Plain evaluation of every point, for tests.
pub fn brute_force_values(form: &IntegerForm, bx: &LatticeBox, p: u64) -> Result<Vec<(Vec<i64>, i128)>> {
    let ranges = bx.lattice_ranges(p);
    let mut out = Vec::new();
    if ranges.iter().any(|&(lo, hi)| hi < lo) {
        return Ok(out);
    }
    let mut t: Vec<i64> = ranges.iter().map(|r| r.0).collect();
    loop {
        let v = form.evaluate_i64(&t)?;
        out.push((t.clone(), i128::try_from(&v).map_err(|_| Error::Overflow("value".into()))?));
        let mut j = t.len();
        loop {
            if j == 0 {
                return Ok(out);
            }
            j -= 1;
            if t[j] < ranges[j].1 {
                t[j] += 1;
                for k in j + 1..t.len() {
                    t[k] = ranges[k].0;
                }
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;
    use proptest::prelude::*;

    fn form(s: &str) -> IntegerForm {
        IntegerForm::parse(s).unwrap()
    }

    fn squares(n: usize) -> IntegerForm {
        IntegerForm::diagonal(&vec![1; n], 2).unwrap()
    }

    fn opts(method: SweepMethod, slabs: usize) -> SweepOptions {
        SweepOptions {
            slabs,
            method,
            ..Default::default()
        }
    }

    #[test]
    fn sweep_examples() {
        let f = squares(5);
        let bx = LatticeBox::unit(5);
        let c = count_in_set_with(&f, &bx, 2, &|v| v > 0, &opts(SweepMethod::Sweep, 0)).unwrap();
        assert_eq!(c.count, 242);
        let r = lattice_sweep_with(&f, &bx, 2, &Kernel::moebius(), 1, &opts(SweepMethod::Sweep, 0)).unwrap();
        assert_eq!(r.points_visited, 243);
        assert_eq!(r.positive_values, 242);
        assert_eq!(r.zero_values, 1);
        let neg = lattice_sweep_with(&f, &bx, 7, &Kernel::divisor(), -1, &opts(SweepMethod::Sweep, 0)).unwrap();
        assert_eq!(neg.total, 0.0);
        let zero = lattice_sweep(&f, &bx, 0, &Kernel::divisor(), 1).unwrap();
        assert_eq!((zero.total, zero.points_visited), (0.0, 1));
    }

    #[test]
    fn census_examples() {
        let c = value_census(&squares(5), &LatticeBox::unit(5), 2).unwrap();
        assert_eq!(c.count(0), 1);
        assert_eq!(c.total(), 243);
        let c2 = value_census(&squares(2), &LatticeBox::unit(2), 5).unwrap();
        assert_eq!(c2.count(25), 4);
        let sq = count_in_set(&squares(2), &LatticeBox::unit(2), 5, &|v| {
            v > 0 && crate::kernels::is_kth_power(v as u64, 2)
        })
        .unwrap();
        let mut oracle = 0;
        for x in 0..=5i64 {
            for y in 0..=5i64 {
                let v = x * x + y * y;
                if v > 0 && (0..=10).any(|r| r * r == v) {
                    oracle += 1;
                }
            }
        }
        assert_eq!(sq.count, oracle);
        assert_eq!(sq.count, 12);
        let none = count_in_set(&squares(2), &LatticeBox::unit(2), 5, &|_| false).unwrap();
        assert_eq!(none.count, 0);
        // sweep census equals convolution census
        let a = value_census_with(&squares(3), &LatticeBox::unit(3), 9, &opts(SweepMethod::Sweep, 3)).unwrap();
        let b = value_census_with(&squares(3), &LatticeBox::unit(3), 9, &opts(SweepMethod::Census, 0)).unwrap();
        assert_eq!(a.offset, b.offset);
        assert_eq!(a.counts, b.counts);
        assert_eq!(a.weighted, b.weighted);
    }

    #[test]
    fn sweep_matches_brute_force() {
        let cases = [
            ("x1^3 - 2*x1*x2*x3 + 5*x3^3", vec![(-0.5, 0.5), (0.0, 1.0), (-0.5, 0.25)]),
            ("x1^2 - 3*x2^2 + x1*x2", vec![(-1.0, 0.0), (-0.25, 0.75)]),
            ("x1^4 + x2^4 - x1*x2^3", vec![(0.0, 1.0), (-1.0, 0.0)]),
            ("3*x1", vec![(-0.5, 0.5)]),
        ];
        for (s, b) in cases {
            let f = form(s);
            let bx = LatticeBox::from_f64_pairs(&b).unwrap();
            for p in [0u64, 1, 3, 8] {
                let pts = brute_force_values(&f, &bx, p).unwrap();
                for kernel in [Kernel::divisor(), Kernel::moebius()] {
                    for sign in [1i8, -1] {
                        let want: i64 = pts
                            .iter()
                            .filter(|(_, v)| sign as i128 * v > 0)
                            .map(|(_, v)| kernel.eval_exact((sign as i128 * v) as u64).unwrap())
                            .sum();
                        let got = lattice_sweep_with(&f, &bx, p, &kernel, sign, &opts(SweepMethod::Sweep, 2)).unwrap();
                        assert_eq!(got.total_scaled, want as i128, "{s} P={p}");
                        assert_eq!(got.points_visited, pts.len() as u128);
                    }
                }
            }
        }
    }

    #[test]
    fn trapezoid_weights() {
        // 1-D: f = x on [0,1], P = 4: points 0..4, endpoints halved
        let f = form("x1");
        let bx = LatticeBox::unit(1);
        let c = count_in_set(&f, &bx, 4, &|_| true).unwrap();
        assert_eq!(c.count, 5);
        assert_eq!(c.trapezoid(1), 4.0);
        // a face off the lattice is not halved
        let bx = LatticeBox::new(vec![(Ratio::new(0, 1), Ratio::new(9, 10))]).unwrap();
        let c = count_in_set(&f, &bx, 4, &|_| true).unwrap();
        assert_eq!((c.count, c.weighted), (4, 7));
        // 2-D corners get 1/4
        let c = count_in_set(&squares(2), &LatticeBox::unit(2), 2, &|_| true).unwrap();
        assert_eq!(c.trapezoid(2), 4.0);
    }

    #[test]
    fn partition_invariance() {
        let f = form("x1^3 + 2*x2^3 - x3^3 + x1*x2*x4");
        let bx = LatticeBox::from_f64_pairs(&[(-0.5, 0.5), (0.0, 1.0), (-1.0, 0.0), (0.25, 1.0)]).unwrap();
        let k = Kernel::divisor();
        let base = lattice_sweep_with(&f, &bx, 12, &k, 1, &opts(SweepMethod::Sweep, 1)).unwrap();
        for slabs in [4, 16] {
            let r = lattice_sweep_with(&f, &bx, 12, &k, 1, &opts(SweepMethod::Sweep, slabs)).unwrap();
            assert_eq!(r.total_scaled, base.total_scaled);
            assert_eq!(r.trapezoid_scaled, base.trapezoid_scaled);
        }
    }

    #[test]
    fn sweep_equals_census_sum() {
        let f = squares(4);
        let bx = LatticeBox::unit(4);
        let k = Kernel::divisor();
        let a = lattice_sweep_with(&f, &bx, 10, &k, 1, &opts(SweepMethod::Sweep, 0)).unwrap();
        let b = lattice_sweep_with(&f, &bx, 10, &k, 1, &opts(SweepMethod::Census, 0)).unwrap();
        assert_eq!(a.total_scaled, b.total_scaled);
        assert_eq!(a.trapezoid_scaled, b.trapezoid_scaled);
        assert_eq!(a.max_abs_value, b.max_abs_value);
        let census = value_census(&f, &bx, 10).unwrap();
        let direct: i128 = census
            .iter()
            .filter(|(v, _, _)| *v > 0)
            .map(|(v, c, _)| k.eval_exact(v as u64).unwrap() as i128 * c as i128)
            .sum();
        assert_eq!(direct, a.total_scaled);
    }

    #[test]
    fn range_errors() {
        let d = Kernel::delta_eigenvalues(1000).unwrap();
        let r = lattice_sweep(&squares(5), &LatticeBox::unit(5), 20, &d, 1);
        assert!(matches!(r, Err(Error::KernelRange { .. })));
        let budget = SweepOptions {
            budget: 10,
            method: SweepMethod::Sweep,
            ..Default::default()
        };
        assert!(matches!(
            lattice_sweep_with(&squares(2), &LatticeBox::unit(2), 5, &Kernel::divisor(), 1, &budget),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn census_total_is_point_count(p in 0u64..12, n in 1usize..4) {
            let c = value_census_with(&squares(n), &LatticeBox::unit(n), p, &opts(SweepMethod::Sweep, 0)).unwrap();
            prop_assert_eq!(c.total(), LatticeBox::unit(n).lattice_point_count(p));
        }

        #[test]
        fn max_abs_within_bound(p in 1u64..10) {
            let f = form("x1^3 - 2*x1*x2*x3 + 5*x3^3");
            let bx = LatticeBox::unit(3);
            let r = lattice_sweep_with(&f, &bx, p, &Kernel::divisor(), 1, &opts(SweepMethod::Sweep, 0)).unwrap();
            let b = crate::forms::compute_bound_b(&f, &bx, 4).unwrap();
            prop_assert!(r.max_abs_value <= b.b_upper_u64().unwrap() as u128 * (p as u128).pow(3));
        }
    }
}
