//! Integer forms, boxes inside `[-1, 1]^n`, and the value bound `b`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arith;
use crate::error::{Error, Result};

/// A homogeneous polynomial with integer coefficients.
///
/// Terms are kept in a `BTreeMap` keyed by exponent vector, which gives the
/// canonical lexicographic ordering used for equality, hashing and the
/// canonical string.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct IntegerForm {
    n: usize,
    d: u32,
    terms: BTreeMap<Vec<u32>, BigInt>,
}

impl IntegerForm {
    pub fn new(n: usize, terms: impl IntoIterator<Item = (Vec<u32>, BigInt)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("a form needs at least one variable".into()));
        }
        let mut map: BTreeMap<Vec<u32>, BigInt> = BTreeMap::new();
        for (exps, c) in terms {
            if exps.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: exps.len(),
                });
            }
            *map.entry(exps).or_insert_with(BigInt::zero) += c;
        }
        map.retain(|_, c| !c.is_zero());
        let mut degree = None;
        for exps in map.keys() {
            let deg: u32 = exps.iter().sum();
            match degree {
                None => degree = Some(deg),
                Some(d) if d != deg => {
                    return Err(Error::NotHomogeneous {
                        term: monomial_string(exps),
                        found: deg,
                        expected: d,
                    })
                }
                _ => {}
            }
        }
        let d = degree.ok_or(Error::EmptyForm)?;
        if d == 0 {
            return Err(Error::InvalidArgument("constant forms are not supported".into()));
        }
        Ok(Self { n, d, terms: map })
    }

    /// `sum_i c_i x_i^d`.
    pub fn diagonal(coeffs: &[i64], d: u32) -> Result<Self> {
        let n = coeffs.len();
        let terms = coeffs.iter().enumerate().map(|(i, &c)| {
            let mut e = vec![0u32; n];
            e[i] = d;
            (e, BigInt::from(c))
        });
        Self::new(n, terms)
    }

    /// Parses a form literal, taking `n` from the largest variable index.
    pub fn parse(s: &str) -> Result<Self> {
        let parsed = parse_terms(s)?;
        let n = parsed.max_var;
        Self::from_parsed(parsed, n)
    }

    /// Parses a form literal in exactly `n` variables.
    pub fn parse_with_vars(s: &str, n: usize) -> Result<Self> {
        let parsed = parse_terms(s)?;
        if parsed.max_var > n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: parsed.max_var,
            });
        }
        Self::from_parsed(parsed, n)
    }

    fn from_parsed(parsed: ParsedTerms, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyForm);
        }
        let terms = parsed.terms.into_iter().map(|(vars, c)| {
            let mut e = vec![0u32; n];
            for (v, k) in vars {
                e[v - 1] += k;
            }
            (e, c)
        });
        Self::new(n, terms)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn degree(&self) -> u32 {
        self.d
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<u32>, &BigInt)> {
        self.terms.iter()
    }

    /// Canonical literal; parsing it gives back an equal form.
    pub fn canonical(&self) -> String {
        self.to_string()
    }

    /// Stable digest of the canonical string and variable count.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("n={};{}", self.n, self.canonical()).as_bytes());
        hex::encode(&h.finalize()[..12])
    }

    /// `Some(coefficients)` when the form is `sum_i c_i x_i^d` (missing
    /// variables get coefficient 0).
    pub fn diagonal_coefficients(&self) -> Option<Vec<i64>> {
        let mut out = vec![0i64; self.n];
        for (exps, c) in &self.terms {
            let nz: Vec<usize> = (0..self.n).filter(|&i| exps[i] != 0).collect();
            if nz.len() != 1 {
                return None;
            }
            out[nz[0]] = c.to_i64()?;
        }
        Some(out)
    }

    pub fn is_diagonal(&self) -> bool {
        self.diagonal_coefficients().is_some()
    }

    /// Coefficients as `i128` when they all fit.
    pub(crate) fn small_terms(&self) -> Option<Vec<(Vec<u32>, i128)>> {
        self.terms
            .iter()
            .map(|(e, c)| c.to_i128().map(|c| (e.clone(), c)))
            .collect()
    }

    pub fn abs_coefficient_sum(&self) -> BigInt {
        self.terms.values().map(|c| c.abs()).sum()
    }

    /// Exact value at an integer point.
    pub fn evaluate(&self, point: &[BigInt]) -> Result<BigInt> {
        self.check_len(point.len())?;
        let mut acc = BigInt::zero();
        for (exps, c) in &self.terms {
            let mut m = c.clone();
            for (x, &e) in point.iter().zip(exps) {
                if e > 0 {
                    m *= num_traits::pow(x.clone(), e as usize);
                }
            }
            acc += m;
        }
        Ok(acc)
    }

    /// Exact value at a machine-integer point.
    pub fn evaluate_i64(&self, point: &[i64]) -> Result<BigInt> {
        let big: Vec<BigInt> = point.iter().map(|&x| BigInt::from(x)).collect();
        self.evaluate(&big)
    }

    /// Value modulo `q` at a residue vector.
    pub fn evaluate_mod(&self, point: &[u64], q: u64) -> Result<u64> {
        if q == 0 {
            return Err(Error::ZeroModulus);
        }
        self.check_len(point.len())?;
        if q == 1 {
            return Ok(0);
        }
        let mut acc = 0u64;
        for (exps, c) in &self.terms {
            let mut m = bigint_mod(c, q);
            for (&x, &e) in point.iter().zip(exps) {
                if e > 0 {
                    m = arith::mul_mod(m, arith::pow_mod(x % q, e as u64, q), q);
                }
            }
            acc = (acc + m) % q;
        }
        Ok(acc)
    }

    /// Floating-point value at a real point (quadrature only).
    pub fn evaluate_f64(&self, point: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (exps, c) in &self.terms {
            let mut m = c.to_f64().unwrap_or(f64::NAN);
            for (&x, &e) in point.iter().zip(exps) {
                if e > 0 {
                    m *= x.powi(e as i32);
                }
            }
            acc += m;
        }
        acc
    }

    /// `n > 2^d (d - 1)`.
    pub fn admissible(&self) -> bool {
        (self.n as u128) > admissibility_bound(self.d)
    }

    /// Coefficients mod `q` as (exponents, residue).
    pub(crate) fn terms_mod(&self, q: u64) -> Vec<(Vec<u32>, u64)> {
        self.terms
            .iter()
            .map(|(e, c)| (e.clone(), bigint_mod(c, q)))
            .filter(|(_, c)| *c != 0 || q == 1)
            .collect()
    }

    /// Partial derivative with respect to variable `i` (zero-based), or
    /// `None` when it vanishes identically.
    fn partial(&self, i: usize) -> Option<Vec<(Vec<u32>, BigInt)>> {
        let out: Vec<_> = self
            .terms
            .iter()
            .filter(|(e, _)| e[i] > 0)
            .map(|(e, c)| {
                let mut e2 = e.clone();
                e2[i] -= 1;
                (e2, c * BigInt::from(e[i]))
            })
            .collect();
        if out.is_empty() {
            None
        } else {
            Some(out)
        }
    }

    /// Heuristic smoothness screen: looks for a non-zero `t` mod `p` with
    /// `f(t) = 0` and a vanishing gradient, for primes `p <= 19`. Finding one
    /// only warns; forms are taken as smooth on the caller's say-so.
    pub fn smoothness_screen(&self, max_points: u64) -> SmoothnessReport {
        let mut report = SmoothnessReport::default();
        let partials: Vec<_> = (0..self.n).map(|i| self.partial(i)).collect();
        for p in arith::primes_up_to(19) {
            let total = (p as f64).powi(self.n as i32);
            if total > max_points as f64 {
                report.unchecked.push(p);
                continue;
            }
            let grads: Vec<Vec<(Vec<u32>, u64)>> = partials
                .iter()
                .map(|g| {
                    g.as_ref()
                        .map(|terms| {
                            terms
                                .iter()
                                .map(|(e, c)| (e.clone(), bigint_mod(c, p)))
                                .filter(|(_, c)| *c != 0)
                                .collect()
                        })
                        .unwrap_or_default()
                })
                .collect();
            let f_mod = self.terms_mod(p);
            let mut t = vec![0u64; self.n];
            let mut found = false;
            'outer: loop {
                // advance odometer; skip the zero vector
                let mut i = 0;
                loop {
                    if i == self.n {
                        break 'outer;
                    }
                    t[i] += 1;
                    if t[i] < p {
                        break;
                    }
                    t[i] = 0;
                    i += 1;
                }
                let all_zero = grads.iter().all(|g| eval_terms_mod(g, &t, p) == 0);
                if all_zero && eval_terms_mod(&f_mod, &t, p) == 0 {
                    found = true;
                    break;
                }
            }
            if found {
                report.singular_mod.push(p);
            }
        }
        report
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n {
            Err(Error::DimensionMismatch {
                expected: self.n,
                found: len,
            })
        } else {
            Ok(())
        }
    }
}

/// Primes at which the smoothness screen found a singular point, and primes
/// it skipped for budget reasons.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmoothnessReport {
    pub singular_mod: Vec<u64>,
    pub unchecked: Vec<u64>,
}

impl SmoothnessReport {
    pub fn looks_smooth(&self) -> bool {
        self.singular_mod.is_empty()
    }
}

pub(crate) fn eval_terms_mod(terms: &[(Vec<u32>, u64)], t: &[u64], q: u64) -> u64 {
    let mut acc = 0u64;
    for (e, c) in terms {
        let mut m = *c;
        for (&x, &k) in t.iter().zip(e) {
            if k > 0 {
                m = arith::mul_mod(m, arith::pow_mod(x, k as u64, q), q);
            }
        }
        acc = (acc + m) % q;
    }
    acc
}

pub(crate) fn bigint_mod(c: &BigInt, q: u64) -> u64 {
    let r = c % BigInt::from(q);
    let r = if r.is_negative() { r + BigInt::from(q) } else { r };
    r.to_u64().expect("residue fits")
}

/// `2^d (d - 1)`.
pub fn admissibility_bound(d: u32) -> u128 {
    if d >= 100 {
        return u128::MAX;
    }
    (1u128 << d) * (d as u128 - 1)
}

fn monomial_string(exps: &[u32]) -> String {
    let parts: Vec<String> = exps
        .iter()
        .enumerate()
        .filter(|(_, &e)| e > 0)
        .map(|(i, &e)| {
            if e == 1 {
                format!("x{}", i + 1)
            } else {
                format!("x{}^{}", i + 1, e)
            }
        })
        .collect();
    parts.join("*")
}

impl fmt::Display for IntegerForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // x1^2 sorts after x2^2 lexicographically; print in reverse so the
        // output reads in the conventional order.
        for (k, (exps, c)) in self.terms.iter().rev().enumerate() {
            let mono = monomial_string(exps);
            let (neg, abs) = (c.is_negative(), c.abs());
            if k == 0 {
                if neg {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {} ", if neg { '-' } else { '+' })?;
            }
            if abs.is_one() {
                write!(f, "{mono}")?;
            } else {
                write!(f, "{abs}*{mono}")?;
            }
        }
        Ok(())
    }
}

impl FromStr for IntegerForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

impl Serialize for IntegerForm {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.canonical())
    }
}

impl<'de> Deserialize<'de> for IntegerForm {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        IntegerForm::parse(&s).map_err(serde::de::Error::custom)
    }
}

struct ParsedTerms {
    terms: Vec<(Vec<(usize, u32)>, BigInt)>,
    max_var: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Int(BigInt),
    Var(usize),
    Star,
    Caret,
    Plus,
    Minus,
}

fn tokenize(s: &str) -> Result<Vec<(usize, Tok)>> {
    let bytes = s.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let col = i + 1;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '*' => {
                out.push((col, Tok::Star));
                i += 1
            }
            '^' => {
                out.push((col, Tok::Caret));
                i += 1
            }
            '+' => {
                out.push((col, Tok::Plus));
                i += 1
            }
            '-' => {
                out.push((col, Tok::Minus));
                i += 1
            }
            '0'..='9' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let v: BigInt = s[start..i].parse().map_err(|_| Error::Parse {
                    column: col,
                    message: "bad integer".into(),
                })?;
                out.push((col, Tok::Int(v)));
            }
            'x' | 'X' => {
                i += 1;
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if start == i {
                    return Err(Error::Parse {
                        column: col,
                        message: "variable name must be x1, x2, ...".into(),
                    });
                }
                let idx: usize = s[start..i].parse().map_err(|_| Error::Parse {
                    column: col,
                    message: "bad variable index".into(),
                })?;
                if idx == 0 {
                    return Err(Error::Parse {
                        column: col,
                        message: "variables are numbered from x1".into(),
                    });
                }
                out.push((col, Tok::Var(idx)));
            }
            other => {
                return Err(Error::Parse {
                    column: col,
                    message: format!("unexpected character `{other}`"),
                })
            }
        }
    }
    Ok(out)
}

fn parse_terms(s: &str) -> Result<ParsedTerms> {
    let toks = tokenize(s)?;
    let end_col = s.len() + 1;
    let mut pos = 0;
    let mut terms = Vec::new();
    let mut max_var = 0;
    let mut first = true;
    let err = |column: usize, message: &str| Error::Parse {
        column,
        message: message.to_string(),
    };
    while pos < toks.len() || first {
        let mut sign = BigInt::one();
        match toks.get(pos) {
            Some((_, Tok::Plus)) => pos += 1,
            Some((_, Tok::Minus)) => {
                sign = -sign;
                pos += 1
            }
            Some((c, _)) if !first => return Err(err(*c, "expected `+` or `-`")),
            None if first => return Err(Error::EmptyForm),
            _ => {}
        }
        first = false;
        let mut coeff = sign;
        let mut vars: Vec<(usize, u32)> = Vec::new();
        loop {
            match toks.get(pos) {
                Some((_, Tok::Int(v))) => {
                    coeff *= v;
                    pos += 1;
                }
                Some((_, Tok::Var(idx))) => {
                    let idx = *idx;
                    pos += 1;
                    let mut e = 1u32;
                    if let Some((_, Tok::Caret)) = toks.get(pos) {
                        pos += 1;
                        match toks.get(pos) {
                            Some((c, Tok::Int(v))) => {
                                e = v.to_u32().ok_or_else(|| err(*c, "exponent too large"))?;
                                pos += 1;
                            }
                            Some((c, _)) => return Err(err(*c, "expected exponent")),
                            None => return Err(err(end_col, "expected exponent")),
                        }
                    }
                    max_var = max_var.max(idx);
                    vars.push((idx, e));
                }
                Some((c, _)) => return Err(err(*c, "expected coefficient or variable")),
                None => return Err(err(end_col, "unexpected end of input")),
            }
            match toks.get(pos) {
                Some((_, Tok::Star)) => pos += 1,
                _ => break,
            }
        }
        terms.push((vars, coeff));
    }
    Ok(ParsedTerms { terms, max_var })
}

/// Product of closed intervals `[a_j, a_j']` inside `[-1, 1]` with widths at
/// most 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatticeBox {
    intervals: Vec<(Ratio<i64>, Ratio<i64>)>,
}

impl LatticeBox {
    pub fn new(intervals: Vec<(Ratio<i64>, Ratio<i64>)>) -> Result<Self> {
        if intervals.is_empty() {
            return Err(Error::InvalidBox("no intervals".into()));
        }
        let one = Ratio::from_integer(1);
        for (j, (a, b)) in intervals.iter().enumerate() {
            if *a < -one || *b > one {
                return Err(Error::InvalidBox(format!("interval {j} leaves [-1, 1]")));
            }
            if a > b {
                return Err(Error::InvalidBox(format!("interval {j} is reversed")));
            }
            if b - a > one {
                return Err(Error::InvalidBox(format!("interval {j} is wider than 1")));
            }
        }
        Ok(Self { intervals })
    }

    /// `[0, 1]^n`.
    pub fn unit(n: usize) -> Self {
        Self {
            intervals: vec![(Ratio::from_integer(0), Ratio::from_integer(1)); n],
        }
    }

    pub fn from_f64_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        let conv = |x: f64| {
            Ratio::<i64>::approximate_float(x)
                .ok_or_else(|| Error::InvalidBox(format!("cannot represent {x}")))
        };
        let iv = pairs
            .iter()
            .map(|&(a, b)| Ok((conv(a)?, conv(b)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(iv)
    }

    pub fn dim(&self) -> usize {
        self.intervals.len()
    }

    pub fn intervals(&self) -> &[(Ratio<i64>, Ratio<i64>)] {
        &self.intervals
    }

    pub fn bounds_f64(&self) -> Vec<(f64, f64)> {
        self.intervals
            .iter()
            .map(|(a, b)| (ratio_f64(a), ratio_f64(b)))
            .collect()
    }

    pub fn volume(&self) -> BigRational {
        self.intervals.iter().fold(BigRational::one(), |acc, (a, b)| {
            let w = b - a;
            acc * BigRational::new(BigInt::from(*w.numer()), BigInt::from(*w.denom()))
        })
    }

    pub fn volume_f64(&self) -> f64 {
        self.intervals
            .iter()
            .map(|(a, b)| ratio_f64(&(b - a)))
            .product()
    }

    /// Integer range `ceil(P a_j) ..= floor(P a_j')` on each axis.
    pub fn lattice_ranges(&self, p: u64) -> Vec<(i64, i64)> {
        let p = p as i64;
        self.intervals
            .iter()
            .map(|(a, b)| ((a * p).ceil().to_integer(), (b * p).floor().to_integer()))
            .collect()
    }

    /// Whether the lattice endpoints on each axis sit exactly on the faces
    /// of `P B` (i.e. `P a_j`, `P a_j'` are integers).
    pub fn faces_on_lattice(&self, p: u64) -> Vec<(bool, bool)> {
        let p = p as i64;
        self.intervals
            .iter()
            .map(|(a, b)| ((a * p).is_integer(), (b * p).is_integer()))
            .collect()
    }

    pub fn lattice_point_count(&self, p: u64) -> u128 {
        self.lattice_ranges(p)
            .iter()
            .map(|&(lo, hi)| if hi >= lo { (hi - lo + 1) as u128 } else { 0 })
            .product()
    }
}

fn ratio_f64(r: &Ratio<i64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

impl Serialize for LatticeBox {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let v: Vec<[String; 2]> = self
            .intervals
            .iter()
            .map(|(a, b)| [a.to_string(), b.to_string()])
            .collect();
        v.serialize(s)
    }
}

impl<'de> Deserialize<'de> for LatticeBox {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Endpoint {
            Int(i64),
            Float(f64),
            Text(String),
        }
        let raw: Vec<[Endpoint; 2]> = Vec::deserialize(d)?;
        let conv = |e: &Endpoint| -> std::result::Result<Ratio<i64>, String> {
            match e {
                Endpoint::Int(i) => Ok(Ratio::from_integer(*i)),
                Endpoint::Float(f) => {
                    Ratio::approximate_float(*f).ok_or_else(|| format!("bad endpoint {f}"))
                }
                Endpoint::Text(s) => s.trim().parse().map_err(|_| format!("bad endpoint `{s}`")),
            }
        };
        let iv = raw
            .iter()
            .map(|[a, b]| Ok((conv(a)?, conv(b)?)))
            .collect::<std::result::Result<Vec<_>, String>>()
            .map_err(serde::de::Error::custom)?;
        LatticeBox::new(iv).map_err(serde::de::Error::custom)
    }
}

/// Upper and grid-sampled lower estimates of `b = 2 max_B |f|`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FormBound {
    pub b_exact_lower: f64,
    pub b_upper: BigInt,
}

impl FormBound {
    pub fn b_upper_u64(&self) -> Option<u64> {
        self.b_upper.to_u64()
    }
}

/// `b_upper = 2 sum |c|`; `b_exact_lower` is twice the largest `|f|` over the
/// union of uniform grids with `2..=grid_per_axis` points per axis, so it
/// never decreases as the grid is refined.
pub fn compute_bound_b(form: &IntegerForm, bx: &LatticeBox, grid_per_axis: usize) -> Result<FormBound> {
    if bx.dim() != form.n() {
        return Err(Error::DimensionMismatch {
            expected: form.n(),
            found: bx.dim(),
        });
    }
    if grid_per_axis < 2 {
        return Err(Error::InvalidArgument("grid_per_axis must be at least 2".into()));
    }
    let bounds = bx.bounds_f64();
    let n = form.n();
    let mut best: f64 = 0.0;
    let mut point = vec![0.0; n];
    for g in 2..=grid_per_axis {
        let total = (g as f64).powi(n as i32);
        if total > 5e7 {
            break;
        }
        let mut idx = vec![0usize; n];
        loop {
            for j in 0..n {
                let (a, b) = bounds[j];
                point[j] = a + (b - a) * idx[j] as f64 / (g - 1) as f64;
            }
            best = best.max(form.evaluate_f64(&point).abs());
            let mut j = 0;
            loop {
                if j == n {
                    break;
                }
                idx[j] += 1;
                if idx[j] < g {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
            if j == n {
                break;
            }
        }
    }
    let b_upper = form.abs_coefficient_sum() * 2;
    Ok(FormBound {
        b_exact_lower: 2.0 * best,
        b_upper,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn big(v: &[i64]) -> Vec<BigInt> {
        v.iter().map(|&x| BigInt::from(x)).collect()
    }

    #[test]
    fn evaluate_examples() {
        let f = IntegerForm::parse("x1^2 + x2^2").unwrap();
        assert_eq!(f.evaluate(&big(&[0, 0])).unwrap(), BigInt::from(0));
        assert_eq!(f.evaluate(&big(&[3, 4])).unwrap(), BigInt::from(25));
        let g = IntegerForm::parse("x1^3 - 2*x2^3").unwrap();
        assert_eq!((g.n(), g.degree()), (2, 3));
        assert_eq!(g.evaluate(&big(&[1, 1])).unwrap(), BigInt::from(-1));
        assert!(matches!(
            f.evaluate(&big(&[1])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn evaluate_mod_examples() {
        let f = IntegerForm::parse("x1^2 + x2^2").unwrap();
        assert_eq!(f.evaluate_mod(&[5, 7], 1).unwrap(), 0);
        assert_eq!(f.evaluate_mod(&[1, 1], 4).unwrap(), 2);
        assert_eq!(f.evaluate_mod(&[2, 3], 5).unwrap(), 3);
        assert!(matches!(f.evaluate_mod(&[1, 1], 0), Err(Error::ZeroModulus)));
    }

    #[test]
    fn admissibility() {
        assert!(IntegerForm::parse("3*x1").unwrap().admissible());
        assert!(IntegerForm::diagonal(&[1; 9], 2).unwrap().admissible());
        assert!(!IntegerForm::diagonal(&[1; 12], 3).unwrap().admissible());
        assert!(IntegerForm::diagonal(&[1; 17], 3).unwrap().admissible());
    }

    #[test]
    fn parser_round_trip_and_errors() {
        let f = IntegerForm::parse("3*x1^3 - 2*x1*x2*x3").unwrap();
        assert_eq!(f.canonical(), "3*x1^3 - 2*x1*x2*x3");
        assert_eq!(IntegerForm::parse(&f.canonical()).unwrap(), f);
        let g = IntegerForm::parse(" x2^2+ x1 ^2 ").unwrap();
        assert_eq!(g.canonical(), "x1^2 + x2^2");
        assert!(matches!(
            IntegerForm::parse("x1^2 + x2"),
            Err(Error::NotHomogeneous { .. })
        ));
        assert!(matches!(IntegerForm::parse("x1^2 + y2"), Err(Error::Parse { column: 8, .. })));
        assert!(matches!(IntegerForm::parse("x1^2 - x1^2"), Err(Error::EmptyForm)));
        assert!(IntegerForm::parse("").is_err());
        assert_eq!(IntegerForm::parse_with_vars("x1^2", 3).unwrap().n(), 3);
        assert!(IntegerForm::parse("-x1*x2").unwrap().canonical() == "-x1*x2");
    }

    #[test]
    fn diagonal_detection() {
        let f = IntegerForm::parse("x1^2 + 2*x3^2").unwrap();
        assert_eq!(f.diagonal_coefficients(), Some(vec![1, 0, 2]));
        assert!(!IntegerForm::parse("x1*x2").unwrap().is_diagonal());
    }

    #[test]
    fn bound_examples() {
        let f = IntegerForm::parse("x1^2").unwrap();
        let b = compute_bound_b(&f, &LatticeBox::unit(1), 9).unwrap();
        assert_eq!(b.b_upper, BigInt::from(2));
        assert!((b.b_exact_lower - 2.0).abs() < 1e-12);
        let g = IntegerForm::parse("x1^2 + x2^2").unwrap();
        assert_eq!(compute_bound_b(&g, &LatticeBox::unit(2), 4).unwrap().b_upper, BigInt::from(4));
        let wide = LatticeBox::from_f64_pairs(&[(-1.0, 1.0), (-1.0, 1.0)]);
        assert!(matches!(wide, Err(Error::InvalidBox(_))));
    }

    #[test]
    fn box_geometry() {
        let bx = LatticeBox::from_f64_pairs(&[(-0.5, 0.5), (0.0, 1.0)]).unwrap();
        assert_eq!(bx.lattice_ranges(10), vec![(-5, 5), (0, 10)]);
        assert_eq!(bx.lattice_point_count(10), 121);
        assert_eq!(bx.volume(), BigRational::one());
        let json = serde_json::to_string(&bx).unwrap();
        let back: LatticeBox = serde_json::from_str(&json).unwrap();
        assert_eq!(back, bx);
        let mixed: LatticeBox = serde_json::from_str(r#"[[0, "1/2"], [-0.25, 0.75]]"#).unwrap();
        assert_eq!(mixed.bounds_f64(), vec![(0.0, 0.5), (-0.25, 0.75)]);
    }

    #[test]
    fn smoothness_screen_flags_bad_reduction() {
        let f = IntegerForm::diagonal(&[1; 5], 2).unwrap();
        let r = f.smoothness_screen(1 << 22);
        // sum of squares mod 2 is a perfect square
        assert_eq!(r.singular_mod, vec![2]);
        let g = IntegerForm::parse("x1*x2").unwrap();
        assert!(g.smoothness_screen(1 << 22).looks_smooth());
        let cone = IntegerForm::parse("x1^2 - x2^2 + 0*x3^2").unwrap();
        assert!(!cone.smoothness_screen(1 << 22).looks_smooth());
    }

    proptest! {
        #[test]
        fn homogeneity(lambda in -10i64..=10, t in proptest::collection::vec(-10i64..=10, 3)) {
            let f = IntegerForm::parse("3*x1^3 - 2*x1*x2*x3 + x3^3").unwrap();
            let scaled: Vec<i64> = t.iter().map(|x| x * lambda).collect();
            let lhs = f.evaluate_i64(&scaled).unwrap();
            let rhs = f.evaluate_i64(&t).unwrap() * BigInt::from(lambda).pow(3);
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn evaluate_mod_agrees(t in proptest::collection::vec(-1000i64..=1000, 4), q in 1u64..=10_000) {
            let f = IntegerForm::parse("x1^2 + 3*x2^2 - 7*x3*x4 + x1*x4").unwrap();
            let residues: Vec<u64> = t.iter().map(|&x| arith::rem_euclid(x as i128, q)).collect();
            let exact = f.evaluate_i64(&t).unwrap();
            let want = bigint_mod(&exact, q);
            prop_assert_eq!(f.evaluate_mod(&residues, q).unwrap(), want);
        }

        #[test]
        fn bound_lower_is_monotone(g in 2usize..8) {
            let f = IntegerForm::parse("x1^2 - 3*x1*x2 + x2^2").unwrap();
            let bx = LatticeBox::from_f64_pairs(&[(-0.3, 0.7), (0.0, 1.0)]).unwrap();
            let a = compute_bound_b(&f, &bx, g).unwrap();
            let b = compute_bound_b(&f, &bx, g + 1).unwrap();
            prop_assert!(a.b_exact_lower <= b.b_exact_lower);
            prop_assert!(b.b_exact_lower <= b.b_upper.to_f64().unwrap());
            prop_assert!(a.b_exact_lower > 0.0);
        }
    }
}
