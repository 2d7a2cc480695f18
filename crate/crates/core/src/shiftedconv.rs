//! Sums of `r(m) r(m+1)` in progressions: `eta_q`, exact sums, the main
//! term, the hyperbola split and the exact identities behind it.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_bigint::BigInt;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use crate::arith;
use crate::error::{Error, Result};
use crate::kernels::r_table;
use crate::localdensity::rational_string;

/// Default r-sieve budget.
pub const R_SIEVE_BUDGET: u64 = 10_000_000;
const FULL_TABLE_LIMIT: u64 = 20_000;

/// `#{y mod q : y^2 = v}` as sparse `(v, count)` pairs.
fn square_classes(q: u64) -> Arc<Vec<(u64, u64)>> {
    static CACHE: OnceLock<Mutex<HashMap<u64, Arc<Vec<(u64, u64)>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(v) = cache.lock().unwrap().get(&q) {
        return v.clone();
    }
    let mut counts = vec![0u64; q as usize];
    for y in 0..q {
        counts[arith::mul_mod(y, y, q) as usize] += 1;
    }
    let v: Arc<Vec<(u64, u64)>> = Arc::new(
        counts
            .into_iter()
            .enumerate()
            .filter(|(_, c)| *c > 0)
            .map(|(v, c)| (v as u64, c))
            .collect(),
    );
    cache.lock().unwrap().insert(q, v.clone());
    v
}

fn eta_by_convolution(q: u64, b: u64) -> u64 {
    let sq = square_classes(q);
    let mut dense = vec![0u64; q as usize];
    for &(v, c) in sq.iter() {
        dense[v as usize] = c;
    }
    sq.iter()
        .map(|&(v, c)| c * dense[((b + q - v) % q) as usize])
        .sum()
}

fn eta_table_prime_power(pe: u64) -> Arc<Vec<u64>> {
    static CACHE: OnceLock<Mutex<HashMap<u64, Arc<Vec<u64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(v) = cache.lock().unwrap().get(&pe) {
        return v.clone();
    }
    let sq = square_classes(pe);
    let mut table = vec![0u64; pe as usize];
    for &(v1, c1) in sq.iter() {
        for &(v2, c2) in sq.iter() {
            table[((v1 + v2) % pe) as usize] += c1 * c2;
        }
    }
    let t = Arc::new(table);
    cache.lock().unwrap().insert(pe, t.clone());
    t
}

fn eta_prime_power(p: u64, e: u32, b: u64) -> u64 {
    let pe = p.pow(e);
    let b = b % pe;
    if p != 2 && b % p != 0 {
        // p^{e-1} (p - chi(p)) for a unit
        let chi = if p % 4 == 1 { 1 } else { -1 };
        return (pe / p) * (p as i64 - chi) as u64;
    }
    if pe <= FULL_TABLE_LIMIT {
        eta_table_prime_power(pe)[b as usize]
    } else {
        eta_by_convolution(pe, b)
    }
}

/// `eta_q(b) = #{y in (Z/q)^2 : y1^2 + y2^2 = b}`.
pub fn eta(q: u64, b: i128) -> Result<u64> {
    if q == 0 {
        return Err(Error::ZeroModulus);
    }
    let b = arith::rem_euclid(b, q);
    Ok(arith::factorize(q)
        .into_iter()
        .map(|(p, e)| eta_prime_power(p, e, b))
        .product())
}

/// `eta_q(b)` by a plain `q^2` sweep; the reference the fast path is tested
/// against.
pub fn eta_brute(q: u64, b: i128) -> Result<u64> {
    if q == 0 {
        return Err(Error::ZeroModulus);
    }
    let b = arith::rem_euclid(b, q);
    let mut c = 0;
    for y1 in 0..q {
        for y2 in 0..q {
            if (arith::mul_mod(y1, y1, q) + arith::mul_mod(y2, y2, q)) % q == b {
                c += 1;
            }
        }
    }
    Ok(c)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EtaTable {
    pub q: u64,
    pub values: Vec<u64>,
}

pub fn eta_table(q: u64) -> Result<EtaTable> {
    if q == 0 {
        return Err(Error::ZeroModulus);
    }
    let values = (0..q).map(|b| eta(q, b as i128)).collect::<Result<_>>()?;
    Ok(EtaTable { q, values })
}

/// Shared `r` table covering at least `0..=n`.
pub fn r_values(n: u64) -> Result<Arc<Vec<u16>>> {
    static CACHE: OnceLock<Mutex<Option<Arc<Vec<u16>>>>> = OnceLock::new();
    if n > R_SIEVE_BUDGET + 1 {
        return Err(Error::BudgetExceeded {
            needed: n as f64,
            budget: R_SIEVE_BUDGET,
        });
    }
    let cache = CACHE.get_or_init(Default::default);
    let mut guard = cache.lock().unwrap();
    if let Some(t) = guard.as_ref() {
        if t.len() as u64 > n {
            return Ok(t.clone());
        }
    }
    let t = Arc::new(r_table(n));
    *guard = Some(t.clone());
    Ok(t)
}

/// `S(x; q, a) = sum_{m <= x, m = a mod q} r(m) r(m+1)`.
pub fn shifted_exact(x: u64, q: u64, a: i128) -> Result<u128> {
    if q == 0 {
        return Err(Error::ZeroModulus);
    }
    let r = r_values(x + 1)?;
    let a = arith::rem_euclid(a, q);
    let start = if a == 0 { q } else { a };
    let mut total: u128 = 0;
    let mut m = start;
    while m <= x {
        total += r[m as usize] as u128 * r[m as usize + 1] as u128;
        m += q;
    }
    Ok(total)
}

/// `S(x; q, a)` for every `a mod q` in one pass.
pub fn shifted_exact_all(x: u64, q: u64) -> Result<Vec<u128>> {
    if q == 0 {
        return Err(Error::ZeroModulus);
    }
    let r = r_values(x + 1)?;
    let mut out = vec![0u128; q as usize];
    for m in 1..=x {
        out[(m % q) as usize] += r[m as usize] as u128 * r[m as usize + 1] as u128;
    }
    Ok(out)
}

/// The progression conditions: `4 | q` and `v_p(a) <= v_p(q) - 1` for all
/// `p | q`.
pub fn check_progression(q: u64, a: i128) -> Result<()> {
    if q == 0 {
        return Err(Error::ZeroModulus);
    }
    if q % 4 != 0 {
        return Err(Error::Precondition(format!("4 does not divide q = {q}")));
    }
    let ar = arith::rem_euclid(a, q);
    for (p, e) in arith::factorize(q) {
        if ar % p.pow(e) == 0 {
            return Err(Error::Precondition(format!(
                "v_{p}(a) >= v_{p}(q) = {e} for a = {a}, q = {q}"
            )));
        }
    }
    Ok(())
}

/// `prod_{p | q} (1 - p^{-2})`.
fn local_zeta2(q: u64) -> f64 {
    arith::factorize(q)
        .iter()
        .map(|&(p, _)| 1.0 - 1.0 / (p * p) as f64)
        .product()
}

/// The main term `pi^2 x eta_q(a) eta_q(a+1) / q^3 1(a = 0,1 mod 4)
/// prod_{p not | q} (1 - p^{-2})`, with `pi^2` cancelled against `1/zeta(2)`.
/// Only `4 | q` is enforced: the formula also matches the exact sums on
/// classes with `v_p(a) >= v_p(q)` (e.g. `a = 0`, the other half of the
/// classical sum). [`shifted_main_term_strict`] enforces every condition.
pub fn shifted_main_term(x: f64, q: u64, a: i128) -> Result<f64> {
    if q == 0 {
        return Err(Error::ZeroModulus);
    }
    if q % 4 != 0 {
        return Err(Error::Precondition(format!("4 does not divide q = {q}")));
    }
    if !matches!(a.rem_euclid(4), 0 | 1) {
        return Ok(0.0);
    }
    let e = eta(q, a)? as f64 * eta(q, a + 1)? as f64;
    Ok(6.0 * x * e / (q as f64).powi(3) / local_zeta2(q))
}

pub fn shifted_main_term_strict(x: f64, q: u64, a: i128) -> Result<f64> {
    check_progression(q, a)?;
    shifted_main_term(x, q, a)
}

fn chi4(n: u64) -> i64 {
    arith::chi4(n as i128)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HyperbolaReport {
    pub x: u64,
    pub q: u64,
    pub a: i64,
    /// `S_1` summed directly.
    pub direct: i128,
    pub minus: i128,
    pub plus: i128,
    /// `4 S_1^- + 4 S_1^+`.
    pub split: i128,
    pub pass: bool,
}

pub const HYPERBOLA_MAX_X: u64 = 100_000;

/// `S_1 = sum_{m <= x, m = 1 mod 4, m = a mod q} r(m) r(m+1)` against the
/// divisor split at `sqrt x`.
pub fn hyperbola_check(x: u64, q: u64, a: i128) -> Result<HyperbolaReport> {
    if x > HYPERBOLA_MAX_X {
        return Err(Error::BudgetExceeded {
            needed: x as f64,
            budget: HYPERBOLA_MAX_X,
        });
    }
    if q == 0 || q % 4 != 0 {
        return Err(Error::Precondition(format!("4 must divide q = {q}")));
    }
    let r = r_values(x + 1)?;
    let ar = arith::rem_euclid(a, q);
    let in_class = |m: u64| m % 4 == 1 && m % q == ar;
    let direct: i128 = (1..=x)
        .filter(|&m| in_class(m))
        .map(|m| r[m as usize] as i128 * r[m as usize + 1] as i128)
        .sum();
    let root = arith::isqrt(x);
    let mut minus: i128 = 0;
    let mut plus: i128 = 0;
    for d in 1..=root {
        let c = chi4(d);
        if c == 0 {
            continue;
        }
        let mut m = d;
        while m <= x {
            if in_class(m) {
                let w = c as i128 * r[m as usize + 1] as i128;
                minus += w;
                // m > d sqrt x
                if (m as u128) * (m as u128) > (d as u128) * (d as u128) * x as u128 {
                    plus += w;
                }
            }
            m += d;
        }
    }
    let split = 4 * minus + 4 * plus;
    Ok(HyperbolaReport {
        x,
        q,
        a: ar as i64,
        direct,
        minus,
        plus,
        split,
        pass: split == direct,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Lemma33Report {
    pub q: u64,
    pub a: i64,
    #[serde(with = "rational_string")]
    pub lhs: BigRational,
    #[serde(with = "rational_string")]
    pub rhs: BigRational,
    pub pass: bool,
}

/// `sum_{d0 | gcd(a,q)} chi(d0) = (1/2) (eta_q(a)/q) prod_{p | q} (1 - chi(p)/p)^{-1}`.
pub fn lemma33_identity(q: u64, a: i128) -> Result<Lemma33Report> {
    check_progression(q, a)?;
    if a.rem_euclid(4) != 1 {
        return Err(Error::Precondition(format!("a = {a} is not 1 mod 4")));
    }
    let ar = arith::rem_euclid(a, q);
    let g = arith::gcd(ar, q);
    let lhs_int: i64 = arith::divisors(g).into_iter().map(chi4).sum();
    let lhs = BigRational::from_integer(BigInt::from(lhs_int));
    let mut rhs = BigRational::new(BigInt::from(eta(q, a)?), BigInt::from(2 * q));
    for (p, _) in arith::factorize(q) {
        // (1 - chi(p)/p)^{-1} = p / (p - chi(p))
        let den = p as i64 - chi4(p);
        rhs *= BigRational::new(BigInt::from(p), BigInt::from(den));
    }
    Ok(Lemma33Report {
        q,
        a: ar as i64,
        pass: lhs == rhs,
        lhs,
        rhs,
    })
}

/// Every admissible `a mod q` for the identity above.
pub fn lemma33_admissible(q: u64) -> Vec<u64> {
    (0..q)
        .filter(|&a| a % 4 == 1 && check_progression(q, a as i128).is_ok())
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CurlyMReport {
    pub x: u64,
    pub q: u64,
    pub a: i64,
    pub direct: f64,
    pub closed_form: f64,
    /// `tau(q) q^{3/2} (log x)^2 / sqrt x`.
    pub envelope: f64,
    /// `|direct - closed_form| / envelope`.
    pub fitted_constant: f64,
    pub pass: bool,
}

/// Solves `nu = u mod q`, `nu = v mod d`; `None` when inconsistent.
fn crt_pair(u: u64, q: u64, v: u64, d: u64) -> Option<(u64, u64)> {
    let g = arith::gcd(q, d);
    if (u as i128 - v as i128).rem_euclid(g as i128) != 0 {
        return None;
    }
    let l = q / g * d;
    let mut nu = u % q;
    while nu % d != v % d {
        nu += q;
    }
    Some((nu % l, l))
}

/// The finite sum
/// `M = sum_{d <= sqrt x, gcd(d,q) | a} chi(d) #{y mod [d,q] : |y|^2 = a+1 (q), |y|^2 = 1 (d)} / [d,q]^2`
/// against `(pi/8) eta_q(a) eta_q(a+1) / q prod_{p not | q} (1 - p^{-2})`.
pub fn curly_m_check(x: u64, q: u64, a: i128) -> Result<CurlyMReport> {
    check_progression(q, a)?;
    if (q as u128) * (q as u128) < x as u128 {
        return Err(Error::Precondition(format!("needs q >= sqrt x, got q = {q}, x = {x}")));
    }
    let ar = arith::rem_euclid(a, q);
    let target = (ar + 1) % q;
    let mut direct = 0.0f64;
    for d in 1..=arith::isqrt(x) {
        let c = chi4(d);
        if c == 0 || ar % arith::gcd(d, q) != 0 {
            continue;
        }
        let Some((nu, l)) = crt_pair(target, q, 1 % d, d) else {
            continue;
        };
        direct += c as f64 * eta(l, nu as i128)? as f64 / (l as f64 * l as f64);
    }
    let closed_form = std::f64::consts::PI / 8.0 * eta(q, a)? as f64 * eta(q, a + 1)? as f64 / q as f64
        * (6.0 / (std::f64::consts::PI * std::f64::consts::PI))
        / local_zeta2(q);
    let lx = (x as f64).ln();
    let envelope = arith::divisors(q).len() as f64 * (q as f64).powf(1.5) * lx * lx / (x as f64).sqrt();
    let diff = (direct - closed_form).abs();
    Ok(CurlyMReport {
        x,
        q,
        a: ar as i64,
        direct,
        closed_form,
        envelope,
        fitted_constant: diff / envelope,
        pass: diff <= envelope,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DivisibilityRow {
    pub p: u64,
    pub m: u32,
    pub sum: u128,
    /// `sum / ((m / p^m) x)`.
    pub k: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DivisibilityEnvelope {
    pub x: u64,
    pub rows: Vec<DivisibilityRow>,
    pub fitted_k: f64,
}

/// `sum_{n <= x, p^m | n} r(n) r(n+1)` against `(m / p^m) x` for every
/// `p^m <= x^{1/4}`. A diagnostic: the bound has an unknown constant.
pub fn divisibility_envelope(x: u64, primes: &[u64]) -> Result<DivisibilityEnvelope> {
    let mut rows = Vec::new();
    let cap = (x as f64).powf(0.25);
    for &p in primes {
        if !arith::is_prime(p) {
            return Err(Error::InvalidArgument(format!("{p} is not prime")));
        }
        let mut m = 1u32;
        while (p.pow(m) as f64) <= cap {
            let pm = p.pow(m);
            let sum = shifted_exact(x, pm, 0)?;
            let k = sum as f64 / (m as f64 / pm as f64 * x as f64);
            rows.push(DivisibilityRow { p, m, sum, k });
            m += 1;
        }
    }
    let fitted_k = rows.iter().map(|r| r.k).fold(0.0, f64::max);
    Ok(DivisibilityEnvelope { x, rows, fitted_k })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvolutionRow {
    pub x: u64,
    pub exact: u128,
    pub main_term: f64,
    pub ratio: f64,
}

/// Exact `S(x; q, a)` against the main term along `xs`.
pub fn convolution_rows(xs: &[u64], q: u64, a: i128) -> Result<Vec<ConvolutionRow>> {
    xs.iter()
        .map(|&x| {
            let exact = shifted_exact(x, q, a)?;
            let main_term = shifted_main_term(x as f64, q, a)?;
            Ok(ConvolutionRow {
                x,
                exact,
                main_term,
                ratio: if main_term != 0.0 { exact as f64 / main_term } else if exact == 0 { 1.0 } else { f64::INFINITY },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::One;
    use proptest::prelude::*;

    #[test]
    fn eta_examples() {
        assert_eq!(eta(1, 7).unwrap(), 1);
        assert_eq!(eta(4, 1).unwrap(), 8);
        assert_eq!(eta(4, 0).unwrap(), 4);
        assert_eq!(eta(4, 2).unwrap(), 4);
        assert!(matches!(eta(0, 1), Err(Error::ZeroModulus)));
        for q in 1..=60u64 {
            let t = eta_table(q).unwrap();
            assert_eq!(t.values.iter().sum::<u64>(), q * q);
            for b in 0..q {
                assert_eq!(t.values[b as usize], eta_brute(q, b as i128).unwrap(), "q={q} b={b}");
            }
        }
        // large prime power through the convolution path
        let pe = 3u64.pow(9);
        assert_eq!(eta_prime_power(3, 9, 9 * 7), eta_by_convolution(pe, 63));
        let s: u64 = (0..pe).map(|b| eta_by_convolution(pe, b)).take(50).sum::<u64>();
        assert!(s > 0);
    }

    #[test]
    fn shifted_examples() {
        assert_eq!(shifted_exact(5, 1, 0).unwrap(), 48);
        for x in [0u64, 10, 1000, 12345] {
            assert_eq!(shifted_exact(x, 4, 3).unwrap(), 0);
        }
        let all = shifted_exact_all(5000, 12).unwrap();
        for a in 0..12 {
            assert_eq!(all[a as usize], shifted_exact(5000, 12, a).unwrap());
        }
    }

    #[test]
    fn shifted_one_million() {
        let s = shifted_exact(1_000_000, 4, 1).unwrap() as f64 / 4e6;
        assert!((0.95..=1.05).contains(&s), "{s}");
    }

    #[test]
    fn main_term_examples() {
        assert!((shifted_main_term(1.0, 4, 1).unwrap() - 4.0).abs() < 1e-12);
        assert!((shifted_main_term(1.0, 4, 0).unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(shifted_main_term(1.0, 4, 2).unwrap(), 0.0);
        assert!(matches!(shifted_main_term(1.0, 6, 1), Err(Error::Precondition(_))));
        assert!(matches!(shifted_main_term_strict(1.0, 12, 3), Err(Error::Precondition(_))));
        assert!(matches!(shifted_main_term_strict(1.0, 4, 0), Err(Error::Precondition(_))));
    }

    #[test]
    fn hyperbola_examples() {
        let r = hyperbola_check(500, 4, 3).unwrap();
        assert_eq!((r.direct, r.split), (0, 0));
        for q in [4u64, 8, 12] {
            for a in 0..q {
                let r = hyperbola_check(10_000, q, a as i128).unwrap();
                assert!(r.pass, "{r:?}");
            }
        }
        assert!(hyperbola_check(200_000, 4, 1).is_err());
    }

    #[test]
    fn lemma33_examples() {
        let r = lemma33_identity(4, 1).unwrap();
        assert!(r.pass);
        assert_eq!(r.lhs, BigRational::one());
        assert!(lemma33_identity(20, 1).unwrap().pass);
        assert!(lemma33_identity(36, 13).unwrap().pass);
        assert!(lemma33_identity(6, 1).is_err());
        assert!(lemma33_identity(8, 3).is_err());
    }

    #[test]
    fn lemma33_sweep() {
        for q in (4..=200).step_by(4) {
            for a in lemma33_admissible(q) {
                assert!(lemma33_identity(q, a as i128).unwrap().pass, "q={q} a={a}");
            }
        }
    }

    #[test]
    fn curly_m_examples() {
        let r = curly_m_check(10_000, 104, 1).unwrap();
        assert!(r.pass, "{r:?}");
        let r = curly_m_check(10_000, 400, 1).unwrap();
        assert!(r.pass, "{r:?}");
        let r = curly_m_check(10_000, 104, 2).unwrap();
        assert_eq!(r.closed_form, 0.0);
        assert_eq!(r.direct, 0.0);
        assert!(curly_m_check(10_000, 40, 1).is_err());
    }

    #[test]
    fn divisibility_diagnostic() {
        let env = divisibility_envelope(1_000_000, &[2, 3, 5]).unwrap();
        assert!(!env.rows.is_empty());
        assert!(env.fitted_k.is_finite() && env.fitted_k > 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn eta_crt(q1 in 1u64..=100, q2 in 1u64..=100, b in 0i128..10_000) {
            prop_assume!(arith::gcd(q1, q2) == 1);
            prop_assert_eq!(eta(q1 * q2, b).unwrap(), eta(q1, b).unwrap() * eta(q2, b).unwrap());
        }
    }
}
