//! Value histograms mod `q`, exponential sums, local factors, truncated
//! singular series, Ramanujan sums and the `sigma(f)` limit.
//!
//! Every quantity here is derived from a single object, the histogram
//! `nu -> #{t mod q : f(t) = nu}`.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arith;
use crate::cramer::{self, Schedule, WzPlan};
use crate::error::{Error, Result};
use crate::forms::{bigint_mod, IntegerForm};

pub const DEFAULT_BUDGET: u64 = 100_000_000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValueHistogram {
    modulus: u64,
    counts: Vec<u128>,
    form_digest: String,
}

impl ValueHistogram {
    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    pub fn form_digest(&self) -> &str {
        &self.form_digest
    }

    pub fn counts(&self) -> &[u128] {
        &self.counts
    }

    /// Count at the residue class of `nu`.
    pub fn count(&self, nu: i128) -> u128 {
        self.counts[arith::rem_euclid(nu, self.modulus) as usize]
    }

    pub fn total(&self) -> u128 {
        self.counts.iter().sum()
    }

    pub fn as_map(&self) -> BTreeMap<u64, u128> {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(v, &c)| (v as u64, c))
            .collect()
    }
}

fn check_total(n: usize, q: u64) -> Result<u128> {
    (q as u128)
        .checked_pow(n as u32)
        .ok_or_else(|| Error::Overflow(format!("{q}^{n} residue vectors")))
}

/// Histogram of `f` mod `q`. Diagonal forms use cyclic convolution of
/// one-variable histograms; composite moduli are assembled from their prime
/// power parts; prime powers are enumerated subject to `budget`.
pub fn value_histogram_mod(form: &IntegerForm, q: u64, budget: u64) -> Result<ValueHistogram> {
    if q == 0 {
        return Err(Error::ZeroModulus);
    }
    check_total(form.n(), q)?;
    let counts = if q == 1 {
        vec![check_total(form.n(), 1)?]
    } else if let Some(c) = form.diagonal_coefficients() {
        diagonal_counts(&c, form.degree(), q)
    } else {
        let f = arith::factorize(q);
        if f.len() == 1 {
            brute_counts(form, q, budget)?
        } else {
            let parts = f
                .iter()
                .map(|&(p, e)| {
                    let pe = p.pow(e);
                    brute_counts(form, pe, budget).map(|c| (pe, c))
                })
                .collect::<Result<Vec<_>>>()?;
            crt_combine(q, &parts)
        }
    };
    Ok(ValueHistogram {
        modulus: q,
        counts,
        form_digest: form.digest(),
    })
}

/// Plain enumeration of `(Z/qZ)^n`, with no diagonal or CRT shortcut.
pub fn value_histogram_brute(form: &IntegerForm, q: u64, budget: u64) -> Result<ValueHistogram> {
    if q == 0 {
        return Err(Error::ZeroModulus);
    }
    Ok(ValueHistogram {
        modulus: q,
        counts: brute_counts(form, q, budget)?,
        form_digest: form.digest(),
    })
}

fn crt_combine(q: u64, parts: &[(u64, Vec<u128>)]) -> Vec<u128> {
    (0..q)
        .map(|v| parts.iter().map(|(m, c)| c[(v % m) as usize]).product())
        .collect()
}

fn diagonal_counts(coeffs: &[i64], d: u32, q: u64) -> Vec<u128> {
    let qs = q as usize;
    let mut acc = vec![0u128; qs];
    acc[0] = 1;
    for &c in coeffs {
        let cq = arith::rem_euclid(c as i128, q);
        let mut h = vec![0u128; qs];
        for x in 0..q {
            h[arith::mul_mod(cq, arith::pow_mod(x, d as u64, q), q) as usize] += 1;
        }
        let hs: Vec<(usize, u128)> = h.iter().copied().enumerate().filter(|(_, c)| *c > 0).collect();
        let mut next = vec![0u128; qs];
        for (a, &ca) in acc.iter().enumerate() {
            if ca == 0 {
                continue;
            }
            for &(b, cb) in &hs {
                let mut k = a + b;
                if k >= qs {
                    k -= qs;
                }
                next[k] += ca * cb;
            }
        }
        acc = next;
    }
    acc
}

fn brute_counts(form: &IntegerForm, q: u64, budget: u64) -> Result<Vec<u128>> {
    let n = form.n();
    let total = check_total(n, q)?;
    if total > budget as u128 {
        return Err(Error::BudgetExceeded {
            needed: total as f64,
            budget,
        });
    }
    let qs = q as usize;
    if n == 1 {
        let mut out = vec![0u128; qs];
        for x in 0..q {
            out[form.evaluate_mod(&[x], q)? as usize] += 1;
        }
        return Ok(out);
    }
    let d = form.degree() as usize;
    let last = n - 1;
    // f = sum_k g_k(x_0..x_{n-2}) * x_{n-1}^k
    let mut by_last: Vec<Vec<(Vec<u32>, u64)>> = vec![Vec::new(); d + 1];
    for (e, c) in form.terms_mod(q) {
        let k = e[last] as usize;
        by_last[k].push((e[..last].to_vec(), c));
    }
    let ypow: Vec<Vec<u64>> = (0..=d)
        .map(|k| (0..q).map(|y| arith::pow_mod(y, k as u64, q)).collect())
        .collect();
    let xpow: Vec<Vec<u64>> = ypow.clone();
    let outer = q.pow((n - 2) as u32);
    let partials: Vec<Vec<u64>> = (0..q)
        .into_par_iter()
        .map(|x0| {
            let mut local = vec![0u64; qs];
            let mut pt = vec![0u64; last];
            pt[0] = x0;
            let mut g = vec![0u64; d + 1];
            for idx in 0..outer {
                let mut r = idx;
                for slot in pt.iter_mut().skip(1) {
                    *slot = r % q;
                    r /= q;
                }
                for (k, terms) in by_last.iter().enumerate() {
                    let mut acc = 0u64;
                    for (e, c) in terms {
                        let mut m = *c;
                        for (j, &ej) in e.iter().enumerate() {
                            if ej > 0 {
                                m = arith::mul_mod(m, xpow[ej as usize][pt[j] as usize], q);
                            }
                        }
                        acc += m;
                        if acc >= q {
                            acc -= q;
                        }
                    }
                    g[k] = acc;
                }
                for y in 0..qs {
                    let mut v = 0u64;
                    for k in 0..=d {
                        if g[k] != 0 {
                            v = (v + arith::mul_mod(g[k], ypow[k][y], q)) % q;
                        }
                    }
                    local[v as usize] += 1;
                }
            }
            local
        })
        .collect();
    let mut out = vec![0u128; qs];
    for part in partials {
        for (o, c) in out.iter_mut().zip(part) {
            *o += c as u128;
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    form: String,
    q: u64,
    counts: BTreeMap<u64, u128>,
}

/// In-memory and optional on-disk cache of histograms keyed by
/// `(form digest, q)`.
pub struct HistogramStore {
    budget: u64,
    cache_dir: Option<PathBuf>,
    memo: Mutex<HashMap<(String, u64), Arc<ValueHistogram>>>,
}

impl Default for HistogramStore {
    fn default() -> Self {
        Self::new(DEFAULT_BUDGET)
    }
}

impl HistogramStore {
    pub fn new(budget: u64) -> Self {
        Self {
            budget,
            cache_dir: None,
            memo: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_cache_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.cache_dir = Some(dir.into());
        self
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn get(&self, form: &IntegerForm, q: u64) -> Result<Arc<ValueHistogram>> {
        let key = (form.digest(), q);
        if let Some(h) = self.memo.lock().unwrap().get(&key) {
            return Ok(h.clone());
        }
        let hist = match self.load(form, q) {
            Some(h) => h,
            None => {
                let h = value_histogram_mod(form, q, self.budget)?;
                self.save(form, &h)?;
                h
            }
        };
        let hist = Arc::new(hist);
        self.memo.lock().unwrap().insert(key, hist.clone());
        Ok(hist)
    }

    fn path(&self, dir: &Path, form: &IntegerForm, q: u64) -> PathBuf {
        dir.join(format!("hist_{}_{}.json", form.digest(), q))
    }

    fn load(&self, form: &IntegerForm, q: u64) -> Option<ValueHistogram> {
        let dir = self.cache_dir.as_ref()?;
        let text = fs::read_to_string(self.path(dir, form, q)).ok()?;
        let rec: CacheRecord = serde_json::from_str(&text).ok()?;
        if rec.q != q || rec.form != form.canonical() {
            return None;
        }
        let mut counts = vec![0u128; q as usize];
        for (v, c) in rec.counts {
            *counts.get_mut(v as usize)? = c;
        }
        let expected = check_total(form.n(), q).ok()?;
        if counts.iter().sum::<u128>() != expected {
            return None;
        }
        Some(ValueHistogram {
            modulus: q,
            counts,
            form_digest: form.digest(),
        })
    }

    fn save(&self, form: &IntegerForm, h: &ValueHistogram) -> Result<()> {
        let Some(dir) = self.cache_dir.as_ref() else {
            return Ok(());
        };
        fs::create_dir_all(dir)?;
        let rec = CacheRecord {
            form: form.canonical(),
            q: h.modulus,
            counts: h.as_map(),
        };
        let target = self.path(dir, form, h.modulus);
        let mut tmp = tempfile_in(dir)?;
        tmp.1.write_all(serde_json::to_string(&rec)?.as_bytes())?;
        tmp.1.sync_all()?;
        drop(tmp.1);
        fs::rename(&tmp.0, &target)?;
        Ok(())
    }
}

fn tempfile_in(dir: &Path) -> Result<(PathBuf, fs::File)> {
    use std::sync::atomic::{AtomicU64, Ordering};
    static SEQ: AtomicU64 = AtomicU64::new(0);
    loop {
        let name = format!(
            ".tmp_{}_{}",
            std::process::id(),
            SEQ.fetch_add(1, Ordering::Relaxed)
        );
        let path = dir.join(name);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(f) => return Ok((path, f)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
}

/// `e(k/q)` with `k` reduced first.
pub fn unit_root(k: i128, q: u64) -> Complex64 {
    let r = arith::rem_euclid(k, q) as f64 / q as f64;
    let (s, c) = (2.0 * PI * r).sin_cos();
    Complex64::new(c, s)
}

/// `S_{a,q} = sum_nu counts(nu) e(a nu / q)`.
pub fn exponential_sum(hist: &ValueHistogram, a: i128) -> Complex64 {
    let q = hist.modulus;
    // collect counts by the exponent a*nu mod q, then one root per class
    let mut by_class = vec![0u128; q as usize];
    let a_mod = arith::rem_euclid(a, q);
    for (nu, &c) in hist.counts.iter().enumerate() {
        if c > 0 {
            by_class[arith::mul_mod(a_mod, nu as u64, q) as usize] += c;
        }
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for (k, &c) in by_class.iter().enumerate() {
        if c > 0 {
            acc += unit_root(k as i128, q) * c as f64;
        }
    }
    acc
}

pub fn exponential_sum_form(form: &IntegerForm, a: i128, q: u64, store: &HistogramStore) -> Result<Complex64> {
    if q == 0 {
        return Err(Error::ZeroModulus);
    }
    Ok(exponential_sum(&*store.get(form, q)?, a))
}

/// Closed form `c_r(a) = sum_{d | (a, r)} mu(r/d) d`.
pub fn ramanujan_sum(r: u64, a: i128) -> Result<i64> {
    if r == 0 {
        return Err(Error::InvalidArgument("Ramanujan sum needs r >= 1".into()));
    }
    let g = arith::gcd(arith::rem_euclid(a, r), r);
    Ok(arith::divisors(g)
        .into_iter()
        .map(|d| arith::mobius(r / d) as i64 * d as i64)
        .sum())
}

/// `c_{p^r}(a)` without factorising: `p^r [p^r | a] - p^{r-1} [p^{r-1} | a]`.
pub fn ramanujan_sum_prime_power(p: u64, r: u32, a: i128) -> i128 {
    if r == 0 {
        return 1;
    }
    let pr = p.pow(r) as i128;
    let pr1 = pr / p as i128;
    let mut v = 0;
    if a.rem_euclid(pr) == 0 {
        v += pr;
    }
    if a.rem_euclid(pr1) == 0 {
        v -= pr1;
    }
    v
}

/// The exponent `c = n 2^{-d} / (d - 1) - 1`; infinite for linear forms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BirchExponent {
    Finite(f64),
    Infinite,
}

impl BirchExponent {
    pub fn value(&self) -> f64 {
        match self {
            Self::Finite(c) => *c,
            Self::Infinite => f64::INFINITY,
        }
    }
}

pub fn birch_exponent_c(form: &IntegerForm) -> Result<BirchExponent> {
    if !form.admissible() {
        return Err(inadmissible(form));
    }
    let d = form.degree();
    if d == 1 {
        return Ok(BirchExponent::Infinite);
    }
    let c = form.n() as f64 * 2f64.powi(-(d as i32)) / (d as f64 - 1.0) - 1.0;
    Ok(BirchExponent::Finite(c))
}

fn inadmissible(form: &IntegerForm) -> Error {
    Error::Inadmissible {
        n: form.n(),
        d: form.degree(),
        bound: crate::forms::admissibility_bound(form.degree()).min(u64::MAX as u128) as u64,
    }
}

pub(crate) mod rational_string {
    use num_rational::BigRational;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &BigRational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigRational, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn rational_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

fn pow_big(p: u64, e: u64) -> BigInt {
    num_traits::pow(BigInt::from(p), e as usize)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LocalFactor {
    pub p: u64,
    pub m: u32,
    #[serde(with = "rational_string")]
    pub gamma: BigRational,
    pub gamma_f64: f64,
    /// `p^{-m(1+c)}` with implied constant 1 (heuristic); zero for linear
    /// forms, whose counts need no tail.
    pub tail_bound: f64,
}

/// `Gamma_m(nu) = N(nu; p^m) / p^{m(n-1)}` with heuristic tail envelope.
pub fn local_factor(form: &IntegerForm, nu: i128, p: u64, m: u32, store: &HistogramStore) -> Result<LocalFactor> {
    if m == 0 {
        return Err(Error::InvalidArgument("local factor needs m >= 1".into()));
    }
    if !arith::is_prime(p) {
        return Err(Error::InvalidArgument(format!("{p} is not prime")));
    }
    let pm = p
        .checked_pow(m)
        .ok_or_else(|| Error::Overflow(format!("{p}^{m}")))?;
    let hist = store.get(form, pm)?;
    let gamma = BigRational::new(
        BigInt::from(hist.count(nu)),
        pow_big(p, m as u64 * (form.n() as u64 - 1)),
    );
    let c = if form.degree() == 1 {
        f64::INFINITY
    } else {
        form.n() as f64 * 2f64.powi(-(form.degree() as i32)) / (form.degree() as f64 - 1.0) - 1.0
    };
    let tail_bound = (p as f64).powf(-(m as f64) * (1.0 + c));
    Ok(LocalFactor {
        p,
        m,
        gamma_f64: rational_to_f64(&gamma),
        gamma,
        tail_bound,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TouselaterReport {
    pub p: u64,
    pub m: u32,
    pub nu: i128,
    #[serde(with = "rational_string")]
    pub lhs_exact: BigRational,
    #[serde(with = "rational_string")]
    pub rhs_exact: BigRational,
    pub lhs_float: f64,
    pub float_residual: f64,
    pub pass: bool,
}

/// Checks `sum_{r<=m} p^{-rn} sum_{p !| a} S_{a,p^r} e(-a nu/p^r)
/// = N(nu; p^m) / p^{(n-1)m}` twice: exactly, with the inner sum rewritten as
/// `sum_nu' N(nu') c_{p^r}(nu' - nu)`, and in floating point from the
/// exponential sums themselves (to `1e-8`).
pub fn touselater_identity_check(
    form: &IntegerForm,
    nu: i128,
    p: u64,
    m: u32,
    store: &HistogramStore,
) -> Result<TouselaterReport> {
    let n = form.n() as u64;
    let mut lhs = BigRational::zero();
    let mut lhs_float = 0.0;
    for r in 0..=m {
        let pr = p.pow(r);
        let hist = store.get(form, pr)?;
        let mut inner = BigInt::zero();
        for (v, &c) in hist.counts.iter().enumerate() {
            if c > 0 {
                inner += BigInt::from(c) * BigInt::from(ramanujan_sum_prime_power(p, r, v as i128 - nu));
            }
        }
        lhs += BigRational::new(inner, pow_big(p, r as u64 * n));
        let mut inner_f = Complex64::new(0.0, 0.0);
        for a in 0..pr {
            if r == 0 || a % p != 0 {
                inner_f += exponential_sum(&hist, a as i128) * unit_root(-(a as i128) * nu, pr);
            }
        }
        lhs_float += inner_f.re / (p as f64).powf((r as u64 * n) as f64);
    }
    let top = store.get(form, p.pow(m))?;
    let rhs = BigRational::new(
        BigInt::from(top.count(nu)),
        pow_big(p, (n - 1) * m as u64),
    );
    let float_residual = (lhs_float - rational_to_f64(&rhs)).abs();
    Ok(TouselaterReport {
        p,
        m,
        nu,
        pass: lhs == rhs && float_residual <= 1e-8,
        lhs_exact: lhs,
        rhs_exact: rhs,
        lhs_float,
        float_residual,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SingularSeriesValue {
    pub value: f64,
    pub z: f64,
    pub per_prime: BTreeMap<u64, LocalFactor>,
    pub c: BirchExponent,
    /// `eps(z) + z^{-c}` with implied constant 1.
    pub envelope: f64,
    pub envelope_is_heuristic: bool,
}

/// `prod_{p <= z} Gamma_{m_p}(nu)`.
pub fn singular_series(form: &IntegerForm, nu: i128, plan: &WzPlan, store: &HistogramStore) -> Result<SingularSeriesValue> {
    let c = birch_exponent_c(form)?;
    let factors = plan
        .prime_powers()
        .par_iter()
        .map(|&(p, m, _)| local_factor(form, nu, p, m, store).map(|f| (p, f)))
        .collect::<Result<Vec<_>>>()?;
    let value = factors.iter().map(|(_, f)| f.gamma_f64).product();
    let z_term = if plan.z > 1.0 { plan.z.powf(-c.value()) } else { 1.0 };
    Ok(SingularSeriesValue {
        value,
        z: plan.z,
        per_prime: factors.into_iter().collect(),
        c,
        envelope: plan.epsilon_tilde + z_term,
        envelope_is_heuristic: true,
    })
}

/// Largest `|S_{a,p^r}| / p^{r(n-c-2)}` over `p !| a`, `1 <= r <= r_max`.
pub fn weyl_envelope_fit(form: &IntegerForm, primes: &[u64], r_max: u32, store: &HistogramStore) -> Result<f64> {
    let c = birch_exponent_c(form)?.value();
    let n = form.n() as f64;
    let mut k: f64 = 0.0;
    for &p in primes {
        for r in 1..=r_max {
            let pr = p.pow(r);
            let hist = store.get(form, pr)?;
            let scale = (pr as f64).powf(n - c.min(n) - 2.0);
            for a in (1..pr).filter(|a| a % p != 0) {
                k = k.max(exponential_sum(&hist, a as i128).norm() / scale);
            }
        }
    }
    Ok(k)
}

/// An arithmetic-progression density model `rho(a, q)`.
///
/// `sigma` in [`sigma_f_limit`] is assembled in one of three ways: a model
/// may supply its own route ([`ApModel::sigma_custom`]); a multiplicative
/// model supplies local factors `rho_local(a, p^e)` and a global factor; any
/// other model is summed densely over residues mod `T`.
pub trait ApModel: Sync {
    fn name(&self) -> String;

    fn rho(&self, a: i128, q: u64) -> Result<f64>;

    fn is_multiplicative(&self) -> bool {
        false
    }

    /// Local part at `p^e`; `rho(a, q) = global(q) prod_p rho_local(a, p^e)`.
    fn rho_local(&self, a: u64, p: u64, e: u32) -> Result<f64> {
        self.rho(a as i128, p.pow(e))
    }

    fn global_factor(&self, _q: u64, _primes: &[u64]) -> f64 {
        1.0
    }

    /// Residues where `rho` is undefined count as zero instead of failing.
    fn skip_invalid(&self) -> bool {
        false
    }

    fn sigma_custom(&self, _ctx: &SigmaContext<'_>) -> Option<Result<f64>> {
        None
    }
}

/// Per-prime histograms at the exponents of one plan.
pub struct SigmaContext<'a> {
    pub n: usize,
    pub s: i8,
    pub plan: &'a WzPlan,
    pub parts: Vec<(u64, u32, u64, Arc<ValueHistogram>)>,
}

impl SigmaContext<'_> {
    /// `#{t mod T : f(t) = nu}` by CRT from the prime-power histograms.
    pub fn count_mod_t(&self, nu: i128) -> u128 {
        self.parts.iter().map(|(_, _, pm, h)| h.count(nu.rem_euclid(*pm as i128))).product()
    }

    /// `#{t mod p^m : f(t) = nu} / p^{m(n-1)}` for the part at `p`.
    pub fn local_weight(&self, idx: usize, nu: u64) -> f64 {
        let (p, m, _, h) = &self.parts[idx];
        h.counts[nu as usize] as f64 / (*p as f64).powi((*m as i32) * (self.n as i32 - 1))
    }
}

pub struct Uniform;

impl ApModel for Uniform {
    fn name(&self) -> String {
        "uniform".into()
    }
    fn rho(&self, _a: i128, q: u64) -> Result<f64> {
        Ok(1.0 / q as f64)
    }
    fn is_multiplicative(&self) -> bool {
        true
    }
}

pub struct ZeroModel;

impl ApModel for ZeroModel {
    fn name(&self) -> String {
        "zero".into()
    }
    fn rho(&self, _a: i128, _q: u64) -> Result<f64> {
        Ok(0.0)
    }
    fn is_multiplicative(&self) -> bool {
        true
    }
}

pub const DENSE_SIGMA_LIMIT: u64 = 100_000_000;

/// `T^{1-n} sum_{t mod T} rho(s f(t), T)` for one plan.
pub fn sigma_for_plan(form: &IntegerForm, model: &dyn ApModel, s: i8, plan: &WzPlan, store: &HistogramStore) -> Result<f64> {
    let parts = plan
        .prime_powers()
        .par_iter()
        .map(|&(p, m, pm)| store.get(form, pm).map(|h| (p, m, pm, h)))
        .collect::<Result<Vec<_>>>()?;
    let ctx = SigmaContext {
        n: form.n(),
        s,
        plan,
        parts,
    };
    if let Some(v) = model.sigma_custom(&ctx) {
        return v;
    }
    let sign = s as i128;
    if model.is_multiplicative() {
        let mut value = 1.0;
        for (idx, (p, m, pm, h)) in ctx.parts.iter().enumerate() {
            let mut local = 0.0;
            for (nu, &c) in h.counts.iter().enumerate() {
                if c == 0 {
                    continue;
                }
                let a = arith::rem_euclid(sign * nu as i128, *pm);
                let r = match model.rho_local(a, *p, *m) {
                    Ok(r) => r,
                    Err(Error::ModelDomain { .. }) if model.skip_invalid() => 0.0,
                    Err(e) => return Err(e),
                };
                local += r * ctx.local_weight(idx, nu as u64);
            }
            value *= local;
        }
        let primes: Vec<u64> = ctx.parts.iter().map(|x| x.0).collect();
        let t = plan.w_u64().unwrap_or(u64::MAX);
        return Ok(value * model.global_factor(t, &primes));
    }
    let t = plan
        .w_u64()
        .filter(|&t| t <= DENSE_SIGMA_LIMIT)
        .ok_or_else(|| Error::BudgetExceeded {
            needed: cramer_log_w(plan).exp(),
            budget: DENSE_SIGMA_LIMIT,
        })?;
    // fixed chunks summed in order, so the value does not depend on the pool
    const CHUNK: u64 = 1 << 16;
    let parts = (0..t.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = 0.0;
            for nu in c * CHUNK..((c + 1) * CHUNK).min(t) {
                let cnt = ctx.count_mod_t(nu as i128);
                if cnt == 0 {
                    continue;
                }
                let a = (sign * nu as i128).rem_euclid(t as i128);
                match model.rho(a, t) {
                    Ok(r) => acc += r * cnt as f64,
                    Err(Error::ModelDomain { .. }) if model.skip_invalid() => {}
                    Err(e) => return Err(e),
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(parts.iter().sum::<f64>() / (t as f64).powi(form.n() as i32 - 1))
}

fn cramer_log_w(plan: &WzPlan) -> f64 {
    plan.log_w()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SigmaRow {
    pub z: f64,
    pub w: String,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SigmaTrace {
    pub model: String,
    pub rows: Vec<SigmaRow>,
    pub value: f64,
    pub differences: Vec<f64>,
}

/// `sigma` along an increasing list of `z` for one schedule.
pub fn sigma_f_limit(
    form: &IntegerForm,
    model: &dyn ApModel,
    s: i8,
    schedule: Schedule,
    z_sequence: &[f64],
    store: &HistogramStore,
) -> Result<SigmaTrace> {
    if z_sequence.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("z sequence must be increasing".into()));
    }
    let mut rows = Vec::new();
    for &z in z_sequence {
        let plan = cramer::plan_for(schedule, z)?;
        let value = sigma_for_plan(form, model, s, &plan, store)?;
        rows.push(SigmaRow {
            z,
            w: plan.w.to_string(),
            value,
        });
    }
    let differences = rows.windows(2).map(|w| w[1].value - w[0].value).collect();
    Ok(SigmaTrace {
        model: model.name(),
        value: rows.last().map_or(f64::NAN, |r| r.value),
        rows,
        differences,
    })
}

/// The five equal expressions for the divisor local factor at `(p, m)`,
/// each evaluated independently in exact rational arithmetic.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DivisorChain {
    pub p: u64,
    pub m: u32,
    /// `p^{-nm} sum_t sum_{r<=m} p^{-r} c_{p^r}(f(t))`
    #[serde(with = "rational_string")]
    pub ramanujan: BigRational,
    /// `sum_{r<=m} p^{-r(n+1)} sum_{x mod p^r} c_{p^r}(f(x))`
    #[serde(with = "rational_string")]
    pub exponential: BigRational,
    /// `1 + sum_{r=1}^m p^{-r} (Gamma_r - Gamma_{r-1})`
    #[serde(with = "rational_string")]
    pub telescoped: BigRational,
    /// `Gamma_m / p^{m+1} + (1 - 1/p) sum_{k<=m} Gamma_k / p^k`
    #[serde(with = "rational_string")]
    pub by_parts: BigRational,
    /// `Gamma_m / p^{m+1} + (1 - 1/p) p^{-nm} sum_t tau_{p^m}(f(t))`
    #[serde(with = "rational_string")]
    pub divisor_form: BigRational,
    /// `(1 - 1/p) p^{-nm} sum_t tau_{p^m}(f(t))` alone.
    #[serde(with = "rational_string")]
    pub tau_part: BigRational,
    pub pass: bool,
}

/// `tau_{p^m}(nu) = 1 + min(v_p(nu), m)`.
pub fn tau_prime_power(p: u64, m: u32, nu: i128) -> u32 {
    match arith::valuation(nu, p) {
        None => m + 1,
        Some(v) => 1 + v.min(m),
    }
}

pub fn divisor_identity_chain(form: &IntegerForm, p: u64, m: u32, store: &HistogramStore) -> Result<DivisorChain> {
    let n = form.n() as u64;
    let pm = p.pow(m);
    let top = store.get(form, pm)?;
    let rat = |num: BigInt, den: BigInt| BigRational::new(num, den);
    let one = BigRational::one();
    let p_r = BigRational::from_integer(BigInt::from(p));

    let mut a_num = BigRational::zero();
    for (nu, &c) in top.counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let mut inner = BigRational::zero();
        for r in 0..=m {
            inner += rat(BigInt::from(ramanujan_sum_prime_power(p, r, nu as i128)), pow_big(p, r as u64));
        }
        a_num += inner * BigRational::from_integer(BigInt::from(c));
    }
    let ramanujan = a_num / BigRational::from_integer(pow_big(p, n * m as u64));

    let mut exponential = BigRational::zero();
    for r in 0..=m {
        let h = store.get(form, p.pow(r))?;
        let mut s = BigInt::zero();
        for (nu, &c) in h.counts.iter().enumerate() {
            if c > 0 {
                s += BigInt::from(c) * BigInt::from(ramanujan_sum_prime_power(p, r, nu as i128));
            }
        }
        exponential += rat(s, pow_big(p, r as u64 * (n + 1)));
    }

    let gammas = (0..=m)
        .map(|k| {
            let h = store.get(form, p.pow(k))?;
            Ok(rat(BigInt::from(h.count(0)), pow_big(p, k as u64 * (n - 1))))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut telescoped = one.clone();
    for r in 1..=m as usize {
        telescoped += (&gammas[r] - &gammas[r - 1]) / BigRational::from_integer(pow_big(p, r as u64));
    }
    let head = &gammas[m as usize] / BigRational::from_integer(pow_big(p, m as u64 + 1));
    let mut gsum = BigRational::zero();
    for (k, g) in gammas.iter().enumerate() {
        gsum += g / BigRational::from_integer(pow_big(p, k as u64));
    }
    let factor = &one - &one / &p_r;
    let by_parts = &head + &factor * gsum;

    let mut tsum = BigInt::zero();
    for (nu, &c) in top.counts.iter().enumerate() {
        if c > 0 {
            tsum += BigInt::from(c) * BigInt::from(tau_prime_power(p, m, nu as i128));
        }
    }
    let tau_part = &factor * rat(tsum, pow_big(p, n * m as u64));
    let divisor_form = &head + &tau_part;
    let pass = ramanujan == exponential
        && exponential == telescoped
        && telescoped == by_parts
        && by_parts == divisor_form;
    Ok(DivisorChain {
        p,
        m,
        ramanujan,
        exponential,
        telescoped,
        by_parts,
        divisor_form,
        tau_part,
        pass,
    })
}

/// Residue of an arbitrary-precision integer, re-exported for kernels.
pub fn residue(v: &BigInt, q: u64) -> u64 {
    bigint_mod(v, q)
}
