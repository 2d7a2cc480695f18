//! Arithmetic kernels `k`, their weights `omega`, progression models
//! `rho(a, q)`, and the empirical error `E(x, q)`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::arith;
use crate::error::{Error, Result};
use crate::localdensity::{ramanujan_sum_prime_power, ApModel, SigmaContext};
use crate::shiftedconv;
use crate::singularintegral::Omega;

/// Largest table any kernel will build.
pub const TABLE_LIMIT: u64 = 100_000_000;
/// Default cap for the Hecke coefficients.
pub const DELTA_DEFAULT_MAX: u64 = 1_000_000;
/// Fixed-point scale for real-valued kernel weights.
pub const REAL_SCALE: i64 = 1 << 40;
pub const MFULL_DEFAULT_K: u64 = 10_000;
/// Cap on the orbit length for the powers-of-two sigma.
pub const POW2_ORBIT_LIMIT: u64 = 200_000_000;

pub const KERNEL_NAMES: &str =
    "two_squares_shifted, moebius, delta_hecke, divisor, kth_power:k, m_full:m, pow2";

// ---------------------------------------------------------------- sieves

/// Möbius function on `0..=n` by a linear sieve (`mu[0] = 0`).
pub fn mobius_table(n: u64) -> Vec<i8> {
    let n = n as usize;
    let mut mu = vec![1i8; n + 1];
    let mut composite = vec![false; n + 1];
    let mut primes: Vec<usize> = Vec::new();
    mu[0] = 0;
    for i in 2..=n {
        if !composite[i] {
            primes.push(i);
            mu[i] = -1;
        }
        for &p in &primes {
            let ip = i * p;
            if ip > n {
                break;
            }
            composite[ip] = true;
            if i % p == 0 {
                mu[ip] = 0;
                break;
            }
            mu[ip] = -mu[i];
        }
    }
    mu
}

/// Divisor counts on `0..=n` by a linear sieve (`tau[0] = 0`).
pub fn tau_table(n: u64) -> Vec<u16> {
    let n = n as usize;
    let mut tau = vec![0u16; n + 1];
    let mut exp = vec![0u8; n + 1];
    let mut primes: Vec<usize> = Vec::new();
    if n >= 1 {
        tau[1] = 1;
    }
    for i in 2..=n {
        if tau[i] == 0 {
            primes.push(i);
            tau[i] = 2;
            exp[i] = 1;
        }
        for &p in &primes {
            let ip = i * p;
            if ip > n {
                break;
            }
            if i % p == 0 {
                let e = exp[i];
                tau[ip] = tau[i] / (e as u16 + 1) * (e as u16 + 2);
                exp[ip] = e + 1;
                break;
            }
            tau[ip] = tau[i] * 2;
            exp[ip] = 1;
        }
    }
    tau
}

/// `r(m) = #{(a, b) in Z^2 : a^2 + b^2 = m}` on `0..=n`, by walking
/// `a >= 1, b >= 0` and multiplying by the four rotations.
pub fn r_table(n: u64) -> Vec<u16> {
    let n = n as usize;
    let mut r = vec![0u16; n + 1];
    if n == usize::MAX {
        return r;
    }
    r[0] = 1;
    let mut a = 1usize;
    while a * a <= n {
        let mut b = 0usize;
        while a * a + b * b <= n {
            r[a * a + b * b] += 4;
            b += 1;
        }
        a += 1;
    }
    r
}

/// `r(m)` from the factorisation of `m`.
pub fn r_single(m: u64) -> u64 {
    if m == 0 {
        return 1;
    }
    let mut out = 4;
    for (p, e) in arith::factorize(m) {
        match p % 4 {
            1 => out *= e as u64 + 1,
            3 if e % 2 == 1 => return 0,
            _ => {}
        }
    }
    out
}

/// Indicator of m-full integers on `0..=n` (`1` counts as m-full).
pub fn m_full_table(n: u64, m: u32) -> Vec<bool> {
    let mut full = vec![true; n as usize + 1];
    full[0] = false;
    for p in arith::primes_up_to(n) {
        let pm = p.checked_pow(m).unwrap_or(u64::MAX);
        let mut j = p;
        while j <= n {
            if j % pm != 0 {
                full[j as usize] = false;
            }
            j += p;
        }
    }
    full
}

pub fn is_m_full(x: u64, m: u32) -> bool {
    x >= 1 && arith::factorize(x).iter().all(|&(_, e)| e >= m)
}

pub fn is_kth_power(x: u64, k: u32) -> bool {
    let r = arith::iroot(x, k);
    r.checked_pow(k) == Some(x)
}

/// Coefficients of `prod_{n>=1} (1 - q^n)^24`, indices `0..len`, from
/// `(prod (1 - q^n))^3 = sum_k (-1)^k (2k+1) q^{k(k+1)/2}` raised to the 8th
/// power by sparse-times-dense products.
fn eta24_coefficients(len: usize) -> Vec<i128> {
    let mut cube: Vec<(usize, i128)> = Vec::new();
    let mut k = 0usize;
    while k * (k + 1) / 2 < len {
        let sign = if k % 2 == 0 { 1 } else { -1 };
        cube.push((k * (k + 1) / 2, sign * (2 * k as i128 + 1)));
        k += 1;
    }
    let mut acc = vec![0i128; len];
    for &(i, c) in &cube {
        acc[i] = c;
    }
    for _ in 1..8 {
        let mut next = vec![0i128; len];
        for &(i, c) in &cube {
            for (j, &a) in acc[..len - i].iter().enumerate() {
                if a != 0 {
                    next[i + j] += c * a;
                }
            }
        }
        acc = next;
    }
    acc
}

/// `tau_Delta(m)` for `m` in `0..=n` (index 0 is 0).
pub fn ramanujan_tau_table(n: u64) -> Vec<i128> {
    let n = n as usize;
    let mut out = vec![0i128; n + 1];
    if n == 0 {
        return out;
    }
    let eta = eta24_coefficients(n);
    out[1..].copy_from_slice(&eta[..n]);
    out
}

// ---------------------------------------------------------------- kernels

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelKind {
    TwoSquaresShifted,
    Moebius,
    DeltaHecke { x_max: u64 },
    Divisor,
    KthPower { k: u32 },
    MFull { m: u32 },
    Pow2,
}

/// An exact table of `k(m)` for `m <= max`, as integers over `scale`.
#[derive(Clone, Debug)]
pub struct KernelTable {
    pub scale: i64,
    pub values: Vec<i64>,
}

impl KernelTable {
    pub fn max(&self) -> u64 {
        self.values.len() as u64 - 1
    }

    pub fn get(&self, m: u64) -> i64 {
        self.values[m as usize]
    }
}

pub struct Kernel {
    kind: KernelKind,
    /// Truncation of the m-full series.
    pub series_k: u64,
    /// In sigma, residues outside the two-squares model's domain count 0.
    pub skip_invalid: bool,
    kth_cache: Mutex<HashMap<u64, Arc<Vec<u32>>>>,
    mfull_cache: Mutex<HashMap<u64, Arc<Vec<f64>>>>,
    delta_cache: Mutex<Option<Arc<Vec<i128>>>>,
}

impl std::fmt::Debug for Kernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Kernel").field("kind", &self.kind).finish()
    }
}

impl Kernel {
    pub fn new(kind: KernelKind) -> Result<Self> {
        match kind {
            KernelKind::KthPower { k } if k < 2 => {
                return Err(Error::InvalidArgument("kth_power needs k >= 2".into()))
            }
            KernelKind::MFull { m } if m < 2 => {
                return Err(Error::InvalidArgument("m_full needs m >= 2".into()))
            }
            KernelKind::DeltaHecke { x_max } if x_max > DELTA_DEFAULT_MAX => {
                return Err(Error::KernelRange {
                    needed: x_max,
                    available: DELTA_DEFAULT_MAX,
                })
            }
            _ => {}
        }
        Ok(Self {
            kind,
            series_k: MFULL_DEFAULT_K,
            skip_invalid: true,
            kth_cache: Mutex::new(HashMap::new()),
            mfull_cache: Mutex::new(HashMap::new()),
            delta_cache: Mutex::new(None),
        })
    }

    pub fn two_squares_shifted() -> Self {
        Self::new(KernelKind::TwoSquaresShifted).unwrap()
    }
    pub fn moebius() -> Self {
        Self::new(KernelKind::Moebius).unwrap()
    }
    pub fn delta_eigenvalues(x_max: u64) -> Result<Self> {
        Self::new(KernelKind::DeltaHecke { x_max })
    }
    pub fn divisor() -> Self {
        Self::new(KernelKind::Divisor).unwrap()
    }
    pub fn kth_power(k: u32) -> Result<Self> {
        Self::new(KernelKind::KthPower { k })
    }
    pub fn m_full(m: u32) -> Result<Self> {
        Self::new(KernelKind::MFull { m })
    }
    pub fn powers_of_two() -> Self {
        Self::new(KernelKind::Pow2).unwrap()
    }

    /// Looks a kernel up by its registry name.
    pub fn from_name(name: &str) -> Result<Self> {
        let unknown = || Error::UnknownName {
            kind: "kernel",
            name: name.to_string(),
            valid: KERNEL_NAMES.to_string(),
        };
        let (head, arg) = match name.split_once(':') {
            Some((h, a)) => (h.trim(), Some(a.trim())),
            None => (name.trim(), None),
        };
        let int_arg = || -> Result<u32> {
            arg.ok_or_else(unknown)?
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad kernel parameter in `{name}`")))
        };
        match (head, arg) {
            ("two_squares_shifted", None) => Ok(Self::two_squares_shifted()),
            ("moebius", None) => Ok(Self::moebius()),
            ("delta_hecke", None) => Self::delta_eigenvalues(DELTA_DEFAULT_MAX),
            ("divisor", None) => Ok(Self::divisor()),
            ("pow2", None) => Ok(Self::powers_of_two()),
            ("kth_power", Some(_)) => Self::kth_power(int_arg()?),
            ("m_full", Some(_)) => Self::m_full(int_arg()?),
            _ => Err(unknown()),
        }
    }

    pub fn kind(&self) -> &KernelKind {
        &self.kind
    }

    pub fn name(&self) -> String {
        match &self.kind {
            KernelKind::TwoSquaresShifted => "two_squares_shifted".into(),
            KernelKind::Moebius => "moebius".into(),
            KernelKind::DeltaHecke { .. } => "delta_hecke".into(),
            KernelKind::Divisor => "divisor".into(),
            KernelKind::KthPower { k } => format!("kth_power:{k}"),
            KernelKind::MFull { m } => format!("m_full:{m}"),
            KernelKind::Pow2 => "pow2".into(),
        }
    }

    pub fn omega(&self) -> Omega {
        match self.kind {
            KernelKind::TwoSquaresShifted => Omega::Constant { value: PI * PI },
            KernelKind::Moebius | KernelKind::DeltaHecke { .. } => Omega::Constant { value: 1.0 },
            KernelKind::Divisor => Omega::Log,
            KernelKind::KthPower { k } => Omega::Power { k },
            KernelKind::MFull { m } => Omega::Power { k: m },
            KernelKind::Pow2 => Omega::InvLog2,
        }
    }

    /// Signs `s` the kernel is applied with.
    pub fn sign_support(&self) -> Vec<i8> {
        match self.kind {
            KernelKind::Moebius | KernelKind::DeltaHecke { .. } => vec![-1, 1],
            _ => vec![1],
        }
    }

    /// Whether `k` is an indicator, so sums are counts.
    pub fn is_indicator(&self) -> bool {
        matches!(
            self.kind,
            KernelKind::KthPower { .. } | KernelKind::MFull { .. } | KernelKind::Pow2
        )
    }

    pub fn has_zero_model(&self) -> bool {
        matches!(self.kind, KernelKind::Moebius | KernelKind::DeltaHecke { .. })
    }

    /// Exact weights: `k(m) = value / scale`.
    pub fn scale(&self) -> i64 {
        match self.kind {
            KernelKind::DeltaHecke { .. } => REAL_SCALE,
            _ => 1,
        }
    }

    fn delta_coefficients(&self, n: u64) -> Result<Arc<Vec<i128>>> {
        let KernelKind::DeltaHecke { x_max } = self.kind else {
            unreachable!()
        };
        if n > x_max {
            return Err(Error::KernelRange {
                needed: n,
                available: x_max,
            });
        }
        let mut guard = self.delta_cache.lock().unwrap();
        if let Some(c) = guard.as_ref() {
            if c.len() as u64 > n {
                return Ok(c.clone());
            }
        }
        // build lazily, rounding up so repeated small growth stays cheap
        let size = (n.max(1024).next_power_of_two()).min(x_max);
        let c = Arc::new(ramanujan_tau_table(size));
        *guard = Some(c.clone());
        Ok(c)
    }

    /// `tau_Delta(m)` exactly.
    pub fn ramanujan_tau(&self, m: u64) -> Result<i128> {
        Ok(self.delta_coefficients(m)?[m as usize])
    }

    /// `k(m)` as a real number.
    pub fn eval(&self, m: u64) -> Result<f64> {
        if m == 0 {
            return Err(Error::InvalidArgument("kernels are defined on m >= 1".into()));
        }
        Ok(match self.kind {
            KernelKind::DeltaHecke { .. } => self.ramanujan_tau(m)? as f64 / (m as f64).powf(5.5),
            _ => self.eval_exact(m)? as f64,
        })
    }

    /// `k(m)` for the integer-valued kernels, per value (no table).
    pub fn eval_exact(&self, m: u64) -> Result<i64> {
        if m == 0 {
            return Err(Error::InvalidArgument("kernels are defined on m >= 1".into()));
        }
        Ok(match self.kind {
            KernelKind::TwoSquaresShifted => (r_single(m) * r_single(m + 1)) as i64,
            KernelKind::Moebius => arith::mobius(m) as i64,
            KernelKind::DeltaHecke { .. } => {
                let t = self.ramanujan_tau(m)? as f64 / (m as f64).powf(5.5);
                (t * REAL_SCALE as f64).round() as i64
            }
            KernelKind::Divisor => arith::divisors(m).len() as i64,
            KernelKind::KthPower { k } => is_kth_power(m, k) as i64,
            KernelKind::MFull { m: mm } => is_m_full(m, mm) as i64,
            KernelKind::Pow2 => m.is_power_of_two() as i64,
        })
    }

    /// Weights `k(m) * scale` for `0 <= m <= max` (index 0 is 0).
    pub fn table(&self, max: u64) -> Result<KernelTable> {
        if max > TABLE_LIMIT {
            return Err(Error::BudgetExceeded {
                needed: max as f64,
                budget: TABLE_LIMIT,
            });
        }
        let n = max as usize;
        let values: Vec<i64> = match self.kind {
            KernelKind::TwoSquaresShifted => {
                let r = r_table(max + 1);
                let mut v: Vec<i64> = (0..=n).map(|m| r[m] as i64 * r[m + 1] as i64).collect();
                v[0] = 0;
                v
            }
            KernelKind::Moebius => mobius_table(max).into_iter().map(i64::from).collect(),
            KernelKind::DeltaHecke { .. } => {
                let c = self.delta_coefficients(max)?;
                (0..=n)
                    .map(|m| {
                        if m == 0 {
                            0
                        } else {
                            let l = c[m] as f64 / (m as f64).powf(5.5);
                            (l * REAL_SCALE as f64).round() as i64
                        }
                    })
                    .collect()
            }
            KernelKind::Divisor => tau_table(max).into_iter().map(i64::from).collect(),
            KernelKind::KthPower { k } => {
                let mut v = vec![0i64; n + 1];
                let mut y = 1u64;
                while let Some(p) = y.checked_pow(k).filter(|&p| p <= max) {
                    v[p as usize] = 1;
                    y += 1;
                }
                v
            }
            KernelKind::MFull { m } => m_full_table(max, m).into_iter().map(i64::from).collect(),
            KernelKind::Pow2 => {
                let mut v = vec![0i64; n + 1];
                let mut p = 1u64;
                while p <= max {
                    v[p as usize] = 1;
                    p <<= 1;
                }
                v
            }
        };
        Ok(KernelTable {
            scale: self.scale(),
            values,
        })
    }

    fn domain_error(&self, a: i128, q: u64, reason: impl Into<String>) -> Error {
        Error::ModelDomain {
            model: self.name(),
            a,
            q,
            reason: reason.into(),
        }
    }

    /// `#{y mod p^e : y^k = v}` for each `v`.
    fn power_residue_counts(&self, k: u32, pe: u64) -> Arc<Vec<u32>> {
        let key = pe * 64 + k as u64;
        let mut cache = self.kth_cache.lock().unwrap();
        cache
            .entry(key)
            .or_insert_with(|| {
                let mut v = vec![0u32; pe as usize];
                for y in 0..pe {
                    v[arith::pow_mod(y, k as u64, pe) as usize] += 1;
                }
                Arc::new(v)
            })
            .clone()
    }

    /// Tuples `(weight, K)` of the m-full series with `k_i <= K^{1/(i-1)}`
    /// and `k_2 ... k_m` squarefree.
    pub fn m_full_series(&self) -> Vec<(f64, Vec<(u64, u32)>)> {
        let KernelKind::MFull { m } = self.kind else {
            return Vec::new();
        };
        let big_k = self.series_k;
        let bounds: Vec<u64> = (2..=m)
            .map(|i| (big_k as f64).powf(1.0 / (i - 1) as f64).floor().max(1.0) as u64)
            .collect();
        let mu = mobius_table(big_k);
        let mut out = Vec::new();
        let mut stack: Vec<(usize, u64, f64, Vec<(u64, u32)>)> = vec![(0, 1, 1.0, Vec::new())];
        while let Some((idx, prod, w, parts)) = stack.pop() {
            if idx == bounds.len() {
                out.push((w, parts));
                continue;
            }
            let i = idx as u32 + 2;
            let alpha = 1.0 + (i - 1) as f64 / m as f64;
            for k in 1..=bounds[idx] {
                if mu[k as usize] == 0 || arith::gcd(k, prod) != 1 {
                    continue;
                }
                let mut p2 = parts.clone();
                if k > 1 {
                    p2.push((k, m + i - 1));
                }
                stack.push((idx + 1, prod * k, w * (k as f64).powf(-alpha), p2));
            }
        }
        out.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        out
    }

    /// Heuristic bound on the dropped part of the m-full series.
    pub fn m_full_tail_bound(&self) -> f64 {
        let KernelKind::MFull { m } = self.kind else {
            return 0.0;
        };
        let zeta = |s: f64| -> f64 { (1..200_000).map(|k| (k as f64).powf(-s)).sum::<f64>() + 200_000f64.powf(1.0 - s) / (s - 1.0) };
        let alphas: Vec<f64> = (2..=m).map(|i| 1.0 + (i - 1) as f64 / m as f64).collect();
        let base = (self.series_k as f64).powf(-1.0 / m as f64);
        (0..alphas.len())
            .map(|i| {
                let others: f64 = alphas.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, &a)| zeta(a)).product();
                m as f64 / (i + 1) as f64 * base * others
            })
            .sum()
    }

    fn m_full_rho_table(&self, q: u64) -> Arc<Vec<f64>> {
        let KernelKind::MFull { m } = self.kind else {
            unreachable!()
        };
        if let Some(t) = self.mfull_cache.lock().unwrap().get(&q) {
            return t.clone();
        }
        let mut by_class = vec![0.0f64; q as usize];
        for (w, parts) in self.m_full_series() {
            let c = parts
                .iter()
                .fold(1 % q, |acc, &(k, e)| arith::mul_mod(acc, arith::pow_mod(k, e as u64, q), q));
            by_class[c as usize] += w;
        }
        let mut ypow = vec![0u64; q as usize];
        for y in 0..q {
            ypow[y as usize] = arith::pow_mod(y, m as u64, q);
        }
        let mut rho = vec![0.0f64; q as usize];
        for (c, &w) in by_class.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for &yp in &ypow {
                rho[arith::mul_mod(c as u64, yp, q) as usize] += w;
            }
        }
        for r in rho.iter_mut() {
            *r /= q as f64;
        }
        let t = Arc::new(rho);
        self.mfull_cache.lock().unwrap().insert(q, t.clone());
        t
    }

    fn two_squares_local(&self, a: u64, p: u64, e: u32) -> Result<f64> {
        let pe = p.pow(e);
        if p == 2 && e < 2 {
            return Err(self.domain_error(a as i128, pe, "needs 4 | q"));
        }
        if a % pe == 0 {
            return Err(self.domain_error(a as i128, pe, format!("v_{p}(a) >= v_{p}(q)")));
        }
        if p == 2 && a % 4 >= 2 {
            return Ok(0.0);
        }
        let eta = shiftedconv::eta(pe, a as i128)? as f64 * shiftedconv::eta(pe, a as i128 + 1)? as f64;
        Ok(eta / (pe as f64).powi(3))
    }

    fn pow2_sigma(&self, ctx: &SigmaContext<'_>) -> Result<f64> {
        let v2 = ctx.parts.iter().find(|x| x.0 == 2).map_or(0, |x| x.1);
        let odd: Vec<(u64, u64)> = ctx.parts.iter().filter(|x| x.0 != 2).map(|x| (x.0, x.2)).collect();
        let mut g = 1u64;
        for &(_, pe) in &odd {
            g = arith::lcm(g, arith::multiplicative_order(2, pe).unwrap());
            if g > POW2_ORBIT_LIMIT {
                return Err(Error::BudgetExceeded {
                    needed: g as f64,
                    budget: POW2_ORBIT_LIMIT,
                });
            }
        }
        let s = ctx.s as i128;
        // the 2-part of every orbit element 2^{v+j} mod T is 0 mod 2^v
        let two_factor = ctx
            .parts
            .iter()
            .find(|x| x.0 == 2)
            .map_or(1.0, |x| x.3.count(0) as f64);
        let mut residues: Vec<u64> = odd.iter().map(|&(_, pe)| arith::pow_mod(2, v2 as u64, pe)).collect();
        let hists: Vec<_> = ctx.parts.iter().filter(|x| x.0 != 2).map(|x| x.3.clone()).collect();
        let mut total = 0.0f64;
        for _ in 0..g {
            let mut prod = two_factor;
            for (i, &(_, pe)) in odd.iter().enumerate() {
                prod *= hists[i].count((s * residues[i] as i128).rem_euclid(pe as i128)) as f64;
                residues[i] = residues[i] * 2 % pe;
            }
            total += prod;
        }
        let log_t = ctx.plan.log_w();
        Ok(total / g as f64 * (-(ctx.n as f64 - 1.0) * log_t).exp())
    }

    fn m_full_sigma(&self, ctx: &SigmaContext<'_>) -> Result<f64> {
        let KernelKind::MFull { m } = self.kind else {
            unreachable!()
        };
        // L_p(c) = p^{-en} sum_v #{y : y^m = v} counts(s c v)
        let mut locals: Vec<(u64, Vec<f64>)> = Vec::new();
        for (_, _, pe, h) in &ctx.parts {
            let pe = *pe;
            let pc = self.power_residue_counts(m, pe);
            let norm = (pe as f64).powi(ctx.n as i32);
            let l: Vec<f64> = (0..pe)
                .map(|c| {
                    let mut acc = 0.0;
                    for (v, &cnt) in pc.iter().enumerate() {
                        if cnt > 0 {
                            let nu = (ctx.s as i128 * arith::mul_mod(c, v as u64, pe) as i128).rem_euclid(pe as i128);
                            acc += cnt as f64 * h.counts()[nu as usize] as f64;
                        }
                    }
                    acc / norm
                })
                .collect();
            locals.push((pe, l));
        }
        let mut total = 0.0;
        for (w, parts) in self.m_full_series() {
            let mut prod = w;
            for (pe, l) in &locals {
                let c = parts
                    .iter()
                    .fold(1 % pe, |acc, &(k, e)| arith::mul_mod(acc, arith::pow_mod(k, e as u64, *pe), *pe));
                prod *= l[c as usize];
            }
            total += prod;
        }
        Ok(total)
    }
}

fn v2(q: u64) -> u32 {
    q.trailing_zeros()
}

impl ApModel for Kernel {
    fn name(&self) -> String {
        Kernel::name(self)
    }

    fn rho(&self, a: i128, q: u64) -> Result<f64> {
        if q == 0 {
            return Err(Error::ZeroModulus);
        }
        let ar = arith::rem_euclid(a, q);
        match self.kind {
            KernelKind::Moebius | KernelKind::DeltaHecke { .. } => Ok(0.0),
            KernelKind::Divisor => {
                let mut v = 1.0;
                for (p, e) in arith::factorize(q) {
                    v *= self.rho_local(ar % p.pow(e), p, e)?;
                }
                Ok(v)
            }
            KernelKind::KthPower { k } => {
                let mut v = 1.0;
                for (p, e) in arith::factorize(q) {
                    v *= self.rho_local(ar % p.pow(e), p, e)?;
                }
                let _ = k;
                Ok(v)
            }
            KernelKind::TwoSquaresShifted => {
                if q % 4 != 0 {
                    return Err(self.domain_error(a, q, "needs 4 | q"));
                }
                let f = arith::factorize(q);
                let mut v = 1.0;
                let mut primes = Vec::new();
                for &(p, e) in &f {
                    v *= self.rho_local(ar % p.pow(e), p, e)?;
                    primes.push(p);
                }
                Ok(v * self.global_factor(q, &primes))
            }
            KernelKind::MFull { .. } => Ok(self.m_full_rho_table(q)[ar as usize]),
            KernelKind::Pow2 => {
                let v = v2(q);
                let odd = q >> v;
                if ar % (1u64 << v) != 0 {
                    return Ok(0.0);
                }
                let g = arith::multiplicative_order(2, odd).unwrap();
                let target = (ar >> v) % odd;
                let mut x = 1 % odd;
                for _ in 0..g {
                    if x == target {
                        return Ok(1.0 / g as f64);
                    }
                    x = x * 2 % odd;
                }
                Ok(0.0)
            }
        }
    }

    fn is_multiplicative(&self) -> bool {
        matches!(
            self.kind,
            KernelKind::Moebius
                | KernelKind::DeltaHecke { .. }
                | KernelKind::Divisor
                | KernelKind::KthPower { .. }
                | KernelKind::TwoSquaresShifted
        )
    }

    fn rho_local(&self, a: u64, p: u64, e: u32) -> Result<f64> {
        let pe = p.pow(e);
        match self.kind {
            KernelKind::Moebius | KernelKind::DeltaHecke { .. } => Ok(0.0),
            KernelKind::Divisor => {
                let s: f64 = (0..=e)
                    .map(|r| ramanujan_sum_prime_power(p, r, a as i128) as f64 / (p as f64).powi(r as i32))
                    .sum();
                Ok(s / pe as f64)
            }
            KernelKind::KthPower { k } => Ok(self.power_residue_counts(k, pe)[(a % pe) as usize] as f64 / pe as f64),
            KernelKind::TwoSquaresShifted => self.two_squares_local(a % pe, p, e),
            _ => self.rho(a as i128, pe),
        }
    }

    fn global_factor(&self, _q: u64, primes: &[u64]) -> f64 {
        match self.kind {
            KernelKind::TwoSquaresShifted => {
                let local: f64 = primes.iter().map(|&p| 1.0 - 1.0 / (p * p) as f64).product();
                6.0 / (PI * PI) / local
            }
            _ => 1.0,
        }
    }

    fn skip_invalid(&self) -> bool {
        self.skip_invalid && self.kind == KernelKind::TwoSquaresShifted
    }

    fn sigma_custom(&self, ctx: &SigmaContext<'_>) -> Option<Result<f64>> {
        match self.kind {
            KernelKind::Pow2 => Some(self.pow2_sigma(ctx)),
            KernelKind::MFull { .. } => Some(self.m_full_sigma(ctx)),
            _ => None,
        }
    }
}

// ---------------------------------------------------------------- windows

/// Running sums of `k` along each residue class mod `q`.
#[derive(Clone, Debug)]
pub struct ApWindow {
    pub x: u64,
    pub q: u64,
    pub scale: i64,
    /// `prefix[m] = sum_{m' <= m, m' = m mod q} k(m') * scale`.
    prefix: Vec<i128>,
}

impl ApWindow {
    /// `sum_{m <= y, m = a mod q} k(m)` in scaled units.
    pub fn partial_scaled(&self, a: i128, y: u64) -> i128 {
        let y = y.min(self.x);
        let a = arith::rem_euclid(a, self.q);
        if y == 0 {
            return 0;
        }
        // largest m <= y with m = a mod q, m >= 1
        let r = y % self.q;
        let m = if r >= a { y - (r - a) } else { y.checked_sub(r + self.q - a).unwrap_or(0) };
        if m == 0 {
            if a == 0 && y >= self.q {
                return self.prefix[self.q as usize];
            }
            return 0;
        }
        self.prefix[m as usize]
    }

    pub fn partial(&self, a: i128, y: u64) -> f64 {
        self.partial_scaled(a, y) as f64 / self.scale as f64
    }

    pub fn totals(&self) -> Vec<f64> {
        (0..self.q).map(|a| self.partial(a as i128, self.x)).collect()
    }
}

pub fn ap_partial_sums(kernel: &Kernel, x: u64, q: u64) -> Result<ApWindow> {
    if q == 0 {
        return Err(Error::ZeroModulus);
    }
    let table = kernel.table(x)?;
    let mut prefix = vec![0i128; x as usize + 1];
    for m in 1..=x as usize {
        let back = if m > q as usize { prefix[m - q as usize] } else { 0 };
        prefix[m] = back + table.values[m] as i128;
    }
    Ok(ApWindow {
        x,
        q,
        scale: table.scale,
        prefix,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EmpiricalE {
    pub kernel: String,
    pub x: u64,
    pub q: u64,
    pub e: f64,
    /// `E(x, q) / |int_1^x omega|`.
    pub normalized: f64,
    pub worst_y: u64,
    pub worst_a: u64,
}

/// `E(x, q) = max_{y <= x} max_a |sum_{m <= y, m = a} k(m) - rho(a, q) int_1^y omega|`
/// over integer `y`.
///
/// Every built-in `omega` is non-negative on `[1, inf)`, so for fixed `a` the
/// deviation between two hits of the progression is a constant minus a
/// monotone function and peaks at an end of the gap. Checking residue `a`
/// just before and just after each of its updates, then every residue at
/// `x`, finds the same maximum in `O(x)`.
pub fn empirical_e(kernel: &Kernel, x: u64, q: u64) -> Result<EmpiricalE> {
    if q == 0 {
        return Err(Error::ZeroModulus);
    }
    let table = kernel.table(x)?;
    let rho: Vec<f64> = (0..q).map(|a| kernel.rho(a as i128, q)).collect::<Result<_>>()?;
    let omega = kernel.omega();
    let scale = table.scale as f64;
    let mut partial = vec![0i128; q as usize];
    let (mut best, mut worst_y, mut worst_a) = (0.0f64, 0u64, 0u64);
    let mut see = |dev: f64, y: u64, a: usize| {
        if dev > best {
            best = dev;
            worst_y = y;
            worst_a = a as u64;
        }
    };
    let mut prev_main = 0.0;
    for y in 1..=x {
        let a = (y % q) as usize;
        let main = omega.antiderivative(y as f64);
        if y > 1 {
            see((partial[a] as f64 / scale - rho[a] * prev_main).abs(), y - 1, a);
        }
        partial[a] += table.values[y as usize] as i128;
        see((partial[a] as f64 / scale - rho[a] * main).abs(), y, a);
        prev_main = main;
    }
    if x > 0 {
        for (a, (&s, &r)) in partial.iter().zip(&rho).enumerate() {
            see((s as f64 / scale - r * prev_main).abs(), x, a);
        }
    }
    let denom = omega.antiderivative(x as f64).abs();
    Ok(EmpiricalE {
        kernel: kernel.name(),
        x,
        q,
        e: best,
        normalized: if denom > 0.0 { best / denom } else { f64::INFINITY },
        worst_y,
        worst_a,
    })
}

/// [`empirical_e`] by checking every residue at every `y`; `O(x q)`.
pub fn empirical_e_direct(kernel: &Kernel, x: u64, q: u64) -> Result<EmpiricalE> {
    if q == 0 {
        return Err(Error::ZeroModulus);
    }
    let table = kernel.table(x)?;
    let rho: Vec<f64> = (0..q).map(|a| kernel.rho(a as i128, q)).collect::<Result<_>>()?;
    let omega = kernel.omega();
    let scale = table.scale as f64;
    let mut partial = vec![0i128; q as usize];
    let (mut best, mut worst_y, mut worst_a) = (0.0f64, 0u64, 0u64);
    for y in 1..=x {
        let a = (y % q) as usize;
        partial[a] += table.values[y as usize] as i128;
        let main = omega.antiderivative(y as f64);
        for (b, (&s, &r)) in partial.iter().zip(&rho).enumerate() {
            let dev = (s as f64 / scale - r * main).abs();
            if dev > best {
                best = dev;
                worst_y = y;
                worst_a = b as u64;
            }
        }
    }
    let denom = omega.antiderivative(x as f64).abs();
    Ok(EmpiricalE {
        kernel: kernel.name(),
        x,
        q,
        e: best,
        normalized: if denom > 0.0 { best / denom } else { f64::INFINITY },
        worst_y,
        worst_a,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sieves_agree_with_direct() {
        let n = 5000;
        let mu = mobius_table(n);
        let tau = tau_table(n);
        let r = r_table(n);
        let full2 = m_full_table(n, 2);
        let full3 = m_full_table(n, 3);
        for m in 1..=n {
            assert_eq!(mu[m as usize], arith::mobius(m));
            assert_eq!(tau[m as usize] as usize, arith::divisors(m).len());
            assert_eq!(r[m as usize] as u64, r_single(m));
            assert_eq!(full2[m as usize], is_m_full(m, 2));
            assert_eq!(full3[m as usize], is_m_full(m, 3));
        }
        // lattice oracle for r
        for m in 0..=200u64 {
            let mut c = 0;
            for a in -15i64..=15 {
                for b in -15i64..=15 {
                    if (a * a + b * b) as u64 == m {
                        c += 1;
                    }
                }
            }
            assert_eq!(r[m as usize] as u64, c, "m = {m}");
        }
    }

    #[test]
    fn two_squares_examples() {
        let k = Kernel::two_squares_shifted();
        assert_eq!(k.eval_exact(1).unwrap(), 16);
        assert_eq!(k.eval_exact(3).unwrap(), 0);
        assert!((k.rho(1, 4).unwrap() - 4.0 / (PI * PI)).abs() < 1e-12);
        assert!(matches!(k.rho(1, 6), Err(Error::ModelDomain { .. })));
        assert!(matches!(k.rho(4, 8), Err(Error::ModelDomain { a: 4, q: 8, .. })) == false);
        assert!(matches!(k.rho(8, 8), Err(Error::ModelDomain { .. })));
    }

    #[test]
    fn moebius_and_delta_examples() {
        let m = Kernel::moebius();
        assert_eq!(m.eval_exact(1).unwrap(), 1);
        assert_eq!(m.eval_exact(12).unwrap(), 0);
        assert_eq!(m.eval_exact(30).unwrap(), -1);
        let d = Kernel::delta_eigenvalues(10_000).unwrap();
        let known = [1i128, -24, 252, -1472, 4830, -6048, -16744, 84480, -113643, -115920];
        for (i, &t) in known.iter().enumerate() {
            assert_eq!(d.ramanujan_tau(i as u64 + 1).unwrap(), t);
        }
        let l = |m| d.eval(m).unwrap();
        assert!((l(2) * l(3) - l(6)).abs() < 1e-12);
        assert!((l(4) * l(9) - l(36)).abs() < 1e-12);
        for p in arith::primes_up_to(100) {
            assert!(l(p).abs() <= 2.0);
        }
        assert!(matches!(d.eval(10_001), Err(Error::KernelRange { .. })));
    }

    #[test]
    fn divisor_examples() {
        let k = Kernel::divisor();
        assert_eq!(k.rho(5, 1).unwrap(), 1.0);
        assert!((k.rho(0, 2).unwrap() - 0.75).abs() < 1e-15);
        assert!((k.rho(1, 2).unwrap() - 0.25).abs() < 1e-15);
        let s: f64 = (0..6).map(|a| k.rho(a, 6).unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-12);
        // direct formula (1/q) sum_{r | q} c_r(a) / r
        for q in 1..=48u64 {
            for a in 0..q {
                let direct: f64 = arith::divisors(q)
                    .iter()
                    .map(|&r| crate::localdensity::ramanujan_sum(r, a as i128).unwrap() as f64 / r as f64)
                    .sum::<f64>()
                    / q as f64;
                assert!((k.rho(a as i128, q).unwrap() - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kth_power_examples() {
        let k2 = Kernel::kth_power(2).unwrap();
        assert_eq!(k2.rho(3, 1).unwrap(), 1.0);
        assert_eq!(k2.rho(1, 8).unwrap(), 0.5);
        let k3 = Kernel::kth_power(3).unwrap();
        assert_eq!(k3.eval_exact(64).unwrap(), 1);
        assert_eq!(k3.eval_exact(65).unwrap(), 0);
        for q in 1..=48 {
            let s: f64 = (0..q).map(|a| k2.rho(a, q as u64).unwrap()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn m_full_examples() {
        let k = Kernel::m_full(2).unwrap();
        assert_eq!(k.eval_exact(72).unwrap(), 1);
        assert_eq!(k.eval_exact(12).unwrap(), 0);
        let mut big = Kernel::m_full(2).unwrap();
        big.series_k = 1_000_000;
        // oracle: zeta(3/2) / zeta(3)
        let target = 2.612_375_348_685_488 / 1.202_056_903_159_594;
        let v = big.rho(0, 1).unwrap();
        assert!((v - target).abs() < 2.0 * big.m_full_tail_bound(), "{v} vs {target}");
        assert!((v - 2.17325).abs() < 3e-3);
        let s: f64 = (0..12).map(|a| k.rho(a, 12).unwrap()).sum();
        assert!((s - k.rho(0, 1).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn pow2_examples() {
        let k = Kernel::powers_of_two();
        for r in 0..7 {
            let want = if [1, 2, 4].contains(&r) { 1.0 / 3.0 } else { 0.0 };
            assert!((k.rho(r, 7).unwrap() - want).abs() < 1e-15);
        }
        assert_eq!(k.rho(0, 4).unwrap(), 1.0);
        for r in 1..4 {
            assert_eq!(k.rho(r, 4).unwrap(), 0.0);
        }
        assert_eq!(k.eval_exact(1024).unwrap(), 1);
        assert_eq!(k.eval_exact(1000).unwrap(), 0);
        for q in 1..=60u64 {
            let s: f64 = (0..q).map(|a| k.rho(a as i128, q).unwrap()).sum();
            assert!((s - 1.0).abs() < 1e-12, "q = {q}");
        }
    }

    #[test]
    fn registry() {
        for name in ["two_squares_shifted", "moebius", "delta_hecke", "divisor", "kth_power:3", "m_full:2", "pow2"] {
            assert_eq!(Kernel::from_name(name).unwrap().name(), name);
        }
        match Kernel::from_name("primes") {
            Err(Error::UnknownName { valid, .. }) => assert!(valid.contains("m_full:m")),
            other => panic!("{other:?}"),
        }
        assert!(Kernel::from_name("kth_power:x").is_err());
        assert!(Kernel::from_name("kth_power:1").is_err());
    }

    #[test]
    fn window_examples() {
        let w = ap_partial_sums(&Kernel::divisor(), 10, 1).unwrap();
        assert_eq!(w.partial(0, 10), 27.0);
        let w = ap_partial_sums(&Kernel::moebius(), 10, 1).unwrap();
        assert_eq!(w.partial(0, 10), -1.0);
        let w = ap_partial_sums(&Kernel::divisor(), 0, 5).unwrap();
        assert!(w.totals().iter().all(|&t| t == 0.0));
        let w = ap_partial_sums(&Kernel::divisor(), 1000, 7).unwrap();
        let tau = tau_table(1000);
        for a in 0..7u64 {
            for y in [0u64, 1, 6, 7, 8, 500, 999, 1000] {
                let direct: i64 = (1..=y).filter(|m| m % 7 == a).map(|m| tau[m as usize] as i64).sum();
                assert_eq!(w.partial(a as i128, y), direct as f64, "a = {a}, y = {y}");
            }
        }
    }

    #[test]
    fn empirical_e_fast_matches_direct() {
        let kernels = [Kernel::divisor(), Kernel::moebius(), Kernel::kth_power(3).unwrap(), Kernel::m_full(2).unwrap(), Kernel::powers_of_two()];
        for k in &kernels {
            for q in [1u64, 2, 5, 12, 16] {
                let a = empirical_e(k, 20_000, q).unwrap();
                let b = empirical_e_direct(k, 20_000, q).unwrap();
                assert_eq!(a.e, b.e, "{} q={q}", k.name());
            }
        }
    }

    #[test]
    fn empirical_e_examples() {
        // k = 1 on every integer is the 1st-power indicator
        let ones = Kernel::kth_power(2).unwrap();
        let e = empirical_e(&Kernel::divisor(), 1_000_000, 2).unwrap();
        assert!(e.normalized < 0.05, "{e:?}");
        let e = empirical_e(&ones, 1_000_000, 8).unwrap();
        assert!(e.normalized < 0.05, "{e:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn rho_nonnegative(q in 1u64..=48, a in 0i128..48) {
            for k in [Kernel::divisor(), Kernel::kth_power(2).unwrap(), Kernel::kth_power(3).unwrap(), Kernel::powers_of_two()] {
                prop_assert!(k.rho(a, q).unwrap() >= -1e-15);
            }
        }
    }
}
