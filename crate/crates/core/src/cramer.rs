//! Exponent schedules `m_p(z)`, the modulus `W_z = prod p^{m_p}` and
//! `eps(z) = sum p^{-1-m_p}`.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_traits::One;
use serde::{Deserialize, Serialize};

use crate::arith;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Floor,
    PlusOne,
    Explicit,
}

impl Schedule {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "floor" => Ok(Self::Floor),
            "plus_one" | "plus-one" => Ok(Self::PlusOne),
            "explicit" => Ok(Self::Explicit),
            _ => Err(Error::UnknownName {
                kind: "schedule",
                name: s.to_string(),
                valid: "floor, plus_one, explicit".into(),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WzPlan {
    pub z: f64,
    pub schedule: Schedule,
    pub exponents: BTreeMap<u64, u32>,
    #[serde(with = "bigint_string")]
    pub w: BigInt,
    pub epsilon_tilde: f64,
}

mod bigint_string {
    use num_bigint::BigInt;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &BigInt, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigInt, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn floor_z(z: f64) -> Result<u64> {
    if !z.is_finite() || z < 0.0 {
        return Err(Error::InvalidArgument(format!("z must be finite and non-negative, got {z}")));
    }
    if z > 1e7 {
        return Err(Error::InvalidArgument(format!("z = {z} is above the supported 1e7")));
    }
    Ok(z.floor() as u64)
}

/// Largest `m` with `p^m <= zf`, by integer comparison.
pub fn floor_exponent(p: u64, zf: u64) -> u32 {
    let mut m = 0;
    let mut pm: u64 = 1;
    while let Some(next) = pm.checked_mul(p) {
        if next > zf {
            break;
        }
        pm = next;
        m += 1;
    }
    m
}

/// `m_p(z) = max{m : p^m <= z}` for every prime `p <= z`. For `z < 2` the
/// plan is empty and `W = 1`.
pub fn plan_floor(z: f64) -> Result<WzPlan> {
    let zf = floor_z(z)?;
    let exps = arith::primes_up_to(zf)
        .into_iter()
        .map(|p| (p, floor_exponent(p, zf)))
        .collect();
    Ok(WzPlan::build(z, Schedule::Floor, exps))
}

/// `m_p(z) = 1 + floor(log z / log p)`.
pub fn plan_plus_one(z: f64) -> Result<WzPlan> {
    let zf = floor_z(z)?;
    let exps = arith::primes_up_to(zf)
        .into_iter()
        .map(|p| (p, floor_exponent(p, zf) + 1))
        .collect();
    Ok(WzPlan::build(z, Schedule::PlusOne, exps))
}

/// A plan with caller-chosen exponents; each must be at least 1.
pub fn plan_explicit(z: f64, exponents: BTreeMap<u64, u32>) -> Result<WzPlan> {
    for (&p, &m) in &exponents {
        if !arith::is_prime(p) {
            return Err(Error::InvalidArgument(format!("{p} is not prime")));
        }
        if m == 0 {
            return Err(Error::InvalidArgument(format!("exponent for {p} must be >= 1")));
        }
    }
    Ok(WzPlan::build(z, Schedule::Explicit, exponents))
}

pub fn plan_for(schedule: Schedule, z: f64) -> Result<WzPlan> {
    match schedule {
        Schedule::Floor => plan_floor(z),
        Schedule::PlusOne => plan_plus_one(z),
        Schedule::Explicit => Err(Error::InvalidArgument(
            "explicit plans need an exponent map".into(),
        )),
    }
}

fn product_tree(mut v: Vec<BigInt>) -> BigInt {
    if v.is_empty() {
        return BigInt::one();
    }
    while v.len() > 1 {
        v = v
            .chunks(2)
            .map(|c| if c.len() == 2 { &c[0] * &c[1] } else { c[0].clone() })
            .collect();
    }
    v.pop().unwrap()
}

impl WzPlan {
    fn build(z: f64, schedule: Schedule, exponents: BTreeMap<u64, u32>) -> Self {
        let w = product_tree(
            exponents
                .iter()
                .map(|(&p, &m)| num_traits::pow(BigInt::from(p), m as usize))
                .collect(),
        );
        // smallest terms first
        let mut terms: Vec<f64> = exponents
            .iter()
            .map(|(&p, &m)| (p as f64).powi(-(1 + m as i32)))
            .collect();
        terms.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let epsilon_tilde = terms.iter().sum();
        Self {
            z,
            schedule,
            exponents,
            w,
            epsilon_tilde,
        }
    }

    /// `(p, m_p, p^{m_p})`; prime powers stay below 2^64 for every supported
    /// plan.
    pub fn prime_powers(&self) -> Vec<(u64, u32, u64)> {
        self.exponents
            .iter()
            .map(|(&p, &m)| (p, m, p.pow(m)))
            .collect()
    }

    pub fn w_u64(&self) -> Option<u64> {
        u64::try_from(&self.w).ok()
    }

    pub fn log_w(&self) -> f64 {
        self.exponents
            .iter()
            .map(|(&p, &m)| m as f64 * (p as f64).ln())
            .sum()
    }

    /// `log W_z <= 3z`; only meaningful for large `z`.
    pub fn within_exp_3z(&self) -> bool {
        self.log_w() <= 3.0 * self.z
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpsilonRow {
    pub z: f64,
    pub epsilon_tilde: f64,
    pub normalized: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpsilonDecay {
    pub rows: Vec<EpsilonRow>,
    /// Largest `eps(z) sqrt(z) / log z` over the list.
    pub fitted_constant: f64,
}

pub fn epsilon_decay_check(z_list: &[f64]) -> Result<EpsilonDecay> {
    if z_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("z list must be increasing".into()));
    }
    let mut rows = Vec::with_capacity(z_list.len());
    for &z in z_list {
        if z < 2.0 {
            return Err(Error::InvalidArgument("z must be at least 2".into()));
        }
        let plan = plan_floor(z)?;
        rows.push(EpsilonRow {
            z,
            epsilon_tilde: plan.epsilon_tilde,
            normalized: plan.epsilon_tilde * z.sqrt() / z.ln(),
        });
    }
    let fitted_constant = rows.iter().map(|r| r.normalized).fold(0.0, f64::max);
    Ok(EpsilonDecay {
        rows,
        fitted_constant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn floor_examples() {
        let p = plan_floor(2.0).unwrap();
        assert_eq!(p.exponents, BTreeMap::from([(2, 1)]));
        assert_eq!(p.epsilon_tilde, 0.25);
        let p = plan_floor(10.0).unwrap();
        assert_eq!(p.exponents, BTreeMap::from([(2, 3), (3, 2), (5, 1), (7, 1)]));
        assert_eq!(p.w, BigInt::from(2520));
        let want = 1.0 / 16.0 + 1.0 / 27.0 + 1.0 / 25.0 + 1.0 / 49.0;
        assert!((p.epsilon_tilde - want).abs() < 1e-15);
        assert!((p.epsilon_tilde - 0.159945).abs() < 1e-6);
        assert_eq!(plan_floor(1.5).unwrap().w, BigInt::one());
    }

    #[test]
    fn plus_one_examples() {
        assert_eq!(plan_plus_one(2.0).unwrap().w, BigInt::from(4));
        assert_eq!(plan_plus_one(10.0).unwrap().w, BigInt::from(529200));
        let p = plan_plus_one(3.0).unwrap();
        assert_eq!(p.exponents, BTreeMap::from([(2, 2), (3, 2)]));
        assert_eq!(p.w, BigInt::from(36));
    }

    #[test]
    fn decay_table() {
        let t = epsilon_decay_check(&[10.0, 1e2, 1e3, 1e4]).unwrap();
        assert!(t.rows.windows(2).all(|w| w[1].epsilon_tilde < w[0].epsilon_tilde));
        assert_eq!(epsilon_decay_check(&[10.0]).unwrap().rows.len(), 1);
        assert!(epsilon_decay_check(&[10.0, 5.0]).is_err());
    }

    #[test]
    fn plan_json_round_trip() {
        let p = plan_floor(23.0).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"schedule\":\"floor\""));
        let back: WzPlan = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }

    proptest! {
        #[test]
        fn floor_exactness(z in 2u64..=1_000_000) {
            let plan = plan_floor(z as f64).unwrap();
            for (p, m, pm) in plan.prime_powers().into_iter().take(40) {
                prop_assert!(m >= 1);
                prop_assert!(pm <= z);
                prop_assert!(pm as u128 * p as u128 > z as u128);
            }
        }

        #[test]
        fn plus_one_has_smaller_eps(z in 2.0f64..5000.0) {
            let a = plan_floor(z).unwrap();
            let b = plan_plus_one(z).unwrap();
            prop_assert!(b.epsilon_tilde < a.epsilon_tilde);
        }

        #[test]
        fn w_is_product_of_prime_powers(z in 2.0f64..200.0) {
            let plan = plan_floor(z).unwrap();
            let prod = plan.prime_powers().iter().fold(BigInt::one(), |acc, &(_, _, pm)| acc * pm);
            prop_assert_eq!(prod, plan.w);
        }
    }
}
