//! Oscillatory integrals `I(B; gamma)`, the level-set density `J(mu)`, the
//! weighted real density and the check that separates `omega` from `f`.

use std::collections::HashMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forms::{IntegerForm, LatticeBox};

/// One-dimensional grids used when the integrand separates.
pub const DIAGONAL_MIN_GRID: usize = 1 << 14;
/// Re-anchor the power recurrence `e(h f)^k` this often.
const REANCHOR: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureSpec {
    pub grid_per_axis: usize,
    pub gamma_cutoff: f64,
    pub gamma_step: f64,
    pub tolerance: f64,
    /// Cap on tensor-grid points for the finer of the two grids.
    pub max_points: u64,
    /// Sample count for the Monte Carlo path (`n >= 6`).
    pub mc_samples: u64,
    pub seed: u64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            grid_per_axis: 64,
            gamma_cutoff: 64.0,
            gamma_step: 1.0 / 64.0,
            tolerance: 1e-3,
            max_points: 1 << 27,
            mc_samples: 1 << 24,
            seed: 0x5eed,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.grid_per_axis > 0
            && self.gamma_cutoff > 0.0
            && self.gamma_step > 0.0
            && self.tolerance > 0.0
            && self.max_points > 0
            && self.mc_samples > 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("quadrature parameters must be positive".into()))
        }
    }

    /// Smallest power-of-two cutoff with `min(1, G^{-c-2}) G < tolerance`,
    /// taking the implied constant as 1.
    pub fn suggested_cutoff(c: f64, tolerance: f64) -> Option<f64> {
        if c + 1.0 <= 0.0 {
            return None;
        }
        let mut g: f64 = 1.0;
        while g.powf(-c - 1.0) >= tolerance {
            g *= 2.0;
            if g > 1e12 {
                return None;
            }
        }
        Some(g)
    }

    fn steps(&self, cutoff: f64) -> usize {
        (cutoff / self.gamma_step).round().max(1.0) as usize
    }
}

/// A weight `omega` with its antiderivative from 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Omega {
    Zero,
    Constant { value: f64 },
    /// `log t`
    Log,
    /// `t^{1/k - 1} / k`
    Power { k: u32 },
    /// `1 / (t log 2)`
    InvLog2,
}

impl Omega {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            Omega::Zero => 0.0,
            Omega::Constant { value } => value,
            Omega::Log => t.ln(),
            Omega::Power { k } => t.powf(1.0 / k as f64 - 1.0) / k as f64,
            Omega::InvLog2 => 1.0 / (t * std::f64::consts::LN_2),
        }
    }

    /// `int_1^x omega`.
    pub fn antiderivative(&self, x: f64) -> f64 {
        match *self {
            Omega::Zero => 0.0,
            Omega::Constant { value } => value * (x - 1.0),
            Omega::Log => x * x.ln() - x + 1.0,
            Omega::Power { k } => x.powf(1.0 / k as f64) - 1.0,
            Omega::InvLog2 => x.log2(),
        }
    }

    pub fn name(&self) -> String {
        match *self {
            Omega::Zero => "zero".into(),
            Omega::Constant { value } => format!("constant({value})"),
            Omega::Log => "log".into(),
            Omega::Power { k } => format!("power({k})"),
            Omega::InvLog2 => "inv_log2".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct IntegralValue {
    pub re: f64,
    pub im: f64,
    /// Difference between the grid and the doubled grid.
    pub error: f64,
}

impl IntegralValue {
    pub fn value(&self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }
}

fn e(x: f64) -> Complex64 {
    let (s, c) = (2.0 * PI * x).sin_cos();
    Complex64::new(c, s)
}

fn midpoints(a: f64, b: f64, g: usize) -> impl Iterator<Item = f64> + Clone {
    let h = (b - a) / g as f64;
    (0..g).map(move |i| a + (i as f64 + 0.5) * h)
}

fn check_dims(form: &IntegerForm, bx: &LatticeBox) -> Result<()> {
    if form.n() != bx.dim() {
        return Err(Error::DimensionMismatch {
            expected: form.n(),
            found: bx.dim(),
        });
    }
    Ok(())
}

/// Midpoint sum of `e(gamma c t^d)` over `[a, b]`.
fn axis_integral(c: f64, d: u32, a: f64, b: f64, gamma: f64, g: usize) -> Complex64 {
    if b <= a {
        return Complex64::new(0.0, 0.0);
    }
    let h = (b - a) / g as f64;
    let s: Complex64 = midpoints(a, b, g).map(|t| e(gamma * c * t.powi(d as i32))).sum();
    s * h
}

fn tensor_integral(form: &IntegerForm, bx: &LatticeBox, gamma: f64, g: usize) -> Complex64 {
    let bounds = bx.bounds_f64();
    let n = form.n();
    let cell: f64 = bounds.iter().map(|(a, b)| (b - a) / g as f64).product();
    let first: Vec<f64> = midpoints(bounds[0].0, bounds[0].1, g).collect();
    let parts: Vec<Complex64> = first
        .par_iter()
        .map(|&t0| {
            let mut pt = vec![0.0; n];
            pt[0] = t0;
            let mut idx = vec![0usize; n];
            let mut acc = Complex64::new(0.0, 0.0);
            loop {
                for j in 1..n {
                    let (a, b) = bounds[j];
                    pt[j] = a + (idx[j] as f64 + 0.5) * (b - a) / g as f64;
                }
                acc += e(gamma * form.evaluate_f64(&pt));
                let mut j = 1;
                while j < n {
                    idx[j] += 1;
                    if idx[j] < g {
                        break;
                    }
                    idx[j] = 0;
                    j += 1;
                }
                if j >= n {
                    break;
                }
            }
            acc
        })
        .collect();
    parts.iter().sum::<Complex64>() * cell
}

fn diagonal_integral(coeffs: &[i64], d: u32, bx: &LatticeBox, gamma: f64, g: usize) -> Complex64 {
    bx.bounds_f64()
        .iter()
        .zip(coeffs)
        .map(|(&(a, b), &c)| axis_integral(c as f64, d, a, b, gamma, g))
        .product()
}

fn tensor_grid_for(n: usize, requested: usize, max_points: u64) -> usize {
    let cap = (max_points as f64).powf(1.0 / n as f64).floor() as usize / 2;
    requested.min(cap.max(2))
}

/// `int_B e(gamma f(t)) dt` by the midpoint rule; the error is the change
/// under grid doubling.
pub fn oscillatory_i(form: &IntegerForm, bx: &LatticeBox, gamma: f64, spec: &QuadratureSpec) -> Result<IntegralValue> {
    spec.validate()?;
    check_dims(form, bx)?;
    let (coarse, fine) = if let Some(c) = form.diagonal_coefficients() {
        let g = spec.grid_per_axis.max(DIAGONAL_MIN_GRID);
        (
            diagonal_integral(&c, form.degree(), bx, gamma, g),
            diagonal_integral(&c, form.degree(), bx, gamma, 2 * g),
        )
    } else if form.n() >= 6 {
        let a = mc_mean(form, bx, spec.mc_samples / 2, spec.seed, |v| e(gamma * v));
        let b = mc_mean(form, bx, spec.mc_samples / 2, spec.seed ^ 0x9e37_79b9, |v| e(gamma * v));
        let vol = bx.volume_f64();
        (a * vol, (a + b) * 0.5 * vol)
    } else {
        let g = tensor_grid_for(form.n(), spec.grid_per_axis, spec.max_points);
        (
            tensor_integral(form, bx, gamma, g),
            tensor_integral(form, bx, gamma, 2 * g),
        )
    };
    let error = (fine - coarse).norm();
    if error > spec.tolerance {
        return Err(Error::Quadrature(format!(
            "I(gamma = {gamma}) changed by {error:.3e} under refinement"
        )));
    }
    Ok(IntegralValue {
        re: fine.re,
        im: fine.im,
        error,
    })
}

fn mc_mean<F>(form: &IntegerForm, bx: &LatticeBox, samples: u64, seed: u64, f: F) -> Complex64
where
    F: Fn(f64) -> Complex64 + Sync,
{
    const STREAMS: u64 = 64;
    let bounds = bx.bounds_f64();
    let per = samples.div_ceil(STREAMS);
    // each stream has its own generator; partial sums merge in stream order
    let parts: Vec<Complex64> = (0..STREAMS)
        .into_par_iter()
        .map(|sid| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(sid);
            let mut pt = vec![0.0; bounds.len()];
            let mut acc = Complex64::new(0.0, 0.0);
            for _ in 0..per {
                for (x, &(a, b)) in pt.iter_mut().zip(&bounds) {
                    *x = a + (b - a) * rng.gen::<f64>();
                }
                acc += f(form.evaluate_f64(&pt));
            }
            acc
        })
        .collect();
    parts.iter().sum::<Complex64>() / (per * STREAMS) as f64
}

/// `I(k h)` for `k = 0..=steps`, by the power recurrence over grid points.
pub struct GammaSweep {
    pub step: f64,
    pub values: Vec<Complex64>,
}

/// Point cloud `(phase, weight)` whose weighted sum of `e(gamma phase)`
/// reproduces the quadrature for `I`.
fn weighted_sum_sweep(points: &[(f64, f64)], step: f64, steps: usize) -> Vec<Complex64> {
    let chunk = points.len().div_ceil(256).max(1);
    let parts: Vec<Vec<Complex64>> = points
        .par_chunks(chunk)
        .map(|pts| {
            let mut out = vec![Complex64::new(0.0, 0.0); steps + 1];
            for &(phi, w) in pts {
                let r = e(step * phi);
                let mut z = Complex64::new(w, 0.0);
                for (k, o) in out.iter_mut().enumerate() {
                    if k % REANCHOR == 0 && k > 0 {
                        z = e(k as f64 * step * phi) * w;
                    }
                    *o += z;
                    z *= r;
                }
            }
            out
        })
        .collect();
    let mut out = vec![Complex64::new(0.0, 0.0); steps + 1];
    for p in parts {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    out
}

pub fn gamma_sweep(form: &IntegerForm, bx: &LatticeBox, step: f64, steps: usize, spec: &QuadratureSpec) -> Result<GammaSweep> {
    check_dims(form, bx)?;
    let bounds = bx.bounds_f64();
    let values = if let Some(coeffs) = form.diagonal_coefficients() {
        let g = spec.grid_per_axis.max(DIAGONAL_MIN_GRID);
        let d = form.degree() as i32;
        let mut axis_cache: HashMap<(u64, u64, i64), Vec<Complex64>> = HashMap::new();
        let mut prod = vec![Complex64::new(1.0, 0.0); steps + 1];
        for (&(a, b), &c) in bounds.iter().zip(&coeffs) {
            let key = (a.to_bits(), b.to_bits(), c);
            let axis = axis_cache.entry(key).or_insert_with(|| {
                let h = (b - a) / g as f64;
                let pts: Vec<(f64, f64)> = midpoints(a, b, g).map(|t| (c as f64 * t.powi(d), h)).collect();
                weighted_sum_sweep(&pts, step, steps)
            });
            for (p, v) in prod.iter_mut().zip(axis.iter()) {
                *p *= v;
            }
        }
        prod
    } else {
        let n = form.n();
        let g = tensor_grid_for(n, spec.grid_per_axis, spec.max_points / 8);
        let total = g.pow(n as u32);
        if (total as u64).saturating_mul(steps as u64) > 40_000_000_000 {
            return Err(Error::BudgetExceeded {
                needed: total as f64 * steps as f64,
                budget: 40_000_000_000,
            });
        }
        let cell: f64 = bounds.iter().map(|(a, b)| (b - a) / g as f64).product();
        let mut pts = Vec::with_capacity(total);
        let mut idx = vec![0usize; n];
        let mut pt = vec![0.0; n];
        for _ in 0..total {
            for j in 0..n {
                let (a, b) = bounds[j];
                pt[j] = a + (idx[j] as f64 + 0.5) * (b - a) / g as f64;
            }
            pts.push((form.evaluate_f64(&pt), cell));
            for j in 0..n {
                idx[j] += 1;
                if idx[j] < g {
                    break;
                }
                idx[j] = 0;
            }
        }
        weighted_sum_sweep(&pts, step, steps)
    };
    Ok(GammaSweep { step, values })
}

/// Trapezoid sum over `[-K h, K h]` of `I(gamma) w(gamma)` using
/// `I(-gamma) = conj I(gamma)`; `w(-gamma)` must equal `conj w(gamma)`.
fn symmetric_trapezoid(sweep: &GammaSweep, k_max: usize, w: impl Fn(usize) -> Complex64) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for k in 0..=k_max {
        let term = sweep.values[k] * w(k);
        let weight = if k == k_max { 0.5 } else { 1.0 };
        if k == 0 {
            acc += term;
        } else {
            acc += (term + term.conj()) * weight;
        }
    }
    acc * sweep.step
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JValue {
    pub mu: f64,
    pub value: f64,
    pub imag_residue: f64,
    /// `|J(G) - J(2G)|`, the truncation self-check.
    pub truncation_delta: f64,
}

/// `J(mu) = int_{-G}^{G} I(gamma) e(-gamma mu) d gamma`, validated against
/// the cutoff `2G`.
pub fn singular_j(form: &IntegerForm, bx: &LatticeBox, mu: f64, spec: &QuadratureSpec) -> Result<JValue> {
    spec.validate()?;
    let k = spec.steps(spec.gamma_cutoff);
    let sweep = gamma_sweep(form, bx, spec.gamma_step, 2 * k, spec)?;
    let w = |j: usize| e(-(j as f64) * spec.gamma_step * mu);
    let a = symmetric_trapezoid(&sweep, k, w);
    let b = symmetric_trapezoid(&sweep, 2 * k, w);
    let delta = (a.re - b.re).abs();
    if delta > spec.tolerance {
        return Err(Error::Quadrature(format!(
            "J({mu}) moved by {delta:.3e} when the cutoff doubled"
        )));
    }
    Ok(JValue {
        mu,
        value: b.re,
        imag_residue: b.im.abs(),
        truncation_delta: delta,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RealDensity {
    pub value: f64,
    pub error: f64,
    pub grid_per_axis: usize,
    pub method: String,
}

fn lower_shell(p: f64, d: u32) -> f64 {
    p.powi(-(d as i32))
}

/// Midpoint sum of `w(f(t))` over a `g^n` grid, accumulated per slab of
/// the first axis and merged in slab order.
fn grid_sum(form: &IntegerForm, bx: &LatticeBox, g: usize, w: &(dyn Fn(f64) -> f64 + Sync)) -> f64 {
    let bounds = bx.bounds_f64();
    let n = form.n();
    let cell: f64 = bounds.iter().map(|(a, b)| (b - a) / g as f64).product();
    let diag = form.diagonal_coefficients();
    let d = form.degree() as i32;
    let axis_vals: Vec<Vec<f64>> = bounds
        .iter()
        .enumerate()
        .map(|(j, &(a, b))| {
            midpoints(a, b, g)
                .map(|t| match &diag {
                    Some(c) => c[j] as f64 * t.powi(d),
                    None => t,
                })
                .collect()
        })
        .collect();
    let parts: Vec<f64> = (0..g)
        .into_par_iter()
        .map(|i0| {
            let mut idx = vec![0usize; n];
            idx[0] = i0;
            let mut pt = vec![0.0; n];
            let mut acc = 0.0;
            loop {
                let v = match &diag {
                    Some(_) => (0..n).map(|j| axis_vals[j][idx[j]]).sum(),
                    None => {
                        for j in 0..n {
                            pt[j] = axis_vals[j][idx[j]];
                        }
                        form.evaluate_f64(&pt)
                    }
                };
                acc += w(v);
                let mut j = 1;
                while j < n {
                    idx[j] += 1;
                    if idx[j] < g {
                        break;
                    }
                    idx[j] = 0;
                    j += 1;
                }
                if j >= n {
                    break;
                }
            }
            acc
        })
        .collect();
    parts.iter().sum::<f64>() * cell
}

/// `int_{t in B, s f(t) > P^{-d}} omega(P^d s f(t)) dt`.
pub fn real_density(
    form: &IntegerForm,
    bx: &LatticeBox,
    omega: Omega,
    p: f64,
    s: i8,
    spec: &QuadratureSpec,
) -> Result<RealDensity> {
    spec.validate()?;
    check_dims(form, bx)?;
    if s != 1 && s != -1 {
        return Err(Error::InvalidArgument("s must be +1 or -1".into()));
    }
    let d = form.degree();
    let shell = lower_shell(p, d);
    let scale = p.powi(d as i32);
    let sf = s as f64;
    let w = move |v: f64| {
        let sv = sf * v;
        if sv > shell {
            omega.eval(scale * sv)
        } else {
            0.0
        }
    };
    let n = form.n();
    if n >= 6 {
        let half = spec.mc_samples / 2;
        let a = mc_mean(form, bx, half, spec.seed, |v| Complex64::new(w(v), 0.0)).re;
        let b = mc_mean(form, bx, half, spec.seed ^ 0x9e37_79b9, |v| Complex64::new(w(v), 0.0)).re;
        let vol = bx.volume_f64();
        return Ok(RealDensity {
            value: 0.5 * (a + b) * vol,
            error: (a - b).abs() * vol,
            grid_per_axis: 0,
            method: "monte_carlo".into(),
        });
    }
    let g = tensor_grid_for(n, spec.grid_per_axis, spec.max_points);
    let coarse = grid_sum(form, bx, g, &w);
    let fine = grid_sum(form, bx, 2 * g, &w);
    let error = (fine - coarse).abs();
    let rel = error / fine.abs().max(1e-300);
    if error > spec.tolerance && rel > spec.tolerance {
        return Err(Error::Quadrature(format!(
            "real density changed by {error:.3e} under refinement"
        )));
    }
    Ok(RealDensity {
        value: fine,
        error,
        grid_per_axis: 2 * g,
        method: "midpoint".into(),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DarksunReport {
    pub omega: String,
    pub p: f64,
    pub s: i8,
    pub lhs: f64,
    pub lhs_error: f64,
    pub rhs: f64,
    /// Right side with the cutoff doubled.
    pub rhs_doubled: f64,
    pub difference: f64,
    pub pass: bool,
}

/// Both sides of
/// `int_{sf > P^{-d}} omega(P^d s f) dt
///   = int I(gamma) int_{P^{-d}}^{b} omega(P^d mu) e(-s gamma mu) d mu d gamma`.
pub fn darksun_check(
    form: &IntegerForm,
    bx: &LatticeBox,
    omega: Omega,
    p: f64,
    s: i8,
    spec: &QuadratureSpec,
) -> Result<DarksunReport> {
    spec.validate()?;
    check_dims(form, bx)?;
    if !form.is_diagonal() && form.n() > 3 {
        return Err(Error::BudgetExceeded {
            needed: (spec.grid_per_axis as f64).powi(form.n() as i32),
            budget: spec.max_points,
        });
    }
    let d = form.degree();
    let lo = lower_shell(p, d);
    let b = crate::forms::compute_bound_b(form, bx, 2)?
        .b_upper_u64()
        .ok_or_else(|| Error::Overflow("b_upper".into()))? as f64;

    // left side on a fine grid (about 2^24 points for the finer grid)
    let n = form.n();
    let lhs_spec = QuadratureSpec {
        grid_per_axis: ((1u64 << 23) as f64).powf(1.0 / n as f64) as usize,
        max_points: 1 << 26,
        tolerance: f64::INFINITY,
        ..spec.clone()
    };
    let lhs = real_density(form, bx, omega, p, s, &lhs_spec)?;

    let k = spec.steps(spec.gamma_cutoff);
    let h = spec.gamma_step;
    let sweep = gamma_sweep(form, bx, h, 2 * k, spec)?;

    // Omega(gamma_j) = int_lo^b omega(P^d mu) e(-s gamma_j mu) d mu, Simpson
    let span = b - lo;
    let mut m = (16.0 * 2.0 * spec.gamma_cutoff * span).ceil() as usize;
    m = m.max(4096);
    m += m % 2;
    let hm = span / m as f64;
    let scale = p.powi(d as i32);
    let nodes: Vec<(f64, f64)> = (0..=m)
        .map(|i| {
            let mu = lo + i as f64 * hm;
            let wt = if i == 0 || i == m {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            (-(s as f64) * mu, wt * hm / 3.0 * omega.eval(scale * mu))
        })
        .collect();
    let omega_hat = weighted_sum_sweep(&nodes, h, 2 * k);
    let rhs_a = symmetric_trapezoid(&sweep, k, |j| omega_hat[j]).re;
    let rhs_b = symmetric_trapezoid(&sweep, 2 * k, |j| omega_hat[j]).re;
    let difference = (lhs.value - rhs_b).abs();
    Ok(DarksunReport {
        omega: omega.name(),
        p,
        s,
        lhs: lhs.value,
        lhs_error: lhs.error,
        rhs: rhs_a,
        rhs_doubled: rhs_b,
        difference,
        pass: difference <= 10.0 * spec.tolerance && (rhs_a - rhs_b).abs() <= 10.0 * spec.tolerance,
    })
}
