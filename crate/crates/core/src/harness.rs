//! Experiment recipes: exact lattice sums against assembled main terms
//! (real density times a product of local factors), plus the identity suites
//! the command line exposes.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::time::Instant;

use num_bigint::BigInt;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::arith;
use crate::cramer::{self, Schedule, WzPlan};
use crate::enumerate::{self, SweepOptions};
use crate::error::{Error, Result};
use crate::forms::{IntegerForm, LatticeBox};
use crate::kernels::{self, Kernel};
use crate::localdensity::{self, ApModel, HistogramStore, Uniform};
use crate::shiftedconv;
use crate::singularintegral::{self, Omega, QuadratureSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theorem {
    Hasse,
    Chowla,
    Modular,
    Divisor,
    KthPower,
    MFull,
    Pow2,
    Pieropan,
    Convolution,
}

impl Theorem {
    pub fn name(&self) -> &'static str {
        match self {
            Theorem::Hasse => "hasse",
            Theorem::Chowla => "chowla",
            Theorem::Modular => "modular",
            Theorem::Divisor => "divisor",
            Theorem::KthPower => "kth_power",
            Theorem::MFull => "m_full",
            Theorem::Pow2 => "pow2",
            Theorem::Pieropan => "pieropan",
            Theorem::Convolution => "convolution",
        }
    }

    /// Pass/fail counts toward the exit status; the others report a trend.
    pub fn gated(&self) -> bool {
        !matches!(self, Theorem::Modular | Theorem::Pow2)
    }

    fn default_tolerance(&self) -> f64 {
        match self {
            Theorem::Hasse | Theorem::Divisor => 0.1,
            Theorem::Chowla | Theorem::Modular => 0.05,
            Theorem::KthPower | Theorem::MFull | Theorem::Pieropan => 0.15,
            Theorem::Pow2 => 0.2,
            Theorem::Convolution => 0.03,
        }
    }

    fn default_schedule(&self) -> Schedule {
        match self {
            Theorem::Hasse | Theorem::Pow2 => Schedule::PlusOne,
            _ => Schedule::Floor,
        }
    }

    fn default_z(&self) -> f64 {
        match self {
            Theorem::Pow2 => 13.0,
            _ => 23.0,
        }
    }
}

/// Which lattice total the verdict reads. Both are always reported.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Every point of `Z^n cap P B` counts once.
    Closed,
    /// Points on a lattice-aligned face count `1/2` per face.
    #[default]
    Trapezoid,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub name: Option<String>,
    pub theorem: Theorem,
    #[serde(default)]
    pub form: String,
    /// Per-axis `[lo, hi]`; the unit cube when absent.
    #[serde(default, rename = "box")]
    pub bx: Option<Vec<(f64, f64)>>,
    #[serde(default)]
    pub p_list: Vec<u64>,
    #[serde(default)]
    pub k: Option<u32>,
    #[serde(default)]
    pub m: Option<u32>,
    /// Set `A` for the generic driver.
    #[serde(default)]
    pub set: Option<String>,
    /// Equidistribution model (a kernel name or `uniform`) for the generic driver.
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub schedule: Option<Schedule>,
    #[serde(default)]
    pub z: Option<f64>,
    #[serde(default)]
    pub quadrature: QuadratureSpec,
    #[serde(default)]
    pub tolerance: Option<f64>,
    /// Defaults to closed for the cancellation recipes, trapezoid otherwise.
    #[serde(default)]
    pub boundary: Option<Boundary>,
    #[serde(default)]
    pub x_list: Vec<u64>,
    #[serde(default)]
    pub q: Option<u64>,
    #[serde(default)]
    pub a: Option<i64>,
    /// Range of the Delta table for the modular recipe.
    #[serde(default)]
    pub x_max: Option<u64>,
    #[serde(default)]
    pub slabs: usize,
    /// Lattice points one sweep may visit.
    #[serde(default)]
    pub budget: Option<u64>,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("{e}")))
    }

    /// JSON for `.json` files, TOML otherwise.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let parsed = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json(&text),
            _ => Self::from_toml(&text),
        };
        parsed.map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn tolerance(&self) -> f64 {
        self.tolerance.unwrap_or_else(|| self.theorem.default_tolerance())
    }

    fn schedule(&self) -> Schedule {
        self.schedule.unwrap_or_else(|| self.theorem.default_schedule())
    }

    fn z(&self) -> f64 {
        self.z.unwrap_or_else(|| self.theorem.default_z())
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary.unwrap_or(match self.theorem {
            Theorem::Chowla | Theorem::Modular | Theorem::Convolution => Boundary::Closed,
            _ => Boundary::Trapezoid,
        })
    }

    fn plan(&self) -> Result<WzPlan> {
        cramer::plan_for(self.schedule(), self.z())
    }

    fn form(&self) -> Result<IntegerForm> {
        if self.form.trim().is_empty() {
            return Err(Error::Config("`form` is required".into()));
        }
        IntegerForm::parse(&self.form)
    }

    fn lattice_box(&self, n: usize) -> Result<LatticeBox> {
        let bx = match &self.bx {
            None => LatticeBox::unit(n),
            Some(pairs) => LatticeBox::from_f64_pairs(pairs)?,
        };
        if bx.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: bx.dim(),
            });
        }
        Ok(bx)
    }

    fn p_list(&self) -> Result<Vec<u64>> {
        let mut ps = self.p_list.clone();
        if ps.is_empty() || ps.contains(&0) {
            return Err(Error::Config("`p_list` needs at least one positive P".into()));
        }
        ps.sort_unstable();
        ps.dedup();
        Ok(ps)
    }

    fn sweep_options(&self) -> SweepOptions {
        let mut opts = SweepOptions {
            slabs: self.slabs,
            ..Default::default()
        };
        if let Some(b) = self.budget {
            opts.budget = b as u128;
        }
        opts
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    /// `P`, or `x` for the convolution recipe.
    pub p: u64,
    /// Exact totals as reduced fractions.
    pub exact_closed: String,
    pub exact_trapezoid: String,
    pub closed: f64,
    pub trapezoid: f64,
    pub real_density: f64,
    pub predicted: f64,
    pub ratio_closed: Option<f64>,
    pub ratio_trapezoid: Option<f64>,
    /// Ratio for the selected boundary; `None` when the prediction is 0.
    pub ratio: Option<f64>,
    /// Selected total over the theorem's normalization.
    pub normalized: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LocalRow {
    pub p: u64,
    pub m: u32,
    pub value: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub alternates: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub omega: String,
    pub model: String,
    pub sigma: f64,
    /// Other assemblies of the arithmetic factor, by label.
    pub alternates: BTreeMap<String, f64>,
    pub local_factors: Vec<LocalRow>,
    pub z: f64,
    pub schedule: Option<Schedule>,
    pub w: String,
    /// Heuristic factor for primes above `z`, already inside `sigma`.
    pub tail: f64,
    pub normalization: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub pass: bool,
    /// Whether the verdict counts toward the exit status.
    pub gated: bool,
    pub tolerance: f64,
    pub statistic: f64,
    pub trend: Vec<f64>,
    pub monotone: bool,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub theorem: Theorem,
    pub form: String,
    pub lattice_box: Vec<(f64, f64)>,
    pub boundary: Boundary,
    pub rows: Vec<ReportRow>,
    pub prediction: Prediction,
    pub verdict: Verdict,
    pub caveats: Vec<String>,
    pub diagnostics: BTreeMap<String, Value>,
}

impl ExperimentReport {
    /// Deterministic JSON; wall times live in [`Timing`].
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from(
            "p,exact_closed,exact_trapezoid,closed,trapezoid,real_density,predicted,ratio_closed,ratio_trapezoid,ratio,normalized\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.p,
                r.exact_closed,
                r.exact_trapezoid,
                r.closed,
                r.trapezoid,
                r.real_density,
                r.predicted,
                opt(r.ratio_closed),
                opt(r.ratio_trapezoid),
                opt(r.ratio),
                r.normalized
            ));
        }
        out
    }
}

/// Wall times, kept apart so reports stay byte-identical between runs.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Timing {
    pub rows: Vec<(u64, f64)>,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub timing: Timing,
}

/// Exact total over one box with both boundary conventions.
#[derive(Clone, Debug, PartialEq)]
struct Exact {
    closed: BigRational,
    trapezoid: BigRational,
}

impl Exact {
    fn zero() -> Self {
        Self {
            closed: BigRational::from_integer(0.into()),
            trapezoid: BigRational::from_integer(0.into()),
        }
    }

    fn from_sweep(r: &enumerate::SweepResult, n: usize) -> Self {
        let scale = BigInt::from(r.scale);
        Self {
            closed: BigRational::new(BigInt::from(r.total_scaled), scale.clone()),
            trapezoid: BigRational::new(BigInt::from(r.trapezoid_scaled), scale << n),
        }
    }

    fn from_count(c: &enumerate::CountResult, n: usize) -> Self {
        Self {
            closed: BigRational::from_integer(BigInt::from(c.count)),
            trapezoid: BigRational::new(BigInt::from(c.weighted), BigInt::from(1u8) << n),
        }
    }

    fn add(&self, o: &Exact) -> Self {
        Self {
            closed: &self.closed + &o.closed,
            trapezoid: &self.trapezoid + &o.trapezoid,
        }
    }
}

fn f64_of(r: &BigRational) -> f64 {
    localdensity::rational_to_f64(r)
}

fn ratio_of(exact: f64, predicted: f64) -> Option<f64> {
    (predicted != 0.0).then(|| exact / predicted)
}

fn make_row(p: u64, exact: &Exact, rd: f64, predicted: f64, norm: f64, boundary: Boundary) -> ReportRow {
    let closed = f64_of(&exact.closed);
    let trapezoid = f64_of(&exact.trapezoid);
    let selected = match boundary {
        Boundary::Closed => closed,
        Boundary::Trapezoid => trapezoid,
    };
    ReportRow {
        p,
        exact_closed: exact.closed.to_string(),
        exact_trapezoid: exact.trapezoid.to_string(),
        closed,
        trapezoid,
        real_density: rd,
        predicted,
        ratio_closed: ratio_of(closed, predicted),
        ratio_trapezoid: ratio_of(trapezoid, predicted),
        ratio: ratio_of(selected, predicted),
        normalized: if norm != 0.0 { selected / norm } else { f64::NAN },
        extra: BTreeMap::new(),
    }
}

/// Ratio at the largest `P` within `tol` of 1, optionally also closer to 1
/// than at the smallest `P`.
fn ratio_verdict(rows: &[ReportRow], tol: f64, gated: bool, need_trend: bool) -> Verdict {
    let trend: Vec<f64> = rows.iter().map(|r| r.ratio.map_or(f64::NAN, |x| (x - 1.0).abs())).collect();
    let monotone = trend.windows(2).all(|w| w[1] <= w[0]);
    let last = rows.last().and_then(|r| r.ratio);
    let all_zero = rows.iter().all(|r| r.predicted == 0.0 && r.closed == 0.0 && r.trapezoid == 0.0);
    let (pass, statistic, note) = match last {
        Some(r) => {
            let within = (r - 1.0).abs() <= tol;
            let closer = trend.len() < 2 || trend[trend.len() - 1] <= trend[0];
            let pass = within && (!need_trend || closer);
            let note = if need_trend {
                format!("|ratio - 1| <= {tol} at the largest P and no larger than at the smallest P")
            } else {
                format!("|ratio - 1| <= {tol} at the largest P")
            };
            (pass, r, note)
        }
        None if all_zero => (true, f64::NAN, "prediction and exact sum both vanish".into()),
        None => (false, f64::NAN, "prediction vanishes but the exact sum does not".into()),
    };
    Verdict {
        pass,
        gated,
        tolerance: tol,
        statistic,
        trend,
        monotone,
        note,
    }
}

/// `|normalized|` at the largest `P` within `tol`, non-increasing along `P`.
fn cancellation_verdict(rows: &[ReportRow], tol: f64, gated: bool) -> Verdict {
    let trend: Vec<f64> = rows.iter().map(|r| r.normalized.abs()).collect();
    let monotone = trend.windows(2).all(|w| w[1] <= w[0]);
    let statistic = trend.last().copied().unwrap_or(0.0);
    Verdict {
        pass: statistic <= tol && monotone,
        gated,
        tolerance: tol,
        statistic,
        trend,
        monotone,
        note: format!("|P^-n sum| <= {tol} at the largest P and non-increasing in P"),
    }
}

/// Fraction of midpoints of a coarse grid where `f > 0`.
pub fn positivity_fraction(form: &IntegerForm, bx: &LatticeBox) -> (f64, u64) {
    let n = form.n();
    let g = ((200_000f64).powf(1.0 / n as f64).floor() as usize).max(2);
    let bounds = bx.bounds_f64();
    let mut idx = vec![0usize; n];
    let mut pt = vec![0.0; n];
    let (mut pos, mut total) = (0u64, 0u64);
    loop {
        for j in 0..n {
            let (a, b) = bounds[j];
            pt[j] = a + (idx[j] as f64 + 0.5) * (b - a) / g as f64;
        }
        if form.evaluate_f64(&pt) > 0.0 {
            pos += 1;
        }
        total += 1;
        let mut j = 0;
        while j < n {
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
    (pos as f64 / total as f64, total)
}

struct Setup {
    form: IntegerForm,
    bx: LatticeBox,
    ps: Vec<u64>,
    caveats: Vec<String>,
    diagnostics: BTreeMap<String, Value>,
}

fn setup(spec: &ExperimentSpec, need_positive: bool) -> Result<Setup> {
    let form = spec.form()?;
    if !form.admissible() {
        return Err(Error::Inadmissible {
            n: form.n(),
            d: form.degree(),
            bound: crate::forms::admissibility_bound(form.degree()).min(u64::MAX as u128) as u64,
        });
    }
    let bx = spec.lattice_box(form.n())?;
    let ps = spec.p_list()?;
    let mut caveats = Vec::new();
    let mut diagnostics = BTreeMap::new();
    let screen = form.smoothness_screen(1 << 20);
    if !screen.looks_smooth() {
        caveats.push("smoothness screen found a singular point mod a small prime".into());
    }
    let (frac, samples) = positivity_fraction(&form, &bx);
    diagnostics.insert("positive_fraction".into(), json!(frac));
    if need_positive && frac < 1.0 {
        caveats.push(format!(
            "f is not positive on all of B: {:.4} of {samples} sampled midpoints are positive; sampling cannot rule out sign changes between samples",
            frac
        ));
    } else if need_positive {
        caveats.push(format!(
            "positivity of f on B checked on {samples} midpoints only"
        ));
    }
    Ok(Setup {
        form,
        bx,
        ps,
        caveats,
        diagnostics,
    })
}

fn finish(
    spec: &ExperimentSpec,
    st: Setup,
    rows: Vec<ReportRow>,
    prediction: Prediction,
    verdict: Verdict,
    timing: Timing,
) -> ExperimentOutcome {
    ExperimentOutcome {
        report: ExperimentReport {
            name: spec.name.clone().unwrap_or_else(|| spec.theorem.name().to_string()),
            theorem: spec.theorem,
            form: st.form.canonical(),
            lattice_box: st.bx.bounds_f64(),
            boundary: spec.boundary(),
            rows,
            prediction,
            verdict,
            caveats: st.caveats,
            diagnostics: st.diagnostics,
        },
        timing,
    }
}

fn sweep_exact(spec: &ExperimentSpec, st: &Setup, p: u64, kernel: &Kernel, signs: &[i8]) -> Result<Exact> {
    let mut total = Exact::zero();
    for &s in signs {
        let r = enumerate::lattice_sweep_with(&st.form, &st.bx, p, kernel, s, &spec.sweep_options())?;
        total = total.add(&Exact::from_sweep(&r, st.form.n()));
    }
    Ok(total)
}

fn z_sequence(z: f64) -> Vec<f64> {
    let mut out: Vec<f64> = [0.25, 0.5, 0.75, 1.0].iter().map(|f| f * z).filter(|&x| x >= 2.0).collect();
    out.dedup();
    if out.is_empty() {
        out.push(z);
    }
    out
}

/// Product over primes above `z` of `1 - p^-2`.
pub fn two_squares_tail(z: f64) -> f64 {
    let head: f64 = arith::primes_up_to(z.floor() as u64)
        .into_iter()
        .map(|p| 1.0 - 1.0 / (p as f64 * p as f64))
        .product();
    6.0 / (PI * PI) / head
}

/// `sigma_p(f) = sum_nu eta(nu) eta(nu + 1) counts(nu) / p^{m(n+2)}`, and the
/// same sum without `nu = 0 mod p^m`.
pub fn hasse_local_factor(form: &IntegerForm, p: u64, m: u32, store: &HistogramStore) -> Result<(f64, f64)> {
    let pm = p.pow(m);
    let h = store.get(form, pm)?;
    let eta = shiftedconv::eta_table(pm)?.values;
    let n = form.n() as u64;
    let (mut full, mut cut) = (BigInt::from(0u8), BigInt::from(0u8));
    for (nu, &c) in h.counts().iter().enumerate() {
        if c == 0 {
            continue;
        }
        let term = BigInt::from(c) * BigInt::from(eta[nu]) * BigInt::from(eta[(nu + 1) % pm as usize]);
        if nu != 0 {
            cut += &term;
        }
        full += term;
    }
    let den = BigInt::from(pm).pow((n + 2) as u32);
    Ok((
        f64_of(&BigRational::new(full, den.clone())),
        f64_of(&BigRational::new(cut, den)),
    ))
}

pub fn run_hasse(spec: &ExperimentSpec, store: &HistogramStore) -> Result<ExperimentOutcome> {
    let start = Instant::now();
    let mut st = setup(spec, false)?;
    let plan = spec.plan()?;
    let kernel = Kernel::two_squares_shifted();
    let omega = kernel.omega();

    let mut locals = Vec::new();
    let (mut prod_full, mut prod_cut) = (1.0, 1.0);
    for (p, m, _) in plan.prime_powers() {
        let (full, cut) = hasse_local_factor(&st.form, p, m, store)?;
        prod_full *= full;
        prod_cut *= cut;
        locals.push(LocalRow {
            p,
            m,
            value: full,
            alternates: BTreeMap::from([("without_high_powers".to_string(), cut)]),
        });
    }
    let tail = two_squares_tail(plan.z);
    let sigma = prod_full * tail;
    let sigma_cut = prod_cut * tail;
    let via_rho = localdensity::sigma_for_plan(&st.form, &kernel, 1, &plan, store)?;
    let consistency = (via_rho - sigma_cut).abs() / sigma_cut.abs().max(1e-300);
    st.diagnostics.insert("rho_route_sigma".into(), json!(via_rho));
    st.diagnostics.insert("rho_route_relative_difference".into(), json!(consistency));

    let n = st.form.n();
    let mut rows = Vec::new();
    let mut timing = Timing::default();
    for &p in &st.ps {
        let t0 = Instant::now();
        let exact = sweep_exact(spec, &st, p, &kernel, &[1])?;
        let rd = singularintegral::real_density(&st.form, &st.bx, omega, p as f64, 1, &spec.quadrature)?.value;
        let pn = (p as f64).powi(n as i32);
        let predicted = sigma * pn * rd;
        let mut row = make_row(p, &exact, rd, predicted, pn, spec.boundary());
        if let Some(cut) = hasse_cutoff_sum(&st, p, &kernel, &plan)? {
            let pred_cut = sigma_cut * pn * rd;
            row.extra.insert("closed_without_high_powers".into(), cut.0);
            row.extra.insert("trapezoid_without_high_powers".into(), cut.1);
            if pred_cut != 0.0 {
                let sel = if spec.boundary() == Boundary::Closed { cut.0 } else { cut.1 };
                row.extra.insert("ratio_without_high_powers".into(), sel / pred_cut);
            }
        }
        rows.push(row);
        timing.rows.push((p, t0.elapsed().as_secs_f64()));
    }
    let verdict = ratio_verdict(&rows, spec.tolerance(), true, true);
    let prediction = Prediction {
        omega: omega.name(),
        model: kernel.name(),
        sigma,
        alternates: BTreeMap::from([
            ("without_high_powers".to_string(), sigma_cut),
            ("rho_route".to_string(), via_rho),
            ("truncated_product".to_string(), prod_full),
        ]),
        local_factors: locals,
        z: plan.z,
        schedule: Some(plan.schedule),
        w: plan.w.to_string(),
        tail,
        normalization: "P^n".into(),
    };
    timing.total = start.elapsed().as_secs_f64();
    Ok(finish(spec, st, rows, prediction, verdict, timing))
}

/// Exact sum restricted to values with `v_p(f) < m_p` for every `p <= z`,
/// available through the value census (diagonal forms).
fn hasse_cutoff_sum(st: &Setup, p: u64, kernel: &Kernel, plan: &WzPlan) -> Result<Option<(f64, f64)>> {
    if !st.form.is_diagonal() {
        return Ok(None);
    }
    let census = match enumerate::value_census(&st.form, &st.bx, p) {
        Ok(c) => c,
        Err(Error::BudgetExceeded { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let pms: Vec<i128> = plan.prime_powers().iter().map(|x| x.2 as i128).collect();
    let (mut closed, mut weighted) = (0i128, 0i128);
    for (v, c, w) in census.iter() {
        if v <= 0 || pms.iter().any(|&q| v % q == 0) {
            continue;
        }
        let k = kernel.eval_exact(v as u64)? as i128;
        closed += k * c as i128;
        weighted += k * w as i128;
    }
    let scale = kernel.scale() as f64;
    Ok(Some((
        closed as f64 / scale,
        weighted as f64 / scale / (1u128 << st.form.n()) as f64,
    )))
}

fn run_cancellation(spec: &ExperimentSpec, kernel: Kernel) -> Result<ExperimentOutcome> {
    let start = Instant::now();
    let st = setup(spec, false)?;
    let n = st.form.n();
    let mut rows = Vec::new();
    let mut timing = Timing::default();
    for &p in &st.ps {
        let t0 = Instant::now();
        let exact = sweep_exact(spec, &st, p, &kernel, &[1, -1])?;
        let pn = (p as f64).powi(n as i32);
        rows.push(make_row(p, &exact, 0.0, 0.0, pn, spec.boundary()));
        timing.rows.push((p, t0.elapsed().as_secs_f64()));
    }
    let verdict = cancellation_verdict(&rows, spec.tolerance(), spec.theorem.gated());
    let prediction = Prediction {
        omega: kernel.omega().name(),
        model: format!("{} (rho = 0)", kernel.name()),
        sigma: 0.0,
        normalization: "P^n".into(),
        ..Default::default()
    };
    timing.total = start.elapsed().as_secs_f64();
    Ok(finish(spec, st, rows, prediction, verdict, timing))
}

pub fn run_chowla(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    run_cancellation(spec, Kernel::moebius())
}

pub fn run_modular(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    let kernel = Kernel::delta_eigenvalues(spec.x_max.unwrap_or(kernels::DELTA_DEFAULT_MAX))?;
    run_cancellation(spec, kernel)
}

pub fn run_divisor(spec: &ExperimentSpec, store: &HistogramStore) -> Result<ExperimentOutcome> {
    let start = Instant::now();
    let mut st = setup(spec, true)?;
    let plan = spec.plan()?;
    let kernel = Kernel::divisor();
    let d = st.form.degree() as f64;
    let n = st.form.n();

    let mut locals = Vec::new();
    let (mut sigma_tau, mut sigma_full) = (1.0, 1.0);
    let mut chain_pass = true;
    for (p, m, _) in plan.prime_powers() {
        let chain = localdensity::divisor_identity_chain(&st.form, p, m, store)?;
        chain_pass &= chain.pass;
        let tau = f64_of(&chain.tau_part);
        let full = f64_of(&chain.divisor_form);
        sigma_tau *= tau;
        sigma_full *= full;
        locals.push(LocalRow {
            p,
            m,
            value: tau,
            alternates: BTreeMap::from([("with_gamma_term".to_string(), full)]),
        });
    }
    let via_rho = localdensity::sigma_for_plan(&st.form, &kernel, 1, &plan, store)?;
    st.diagnostics.insert("identity_chain_pass".into(), json!(chain_pass));
    st.diagnostics.insert(
        "rho_route_relative_difference".into(),
        json!((via_rho - sigma_full).abs() / sigma_full.abs().max(1e-300)),
    );
    if !chain_pass {
        return Err(Error::Precondition("divisor identity chain failed".into()));
    }

    let mut rows = Vec::new();
    let mut timing = Timing::default();
    let one = Omega::Constant { value: 1.0 };
    for &p in &st.ps {
        let t0 = Instant::now();
        let exact = sweep_exact(spec, &st, p, &kernel, &[1])?;
        let vol = singularintegral::real_density(&st.form, &st.bx, one, p as f64, 1, &spec.quadrature)?.value;
        let logp = (p as f64).ln();
        let pn = (p as f64).powi(n as i32);
        let norm = pn * logp;
        let predicted = d * vol * sigma_tau * norm;
        let mut row = make_row(p, &exact, vol, predicted, norm, spec.boundary());
        let sel = if spec.boundary() == Boundary::Closed { row.closed } else { row.trapezoid };
        // the leading term with the full local factor, and the whole weighted
        // main term sigma P^n int log(P^d f)
        let lead_full = d * vol * sigma_full * norm;
        let weighted = singularintegral::real_density(&st.form, &st.bx, Omega::Log, p as f64, 1, &spec.quadrature)?.value;
        let main_full = sigma_full * pn * weighted;
        row.extra.insert("predicted_with_gamma_term".into(), lead_full);
        row.extra.insert("ratio_with_gamma_term".into(), sel / lead_full);
        row.extra.insert("predicted_weighted".into(), main_full);
        row.extra.insert("ratio_weighted".into(), sel / main_full);
        rows.push(row);
        timing.rows.push((p, t0.elapsed().as_secs_f64()));
    }
    let verdict = ratio_verdict(&rows, spec.tolerance(), true, false);
    let prediction = Prediction {
        omega: "d log P (leading)".into(),
        model: kernel.name(),
        sigma: sigma_tau,
        alternates: BTreeMap::from([
            ("with_gamma_term".to_string(), sigma_full),
            ("rho_route".to_string(), via_rho),
        ]),
        local_factors: locals,
        z: plan.z,
        schedule: Some(plan.schedule),
        w: plan.w.to_string(),
        tail: 1.0,
        normalization: "P^n log P".into(),
    };
    timing.total = start.elapsed().as_secs_f64();
    Ok(finish(spec, st, rows, prediction, verdict, timing))
}

/// Membership test for a named set of positive integers.
pub fn set_membership(name: &str) -> Result<Box<dyn Fn(i128) -> bool + Sync>> {
    let (head, arg) = match name.split_once(':') {
        Some((h, a)) => (h.trim(), Some(a.trim())),
        None => (name.trim(), None),
    };
    let int_arg = || -> Result<u32> {
        arg.and_then(|a| a.parse().ok())
            .filter(|&k| k >= 2)
            .ok_or_else(|| Error::InvalidArgument(format!("set `{name}` needs an integer parameter >= 2")))
    };
    Ok(match (head, arg) {
        ("kth_power", Some(_)) => {
            let k = int_arg()?;
            Box::new(move |v| v > 0 && kernels::is_kth_power(v as u64, k))
        }
        ("m_full", Some(_)) => {
            let m = int_arg()?;
            Box::new(move |v| v > 0 && kernels::is_m_full(v as u64, m))
        }
        ("pow2", None) => Box::new(|v| v > 0 && (v as u64).is_power_of_two()),
        ("positive", None) => Box::new(|v| v > 0),
        ("empty", None) => {
            return Err(Error::Precondition("the set A must be non-empty".into()));
        }
        _ => {
            return Err(Error::UnknownName {
                kind: "set",
                name: name.to_string(),
                valid: "kth_power:<k>, m_full:<m>, pow2, positive".into(),
            })
        }
    })
}

enum Model {
    Kernel(Kernel),
    Uniform,
}

impl Model {
    fn from_name(name: &str) -> Result<Self> {
        if name.trim() == "uniform" {
            Ok(Model::Uniform)
        } else {
            Kernel::from_name(name).map(Model::Kernel)
        }
    }

    fn ap(&self) -> &dyn ApModel {
        match self {
            Model::Kernel(k) => k,
            Model::Uniform => &Uniform,
        }
    }

    fn omega(&self) -> Omega {
        match self {
            Model::Kernel(k) => k.omega(),
            Model::Uniform => Omega::Constant { value: 1.0 },
        }
    }
}

/// `(P exponent, log P power)` of the normalization for a set.
fn set_normalization(name: &str, d: u32) -> (f64, bool, String) {
    let d = d as f64;
    let arg = name.split_once(':').and_then(|(_, a)| a.trim().parse::<f64>().ok());
    match (name.split(':').next().unwrap_or("").trim(), arg) {
        ("kth_power", Some(k)) | ("m_full", Some(k)) => (-d * (1.0 - 1.0 / k), false, format!("P^(n - {d}(1 - 1/{k}))")),
        ("pow2", _) => (-d, true, "P^(n - d) log P".into()),
        _ => (0.0, false, "P^n".into()),
    }
}

/// Generic driver: count of `t` with `f(t) in A` against
/// `sigma(rho) P^n int_B omega(P^d f)`.
fn run_indicator(
    spec: &ExperimentSpec,
    set: &str,
    model_name: &str,
    store: &HistogramStore,
) -> Result<ExperimentOutcome> {
    let start = Instant::now();
    let member = set_membership(set)?;
    let model = Model::from_name(model_name)?;
    let mut st = setup(spec, true)?;
    let plan = spec.plan()?;
    let n = st.form.n();
    let omega = model.omega();
    let zs = z_sequence(plan.z);
    let trace = localdensity::sigma_f_limit(&st.form, model.ap(), 1, plan.schedule, &zs, store)?;
    let sigma = trace.value;
    st.diagnostics.insert("sigma_trace".into(), serde_json::to_value(&trace)?);

    let mut locals = Vec::new();
    if model.ap().is_multiplicative() {
        for (p, m, _) in plan.prime_powers() {
            let single = cramer::plan_explicit(plan.z, BTreeMap::from([(p, m)]))?;
            let value = localdensity::sigma_for_plan(&st.form, model.ap(), 1, &single, store)?;
            locals.push(LocalRow {
                p,
                m,
                value,
                alternates: BTreeMap::new(),
            });
        }
    }
    if let Model::Kernel(k) = &model {
        if matches!(k.kind(), kernels::KernelKind::MFull { .. }) {
            st.caveats.push(format!(
                "m-full model uses a truncated tuple series; heuristic tail bound {:.3e}",
                k.m_full_tail_bound()
            ));
        }
    }

    let (p_exp, with_log, norm_label) = set_normalization(set, st.form.degree());
    let mut rows = Vec::new();
    let mut timing = Timing::default();
    for &p in &st.ps {
        let t0 = Instant::now();
        let count = enumerate::count_in_set_with(&st.form, &st.bx, p, &*member, &spec.sweep_options())?;
        let exact = Exact::from_count(&count, n);
        let rd = singularintegral::real_density(&st.form, &st.bx, omega, p as f64, 1, &spec.quadrature)?.value;
        let pf = p as f64;
        let predicted = sigma * pf.powi(n as i32) * rd;
        let norm = pf.powf(n as f64 + p_exp) * if with_log { pf.ln() } else { 1.0 };
        rows.push(make_row(p, &exact, rd, predicted, norm, spec.boundary()));
        timing.rows.push((p, t0.elapsed().as_secs_f64()));
    }
    let verdict = ratio_verdict(&rows, spec.tolerance(), spec.theorem.gated(), false);
    let prediction = Prediction {
        omega: omega.name(),
        model: model.ap().name(),
        sigma,
        alternates: BTreeMap::new(),
        local_factors: locals,
        z: plan.z,
        schedule: Some(plan.schedule),
        w: plan.w.to_string(),
        tail: 1.0,
        normalization: norm_label,
    };
    timing.total = start.elapsed().as_secs_f64();
    Ok(finish(spec, st, rows, prediction, verdict, timing))
}

fn need<T: Copy>(v: Option<T>, field: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("`{field}` is required for this theorem")))
}

pub fn run_kth_power(spec: &ExperimentSpec, store: &HistogramStore) -> Result<ExperimentOutcome> {
    let name = format!("kth_power:{}", need(spec.k, "k")?);
    run_indicator(spec, &name, &name, store)
}

pub fn run_m_full(spec: &ExperimentSpec, store: &HistogramStore) -> Result<ExperimentOutcome> {
    let name = format!("m_full:{}", need(spec.m, "m")?);
    run_indicator(spec, &name, &name, store)
}

pub fn run_pow2(spec: &ExperimentSpec, store: &HistogramStore) -> Result<ExperimentOutcome> {
    run_indicator(spec, "pow2", "pow2", store)
}

/// Any named set `A` with any model; `A = kth_power:k` with model
/// `kth_power:k` is the k-th power recipe.
pub fn run_pieropan(spec: &ExperimentSpec, store: &HistogramStore) -> Result<ExperimentOutcome> {
    let set = spec
        .set
        .as_deref()
        .ok_or_else(|| Error::Config("`set` is required for this theorem".into()))?;
    let model = spec.model.as_deref().unwrap_or(set);
    run_indicator(spec, set, model, store)
}

pub fn run_convolution(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    let start = Instant::now();
    let q = need(spec.q, "q")?;
    let a = need(spec.a, "a")? as i128;
    let mut xs = spec.x_list.clone();
    if xs.is_empty() {
        return Err(Error::Config("`x_list` needs at least one x".into()));
    }
    xs.sort_unstable();
    xs.dedup();
    let mut rows = Vec::new();
    let mut timing = Timing::default();
    for &x in &xs {
        let t0 = Instant::now();
        let exact = shiftedconv::shifted_exact(x, q, a)?;
        let main = shiftedconv::shifted_main_term(x as f64, q, a)?;
        let e = Exact {
            closed: BigRational::from_integer(BigInt::from(exact)),
            trapezoid: BigRational::from_integer(BigInt::from(exact)),
        };
        rows.push(make_row(x, &e, 0.0, main, x as f64, spec.boundary()));
        timing.rows.push((x, t0.elapsed().as_secs_f64()));
    }
    let verdict = ratio_verdict(&rows, spec.tolerance(), true, false);
    let mut caveats = Vec::new();
    if shiftedconv::check_progression(q, a).is_err() {
        caveats.push("(q, a) lies outside the progressions the main term is stated for".into());
    }
    let report = ExperimentReport {
        name: spec.name.clone().unwrap_or_else(|| "convolution".into()),
        theorem: Theorem::Convolution,
        form: String::new(),
        lattice_box: Vec::new(),
        boundary: spec.boundary(),
        rows,
        prediction: Prediction {
            omega: "constant".into(),
            model: format!("shifted r(m) r(m+1), q = {q}, a = {a}"),
            normalization: "x".into(),
            ..Default::default()
        },
        verdict,
        caveats,
        diagnostics: BTreeMap::new(),
    };
    timing.total = start.elapsed().as_secs_f64();
    Ok(ExperimentOutcome { report, timing })
}

pub fn run_experiment(spec: &ExperimentSpec, store: &HistogramStore) -> Result<ExperimentOutcome> {
    match spec.theorem {
        Theorem::Hasse => run_hasse(spec, store),
        Theorem::Chowla => run_chowla(spec),
        Theorem::Modular => run_modular(spec),
        Theorem::Divisor => run_divisor(spec, store),
        Theorem::KthPower => run_kth_power(spec, store),
        Theorem::MFull => run_m_full(spec, store),
        Theorem::Pow2 => run_pow2(spec, store),
        Theorem::Pieropan => run_pieropan(spec, store),
        Theorem::Convolution => run_convolution(spec),
    }
}

// identity suites

/// Forms used by the identity suites, with a box for each.
pub const FORM_CORPUS: &[(&str, &[(f64, f64)])] = &[
    ("x1^2 + x2^2", &[(0.0, 1.0), (0.0, 1.0)]),
    ("x1^2 + 2*x2^2 + 3*x3^2", &[(0.0, 1.0), (0.0, 1.0), (0.0, 1.0)]),
    ("x1^3 - 2*x1*x2*x3 + 5*x3^3", &[(-0.5, 0.5), (0.0, 1.0), (-0.5, 0.25)]),
    ("x1*x2 - x3^2 + x4^2", &[(0.0, 1.0), (0.0, 1.0), (0.0, 1.0), (0.0, 1.0)]),
    ("x1^2 + x2^2 + x3^2 + x4^2 + x5^2", &[(0.0, 1.0); 5]),
];

pub const SUITES: &[&str] = &["touselater", "darksun", "lemma33", "hyperbola", "crt", "divisor_chain"];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: Value,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<Check>,
    pub passed: usize,
    pub failed: usize,
    pub pass: bool,
}

impl SuiteReport {
    fn new(suite: &str, checks: Vec<Check>) -> Self {
        let passed = checks.iter().filter(|c| c.pass).count();
        Self {
            suite: suite.into(),
            failed: checks.len() - passed,
            passed,
            pass: passed == checks.len(),
            checks,
        }
    }
}

fn corpus() -> Result<Vec<(IntegerForm, LatticeBox)>> {
    FORM_CORPUS
        .iter()
        .map(|(f, b)| Ok((IntegerForm::parse(f)?, LatticeBox::from_f64_pairs(b)?)))
        .collect()
}

pub fn suite_touselater(store: &HistogramStore) -> Result<SuiteReport> {
    let mut checks = Vec::new();
    for (form, _) in corpus()? {
        for p in [2u64, 3, 5] {
            for m in 1..=2u32 {
                let pm = p.pow(m) as i128;
                let mut fails = Vec::new();
                let mut worst = 0.0f64;
                for nu in 0..pm {
                    let r = localdensity::touselater_identity_check(&form, nu, p, m, store)?;
                    worst = worst.max(r.float_residual);
                    if !r.pass {
                        fails.push(nu);
                    }
                }
                checks.push(Check {
                    name: format!("{} p={p} m={m}", form.canonical()),
                    pass: fails.is_empty(),
                    detail: json!({"residues": pm, "failing": fails, "float_residual": worst}),
                });
            }
        }
    }
    Ok(SuiteReport::new("touselater", checks))
}

/// Smallest `gamma` cutoff the darksun suite runs with. The cubic corpus
/// entry has a negative Birch exponent and its `I(gamma)` tail needs this.
pub const DARKSUN_MIN_CUTOFF: f64 = 128.0;

/// Corpus entries with `n <= 3`, weights `1` and `log`.
pub fn suite_darksun(quad: &QuadratureSpec) -> Result<SuiteReport> {
    let quad = &QuadratureSpec {
        gamma_cutoff: quad.gamma_cutoff.max(DARKSUN_MIN_CUTOFF),
        ..quad.clone()
    };
    let mut checks = Vec::new();
    for (form, bx) in corpus()?.into_iter().filter(|(f, _)| f.n() <= 3) {
        for omega in [Omega::Constant { value: 1.0 }, Omega::Log] {
            let r = singularintegral::darksun_check(&form, &bx, omega, 10.0, 1, quad)?;
            checks.push(Check {
                name: format!("{} omega={}", form.canonical(), omega.name()),
                pass: r.difference <= 1e-3,
                detail: serde_json::to_value(&r)?,
            });
        }
    }
    Ok(SuiteReport::new("darksun", checks))
}

pub fn suite_lemma33(q_max: u64) -> Result<SuiteReport> {
    let mut checks = Vec::new();
    for q in 1..=q_max {
        let admissible = shiftedconv::lemma33_admissible(q);
        let mut fails = Vec::new();
        for &a in &admissible {
            if !shiftedconv::lemma33_identity(q, a as i128)?.pass {
                fails.push(a);
            }
        }
        if !admissible.is_empty() {
            checks.push(Check {
                name: format!("q={q}"),
                pass: fails.is_empty(),
                detail: json!({"classes": admissible.len(), "failing": fails}),
            });
        }
    }
    Ok(SuiteReport::new("lemma33", checks))
}

pub fn suite_hyperbola(x: u64) -> Result<SuiteReport> {
    let mut checks = Vec::new();
    for q in [4u64, 8, 12] {
        for a in 0..q as i128 {
            let r = shiftedconv::hyperbola_check(x, q, a)?;
            checks.push(Check {
                name: format!("x={x} q={q} a={a}"),
                pass: r.pass,
                detail: serde_json::to_value(&r)?,
            });
        }
    }
    Ok(SuiteReport::new("hyperbola", checks))
}

/// Coprime pairs used by the CRT suite; pairs whose brute-force cost
/// exceeds the budget for a form are skipped.
pub const CRT_PAIRS: &[(u64, u64)] = &[
    (2, 3),
    (3, 4),
    (4, 5),
    (5, 8),
    (7, 9),
    (8, 9),
    (11, 16),
    (16, 17),
    (25, 27),
    (49, 64),
    (81, 100),
];

pub fn suite_crt(budget: u64) -> Result<SuiteReport> {
    let mut checks = Vec::new();
    for (form, _) in corpus()? {
        for &(q1, q2) in CRT_PAIRS {
            let q = q1 * q2;
            if (q as f64).powi(form.n() as i32) > budget as f64 {
                continue;
            }
            let whole = localdensity::value_histogram_brute(&form, q, budget)?;
            let h1 = localdensity::value_histogram_brute(&form, q1, budget)?;
            let h2 = localdensity::value_histogram_brute(&form, q2, budget)?;
            let pass = (0..q).all(|nu| {
                whole.counts()[nu as usize] == h1.counts()[(nu % q1) as usize] * h2.counts()[(nu % q2) as usize]
            });
            checks.push(Check {
                name: format!("{} q={q1}*{q2}", form.canonical()),
                pass,
                detail: json!({"modulus": q}),
            });
        }
    }
    Ok(SuiteReport::new("crt", checks))
}

pub fn suite_divisor_chain(store: &HistogramStore) -> Result<SuiteReport> {
    let mut checks = Vec::new();
    for (form, _) in corpus()? {
        for p in [2u64, 3, 5] {
            for m in 1..=2u32 {
                let r = localdensity::divisor_identity_chain(&form, p, m, store)?;
                checks.push(Check {
                    name: format!("{} p={p} m={m}", form.canonical()),
                    pass: r.pass,
                    detail: serde_json::to_value(&r)?,
                });
            }
        }
    }
    Ok(SuiteReport::new("divisor_chain", checks))
}

/// Runs one suite by name, or all of them for `all`.
pub fn run_suite(name: &str, store: &HistogramStore, quad: &QuadratureSpec) -> Result<Vec<SuiteReport>> {
    let one = |s: &str| -> Result<SuiteReport> {
        match s {
            "touselater" => suite_touselater(store),
            "darksun" => suite_darksun(quad),
            "lemma33" => suite_lemma33(200),
            "hyperbola" => suite_hyperbola(10_000),
            "crt" => suite_crt(store.budget()),
            "divisor_chain" => suite_divisor_chain(store),
            _ => Err(Error::UnknownName {
                kind: "suite",
                name: s.to_string(),
                valid: format!("{}, all", SUITES.join(", ")),
            }),
        }
    };
    if name == "all" {
        SUITES.iter().map(|s| one(s)).collect()
    } else {
        Ok(vec![one(name)?])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(text: &str) -> ExperimentSpec {
        ExperimentSpec::from_toml(text).unwrap()
    }

    #[test]
    fn toml_errors_carry_line() {
        let e = ExperimentSpec::from_toml("theorem = \"hasse\"\nform = \"x1^2\"\np_list = [1, \n").unwrap_err();
        assert!(e.to_string().contains("line"), "{e}");
        let e = ExperimentSpec::from_toml("theorem = \"hasse\"\nbogus = 1\n").unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
        let e = ExperimentSpec::from_toml("theorem = \"nope\"\n").unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }

    #[test]
    fn json_and_toml_agree() {
        let t = spec("theorem = \"chowla\"\nform = \"x1\"\np_list = [10]\nbox = [[0, 1]]\n");
        let j = ExperimentSpec::from_json(r#"{"theorem": "chowla", "form": "x1", "p_list": [10], "box": [[0.0, 1.0]]}"#).unwrap();
        assert_eq!(t.bx, j.bx);
        assert_eq!(t.p_list, j.p_list);
    }

    #[test]
    fn inadmissible_rejected() {
        let s = spec("theorem = \"hasse\"\nform = \"x1^2 + x2^2\"\np_list = [5]\n");
        let store = HistogramStore::default();
        assert!(matches!(run_experiment(&s, &store), Err(Error::Inadmissible { .. })));
    }

    #[test]
    fn chowla_line_case() {
        let s = spec("theorem = \"chowla\"\nform = \"x1\"\np_list = [1000000]\nboundary = \"closed\"\n");
        let out = run_chowla(&s).unwrap();
        let row = &out.report.rows[0];
        // sum_{m <= 10^6} mu(m) = 212
        assert_eq!(row.exact_closed, "212");
        assert!(out.report.verdict.pass);
    }

    #[test]
    fn chowla_empty_box() {
        let s = spec("theorem = \"chowla\"\nform = \"x1\"\np_list = [1]\nbox = [[0.2, 0.3]]\n");
        let out = run_chowla(&s).unwrap();
        assert_eq!(out.report.rows[0].normalized, 0.0);
    }

    #[test]
    fn hasse_no_positive_values() {
        let s = spec(
            "theorem = \"hasse\"\nform = \"-x1^2 - x2^2 - x3^2 - x4^2 - x5^2\"\np_list = [4]\nz = 5\nquadrature = { grid_per_axis = 8 }\n",
        );
        let out = run_hasse(&s, &HistogramStore::default()).unwrap();
        let r = &out.report.rows[0];
        assert_eq!((r.predicted, r.closed), (0.0, 0.0));
        assert!(r.ratio.is_none());
    }

    #[test]
    fn hasse_rho_route_agrees() {
        let s = spec("theorem = \"hasse\"\nform = \"x1^2 + x2^2 + x3^2 + x4^2 + x5^2\"\np_list = [6]\nquadrature = { grid_per_axis = 8 }\n");
        let out = run_hasse(&s, &HistogramStore::default()).unwrap();
        let d = out.report.diagnostics["rho_route_relative_difference"].as_f64().unwrap();
        assert!(d < 1e-6, "{d}");
    }

    #[test]
    fn empty_set_rejected() {
        let s = spec("theorem = \"pieropan\"\nform = \"x1^2 + x2^2 + x3^2 + x4^2 + x5^2\"\np_list = [5]\nset = \"empty\"\nmodel = \"uniform\"\n");
        assert!(matches!(run_pieropan(&s, &HistogramStore::default()), Err(Error::Precondition(_))));
    }

    #[test]
    fn unknown_model_lists_names() {
        let s = spec("theorem = \"pieropan\"\nform = \"x1^2 + x2^2 + x3^2 + x4^2 + x5^2\"\np_list = [5]\nset = \"positive\"\nmodel = \"bogus\"\n");
        let e = run_pieropan(&s, &HistogramStore::default()).unwrap_err();
        assert!(e.to_string().contains("divisor"), "{e}");
    }

    #[test]
    fn convolution_trivial_class() {
        let s = spec("theorem = \"convolution\"\nq = 4\na = 2\nx_list = [10000]\n");
        let out = run_convolution(&s).unwrap();
        let r = &out.report.rows[0];
        assert_eq!((r.closed, r.predicted), (0.0, 0.0));
        assert!(out.report.verdict.pass);
    }

    #[test]
    fn csv_has_one_line_per_row() {
        let s = spec("theorem = \"convolution\"\nq = 4\na = 1\nx_list = [1000, 10000]\n");
        let out = run_convolution(&s).unwrap();
        assert_eq!(out.report.to_csv().lines().count(), 3);
    }

    #[test]
    fn unknown_suite() {
        let e = run_suite("nope", &HistogramStore::default(), &QuadratureSpec::default()).unwrap_err();
        assert!(e.to_string().contains("lemma33"));
    }
}
