//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! fails. Runs without the libtest harness so the lines always print.

use std::path::PathBuf;
use std::time::Instant;

use arithdensity::cramer;
use arithdensity::enumerate::{self, SweepMethod, SweepOptions};
use arithdensity::forms::{IntegerForm, LatticeBox};
use arithdensity::harness::{self, ExperimentSpec};
use arithdensity::kernels::{empirical_e, Kernel};
use arithdensity::localdensity::HistogramStore;
use arithdensity::shiftedconv;
use arithdensity::singularintegral::QuadratureSpec;

fn config(name: &str) -> ExperimentSpec {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentSpec::from_path(&path).unwrap()
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn ok(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn criterion_1() -> Outcome {
    let store = HistogramStore::default();
    let quad = QuadratureSpec::default();
    let mut parts = Vec::new();
    let mut pass = true;
    for s in ["touselater", "lemma33", "hyperbola", "crt", "divisor_chain"] {
        let r = harness::run_suite(s, &store, &quad).unwrap().remove(0);
        pass &= r.pass;
        parts.push(format!("{s} {}/{}", r.passed, r.passed + r.failed));
    }
    ok(pass, parts.join(", "))
}

fn criterion_2() -> Outcome {
    let r = harness::suite_darksun(&QuadratureSpec::default()).unwrap();
    let worst = r
        .checks
        .iter()
        .map(|c| c.detail["difference"].as_f64().unwrap())
        .fold(0.0, f64::max);
    ok(r.pass && r.checks.len() == 6, format!("{} checks, largest difference {worst:.2e}", r.checks.len()))
}

fn criterion_3() -> Outcome {
    let x = 10_000_000u64;
    let all = shiftedconv::shifted_exact_all(x, 4).unwrap();
    let (s1, s0) = (all[1] as f64, all[0] as f64);
    let xf = x as f64;
    let main = shiftedconv::shifted_main_term(xf, 4, 1).unwrap();
    let r1 = s1 / main;
    let r0 = s0 / shiftedconv::shifted_main_term(xf, 4, 0).unwrap();
    let rs = (s0 + s1) / (8.0 * xf);
    let within = |r: f64| (r - 1.0).abs() <= 0.03;
    ok(
        (main - 4.0 * xf).abs() < 1e-6 * xf && within(r1) && within(r0) && within(rs),
        format!("S(x;4,1)/4x = {r1:.5}, S(x;4,0)/4x = {r0:.5}, sum/8x = {rs:.5}"),
    )
}

fn criterion_4() -> Outcome {
    let out = harness::run_hasse(&config("hasse_n5.toml"), &HistogramStore::default()).unwrap();
    let rows = &out.report.rows;
    let first = rows.iter().find(|r| r.p == 10).unwrap().ratio.unwrap();
    let last = rows.iter().find(|r| r.p == 40).unwrap();
    let r = last.ratio.unwrap();
    ok(
        (r - 1.0).abs() <= 0.1 && (r - 1.0).abs() <= (first - 1.0).abs(),
        format!(
            "ratio at P=40 {r:.5} (closed-box {:.5}), at P=10 {first:.5}",
            last.ratio_closed.unwrap()
        ),
    )
}

fn criterion_5() -> Outcome {
    let out = harness::run_chowla(&config("chowla_n5.toml")).unwrap();
    let v = &out.report.verdict;
    let line = harness::run_chowla(&config("chowla_line.toml")).unwrap();
    let avg = line.report.rows[0].normalized;
    ok(
        v.pass && v.statistic <= 0.05 && v.monotone && avg.abs() <= 1e-2,
        format!("|avg| over P=10,20,40: {:.5?}; line case {avg:.2e}", v.trend),
    )
}

fn criterion_6() -> Outcome {
    let out = harness::run_divisor(&config("divisor_n5.toml"), &HistogramStore::default()).unwrap();
    let row = out.report.rows.iter().find(|r| r.p == 80).unwrap();
    let r = row.ratio.unwrap();
    ok(
        (r - 1.0).abs() <= 0.1,
        format!(
            "ratio at P=80 {r:.4} (full local factor {:.4}, weighted main term {:.4})",
            row.extra["ratio_with_gamma_term"], row.extra["ratio_weighted"]
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut spec = config("kth_power_n5.toml");
    spec.p_list = vec![200];
    let out = harness::run_kth_power(&spec, &HistogramStore::default()).unwrap();
    let r = out.report.rows[0].ratio.unwrap();
    ok((r - 1.0).abs() <= 0.15, format!("ratio at P=200 {r:.5}"))
}

fn criterion_8() -> Outcome {
    let xs = [10_000u64, 100_000, 1_000_000];
    let cases: Vec<(Kernel, Vec<u64>, bool)> = vec![
        (Kernel::divisor(), (1..=16).collect(), true),
        (Kernel::kth_power(2).unwrap(), (1..=16).collect(), true),
        (Kernel::powers_of_two(), vec![4, 7, 12], false),
    ];
    let mut pass = true;
    let mut notes = Vec::new();
    for (k, qs, final_bound) in &cases {
        let mut worst: (f64, u64) = (0.0, 0);
        for &q in qs {
            let v: Vec<f64> = xs.iter().map(|&x| empirical_e(k, x, q).unwrap().normalized).collect();
            if !v.windows(2).all(|w| w[1] <= w[0]) {
                pass = false;
                notes.push(format!("{} q={q} not monotone", k.name()));
            }
            if v[2] > worst.0 {
                worst = (v[2], q);
            }
        }
        if *final_bound && worst.0 > 0.05 {
            pass = false;
        }
        notes.push(format!("{} worst final {:.4} (q={})", k.name(), worst.0, worst.1));
    }
    ok(pass, notes.join("; "))
}

fn criterion_9() -> Outcome {
    let d = cramer::epsilon_decay_check(&[10.0, 1e2, 1e3, 1e4, 1e5]).unwrap();
    ok(d.fitted_constant < 3.0, format!("fitted constant {:.4}", d.fitted_constant))
}

fn criterion_10() -> Outcome {
    let mut hasse = config("hasse_n5.toml");
    hasse.p_list = vec![10, 20];
    let mut kth = config("kth_power_n5.toml");
    kth.p_list = vec![50];
    let specs = [hasse, config("chowla_n5.toml"), kth];
    let mut reports: Vec<Vec<String>> = Vec::new();
    for threads in [1usize, 4, 16] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        reports.push(pool.install(|| {
            specs
                .iter()
                .map(|s| harness::run_experiment(s, &HistogramStore::default()).unwrap().report.to_json())
                .collect()
        }));
    }
    let identical = reports.windows(2).all(|w| w[0] == w[1]);

    let form = IntegerForm::diagonal(&[1; 5], 2).unwrap();
    let opts = SweepOptions {
        method: SweepMethod::Sweep,
        ..Default::default()
    };
    let t = Instant::now();
    let r = enumerate::lattice_sweep_with(&form, &LatticeBox::unit(5), 40, &Kernel::moebius(), 1, &opts).unwrap();
    let rate = r.points_visited as f64 / t.elapsed().as_secs_f64();
    ok(
        identical && rate >= 1e7,
        format!("reports identical across 1/4/16 workers: {identical}; sweep {rate:.3e} evals/s"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, f64); 10] = [
        ("exact identity suite", criterion_1, 120.0),
        ("darksun numerical identity", criterion_2, 300.0),
        ("shifted convolution at 1e7", criterion_3, 180.0),
        ("Hasse experiment", criterion_4, 600.0),
        ("Chowla experiment", criterion_5, 600.0),
        ("divisor experiment", criterion_6, 900.0),
        ("k-th power experiment", criterion_7, 600.0),
        ("equidistribution ratios", criterion_8, 300.0),
        ("epsilon decay", criterion_9, 60.0),
        ("determinism and throughput", criterion_10, 600.0),
    ];
    let mut failed = 0;
    for (i, (name, run, limit)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let out = run();
        let secs = t.elapsed().as_secs_f64();
        let pass = out.pass && secs <= *limit;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {}: {name}: {} [{secs:.1}s of {limit:.0}s]",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            out.detail
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
