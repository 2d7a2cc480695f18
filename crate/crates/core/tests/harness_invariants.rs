use arithdensity::harness::{self, Boundary, ExperimentSpec, Theorem};
use arithdensity::localdensity::HistogramStore;
use arithdensity::Error;

const FIVE_SQUARES: &str = "x1^2 + x2^2 + x3^2 + x4^2 + x5^2";

fn spec(text: &str) -> ExperimentSpec {
    ExperimentSpec::from_toml(text).unwrap()
}

#[test]
fn generic_driver_reproduces_kth_power() {
    let store = HistogramStore::default();
    let base = format!("form = \"{FIVE_SQUARES}\"\np_list = [20, 40]\n");
    let kth = harness::run_kth_power(&spec(&format!("theorem = \"kth_power\"\nk = 2\n{base}")), &store).unwrap();
    let gen = harness::run_pieropan(
        &spec(&format!("theorem = \"pieropan\"\nset = \"kth_power:2\"\nmodel = \"kth_power:2\"\n{base}")),
        &store,
    )
    .unwrap();
    assert_eq!(kth.report.rows, gen.report.rows);
    assert_eq!(kth.report.prediction, gen.report.prediction);
    assert_eq!(kth.report.verdict, gen.report.verdict);
}

#[test]
fn positive_set_against_volume() {
    let s = spec(&format!(
        "theorem = \"pieropan\"\nset = \"positive\"\nmodel = \"uniform\"\nform = \"{FIVE_SQUARES}\"\np_list = [10, 20, 40]\nz = 5\n"
    ));
    let out = harness::run_pieropan(&s, &HistogramStore::default()).unwrap();
    let r = out.report.rows.last().unwrap().ratio.unwrap();
    assert!((r - 1.0).abs() < 1e-3, "{r}");
    assert!(out.report.verdict.pass);
}

#[test]
fn hasse_rows_sorted_and_both_boundaries() {
    let s = spec(&format!("theorem = \"hasse\"\nform = \"{FIVE_SQUARES}\"\np_list = [12, 6, 9]\nz = 7\n"));
    let out = harness::run_hasse(&s, &HistogramStore::default()).unwrap();
    let ps: Vec<u64> = out.report.rows.iter().map(|r| r.p).collect();
    assert_eq!(ps, [6, 9, 12]);
    assert_eq!(out.report.boundary, Boundary::Trapezoid);
    for r in &out.report.rows {
        assert_eq!(r.ratio, r.ratio_trapezoid);
        assert!(r.ratio_closed.unwrap() > r.ratio_trapezoid.unwrap());
        assert!(r.extra.contains_key("ratio_without_high_powers"));
    }
    assert_eq!(out.report.prediction.local_factors.len(), 4);
}

#[test]
fn reports_identical_across_pools() {
    let s = spec(&format!("theorem = \"divisor\"\nform = \"{FIVE_SQUARES}\"\np_list = [8, 16]\nz = 7\n"));
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| harness::run_divisor(&s, &HistogramStore::default()).unwrap().report.to_json())
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert_eq!(one, run(16));
}

#[test]
fn convolution_q12() {
    let s = spec("theorem = \"convolution\"\nq = 12\na = 1\nx_list = [10000000]\ntolerance = 0.05\n");
    let out = harness::run_convolution(&s).unwrap();
    assert!(out.report.verdict.pass, "{:?}", out.report.rows);
}

#[test]
fn modular_range_error() {
    let s = spec(&format!("theorem = \"modular\"\nform = \"{FIVE_SQUARES}\"\np_list = [500]\n"));
    assert!(matches!(harness::run_modular(&s), Err(Error::KernelRange { .. })));
}

#[test]
fn modular_line_case() {
    let s = spec("theorem = \"modular\"\nform = \"x1\"\nbox = [[0, 1]]\np_list = [1000, 100000]\n");
    let out = harness::run_modular(&s).unwrap();
    assert!(!out.report.verdict.gated);
    assert!(out.report.rows.iter().all(|r| r.normalized.abs() < 0.05), "{:?}", out.report.verdict.trend);
}

#[test]
fn pow2_trend_only() {
    let s = spec(&format!("theorem = \"pow2\"\nform = \"{FIVE_SQUARES}\"\np_list = [25, 50, 100]\n"));
    let out = harness::run_pow2(&s, &HistogramStore::default()).unwrap();
    assert_eq!(out.report.theorem, Theorem::Pow2);
    assert!(!out.report.verdict.gated);
    let r = out.report.rows.last().unwrap().ratio.unwrap();
    assert!((r - 1.0).abs() <= 0.2, "{r}");
}

#[test]
fn divisor_reports_chain_and_alternates() {
    let s = spec(&format!("theorem = \"divisor\"\nform = \"{FIVE_SQUARES}\"\np_list = [10]\nz = 5\n"));
    let out = harness::run_divisor(&s, &HistogramStore::default()).unwrap();
    assert_eq!(out.report.diagnostics["identity_chain_pass"], true);
    let d = out.report.diagnostics["rho_route_relative_difference"].as_f64().unwrap();
    assert!(d < 1e-12, "{d}");
    let alt = &out.report.prediction.alternates;
    assert!(alt["with_gamma_term"] > out.report.prediction.sigma);
}

#[test]
fn bundled_configs_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        ExperimentSpec::from_path(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        n += 1;
    }
    assert!(n >= 9);
}
