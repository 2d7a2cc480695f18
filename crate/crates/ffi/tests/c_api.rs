use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use arithdensity_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(ad_last_error_message()) }.to_string_lossy().into_owned()
}

fn take(s: *mut c_char) -> String {
    let out = unsafe { CStr::from_ptr(s) }.to_string_lossy().into_owned();
    unsafe { ad_string_free(s) };
    out
}

struct Handles {
    form: *mut AdForm,
    store: *mut AdStore,
}

impl Handles {
    fn new(text: &str) -> Self {
        let t = CString::new(text).unwrap();
        let mut form = ptr::null_mut();
        let mut store = ptr::null_mut();
        unsafe {
            assert_eq!(ad_form_parse(t.as_ptr(), &mut form), AdStatus::Ok, "{}", last_error());
            assert_eq!(ad_store_new(0, ptr::null(), &mut store), AdStatus::Ok);
        }
        Handles { form, store }
    }
}

impl Drop for Handles {
    fn drop(&mut self) {
        unsafe {
            ad_form_free(self.form);
            ad_store_free(self.store);
        }
    }
}

#[test]
fn form_handle_roundtrip() {
    let h = Handles::new("x1^2 - 2*x2*x3 + x3^2");
    unsafe {
        assert_eq!(ad_form_dim(h.form), 3);
        assert_eq!(ad_form_degree(h.form), 2);
        assert_eq!(ad_form_admissible(h.form), 0);
        let mut s = ptr::null_mut();
        assert_eq!(ad_form_canonical(h.form, &mut s), AdStatus::Ok);
        let again = Handles::new(&take(s));
        let mut a = 0u64;
        let mut b = 0u64;
        for pt in [[1u64, 2, 3], [4, 0, 6], [7, 7, 1]] {
            ad_form_evaluate_mod(h.form, pt.as_ptr(), 3, 11, &mut a);
            ad_form_evaluate_mod(again.form, pt.as_ptr(), 3, 11, &mut b);
            assert_eq!(a, b);
        }
        assert_eq!(ad_form_evaluate_mod(h.form, [1u64, 2].as_ptr(), 2, 11, &mut a), AdStatus::InvalidArgument);
        assert_eq!(ad_form_dim(ptr::null()), 0);
    }
}

#[test]
fn status_codes() {
    let mut form = ptr::null_mut();
    let bad = CString::new("x1^2 + x2^3").unwrap();
    unsafe {
        assert_eq!(ad_form_parse(bad.as_ptr(), &mut form), AdStatus::Parse);
        assert!(form.is_null());
        assert!(last_error().contains("homogeneous"));
        assert_eq!(ad_form_parse(ptr::null(), &mut form), AdStatus::NullPointer);
        let not_utf8 = [0xffu8 as c_char, 0];
        assert_eq!(ad_form_parse(not_utf8.as_ptr(), &mut form), AdStatus::InvalidUtf8);
        let mut v = 0i64;
        assert_eq!(ad_ramanujan_sum(0, 1, &mut v), AdStatus::InvalidArgument);
        let mut s = ptr::null_mut();
        let sched = CString::new("weekly").unwrap();
        assert_eq!(ad_plan_modulus(10.0, sched.as_ptr(), &mut s), AdStatus::UnknownName);
        assert!(s.is_null());
    }
    let h = Handles::new("x1^2 + x2^2");
    let mut v = 0.0;
    unsafe {
        let floor = CString::new("floor").unwrap();
        let st = ad_singular_series(h.form, h.store, 1, 5.0, floor.as_ptr(), &mut v, ptr::null_mut());
        assert_eq!(st, AdStatus::Inadmissible, "{}", last_error());
    }
}

#[test]
fn arithmetic_matches_core() {
    let h = Handles::new("x1^2 + x2^2 + x3^2 + x4^2 + x5^2");
    unsafe {
        // c_12(a) for a = 0..12 by hand: phi(12), mu(12/gcd) * phi(12) / phi(12/gcd)
        let expect = [4i64, 0, 2, 0, -2, 0, -4, 0, -2, 0, 2, 0];
        for (a, e) in expect.iter().enumerate() {
            let mut v = 0;
            assert_eq!(ad_ramanujan_sum(12, a as i64, &mut v), AdStatus::Ok);
            assert_eq!(v, *e, "a={a}");
        }

        let mut v = 0.0;
        let mut json = ptr::null_mut();
        let st = ad_singular_series(h.form, h.store, 3, 5.0, ptr::null(), &mut v, &mut json);
        assert_eq!(st, AdStatus::Ok, "{}", last_error());
        let parsed: serde_json::Value = serde_json::from_str(&take(json)).unwrap();
        assert_eq!(parsed["value"].as_f64().unwrap(), v);
        let mut prod = 1.0;
        for p in ["2", "3", "5"] {
            prod *= parsed["per_prime"][p]["gamma_f64"].as_f64().unwrap();
        }
        assert!((prod - v).abs() < 1e-12 * v);

        let mut lf = 0.0;
        assert_eq!(ad_local_factor(h.form, h.store, 3, 5, 1, &mut lf), AdStatus::Ok);
        assert_eq!(lf, parsed["per_prime"]["5"]["gamma_f64"].as_f64().unwrap());

        let mut n = 0u64;
        assert_eq!(ad_shifted_exact(100, 4, 1, &mut n), AdStatus::Ok);
        assert_eq!(n, 416);
        let mut m = 0.0;
        assert_eq!(ad_shifted_main_term(100.0, 4, 1, &mut m), AdStatus::Ok);
        assert!((m - 400.0).abs() < 1e-9);
    }
}

#[test]
fn experiment_and_suite_json() {
    let cfg = CString::new(
        "name = \"ffi\"\ntheorem = \"chowla\"\nform = \"x1\"\nbox = [[0, 1]]\np_list = [1000]\ntolerance = 0.05\n",
    )
    .unwrap();
    let mut json = ptr::null_mut();
    let mut pass = -1;
    unsafe {
        let st = ad_run_experiment(cfg.as_ptr(), AD_FORMAT_TOML, ptr::null(), &mut json, &mut pass);
        assert_eq!(st, AdStatus::Ok, "{}", last_error());
        let v: serde_json::Value = serde_json::from_str(&take(json)).unwrap();
        assert_eq!(v["name"], "ffi");
        assert_eq!(pass, 1);

        let bad = CString::new("theorem = \"hasse\"\np_list = [").unwrap();
        assert_eq!(ad_run_experiment(bad.as_ptr(), AD_FORMAT_TOML, ptr::null(), &mut json, &mut pass), AdStatus::Config);
        assert!(last_error().contains("line"));
        assert_eq!(ad_run_experiment(cfg.as_ptr(), 7, ptr::null(), &mut json, &mut pass), AdStatus::InvalidArgument);

        let name = CString::new("lemma33").unwrap();
        assert_eq!(ad_run_suite(name.as_ptr(), ptr::null(), &mut json, &mut pass), AdStatus::Ok);
        assert_eq!(pass, 1);
        ad_string_free(json);
        let name = CString::new("nope").unwrap();
        assert_eq!(ad_run_suite(name.as_ptr(), ptr::null(), &mut json, &mut pass), AdStatus::UnknownName);
    }
}

#[test]
fn errors_are_thread_local() {
    let mut v = 0u64;
    unsafe { ad_eta(0, 1, &mut v) };
    let here = last_error();
    std::thread::spawn(|| assert_eq!(last_error(), "")).join().unwrap();
    assert_eq!(last_error(), here);
}

fn target_dir() -> PathBuf {
    // tests run from <target>/<profile>/deps
    std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_compiles_and_links_from_c() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib = target_dir().join("libarithdensity_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler or static library at {}", lib.display());
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let exe = tmp.path().join("smoke");
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(root.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(root.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "ok");
}
