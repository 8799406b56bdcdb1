use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use wate_core::simstudy::dgp::generate_population;

fn wate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wate"))
        .args(args)
        .env_remove("WATE_LOG")
        .env_remove("WATE_THREADS")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_phase1(path: &Path, n: usize, seed: u64) {
    let mut text = String::from("v1,v2,v3,w,a,y\n");
    for u in generate_population(n, seed) {
        writeln!(text, "{},{},{},{:.6},{},{}", u.v[0], u.v[1], u.v[2], u.w, u.a, u.y()).unwrap();
    }
    fs::write(path, text).unwrap();
}

fn sampled(dir: &Path, seed: &str) -> std::path::PathBuf {
    let p1 = dir.join("phase1.csv");
    let p2 = dir.join(format!("phase2-{seed}.csv"));
    write_phase1(&p1, 4000, 3);
    let out = wate(&[
        "sample", "--in", path(&p1), "--strata", "v1,y", "--scheme", "poisson", "--m", "1000",
        "--phase2-columns", "w", "--seed", seed, "--out", path(&p2),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    p2
}

fn estimate_json(data: &Path, extra: &[&str]) -> serde_json::Value {
    let mut args = vec!["estimate", "--in", path(data), "--v", "v1,v2,v3", "--w", "w", "--strata", "v1,y"];
    args.extend_from_slice(extra);
    let out = wate(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn design_two_strata() {
    let dir = tempfile::tempdir().unwrap();
    let strata = dir.path().join("strata.csv");
    fs::write(&strata, "k,p,sigma\n1,0.5,1\n2,0.5,2\n").unwrap();
    let out = wate(&["design", "--qbar", "0.3", "--strata", path(&strata), "--format", "json"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let q: Vec<f64> = v["q"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert!((q[0] - 0.2).abs() < 1e-12 && (q[1] - 0.4).abs() < 1e-12, "{q:?}");
    assert!((v["objective"].as_f64().unwrap() - 7.5).abs() < 1e-12);
    assert_eq!(v["feasible"], true);

    let out = wate(&["design", "--qbar", "0.3", "--strata", path(&strata)]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("k,p,sigma,xi,q,"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn sample_is_deterministic_and_hides_phase2_columns() {
    let dir = tempfile::tempdir().unwrap();
    let a = fs::read_to_string(sampled(dir.path(), "9")).unwrap();
    let b = fs::read_to_string(sampled(dir.path(), "9")).unwrap();
    let c = fs::read_to_string(sampled(dir.path(), "10")).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    let mut rdr = csv::Reader::from_reader(a.as_bytes());
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), ["v1", "v2", "v3", "w", "a", "y", "delta", "q"]);
    let mut kept = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let q: f64 = rec[7].parse().unwrap();
        assert!(q > 0.0 && q <= 1.0);
        match &rec[6] {
            "1" => kept += 1,
            "0" => assert_eq!(&rec[3], ""),
            d => panic!("delta {d}"),
        }
    }
    assert!((800..1200).contains(&kept), "{kept}");
}

#[test]
fn estimate_happy_path() {
    let dir = tempfile::tempdir().unwrap();
    let data = sampled(dir.path(), "1");
    let v = estimate_json(&data, &["--estimator", "edr", "--estimand", "att"]);
    assert_eq!(v["n"], 4000);
    let results = v["results"].as_array().unwrap();
    assert_eq!(results.len(), 1);
    let r = &results[0];
    assert_eq!(r["estimator"], "edr");
    assert_eq!(r["variance_method"], "eif");
    let (tau, se) = (r["tau_hat"].as_f64().unwrap(), r["se"].as_f64().unwrap());
    assert!(tau.abs() < 1.0 && se > 0.0);
    assert!(r["ci_lower"].as_f64().unwrap() < tau && tau < r["ci_upper"].as_f64().unwrap());

    let all = estimate_json(&data, &["--jackknife", "5", "--seed", "2"]);
    let results = all["results"].as_array().unwrap();
    assert_eq!(results.len(), 16);
    assert!(results.iter().all(|r| r["corrected"]["tau_hat"].is_number()));
    let siw = results.iter().find(|r| r["estimator"] == "siw").unwrap();
    assert_eq!(siw["variance_method"], "sandwich");
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = sampled(dir.path(), "4");
    let run = |out: &Path| {
        let o = wate(&[
            "estimate", "--in", path(&data), "--v", "v1,v2,v3", "--w", "w", "--strata", "v1,y",
            "--jackknife", "4", "--seed", "8", "--format", "csv", "--out", path(out),
        ]);
        assert!(o.status.success());
        fs::read(out).unwrap()
    };
    let a = run(&dir.path().join("a.csv"));
    let b = run(&dir.path().join("b.csv"));
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    let first = text.lines().nth(1).unwrap();
    // every number carries 17 significant digits
    let tau = first.split(',').nth(3).unwrap();
    assert_eq!(tau.split('e').next().unwrap().replace(['-', '.'], "").len(), 17, "{tau}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(wate(&["estimate", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(wate(&["frobnicate"]).status.code(), Some(2));
    let missing = wate(&["estimate", "--in", "/definitely/missing.csv", "--strata", "v1"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("missing.csv"));

    let data = sampled(dir.path(), "1");
    let bad_col = wate(&["estimate", "--in", path(&data), "--v", "v9", "--strata", "v1,y"]);
    assert_eq!(bad_col.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_col.stderr).contains("v9"));

    // treatment determined by v1: the propensity fit separates
    let mut text = String::from("v1,w,a,y,delta,q\n");
    for i in 0..200 {
        writeln!(text, "{},{},{},{},1,1", i % 2, (i % 7) as f64 / 7.0, i % 2, (i / 3) % 2).unwrap();
    }
    let separated = dir.path().join("separated.csv");
    fs::write(&separated, text).unwrap();
    let runtime = wate(&["estimate", "--in", path(&separated), "--v", "v1", "--w", "w", "--strata", "v1"]);
    assert_eq!(runtime.status.code(), Some(1), "{}", String::from_utf8_lossy(&runtime.stderr));

    assert_eq!(wate(&["--help"]).status.code(), Some(0));
}

#[test]
fn version_reports_build() {
    let out = wate(&["--version"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("wate "));
    assert!(text.contains("features:") && text.contains(std::env::consts::ARCH), "{text}");
}

#[test]
fn truth_writes_json() {
    let out = wate(&["truth", "--reference-n", "50000", "--seed", "3"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["reference_n"], 50000);
    for e in ["ate", "att", "atc", "ato"] {
        let t = v["truths"][e].as_f64().unwrap();
        assert!(t > 0.2 && t < 0.6, "{e} {t}");
    }
    let again = wate(&["truth", "--reference-n", "50000", "--seed", "3"]);
    assert_eq!(out.stdout, again.stdout);
}

#[test]
fn simulate_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("grid.toml");
    fs::write(
        &config,
        "[[scenario]]\nm = 150\nn_multiplier = 4\nscheme = \"poisson\"\nods = [true, false]\n\
         v_obs = 1\nreplications = 6\nseed = 2\njackknife = 3\nreference_n = 40000\nreference_seed = 1\n",
    )
    .unwrap();
    let run = |out: &Path, threads: &str| {
        let o = wate(&["simulate", "--config", path(&config), "--out", path(out), "--threads", threads]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run(&a, "1");
    run(&b, "2");
    for f in [
        "metrics.csv", "records.csv", "plot_bias_by_m.csv", "plot_coverage.csv", "plot_gain_by_vobs.csv",
        "tables.md", "truths.json",
    ] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let metrics = fs::read_to_string(a.join("metrics.csv")).unwrap();
    // 2 scenarios x 4 estimands x (oracle + 4 estimators + 4 corrected)
    assert_eq!(metrics.lines().count(), 1 + 2 * 4 * 9);

    fs::write(&config, "[[scenario]]\nm = 150\n").unwrap();
    let bad = wate(&["simulate", "--config", path(&config), "--out", path(&a)]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let load = |name: &str| {
        let text = fs::read_to_string(dir.join(name)).unwrap();
        wate_core::simstudy::GridFile::parse_toml(&text).unwrap().expand().unwrap()
    };
    let table2 = load("paper_table2.toml");
    assert_eq!(table2.iter().map(|c| c.v_obs).collect::<Vec<_>>(), (1..=8).collect::<Vec<_>>());
    assert!(table2.iter().all(|c| c.ods && c.m == 1000 && c.n() == 10_000));
    assert_eq!(load("smoke.toml").len(), 4);
}
