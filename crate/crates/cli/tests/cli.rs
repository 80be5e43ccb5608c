use std::path::Path;
use std::process::{Command, Output};

use statsep::io::{load_real, save_real};
use statsep::metrics::psnr;
use statsep::RealField;

fn statsep(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_statsep"))
        .args(args)
        .current_dir(dir)
        .env_remove("STATSEP_THREADS")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL: &str = r#"
[input.texture]
height = 16
width = 16
[representation]
scales = 2
[separation]
q = 6
iterations = 4
"#;

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn denoise_with_vanishing_noise_is_near_identity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let o = statsep(&["denoise", "--config", &cfg, "--sigma", "1e-6", "--out", "run"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let run = dir.path().join("run");
    let clean = load_real(run.join("clean.ssf")).unwrap();
    let x = load_real(run.join("denoised.ssf")).unwrap();
    assert!(psnr(&x, &clean).unwrap() > 60.0);
    for f in ["noisy.png", "denoised.png", "trace.csv", "eval.csv"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let eval = std::fs::read_to_string(run.join("eval.csv")).unwrap();
    assert_eq!(eval.lines().count(), 3);
    assert!(eval.lines().nth(2).unwrap().starts_with("vanilla,white,"));
    let trace = std::fs::read_to_string(run.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().next().unwrap(), "iteration,stage,loss,grad_norm,wall_ms");
}

#[test]
fn same_seed_same_bytes_and_diffusive_degeneracy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let run = |out: &str, alg: &str, seed: &str| {
        let args = ["denoise", "--config", &cfg, "--sigma", "0.5", "--seed", seed, "--algorithm", alg, "--out", out];
        let o = statsep(&args, dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read(dir.path().join(out).join("denoised.ssf")).unwrap()
    };
    let a = run("a", "vanilla", "9");
    let b = run("b", "vanilla", "9");
    assert_eq!(a, b);
    let c = run("c", "vanilla", "10");
    assert_ne!(a, c);

    let one = write_config(dir.path(), "one.toml", &format!("{SMALL}stages = 1\n"));
    let o = statsep(
        &["denoise", "--config", &one, "--sigma", "0.5", "--seed", "9", "--algorithm", "diffusive", "--out", "d"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(a, std::fs::read(dir.path().join("d/denoised.ssf")).unwrap());
}

#[test]
fn other_algorithms_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &format!("{SMALL}stages = 2\n"));
    for alg in ["perturbative", "delouis", "analytic-oracle"] {
        let o = statsep(&["denoise", "--config", &cfg, "--sigma", "0.5", "--algorithm", alg, "--out", alg], dir.path());
        assert!(o.status.success(), "{alg}: {}", stderr(&o));
        assert!(load_real(dir.path().join(alg).join("denoised.ssf")).unwrap().is_finite());
    }
}

#[test]
fn sweep_rows_and_noisy_trend() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "s.toml",
        &format!("algorithm = \"analytic-oracle\"\nrealizations = 5\n{SMALL}"),
    );
    let o = statsep(&["sweep", "--config", &cfg, "--out", "sw", "--jobs", "2"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let sw = dir.path().join("sw");
    let mut rdr = csv::Reader::from_path(sw.join("sweep.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    let count = |alg: &str| rows.iter().filter(|r| &r[0] == alg).count();
    assert_eq!(count("noisy"), 10 * 5);
    assert_eq!(count("analytic-oracle"), 10 * 5);

    let mut sigmas: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    sigmas.dedup();
    sigmas.sort_by(f64::total_cmp);
    sigmas.dedup();
    assert_eq!(sigmas.len(), 10);
    assert_eq!(sigmas[0], 0.1);
    assert_eq!(sigmas[9], 2.14);
    let mean_psnr: Vec<f64> = sigmas
        .iter()
        .map(|s| {
            let v: Vec<f64> = rows
                .iter()
                .filter(|r| &r[0] == "noisy" && r[2].parse::<f64>().unwrap() == *s)
                .map(|r| r[5].parse().unwrap())
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        })
        .collect();
    assert!(mean_psnr.windows(2).all(|w| w[1] < w[0]), "{mean_psnr:?}");
    assert!(sw.join("psnr_vs_sigma.png").exists());
    assert!(sw.join("rel_err_vs_sigma.png").exists());
}

#[test]
fn sweep_is_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "s.toml",
        &format!("[sweep]\nsigmas = [0.3, 1.0]\nplots = false\n{SMALL}"),
    );
    let o = statsep(&["sweep", "--config", &cfg, "--out", "one", "--jobs", "1"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = Command::new(env!("CARGO_BIN_EXE_statsep"))
        .args(["sweep", "--config", &cfg, "--out", "three", "--jobs", "1"])
        .env("STATSEP_THREADS", "3")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let a = std::fs::read(dir.path().join("one/sweep.csv")).unwrap();
    let b = std::fs::read(dir.path().join("three/sweep.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.toml", "realizations = 0\n");
    assert_eq!(statsep(&["denoise", "--config", &bad], dir.path()).status.code(), Some(2));
    let unknown = write_config(dir.path(), "u.toml", "colour = 3\n");
    assert_eq!(statsep(&["denoise", "--config", &unknown], dir.path()).status.code(), Some(2));
    assert_eq!(
        statsep(&["denoise", "--input", "missing.ssf"], dir.path()).status.code(),
        Some(2)
    );
    assert_eq!(statsep(&["denoise", "--algorithm", "magic"], dir.path()).status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_statsep"))
        .args(["synth"])
        .env("STATSEP_THREADS", "zero")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));

    let mut f = RealField::from_fn(16, 16, |r, c| ((r * 16 + c) as f64 * 0.1).sin());
    f.as_mut_slice()[5] = f64::NAN;
    save_real(dir.path().join("nan.ssf"), &f).unwrap();
    let o = statsep(&["denoise", "--input", "nan.ssf", "--out", "nan"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    // band powers of a huge field overflow, so the first loss is not finite
    let f = RealField::from_fn(16, 16, |r, c| 1e170 * ((r * 16 + c) as f64 * 0.1).sin());
    save_real(dir.path().join("huge.ssf"), &f).unwrap();
    let cfg = write_config(
        dir.path(),
        "huge.toml",
        "[input]\npath = \"huge.ssf\"\nobserved = true\n[representation]\nkind = \"power_spectrum\"\nscales = 2\n[separation]\nq = 4\niterations = 3\n",
    );
    let o = statsep(&["denoise", "--config", &cfg, "--out", "huge"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("stage 0, iteration 0"), "{}", stderr(&o));
}

#[test]
fn synth_matches_denoise_clean_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let o = statsep(&["synth", "--config", &cfg, "--seed", "4", "--out", "t"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = statsep(&["denoise", "--config", &cfg, "--seed", "4", "--out", "d"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read(dir.path().join("t/texture.ssf")).unwrap(),
        std::fs::read(dir.path().join("d/clean.ssf")).unwrap()
    );
    let o = statsep(&["synth", "--kind", "grf", "--size", "24", "--slope", "-1.0", "--out", "g"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let g = load_real(dir.path().join("g/texture.ssf")).unwrap();
    assert_eq!(g.shape(), (24, 24));
    assert!(dir.path().join("g/texture.png").exists());
}

#[test]
fn wph_dump_counts_and_filters() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "w.toml",
        "[input.texture]\nheight = 128\nwidth = 128\n[representation]\nscales = 7\n",
    );
    let o = statsep(&["wph-dump", "--config", &cfg, "--out", "w", "--filters"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("w/wph.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "class,j1,l1,j2,l2,re,im");
    assert_eq!(lines.count(), 420);
    assert_eq!(std::fs::read_dir(dir.path().join("w/filters")).unwrap().count(), 28);
    assert!(dir.path().join("w/filters/psi_j6_l3.ssf").exists());
}

#[test]
fn oracle_check_forced_bug_fails_quadratic() {
    let dir = tempfile::tempdir().unwrap();
    let ok = statsep(&["oracle-check", "--check", "quadratic", "--check", "linear"], dir.path());
    assert!(ok.status.success(), "{}", stderr(&ok));
    let table = String::from_utf8_lossy(&ok.stdout);
    assert!(table.contains("quadratic  PASS"), "{table}");

    let bug = statsep(&["oracle-check", "--forced-bug", "--check", "quadratic"], dir.path());
    assert!(!bug.status.success());
    let table = String::from_utf8_lossy(&bug.stdout);
    assert!(table.contains("quadratic  FAIL"), "{table}");
    assert_eq!(statsep(&["oracle-check", "--check", "cubic"], dir.path()).status.code(), Some(2));
}

#[test]
fn oracle_check_full_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = statsep(&["oracle-check", "--seed", "3"], dir.path());
    assert!(o.status.success(), "{}\n{}", String::from_utf8_lossy(&o.stdout), stderr(&o));
    let table = String::from_utf8_lossy(&o.stdout);
    assert_eq!(table.matches("PASS").count(), 3, "{table}");
}
