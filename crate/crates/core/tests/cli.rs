use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn optstop(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_optstop"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("OPTSTOP_OUT_DIR")
        .output()
        .unwrap()
}

fn cfg(name: &str) -> String {
    configs().join(name).to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_lsmc_config(dir: &Path) -> String {
    let path = dir.join("lsmc_small.toml");
    std::fs::write(
        &path,
        "[lsmc]\npayoff = \"put\"\ns0 = 36.0\nstrike = 40.0\nrate = 0.06\nvolatility = 0.2\nhorizon = 1.0\n\
         exercise_dates = 10\nfit_paths = 2000\neval_paths = 2000\nbasis_degree = 2\nlattice_substeps = 10\n\
         fit_seed = 11\neval_seed = 12\n",
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn price_put_example() {
    let out = tempfile::tempdir().unwrap();
    let o = optstop(&["price", "--config", &cfg("put_example.toml")], out.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("v(root)       7/4"));
    let snell = std::fs::read_to_string(out.path().join("snell.csv")).unwrap();
    assert!(snell.starts_with("# schema: optstop.snell.v1\nnode,level,state,phi,v,vplus,A,M\n"));
    for name in ["theta_star_rule.csv", "theta_check_rule.csv", "theta_star_times.csv", "theta_check_times.csv"] {
        let text = std::fs::read_to_string(out.path().join(name)).unwrap();
        assert!(text.starts_with("# schema: optstop."), "{name}");
    }
}

#[test]
fn price_constant_stops_immediately() {
    let out = tempfile::tempdir().unwrap();
    let o = optstop(&["price", "--config", &cfg("constant.toml")], out.path());
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert!(s.contains("v(root)       3\n"));
    assert!(s.contains("\n0\t0\t1\t0\n"), "{s}");
}

#[test]
fn config_errors_exit_2() {
    let out = tempfile::tempdir().unwrap();
    let bad = out.path().join("bad.toml");
    std::fs::write(&bad, "[model]\nbuilder = \"trinomial\"\n").unwrap();
    let o = optstop(&["price", "--config", bad.to_str().unwrap()], out.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(!stderr(&o).is_empty());
    assert_eq!(optstop(&["price"], out.path()).status.code(), Some(2));
    let o = optstop(&["oracle", "--config", &cfg("put_example.toml"), "--arithmetic", "float"], out.path());
    assert_eq!(o.status.code(), Some(2));
    // clap usage errors share the code
    assert_eq!(optstop(&["price", "--arithmetic", "decimal"], out.path()).status.code(), Some(2));
}

#[test]
fn oversize_oracle_is_an_engine_error_but_verify_skips_it() {
    let out = tempfile::tempdir().unwrap();
    let o = optstop(&["oracle", "--config", &cfg("oversize_tree.toml")], out.path());
    assert_eq!(o.status.code(), Some(3));
    let o = optstop(&["verify", "--config", &cfg("oversize_tree.toml")], out.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("oracle skipped"));
}

#[test]
fn verify_names_injected_fault() {
    let out = tempfile::tempdir().unwrap();
    let o = optstop(&["verify", "--config", &cfg("verify_fault.toml")], out.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("violated invariant: envelope identity"));
}

#[test]
fn verify_small_corpus_passes() {
    let out = tempfile::tempdir().unwrap();
    let path = out.path().join("corpus.toml");
    std::fs::write(&path, "[run]\ncorpus_size = 15\n").unwrap();
    let o = optstop(&["verify", "--config", path.to_str().unwrap(), "--seed", "99"], out.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("seed 99"));
}

#[test]
fn oracle_dumps_optimal_set() {
    let out = tempfile::tempdir().unwrap();
    let o = optstop(&["oracle", "--config", &cfg("digital_from_spec.toml")], out.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("sandwich verdict    PASS"));
    let set = std::fs::read_to_string(out.path().join("oracle_optimal_set.csv")).unwrap();
    assert!(set.starts_with("# schema: optstop.optimal_set.v1\nrule,root,u,d\n"));
}

#[test]
fn epsilon_region_converge_and_lsmc_run() {
    let out = tempfile::tempdir().unwrap();
    let o = optstop(&["epsilon", "--config", &cfg("put_example.toml")], out.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("eps0      3/7"));
    let o = optstop(&["region", "--config", &cfg("digital_from_spec.toml")], out.path());
    assert_eq!(o.status.code(), Some(0));
    let o = optstop(&["converge", "--config", &cfg("converge_digitals.toml")], out.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = std::fs::read_to_string(out.path().join("converge.csv")).unwrap();
    assert_eq!(rows.lines().count(), 2 + 2 * 6);
    let o = optstop(&["lsmc", "--config", &small_lsmc_config(out.path())], out.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let est = std::fs::read_to_string(out.path().join("lsmc_estimate.csv")).unwrap();
    assert!(est.contains("LOWER_BOUND_OK"));
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let lsmc = small_lsmc_config(a.path());
    for args in [
        vec!["price", "--config", &cfg("put_example.toml")],
        vec!["epsilon", "--config", &cfg("put_lattice.toml")],
        vec!["lsmc", "--config", &lsmc],
    ] {
        assert_eq!(optstop(&args, a.path()).status.code(), Some(0));
        assert_eq!(optstop(&args, b.path()).status.code(), Some(0));
    }
    let mut names: Vec<_> = std::fs::read_dir(b.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 9);
    for name in names {
        assert_eq!(std::fs::read(a.path().join(&name)).unwrap(), std::fs::read(b.path().join(&name)).unwrap(), "{name:?}");
    }
}

#[test]
fn env_var_sets_default_out_dir_and_quiet_silences_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_optstop"))
        .args(["region", "--quiet", "--config", &cfg("put_example.toml")])
        .env("OPTSTOP_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    assert!(dir.path().join("region.csv").exists());
}
