use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const HEADER: &str = "experiment,variant,d,alpha,p,beta1,beta2,beta3,beta4,x,estimate,std_error,n,seed";

const PARAMS_D1: &str = r#"
[params]
d = 1
alpha = 1.0
beta = [0.0, 0.0, 0.0, 0.0]
variant = "const"
p = 0.5
"#;

const PARAMS_D2: &str = r#"
[params]
d = 2
alpha = 1.0
beta = [1.0, 1.0, 0.0, 0.0]
variant = "tilde"
p = 1.0
"#;

fn bhplab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bhplab"))
        .args(args)
        .env_remove("BHPLAB_THREADS")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_occupation(dir: &Path) -> PathBuf {
    let body = format!(
        "kind = \"OCCUPATION_SCALING\"\nseed = 17\ngrid = [0.03125, 0.0625, 0.125, 0.25]\n{PARAMS_D2}\n[sim]\nn_paths = 400\n"
    );
    write(dir, "occ.toml", &body)
}

#[test]
fn constant_table_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &format!("grid = [0.3, 0.5, 0.7]\n{PARAMS_D1}"));
    let out = bhplab(&["constant", "--config", cfg.to_str().unwrap(), "--deterministic"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], HEADER);
    assert_eq!(lines.len(), 4);
    let mid: Vec<&str> = lines[2].split(',').collect();
    assert_eq!(mid[0], "CONSTANT_TABLE");
    assert_eq!(mid[9], "0.5");
    let c: f64 = mid[10].parse().unwrap();
    assert!((c - 1.0).abs() < 1e-6, "c(1/2) = {c}");
    assert!(stderr(&out).contains("CONSTANT_TABLE PASS"));
}

#[test]
fn timestamp_line_unless_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &format!("grid = [0.5]\n{PARAMS_D1}"));
    let out = bhplab(&["constant", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# bhplab "));
    assert_eq!(lines.next().unwrap(), HEADER);
}

#[test]
fn deterministic_reruns_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_occupation(dir.path());
    let mut outputs = Vec::new();
    for (i, threads) in ["1", "4", "4"].iter().enumerate() {
        let out_path = dir.path().join(format!("run{i}.csv"));
        let out = bhplab(&[
            "occupation",
            "--config",
            cfg.to_str().unwrap(),
            "--threads",
            threads,
            "--deterministic",
            "--out",
            out_path.to_str().unwrap(),
        ]);
        assert!(matches!(out.status.code(), Some(0 | 1)), "{}", stderr(&out));
        outputs.push(fs::read(&out_path).unwrap());
    }
    assert!(!outputs[0].is_empty());
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[1], outputs[2]);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_occupation(dir.path());
    let run = |seed: &str| {
        let out = bhplab(&["occupation", "--config", cfg.to_str().unwrap(), "--seed", seed, "--deterministic"]);
        String::from_utf8(out.stdout).unwrap()
    };
    let a = run("1");
    let b = run("2");
    assert_eq!(a.lines().next(), Some(HEADER));
    assert_ne!(a, b);
    assert_eq!(run("1"), a);
}

#[test]
fn output_path_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("table.csv");
    let body = format!("output_path = {:?}\ngrid = [0.3, 0.7]\n{PARAMS_D1}", target.to_str().unwrap());
    let cfg = write(dir.path(), "c.toml", &body);
    let out = bhplab(&["constant", "--config", cfg.to_str().unwrap(), "--deterministic"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("CONSTANT_TABLE PASS"));
    let csv = fs::read_to_string(&target).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn empty_grid_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &format!("grid = []\n{PARAMS_D1}"));
    let out = bhplab(&["constant", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("grid"), "{}", stderr(&out));
}

#[test]
fn kind_conflicting_with_subcommand_is_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &format!("kind = \"CONSTANT_TABLE\"\ngrid = [0.5]\n{PARAMS_D1}"));
    let out = bhplab(&["occupation", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn parse_errors_report_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &format!("grid = [0.5]\n{PARAMS_D1}alpha_typo = = 2\n"));
    let out = bhplab(&["constant", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 9"), "{}", stderr(&out));
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &format!("grid = [0.5]\nn_path = 3\n{PARAMS_D1}"));
    let out = bhplab(&["constant", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("n_path"), "{}", stderr(&out));
}

#[test]
fn failed_verdict_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("grid = [0.5, 1.0]\n{PARAMS_D2}\n[options]\ntolerance = 1e-15\n");
    let cfg = write(dir.path(), "r.toml", &body);
    let out = bhplab(&["operator-check", "--config", cfg.to_str().unwrap(), "--deterministic"]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("OPERATOR_RESIDUAL FAIL"));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with(HEADER));
}

#[test]
fn kernel_audit_sandwich_passes() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("seed = 3\n{PARAMS_D2}\n[options]\nassumptions = [\"HAT_TILDE\"]\nn_samples = 100000\n");
    let cfg = write(dir.path(), "a.toml", &body);
    let out = bhplab(&["kernel-audit", "--config", cfg.to_str().unwrap(), "--deterministic"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "KERNEL_AUDIT:hat-tilde");
    assert_eq!(row[9], "0.0");
    assert_eq!(row[12], "100000");
}

#[test]
fn precondition_error_names_the_kind() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "f.toml", &format!("grid = [0.05, 0.1, 0.2]\n{PARAMS_D2}"));
    let out = bhplab(&["bhp-failure", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("BHP_FAILURE"), "{}", stderr(&out));
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(&root).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let spec = bhplab::ExperimentSpec::from_file(&path).unwrap();
            spec.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert_eq!(n, 8);
}
