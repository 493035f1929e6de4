use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn prunelab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prunelab"))
        .args(args)
        .current_dir(cwd)
        .env_remove("PRUNELAB_OUT")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn ratios_table_spends_the_budget() {
    let dir = tempfile::tempdir().unwrap();
    let o = prunelab(&["ratios", "mlp-4", "0.9", "plain"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let mut kept = 0;
    let mut total = 0;
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols[0] == "total" {
            assert_eq!(cols[2].parse::<usize>().unwrap(), kept);
            assert_eq!(cols[1].parse::<usize>().unwrap(), total);
        } else {
            total += cols[1].parse::<usize>().unwrap();
            kept += cols[2].parse::<usize>().unwrap();
        }
    }
    assert_eq!(kept, (0.1 * total as f64).round() as usize);
}

#[test]
fn missing_config_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = prunelab(&["run", "missing.toml"], dir.path());
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(
        err.contains("missing.toml") && err.starts_with("error[io]"),
        "{err}"
    );
    assert_eq!(err.lines().count(), 1);
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(prunelab(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(
        prunelab(&["ratios", "mlp-4", "lots", "plain"], dir.path())
            .status
            .code(),
        Some(2)
    );
    assert_eq!(prunelab(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn run_then_report() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("grid.toml"),
        r#"
preset = "mlp-4"
sparsities = [0.5, 0.9, 0.95]
seeds = [0, 1, 2]
output_dir = "out"

[dataset]
kind = "synthetic-blobs"
classes = 3
dim = 16
samples = 120
seed = 1

[train]
epochs = 1

[[pipelines]]
kind = "random"

[[pipelines]]
kind = "dense"
"#,
    )
    .unwrap();
    let o = prunelab(&["run", "grid.toml", "--workers", "2"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let results = dir.path().join("out/results.csv");
    assert_eq!(fs::read_to_string(&results).unwrap().lines().count(), 19);

    let o = prunelab(
        &["report", "out/results.csv", "--format", "csv"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 19);

    let o = prunelab(
        &["report", "out/results.csv", "--format", "markdown"],
        dir.path(),
    );
    assert!(stdout(&o).contains("| none |"), "{}", stdout(&o));

    fs::write(dir.path().join("bad.csv"), "pipeline,check\nx,y\n").unwrap();
    let o = prunelab(&["report", "bad.csv", "--format", "csv"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[schema]"), "{}", stderr(&o));
}

#[test]
fn ticket_then_structural_check() {
    let dir = tempfile::tempdir().unwrap();
    let o = prunelab(
        &[
            "ticket",
            "snip",
            "--sparsity",
            "0.9",
            "--seed",
            "4",
            "--out",
            "t.json",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let o = prunelab(&["check", "t.json", "rearrange"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let a = prunelab::files::load_ticket(&dir.path().join("t.json")).unwrap();
    let b = prunelab::files::load_ticket(&dir.path().join("t.rearrange.json")).unwrap();
    assert_eq!(a.mask.kept_counts(), b.mask.kept_counts());
    assert_ne!(a.mask, b.mask);

    let o = prunelab(&["check", "t.json", "random-labels"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[config]"));
}

#[test]
fn output_dir_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("one.toml"),
        r#"
preset = "mlp-4"
sparsities = [0.9]
seeds = [0]
dataset = { kind = "synthetic-blobs", classes = 3, dim = 16, samples = 60, seed = 1 }
pipelines = [{ kind = "dense" }]
train = { epochs = 1 }
"#,
    )
    .unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_prunelab"))
        .args(["run", "one.toml"])
        .current_dir(dir.path())
        .env("PRUNELAB_OUT", "elsewhere")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("elsewhere/results.csv").exists());
    assert!(!dir.path().join("results").exists());
}
