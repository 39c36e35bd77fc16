use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_perturbnas"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("perturbnas-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn help_documents_subcommands_and_keys() {
    let o = run(&["--help"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for word in ["search", "compare", "bench", "landscape", "hessian", "eps_start", "probe_subset", "PERTURBNAS_WORKERS"] {
        assert!(text.contains(word), "help lacks {word}");
    }
    let o = run(&["search", "--help"]);
    let text = stdout(&o);
    for flag in ["--seed", "--method", "--eps-start", "--eps-end", "--pgd-steps", "--pgd-lr", "--out", "[landscape]"] {
        assert!(text.contains(flag), "search help lacks {flag}");
    }
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(run(&["search"]).status.code(), Some(2));
    assert_eq!(run(&["compare"]).status.code(), Some(2));
    assert_eq!(run(&["search", "--config", "/nonexistent.toml"]).status.code(), Some(2));
    let dir = scratch("bad");
    std::fs::create_dir_all(&dir).unwrap();
    let bad = dir.join("bad.toml");
    std::fs::write(&bad, "methods = [\"sdarts\"]\n").unwrap();
    let o = run(&["compare", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown method"));
}

#[test]
fn shipped_configs_load() {
    for entry in std::fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        let o = run(&["config", "--config", path.to_str().unwrap()]);
        assert!(o.status.success(), "{}: {}", path.display(), String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn config_applies_overrides() {
    let o = run(&["config", "--method", "adv", "--seed", "7", "--pgd-steps", "3", "--eps-end", "0.2"]);
    assert!(o.status.success());
    let doc: toml::Table = stdout(&o).parse().unwrap();
    assert_eq!(doc["method"].as_str(), Some("adv"));
    assert_eq!(doc["seeds"].as_array().unwrap().len(), 1);
    assert_eq!(doc["adv"]["steps"].as_integer(), Some(3));
    assert_eq!(doc["search"]["eps_end"].as_float(), Some(0.2));
}

#[test]
fn smoke_pipeline_is_reproducible() {
    let smoke = configs().join("smoke.toml");
    let smoke = smoke.to_str().unwrap();
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = scratch(name);
        let o = run(&["compare", "--config", smoke, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains("hessreg"));
        outputs.push(out);
    }
    for file in ["comparison.csv", "summary.txt", "adv/seed_0/trajectory.jsonl", "rs/seed_0/checkpoint.json"] {
        let a = std::fs::read(outputs[0].join(file)).unwrap();
        let b = std::fs::read(outputs[1].join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between reruns");
    }

    let checkpoint = outputs[0].join("adv/seed_0/checkpoint.json");
    let ck = checkpoint.to_str().unwrap();
    let o = run(&["hessian", "--config", smoke, "--checkpoint", ck]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let probe: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert!(probe["lambda_max"].is_number());

    let scan_dir = outputs[0].join("scan");
    let o = run(&[
        "landscape", "--config", smoke, "--checkpoint", ck, "--radius", "0.5", "--grid-n", "5", "--out",
        scan_dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(scan_dir.join("landscape_epoch_002.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 25);
    assert!(scan_dir.join("landscape_epoch_002.json").exists());

    let o = run(&["landscape", "--config", smoke, "--checkpoint", ck, "--grid-n", "4"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bench_build_and_query() {
    let out = scratch("bench");
    let table = out.join("bench.csv");
    let smoke = configs().join("smoke.toml");
    let smoke = smoke.to_str().unwrap();
    let o = run(&["bench", "build", "--config", smoke, "--out", table.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("9 architectures"));

    let o = run(&["bench", "query", "--config", smoke, "--table", table.to_str().unwrap(), "--arch", "2-0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let row: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(row["encoding"], "2-0");
    assert!(row["test_error"].as_f64().unwrap() <= 1.0);

    // the default config describes a different space
    let o = run(&["bench", "query", "--table", table.to_str().unwrap(), "--arch", "2-0-0"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["bench", "query", "--config", smoke, "--table", table.to_str().unwrap(), "--arch", "7-0"]);
    assert_eq!(o.status.code(), Some(2));
}
