use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn htd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_htd")).args(args).env_remove("HTD_OUTPUT_ROOT").output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen(dir: &Path, seed: &str) -> Output {
    htd(&["gen-data", "--episodes", "2", "--seed", seed, "--image-size", "16", "--episode-len", "16", "--out", p(dir)])
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn report_value(text: &str, key: &str) -> f64 {
    text.lines().find_map(|l| l.strip_prefix(&format!("{key}\t"))).unwrap().parse().unwrap()
}

#[test]
fn gen_data_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(gen(&a, "4").status.success());
    assert!(gen(&b, "4").status.success());
    for entry in fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?}");
    }
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(htd(&["gen-data", "--episodes", "2"]).status.code(), Some(2));
    assert_eq!(htd(&["gen-data", "--episodes", "0", "--out", p(tmp.path())]).status.code(), Some(2));
    assert_eq!(htd(&["frobnicate"]).status.code(), Some(2));
    let data = tmp.path().join("data");
    assert!(gen(&data, "1").status.success());
    let bad = htd(&["train", "--data", p(&data), "--out", p(&tmp.path().join("r")), "--variant", "telepathy"]);
    assert_eq!(bad.status.code(), Some(2));
    assert_eq!(htd(&["train", "--data", p(&tmp.path().join("missing")), "--out", p(tmp.path())]).status.code(), Some(2));
    assert_eq!(htd(&["eval", "--out", p(tmp.path())]).status.code(), Some(2));
}

#[test]
fn output_root_supplies_the_default_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_htd"))
        .args(["gen-data", "--episodes", "1", "--image-size", "16", "--episode-len", "16"])
        .env("HTD_OUTPUT_ROOT", tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("data").join("manifest.json").exists());
}

#[test]
fn train_dispatches_variants_and_echoes_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert!(gen(&data, "2").status.success());
    for (variant, lambda_zero) in [("no-dream", true), ("dream-latent", false)] {
        let run = tmp.path().join(variant);
        let o = htd(&["train", "--data", p(&data), "--out", p(&run), "--variant", variant, "--steps", "2", "--small"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let cfg: toml::Table = fs::read_to_string(run.join("config.toml")).unwrap().parse().unwrap();
        let lf = cfg["loss"]["lambda_force"].as_float().unwrap();
        assert_eq!(lf == 0.0, lambda_zero, "{variant}");
        assert_eq!(cfg["policy"]["variant"].as_str().unwrap(), variant);
        assert!(run.join("metrics.csv").exists());
        assert!(run.join("checkpoint").join("params.bin").exists());
        let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary["steps"], 2);
    }
}

#[test]
fn config_file_wins_over_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert!(gen(&data, "2").status.success());
    let cfg = tmp.path().join("train.toml");
    fs::write(&cfg, "steps = 1\n[loss]\nlambda_force = 0.5\n").unwrap();
    let run = tmp.path().join("run");
    let o = htd(&["train", "--data", p(&data), "--out", p(&run), "--config", p(&cfg), "--steps", "3", "--small"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let echo: toml::Table = fs::read_to_string(run.join("config.toml")).unwrap().parse().unwrap();
    assert_eq!(echo["steps"].as_integer(), Some(1));
    assert_eq!(echo["loss"]["lambda_force"].as_float(), Some(0.5));

    fs::write(&cfg, "[loss]\nlambda_force = 0.5\n").unwrap();
    let o = htd(&["train", "--data", p(&data), "--out", p(&run), "--config", p(&cfg), "--variant", "no-dream", "--small"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn oracle_eval_has_zero_error_and_draws_heatmaps() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert!(gen(&data, "3").status.success());
    let run = tmp.path().join("run");
    assert!(htd(&["train", "--data", p(&data), "--out", p(&run), "--steps", "1", "--small"]).status.success());
    let ck = run.join("checkpoint");

    let oracle = tmp.path().join("oracle");
    let o = htd(&["eval", "--data", p(&data), "--checkpoint", p(&ck), "--oracle", "--out", p(&oracle), "--finger", "right.middle"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(oracle.join("report.tsv")).unwrap();
    assert_eq!(report_value(&report, "force_mae_left"), 0.0);
    assert_eq!(report_value(&report, "force_mae_right"), 0.0);
    assert_eq!(report_value(&report, "latent_similarity_mean"), 1.0);
    let maps: Vec<_> = fs::read_dir(oracle.join("heatmaps").join("right.middle")).unwrap().collect();
    assert!(maps.len() >= 4);

    let policy = tmp.path().join("policy");
    let o = htd(&["eval", "--data", p(&data), "--checkpoint", p(&ck), "--out", p(&policy), "--runs", p(&run)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(report_value(&stdout(&o), "force_mae_left") > 0.0);
    let trace = fs::read_to_string(policy.join("trace.csv")).unwrap();
    assert!(trace.starts_with("step,chunk_start,pred_force_0,true_force_0"));
    let table = fs::read_to_string(policy.join("ablation.tsv")).unwrap();
    assert!(table.lines().nth(1).unwrap().starts_with("dream-latent\t1\t"));
    assert!(table.contains("# missing: no-touch, no-dream, dream-raw"));
}

#[test]
fn eval_refuses_a_checkpoint_from_another_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert!(gen(&data, "3").status.success());
    let other = tmp.path().join("other");
    let o = htd(&["gen-data", "--episodes", "1", "--image-size", "8", "--episode-len", "16", "--out", p(&other)]);
    assert!(o.status.success());
    let run = tmp.path().join("run");
    assert!(htd(&["train", "--data", p(&data), "--out", p(&run), "--steps", "1", "--small"]).status.success());
    let o = htd(&["eval", "--data", p(&other), "--checkpoint", p(&run.join("checkpoint")), "--out", p(&tmp.path().join("e"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn resume_continues_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert!(gen(&data, "5").status.success());
    let run = tmp.path().join("run");
    assert!(htd(&["train", "--data", p(&data), "--out", p(&run), "--steps", "2", "--small"]).status.success());
    let o = htd(&["train", "--data", p(&data), "--out", p(&run), "--resume", p(&run.join("checkpoint")), "--steps", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["steps"], 3);
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().filter(|l| l.starts_with("step")).count(), 1);
}

#[test]
fn lbc_check_reports_failing_cases_by_name() {
    let ok = htd(&["lbc-check"]);
    assert!(ok.status.success());
    assert!(stdout(&ok).contains("cases passed"));

    let tmp = tempfile::tempdir().unwrap();
    let mut cases: serde_json::Value = serde_json::from_str(htd_lbc::cases::BUNDLED_CASES).unwrap();
    let first = &mut cases["cases"][0];
    let name = first["name"].as_str().unwrap().to_string();
    let key = first["expected"].as_object().unwrap().keys().next().unwrap().clone();
    let v = first["expected"][&key].as_f64().unwrap();
    first["expected"][&key] = serde_json::json!(v + 1.0);
    let path = tmp.path().join("cases.json");
    fs::write(&path, serde_json::to_string(&cases).unwrap()).unwrap();
    let bad = htd(&["lbc-check", "--cases", p(&path)]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains(&name));

    fs::write(&path, r#"{"cases": []}"#).unwrap();
    assert_eq!(htd(&["lbc-check", "--cases", p(&path)]).status.code(), Some(2));
}
