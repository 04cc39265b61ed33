use std::path::Path;
use std::process::{Command, Output};

use styleadapt_harness::Report;

fn styleadapt(args: &[&str], out: &Path) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_styleadapt"));
    cmd.env_remove("SA_ADAPT_SEED")
        .args(["--out-dir", out.to_str().unwrap(), "--channels", "8", "--samples-per-cluster", "10"])
        .args(args);
    cmd
}

fn ok(mut cmd: Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out
}

#[test]
fn train_bank_is_reproducible_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c, d) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"), dir.path().join("d"));
    ok(styleadapt(&["train-bank"], &a));
    ok(styleadapt(&["train-bank"], &b));
    let bank = |p: &Path| std::fs::read(p.join("bank_level0.sab")).unwrap();
    assert_eq!(bank(&a), bank(&b));
    assert_eq!(
        std::fs::read(a.join("train_report.txt")).unwrap(),
        std::fs::read(b.join("train_report.txt")).unwrap()
    );

    let mut env_seed = styleadapt(&["train-bank"], &c);
    env_seed.env("SA_ADAPT_SEED", "99");
    ok(env_seed);
    assert_ne!(bank(&a), bank(&c));

    // An explicit flag beats the environment.
    let mut both = styleadapt(&["--seed", "99", "train-bank"], &d);
    both.env("SA_ADAPT_SEED", "5");
    ok(both);
    assert_eq!(bank(&c), bank(&d));

    let text = std::fs::read_to_string(a.join("train_report.txt")).unwrap();
    let report = Report::parse_text(&text).unwrap();
    assert_eq!(report.command, "train-bank");
    assert_eq!(report.get("samples"), Some(40.0));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "k = 6\nalpha = 0.5\nweighting = \"paper-literal\"\n").unwrap();
    let out = ok(styleadapt(&["--config", cfg.to_str().unwrap(), "--alpha", "0.6", "show-config"], dir.path()));
    let shown = String::from_utf8(out.stdout).unwrap();
    let resolved = styleadapt_harness::RunConfig::from_toml_str(&shown).unwrap();
    assert_eq!(resolved.k, 6);
    assert_eq!(resolved.alpha, 0.6);
    assert_eq!(resolved.weighting, styleadapt_harness::config::WeightingMode::PaperLiteral);

    std::fs::write(&cfg, "alpha = -1.0\n").unwrap();
    let bad = styleadapt(&["--config", cfg.to_str().unwrap(), "show-config"], dir.path()).output().unwrap();
    assert!(!bad.status.success());
    std::fs::write(&cfg, "nonsense = 1\n").unwrap();
    let bad = styleadapt(&["--config", cfg.to_str().unwrap(), "show-config"], dir.path()).output().unwrap();
    assert!(String::from_utf8_lossy(&bad.stderr).contains("run.toml"));
}

#[test]
fn tta_run_and_inspect_bank() {
    let dir = tempfile::tempdir().unwrap();
    ok(styleadapt(&["train-bank"], dir.path()));
    ok(styleadapt(&["--tta-samples", "12", "tta-run", "--bank-dir", dir.path().to_str().unwrap()], dir.path()));
    let report = Report::parse_text(&std::fs::read_to_string(dir.path().join("tta_report.txt")).unwrap()).unwrap();
    assert_eq!(report.get("replacements"), Some(0.0));
    assert_eq!(report.get("prototype_count_constant"), Some(1.0));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("tta_report.json")).unwrap()).unwrap();
    assert_eq!(summary["command"], "tta-run");

    let bank = dir.path().join("tta").join("bank_level0.sab");
    let out = ok(styleadapt(&["inspect-bank", bank.to_str().unwrap()], dir.path()));
    let inspected = Report::parse_text(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(inspected.get("capacity"), Some(4.0));
    assert_eq!(inspected.get("tta_mode"), Some(1.0));
    assert_eq!(inspected.get("channels"), Some(8.0));
}

#[test]
fn missing_inputs_name_their_paths() {
    let dir = tempfile::tempdir().unwrap();
    let out = styleadapt(&["tta-run", "--bank-dir", "/definitely/not/here"], dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/definitely/not/here"));

    let out = styleadapt(&["inspect-bank", "/no/such.sab"], dir.path()).output().unwrap();
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such.sab"));
}

#[test]
fn convert_annotations_then_run_ocl_demo() {
    let dir = tempfile::tempdir().unwrap();
    let coco = dir.path().join("coco.json");
    std::fs::write(
        &coco,
        r#"{"images": [{"id": 1, "height": 64, "width": 64}, {"id": 2, "height": 64, "width": 64}],
            "annotations": [{"image_id": 2, "category_id": 7, "bbox": [4, 4, 20, 30]},
                            {"image_id": 2, "category_id": 9, "bbox": [30, 10, 16, 16]}],
            "categories": [{"id": 7}, {"id": 8}, {"id": 9}]}"#,
    )
    .unwrap();
    let lines = dir.path().join("ann.txt");
    ok(styleadapt(
        &["convert-annotations", "--input", coco.to_str().unwrap(), "--output", lines.to_str().unwrap()],
        dir.path(),
    ));
    let records = styleadapt_harness::annotations::parse_records(&std::fs::read_to_string(&lines).unwrap()).unwrap();
    assert_eq!(records.len(), 2);
    assert_eq!(records[1].annotation.categories, vec![0, 2]);

    let out = ok(styleadapt(
        &[
            "--d", "32", "--heads", "4",
            "ocl-demo", "--annotations", lines.to_str().unwrap(), "--record", "2",
        ],
        dir.path(),
    ));
    let report = Report::parse_text(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(report.get("present_categories"), Some(2.0));
    assert_eq!(report.get("category1.zero_gradient"), Some(1.0));
    assert!(report.get("fd_max_relative_error").unwrap() < 1e-6);
    assert!(dir.path().join("ocl_params.satens").exists());
}

#[test]
fn bench_reports_protocol() {
    let dir = tempfile::tempdir().unwrap();
    // Keep the default 500-run protocol but a small pyramid for test speed.
    let cfg = dir.path().join("bench.toml");
    std::fs::write(&cfg, "bench_channels = 16\nbench_levels = [[16, 16], [8, 8]]\n").unwrap();
    let out = ok(styleadapt(&["--config", cfg.to_str().unwrap(), "bench"], dir.path()));
    let report = Report::parse_text(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(report.get("projection.runs"), Some(500.0));
    assert_eq!(report.get("tta_observe.runs"), Some(500.0));
    assert!(report.get("observe_overhead_ratio").is_some());
    let on_disk = Report::parse_text(&std::fs::read_to_string(dir.path().join("bench_report.txt")).unwrap()).unwrap();
    assert_eq!(on_disk, report);
}
