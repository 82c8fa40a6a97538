use std::fs;
use std::path::Path;
use std::process::Command;

use mmprofile_cli::stages::EvaluationSummary;
use mmprofile_cli::{report_run, run_pipeline, CliError, Manifest, PipelineConfig, Stage};

fn small_config(out: &Path, extra: &str) -> PipelineConfig {
    let text = format!(
        "output_dir = {:?}\nseed = 5\n[synthetic]\nn_users = 60\nlabeled_train_per_class = 20\nlabeled_test_per_class = 5\n{extra}",
        out.display().to_string()
    );
    PipelineConfig::from_toml_str(&text, &[], out).unwrap()
}

fn pipeline() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pipeline"))
}

#[test]
fn validate_reports_missing_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "seed = 1\n[synthetic]\nn_users = 10\n").unwrap();
    let out = pipeline().arg("validate").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("output_dir"));

    fs::write(&cfg, "output_dir = \"run\"\n[synthetic]\nn_users = 10\n").unwrap();
    let out = pipeline().arg("validate").arg(&cfg).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn stacking_stages_run_from_a_feature_cache_alone() {
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("full");
    let cfg = small_config(&full, "");
    run_pipeline(&cfg, &Stage::ALL).unwrap();

    let iso = dir.path().join("iso");
    fs::create_dir_all(iso.join("features")).unwrap();
    for split in ["train", "test"] {
        fs::copy(full.join("features").join(format!("{split}.csv")), iso.join("features").join(format!("{split}.csv"))).unwrap();
    }
    let iso_cfg = PipelineConfig { output_dir: iso.clone(), ..cfg.clone() };
    run_pipeline(&iso_cfg, &[Stage::Stack, Stage::Fuse, Stage::Evaluate]).unwrap();
    assert!(!iso.join("models").exists() && !iso.join("ingest").exists());
    for f in ["stack/predictions.csv", "fuse/predictions.csv"] {
        assert_eq!(fs::read(full.join(f)).unwrap(), fs::read(iso.join(f)).unwrap(), "{f}");
    }
    let summary = |root: &Path| -> EvaluationSummary {
        serde_json::from_str(&fs::read_to_string(root.join("reports/metrics.json")).unwrap()).unwrap()
    };
    let (a, b) = (summary(&full), summary(&iso));
    assert_eq!(a.user_level, b.user_level);
    assert!(a.image_model.is_some() && b.image_model.is_none());

    report_run(&iso).unwrap();
    assert!(iso.join("reports").join("modalities.csv").is_file());
    let m = Manifest::load(&iso).unwrap().unwrap();
    assert_eq!(m.seed, Some(5));
    assert!(m.stages.contains_key("report") && m.stages["stack"].artifacts.contains_key("stack/predictions.csv"));
}

#[test]
fn missing_upstream_is_a_stage_dependency_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let err = run_pipeline(&cfg, &[Stage::Stack]).unwrap_err();
    match err {
        CliError::StageDependency { stage, upstream, missing } => {
            assert_eq!((stage, upstream), ("stack", "features"));
            assert!(missing.ends_with("features/train.csv"));
        }
        other => panic!("{other}"),
    }
    let err = run_pipeline(&cfg, &[Stage::TrainText]).unwrap_err();
    assert!(matches!(err, CliError::StageDependency { upstream: "ingest", .. }));
}

#[test]
fn cli_run_with_overrides_and_out_of_fold() {
    let dir = tempfile::tempdir().unwrap();
    let toml = dir.path().join("cfg.toml");
    fs::write(
        &toml,
        "output_dir = \"run\"\n[synthetic]\nn_users = 40\nlabeled_train_per_class = 10\nlabeled_test_per_class = 4\n",
    )
    .unwrap();
    let out = pipeline()
        .args(["run", toml.to_str().unwrap(), "--seed", "3", "--set", "stacking.out_of_fold=3", "--set", "stacking.hard_labels=true"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("run");
    assert!(run.join("models/text/folds/2/meta.json").is_file());
    assert!(String::from_utf8_lossy(&out.stdout).contains("Fused-FNN"));

    let header = fs::read_to_string(run.join("stack/predictions.csv")).unwrap();
    assert!(header.starts_with("user_id,target,model,label,predicted,p_female,p_male\n"));
    let m = Manifest::load(&run).unwrap().unwrap();
    assert_eq!(m.seed, Some(3));
    assert_eq!(m.stages.len(), Stage::ALL.len());

    let out = pipeline().args(["run", toml.to_str().unwrap(), "--stages", "fuse,bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = pipeline().arg("report").arg(&run).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("[image_combiners]"));
}

#[test]
fn synth_writes_loadable_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let toml = dir.path().join("cfg.toml");
    fs::write(&toml, "output_dir = \"run\"\ndata_dir = \"data\"\n[synthetic]\nn_users = 10\nlabeled_train_per_class = 2\nlabeled_test_per_class = 1\n").unwrap();
    let out = pipeline().arg("synth").arg(&toml).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let data = dir.path().join("data");
    assert!(data.join("pan").is_dir() && data.join("images").is_dir());
    let corpus = format!(
        "output_dir = \"run2\"\n[corpus]\npan_root = {:?}\nimage_root = {:?}\n",
        data.join("pan").display().to_string(),
        data.join("images").display().to_string()
    );
    let cfg = PipelineConfig::from_toml_str(&corpus, &[], dir.path()).unwrap();
    cfg.validate().unwrap();
    run_pipeline(&cfg, &[Stage::Ingest]).unwrap();
    assert!(dir.path().join("run2/ingest/chunks_test.json").is_file());
}
