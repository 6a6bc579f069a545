mod common;

use std::path::Path;
use std::process::Command;

use s3monitor::pipeline::{sha256_hex, Pipeline, RunManifest, Stage, MANIFEST_FILE, SNAPSHOT_FILE};

const BIN: &str = env!("CARGO_BIN_EXE_s3monitor");

fn manifest(run: &Path) -> RunManifest {
    RunManifest::load(&run.join(MANIFEST_FILE)).unwrap()
}

fn edit_config(config: &Path, f: impl FnOnce(&mut serde_json::Value)) {
    let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(config).unwrap()).unwrap();
    f(&mut v);
    std::fs::write(config, serde_json::to_vec_pretty(&v).unwrap()).unwrap();
}

#[test]
fn reruns_and_fresh_directories_give_identical_artifacts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    common::write_fixture(a.path());
    common::write_fixture(b.path());
    let pa = Pipeline::from_path(&a.path().join("config.json")).unwrap();
    let pb = Pipeline::from_path(&b.path().join("config.json")).unwrap();

    let s1 = pa.all().unwrap();
    let m1 = manifest(&pa.run_dir);
    let s2 = pa.all().unwrap();
    let s3 = pb.all().unwrap();
    assert_eq!(s1, s2);
    assert_eq!(s1, s3);
    assert_eq!(m1.without_timings(), manifest(&pa.run_dir).without_timings());
    assert_eq!(m1.without_timings(), manifest(&pb.run_dir).without_timings());

    for record in m1.stages.values() {
        for (rel, sha) in &record.artifacts {
            let bytes_a = std::fs::read(pa.run_dir.join(rel)).unwrap();
            assert_eq!(&sha256_hex(&bytes_a), sha, "{rel}");
            assert_eq!(bytes_a, std::fs::read(pb.run_dir.join(rel)).unwrap(), "{rel}");
        }
    }
    assert_eq!(m1.stages.len(), 3);
    assert_eq!(m1.seeds["embedding"], 42);
}

#[test]
fn rerunning_a_stage_drops_later_records() {
    let dir = tempfile::tempdir().unwrap();
    common::write_fixture(dir.path());
    let p = Pipeline::from_path(&dir.path().join("config.json")).unwrap();
    p.all().unwrap();
    p.ingest().unwrap();
    let m = manifest(&p.run_dir);
    assert_eq!(m.stages.keys().copied().collect::<Vec<_>>(), vec![Stage::Ingest]);
}

#[test]
fn changed_config_starts_a_new_manifest() {
    let dir = tempfile::tempdir().unwrap();
    common::write_fixture(dir.path());
    let config = dir.path().join("config.json");
    let p = Pipeline::from_path(&config).unwrap();
    p.ingest().unwrap();
    p.enrich().unwrap();
    let before = manifest(&p.run_dir);

    edit_config(&config, |v| v["topic"]["k"] = 9.into());
    let p = Pipeline::from_path(&config).unwrap();
    p.enrich().unwrap();
    let after = manifest(&p.run_dir);
    assert_ne!(before.config_hash, after.config_hash);
    assert_eq!(after.stages.keys().copied().collect::<Vec<_>>(), vec![Stage::Enrich]);
    assert_eq!(after.stages[&Stage::Enrich].counts["topics"], 9.0);
}

#[test]
fn stages_need_their_predecessors() {
    let dir = tempfile::tempdir().unwrap();
    common::write_fixture(dir.path());
    let p = Pipeline::from_path(&dir.path().join("config.json")).unwrap();
    let err = p.build().unwrap_err();
    assert_eq!(err.stage, Stage::Build.as_str());
    let err = p.enrich().unwrap_err();
    assert_eq!(err.stage, Stage::Enrich.as_str());
}

#[test]
fn cli_runs_the_pipeline_and_reports_failures_by_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(BIN).args(["fixture", "--out"]).arg(dir.path()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let config = dir.path().join("config.json");
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), config.display().to_string());

    for sub in ["ingest", "enrich", "build"] {
        let out = Command::new(BIN).arg(sub).arg("--config").arg(&config).output().unwrap();
        assert!(out.status.success(), "{sub}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert!(dir.path().join("run").join(SNAPSHOT_FILE).exists());

    // A stage failure is exit 1.
    std::fs::write(dir.path().join("inputs/regional_projects.csv"), "projectId,title\nX,Y\n").unwrap();
    let out = Command::new(BIN).arg("ingest").arg("--config").arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ingest"));

    // A config problem is exit 2 and names the field.
    edit_config(&config, |v| {
        v.as_object_mut().unwrap().remove("vocabulary");
    });
    let out = Command::new(BIN).arg("all").arg("--config").arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("vocabulary"));

    let out = Command::new(BIN).args(["all", "--config", "/nonexistent/config.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
