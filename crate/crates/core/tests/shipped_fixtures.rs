//! The vectors under `conformance/` and the bundles under `fixtures/` are
//! generated. Set PORTAUTHZ_REGENERATE=1 to rewrite them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use portauthz::conformance::{run_vectors, run_vectors_with, vector_files, LEVELS};
use portauthz::scenario::{load_scenario, SCENARIOS};
use portauthz::suite::write_suite;

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn regenerate() -> bool {
    std::env::var("PORTAUTHZ_REGENERATE").is_ok_and(|v| v == "1")
}

#[test]
fn shipped_vectors_match_generator() {
    let shipped = repo_root().join("conformance");
    if regenerate() {
        let _ = std::fs::remove_dir_all(&shipped);
        write_suite(&shipped).unwrap();
    }
    let tmp = tempfile::tempdir().unwrap();
    write_suite(tmp.path()).unwrap();
    assert_eq!(snapshot(&shipped), snapshot(tmp.path()), "conformance/ is stale; regenerate it");
}

#[test]
fn shipped_bundles_match_generator() {
    for name in SCENARIOS {
        let shipped = repo_root().join("fixtures").join(name);
        let bundle = load_scenario(name).unwrap();
        if regenerate() {
            let _ = std::fs::remove_dir_all(&shipped);
            bundle.export(&shipped).unwrap();
        }
        let tmp = tempfile::tempdir().unwrap();
        bundle.export(tmp.path()).unwrap();
        assert_eq!(snapshot(&shipped), snapshot(tmp.path()), "fixtures/{name} is stale; regenerate it");
    }
}

#[test]
fn shipped_suite_runs_clean() {
    let dir = repo_root().join("conformance");
    for level in LEVELS {
        assert!(!vector_files(&dir.join(level)).unwrap().is_empty(), "{level} has no vectors");
    }
    let report = run_vectors(&dir).unwrap();
    assert!(report.total > 60);
    assert_eq!(report.passed, report.total, "{:#?}", report.failures);
}

#[test]
fn runner_notices_a_broken_audience_check() {
    // Moving the evaluator onto the credential's other audience emulates an
    // engine that no longer rejects foreign audiences.
    let dir = repo_root().join("conformance/level1_evaluation");
    let report = run_vectors_with(&dir, &|c| {
        if c.evaluator_id == "svc:bodyshopco:claims-api" {
            c.evaluator_id = "svc:othershop:claims-api".into();
        }
    })
    .unwrap();
    assert!(report.failures.iter().any(|f| f.vector_id == "L1-insurance-other-audience"));
    assert!(report.passed < report.total);
}
