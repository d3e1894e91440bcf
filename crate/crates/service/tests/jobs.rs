use colorize_service::jobs::{valid_artifact_name, JobKind, JobStatus, JobStore};
use colorize_service::ops::{JobRequest, RankRequest};
use colorize_service::ServiceError;

fn request() -> JobRequest {
    JobRequest::Rank(RankRequest {
        images: vec!["x".into()],
    })
}

#[test]
fn status_only_moves_forward() {
    use JobStatus::*;
    let all = [Queued, Running, Done, Failed];
    let allowed = [(Queued, Running), (Queued, Failed), (Running, Done), (Running, Failed)];
    for a in all {
        for b in all {
            assert_eq!(a.can_become(b), allowed.contains(&(a, b)), "{a:?} -> {b:?}");
        }
    }
}

#[test]
fn store_records_transitions_and_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let store = JobStore::open(dir.path()).unwrap();
    let a = store.create(&request(), "h1").unwrap();
    let b = store.create(&request(), "h1").unwrap();
    assert_ne!(a.id, b.id);
    assert_eq!(a.kind, JobKind::Rank);
    assert_eq!(a.status, JobStatus::Queued);

    let err = store.transition(&a.id, JobStatus::Done, |_| {}).unwrap_err();
    assert!(matches!(err, ServiceError::Transition { .. }));
    store.transition(&a.id, JobStatus::Running, |_| {}).unwrap();
    store.add_artifact(&a.id, "scores.json", b"{}").unwrap();
    store.add_artifact(&a.id, "scores.json", b"{}").unwrap();
    let done = store
        .transition(&a.id, JobStatus::Done, |j| {
            j.result = Some(serde_json::json!({"ok": true}))
        })
        .unwrap();
    assert_eq!(done.artifacts, vec!["scores.json".to_string()]);
    assert!(done.timings.finished_ms.is_some());
    assert!(store.transition(&a.id, JobStatus::Failed, |_| {}).is_err());
    store
        .transition(&b.id, JobStatus::Failed, |j| j.error = Some("boom".into()))
        .unwrap();

    let reopened = JobStore::open(dir.path()).unwrap();
    assert_eq!(reopened.get(&a.id).unwrap(), done);
    assert_eq!(reopened.get(&b.id).unwrap().error.as_deref(), Some("boom"));
    assert_eq!(reopened.request(&a.id).unwrap(), request());
    assert!(reopened.artifact_path(&a.id, "scores.json").is_some());
    assert!(reopened.artifact_path(&a.id, "job.json").is_none());
    assert!(reopened.get("missing").is_none());
}

#[test]
fn artifact_names_stay_inside_the_job() {
    for ok in ["out.png", "cell-r0-c3.png", "rescale-0.800.png"] {
        assert!(valid_artifact_name(ok), "{ok}");
    }
    for bad in [
        "",
        "../x.png",
        "a/b.png",
        ".hidden",
        "job.json",
        "request.json",
        "config-hash",
        "x y.png",
    ] {
        assert!(!valid_artifact_name(bad), "{bad}");
    }
    let dir = tempfile::tempdir().unwrap();
    let store = JobStore::open(dir.path()).unwrap();
    let job = store.create(&request(), "h").unwrap();
    assert!(store.add_artifact(&job.id, "../escape.png", b"x").is_err());
}
