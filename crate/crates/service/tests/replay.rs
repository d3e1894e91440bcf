mod common;

use colorize_service::jobs::{JobStatus, JobStore};
use colorize_service::ops::{replay, run_job, ColorizeRequest, EnhanceRequest, JobRequest};
use colorize_service::ServiceError;
use common::*;

fn colorize_request(seed: u32) -> JobRequest {
    JobRequest::Colorize(ColorizeRequest {
        image: png_b64(&test_image(18, 14, seed)),
        prompt: "a green circle".into(),
        negative: None,
        steps: Some(3),
        guidance: Some(2.0),
        color_scale: Some(1.1),
        use_ranker: true,
        trace: true,
    })
}

#[test]
fn identical_request_and_config_reproduce_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let store = JobStore::open(dir.path()).unwrap();
    let models = tiny_models(true, true);
    let requests = [
        colorize_request(1),
        JobRequest::Enhance(EnhanceRequest {
            image: png_b64(&test_image(16, 16, 2)),
            seeds: Some(vec![0.0, 0.004]),
            starts: Some(vec![0, 2]),
            prompt: String::new(),
            negative: None,
            steps: Some(3),
            guidance: None,
            color_scale: None,
        }),
    ];
    for req in &requests {
        let job = store.create(req, &models.config_hash).unwrap();
        run_job(&store, &models, &job.id, req).unwrap();
        assert_eq!(store.get(&job.id).unwrap().status, JobStatus::Done);

        // A fresh process: new store handle, freshly built models.
        let reopened = JobStore::open(dir.path()).unwrap();
        let checked = replay(&reopened, &tiny_models(true, true), &job.id).unwrap();
        assert!(checked.len() >= 2, "{checked:?}");
    }
}

#[test]
fn replay_detects_changed_output_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let store = JobStore::open(dir.path()).unwrap();
    let models = tiny_models(true, true);
    let req = colorize_request(3);
    let job = store.create(&req, &models.config_hash).unwrap();
    run_job(&store, &models, &job.id, &req).unwrap();

    let mut other = tiny_models(true, true);
    other.config_hash = "another".into();
    assert!(matches!(
        replay(&store, &other, &job.id),
        Err(ServiceError::ReplayMismatch(_))
    ));

    std::fs::write(store.dir(&job.id).join("out.png"), b"tampered").unwrap();
    assert!(matches!(
        replay(&store, &models, &job.id),
        Err(ServiceError::ReplayMismatch(_))
    ));
}

#[test]
fn failing_job_is_marked_failed() {
    let dir = tempfile::tempdir().unwrap();
    let store = JobStore::open(dir.path()).unwrap();
    let models = tiny_models(false, false);
    let req = colorize_request(4);
    let job = store.create(&req, &models.config_hash).unwrap();
    assert!(run_job(&store, &models, &job.id, &req).is_err());
    let failed = store.get(&job.id).unwrap();
    assert_eq!(failed.status, JobStatus::Failed);
    assert!(failed.error.unwrap().contains("denoiser"));
}
