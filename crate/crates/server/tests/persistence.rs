use std::path::Path;

use scm_forge_core::job::{JobAction, JobRequest, TargetStatus};
use scm_forge_core::scm::AppDescriptor;
use scm_forge_server::{NewDevice, PersistError, Service, ServiceConfig, ServiceError};

fn config(dir: &Path) -> ServiceConfig {
    ServiceConfig {
        state_dir: Some(dir.to_path_buf()),
        ..ServiceConfig::default()
    }
}

async fn populated(dir: &Path) -> Service {
    let svc = Service::open(config(dir)).unwrap();
    for id in ["b", "a"] {
        svc.register(NewDevice {
            device_id: id.into(),
            address: None,
            auth_name: None,
            secret: format!("pw-{id}"),
        })
        .await
        .unwrap();
    }
    let payload = b"mail payload".to_vec();
    let descriptor = AppDescriptor::for_payload("mail", "Mail", "1.0", "acme", "application/octet-stream", &payload);
    let targets = vec!["a".to_string(), "b".to_string()];
    for action in [
        JobAction::Deliver { descriptor, payload },
        JobAction::Install { app_id: "mail".into() },
        JobAction::Inventory,
    ] {
        svc.run_job(JobRequest {
            targets: targets.clone(),
            action,
        })
        .await
        .unwrap();
    }
    svc
}

#[tokio::test]
async fn restore_reproduces_observable_state() {
    let dir = tempfile::tempdir().unwrap();
    let before = populated(dir.path()).await;
    let after = Service::open(config(dir.path())).unwrap();
    assert_eq!(before.devices(), after.devices());
    assert_eq!(before.jobs(), after.jobs());
    assert_eq!(before.sessions(None), after.sessions(None));
    for id in ["a", "b"] {
        assert_eq!(before.tree_document(id), after.tree_document(id));
        assert_eq!(before.inventory(id).unwrap(), after.inventory(id).unwrap());
        assert_eq!(before.inventory(id).unwrap().entries.len(), 1);
    }
    for s in before.sessions(None) {
        assert_eq!(
            before.transcript(&s.session_id).unwrap().to_jsonl(),
            after.transcript(&s.session_id).unwrap().to_jsonl()
        );
    }
}

#[tokio::test]
async fn restored_devices_keep_working() {
    let dir = tempfile::tempdir().unwrap();
    drop(populated(dir.path()).await);
    let svc = Service::open(config(dir.path())).unwrap();
    let job = svc
        .run_job(JobRequest {
            targets: vec!["a".into()],
            action: JobAction::Activate { app_id: "mail".into() },
        })
        .await
        .unwrap();
    assert_eq!(job.job_id, "job-000004");
    assert!(matches!(job.status["a"], TargetStatus::Done { code } if code.code() == 200));
    assert!(job.sessions["a"].ends_with("-0004"));
}

#[tokio::test]
async fn empty_dir_restores_empty() {
    let dir = tempfile::tempdir().unwrap();
    let svc = Service::open(config(dir.path())).unwrap();
    assert!(svc.devices().is_empty() && svc.jobs().is_empty());
}

#[tokio::test]
async fn corrupted_snapshot_is_a_schema_violation() {
    let dir = tempfile::tempdir().unwrap();
    drop(populated(dir.path()).await);
    let tree = dir.path().join("trees/a.xml");
    let mut bytes = std::fs::read(&tree).unwrap();
    bytes.truncate(bytes.len() / 2);
    std::fs::write(&tree, bytes).unwrap();
    match Service::open(config(dir.path())) {
        Err(ServiceError::Persist(PersistError::SchemaViolation { path, .. })) => assert_eq!(path, tree),
        other => panic!("{:?}", other.map(|_| ())),
    }
}

#[tokio::test]
async fn caches_from_missing_sessions_are_dropped() {
    let dir = tempfile::tempdir().unwrap();
    let before = populated(dir.path()).await;
    let sid = before.inventory("a").unwrap().session_id.unwrap();
    std::fs::remove_file(dir.path().join(format!("sessions/{sid}.jsonl"))).unwrap();
    let after = Service::open(config(dir.path())).unwrap();
    let inv = after.inventory("a").unwrap();
    assert!(inv.session_id.is_none() && inv.entries.is_empty());
    assert!(after.device("a").unwrap().devinfo.is_none());
    assert!(after.inventory("b").unwrap().session_id.is_some());
}
