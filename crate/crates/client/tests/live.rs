use std::time::Duration;

use scm_forge_client::{Client, ClientError, Registration};
use scm_forge_core::job::{JobAction, JobRequest, TargetStatus};
use scm_forge_core::scm::AppDescriptor;
use scm_forge_server::{router, ApiConfig, Service, ServiceConfig};

async fn serve(config: ApiConfig) -> String {
    let app = router(Service::open(ServiceConfig::default()).unwrap(), config);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await });
    format!("http://{addr}")
}

fn reg(id: &str) -> Registration {
    Registration {
        device_id: id.into(),
        secret: "pw".into(),
        auth_name: None,
        address: None,
    }
}

#[tokio::test]
async fn deliver_and_install_through_the_client() {
    let c = Client::new(&serve(ApiConfig::default()).await);
    assert!(c.devices().await.unwrap().is_empty());
    c.register(&reg("d1")).await.unwrap();
    let payload = b"app".to_vec();
    let descriptor = AppDescriptor::for_payload("mail", "Mail", "1.0", "acme", "application/octet-stream", &payload);
    let wait = Duration::from_secs(10);
    for action in [
        JobAction::Deliver { descriptor, payload },
        JobAction::Install { app_id: "mail".into() },
        JobAction::Inventory,
    ] {
        let id = c
            .submit_job(&JobRequest {
                targets: vec!["d1".into()],
                action,
            })
            .await
            .unwrap();
        let job = c.wait_job(&id, Duration::from_millis(5), wait).await.unwrap();
        assert!(
            matches!(job.status["d1"], TargetStatus::Done { code } if code.is_success()),
            "{job:?}"
        );
    }
    let inv = c.inventory("d1").await.unwrap();
    assert_eq!(inv.entries.len(), 1);
    assert_eq!(
        c.device("d1").await.unwrap().inventory.unwrap().session_id,
        inv.session_id.clone().unwrap()
    );
    let sessions = c.sessions(Some("d1")).await.unwrap();
    assert_eq!(sessions.len(), 3);
    let t = c.transcript(&sessions[0].session_id).await.unwrap();
    assert!(t.lines().count() >= 4);
    assert_eq!(c.tree("d1").await.unwrap()["device_id"], "d1");
    assert_eq!(c.jobs().await.unwrap().len(), 3);
}

#[tokio::test]
async fn api_errors_carry_the_message() {
    let c = Client::new(&serve(ApiConfig::default()).await);
    c.register(&reg("d1")).await.unwrap();
    match c.register(&reg("d1")).await {
        Err(ClientError::Api { status, message }) => {
            assert_eq!(status.as_u16(), 409);
            assert!(message.contains("already registered"), "{message}");
        }
        other => panic!("{other:?}"),
    }
    assert!(matches!(c.job("job-000404").await, Err(ClientError::Api { status, .. }) if status.as_u16() == 404));
}

#[tokio::test]
async fn token_is_sent() {
    let url = serve(ApiConfig {
        admin_token: Some("tok".into()),
        console_dir: None,
    })
    .await;
    assert!(
        matches!(Client::new(&url).devices().await, Err(ClientError::Api { status, .. }) if status.as_u16() == 401)
    );
    assert!(Client::new(&url)
        .with_token(Some("tok".into()))
        .devices()
        .await
        .unwrap()
        .is_empty());
}
