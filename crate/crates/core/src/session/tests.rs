use chrono::DateTime;

use super::*;
use crate::codec::{decode, validate_reply_shape, CommandName, DmCommand, DmItem, DmMessage};
use crate::device::{Device, DeviceProfile};
use crate::job::{compile_job, JobAction};
use crate::scm::{AppDescriptor, AppState};
use crate::status::StatusCode;
use crate::tree::Clock;
use crate::uri::NodeUri;

fn device() -> Device {
    let clock = Clock::manual(DateTime::from_timestamp(1_700_000_000, 0).unwrap());
    Device::from_profile(&DeviceProfile::new("SIM-0001", "srv", "secret"), clock)
}

fn secret() -> DeviceSecret {
    DeviceSecret {
        auth_name: "SIM-0001".into(),
        secret: "secret".into(),
    }
}

fn server(queue: Vec<Batch>) -> ServerSession {
    ServerSession::new("srv", "SIM-0001", secret(), queue)
}

fn batch(tag: u64, action: JobAction) -> Batch {
    let job = compile_job(&action).unwrap();
    let b = Batch::new(tag, job.commands);
    if job.crawl {
        b.crawl()
    } else {
        b
    }
}

fn names(pkg: &DmMessage) -> Vec<&'static str> {
    pkg.body.iter().map(|c| c.element_name()).collect()
}

#[test]
fn first_package_carries_alert_and_devinfo() {
    let mut d = device();
    let (_, pkg) = ClientSession::open(&mut d).unwrap();
    assert_eq!(names(&pkg), ["Alert", "Replace", "Final"]);
    assert_eq!(pkg.body[1].items().len(), 5);
    assert!(pkg.header.credentials.is_some());
}

fn bare_device(devinfo: &[&str]) -> Device {
    use crate::tree::{ManagementTree, NodeSpec, Requester};
    let mut t = ManagementTree::empty("SIM-0009", crate::Acl::allow_all(), Clock::System);
    let mut add = |u: &str, spec| t.add(&NodeUri::parse(u).unwrap(), spec, &Requester::Device).unwrap();
    add("./DMAcc", NodeSpec::interior());
    add("./DMAcc/ServerID", NodeSpec::text("srv"));
    add("./DMAcc/AAuthName", NodeSpec::text("SIM-0009"));
    add("./DMAcc/AAuthSecret", NodeSpec::text("pw"));
    if !devinfo.is_empty() {
        add("./DevInfo", NodeSpec::interior());
    }
    for leaf in devinfo {
        add(&format!("./DevInfo/{leaf}"), NodeSpec::text("x"));
    }
    Device::new(t, 1024, std::sync::Arc::new(crate::repo::MemoryRepository::new()))
}

#[test]
fn devinfo_item_count_follows_tree() {
    let mut d = bare_device(&["DevId", "Man", "Mod"]);
    let (_, pkg) = ClientSession::open(&mut d).unwrap();
    assert_eq!(pkg.body[1].items().len(), 3);
}

#[test]
fn missing_devinfo_is_an_error() {
    let mut d = bare_device(&[]);
    assert!(matches!(
        ClientSession::open(&mut d),
        Err(SessionError::Device(crate::device::DeviceError::MissingDevInfo))
    ));
}

#[test]
fn empty_queue_is_a_two_package_session() {
    let mut d = device();
    let mut s = server(vec![]);
    let t = run_in_process(&mut s, &mut d).unwrap();
    assert_eq!(t.entries.len(), 2);
    let s2 = t.entries[1].decode().unwrap();
    assert_eq!(names(&s2), ["Status", "Status", "Final"]);
    assert_eq!(t.outcome(), Some(&Outcome::Ok));
    assert_eq!(s.phase(), &SessionPhase::Closed(Outcome::Ok));
}

#[test]
fn bad_credentials_abort_with_401() {
    let mut d = device();
    let mut s = ServerSession::new(
        "srv",
        "SIM-0001",
        DeviceSecret {
            auth_name: "SIM-0001".into(),
            secret: "wrong".into(),
        },
        vec![batch(1, JobAction::Inventory)],
    );
    let t = run_in_process(&mut s, &mut d).unwrap();
    let s2 = t.entries[1].decode().unwrap();
    assert!(s2.body.iter().all(|c| matches!(
        c,
        DmCommand::Status {
            code: StatusCode::Unauthorized,
            ..
        } | DmCommand::Final
    )));
    assert!(matches!(t.outcome(), Some(Outcome::Aborted { .. })));
}

#[test]
fn get_is_answered_with_results() {
    let mut d = device();
    let uri = NodeUri::parse("./DevDetail/SwV").unwrap();
    let mut s = server(vec![batch(1, JobAction::GetNode { uri })]);
    let t = run_in_process(&mut s, &mut d).unwrap();
    assert_eq!(t.entries.len(), 4);
    let r = &s.reports()[0];
    assert_eq!(r.code, StatusCode::Ok);
    assert_eq!(r.results[0].data.as_deref(), Some(&b"1.0.0"[..]));
}

#[test]
fn add_then_get_in_one_package() {
    let mut d = device();
    let node = NodeUri::parse("./Vendor").unwrap();
    let add = DmCommand::Add {
        cmd_id: 0,
        items: vec![DmItem::target(node.clone()).with_data("hello")],
    };
    let get = DmCommand::Get {
        cmd_id: 0,
        items: vec![DmItem::target(node)],
    };
    let mut s = server(vec![Batch::new(1, vec![add, get])]);
    run_in_process(&mut s, &mut d).unwrap();
    let r = s.reports();
    assert_eq!((r[0].code, r[1].code), (StatusCode::Ok, StatusCode::Ok));
    assert_eq!(r[1].results[0].data.as_deref(), Some(&b"hello"[..]));
}

#[test]
fn failed_command_does_not_abort() {
    let mut d = device();
    let del = DmCommand::Delete {
        cmd_id: 0,
        items: vec![DmItem::target(NodeUri::parse("./DevInfo").unwrap())],
    };
    let mut s = server(vec![Batch::new(1, vec![del])]);
    let t = run_in_process(&mut s, &mut d).unwrap();
    assert_ne!(s.reports()[0].code, StatusCode::Ok);
    assert_eq!(t.outcome(), Some(&Outcome::Ok));
}

#[test]
fn missing_status_is_a_protocol_violation() {
    let mut d = device();
    let add = DmCommand::Add {
        cmd_id: 0,
        items: vec![DmItem::target(NodeUri::parse("./X").unwrap()).with_data("1")],
    };
    let mut s = server(vec![Batch::new(1, vec![add])]);
    let (mut client, first) = ClientSession::open(&mut d).unwrap();
    let ServerStep::Reply(s2) = s.on_package(&first).unwrap() else {
        panic!()
    };
    let ClientStep::Reply(mut c3) = client.on_package(&mut d, &s2).unwrap() else {
        panic!()
    };
    c3.body.retain(|c| {
        !matches!(
            c,
            DmCommand::Status {
                cmd: CommandName::Add,
                ..
            }
        )
    });
    assert!(matches!(s.on_package(&c3), Err(SessionError::ProtocolViolation(_))));
    assert!(matches!(s.phase(), SessionPhase::Closed(Outcome::Aborted { .. })));
    assert!(matches!(s.on_package(&c3), Err(SessionError::SessionMismatch { .. })));
}

#[test]
fn out_of_order_and_foreign_session() {
    let mut d = device();
    let mut s = server(vec![]);
    let (_, mut first) = ClientSession::open(&mut d).unwrap();
    first.header.msg_id = 2;
    assert!(matches!(
        s.on_package(&first),
        Err(SessionError::OutOfOrderMessage { expected: 1, found: 2 })
    ));
}

#[test]
fn closed_client_rejects_packages() {
    let mut d = device();
    let mut s = server(vec![]);
    let (mut client, first) = ClientSession::open(&mut d).unwrap();
    let ServerStep::Close { package: Some(s2), .. } = s.on_package(&first).unwrap() else {
        panic!()
    };
    assert_eq!(client.on_package(&mut d, &s2).unwrap(), ClientStep::Done(Outcome::Ok));
    assert!(matches!(
        client.on_package(&mut d, &s2),
        Err(SessionError::SessionMismatch { .. })
    ));
}

#[test]
fn barrier_batches_take_separate_iterations() {
    let mut d = device();
    let payload = vec![3u8; 512];
    let desc = AppDescriptor::for_payload("mail", "Mail", "1.0", "Acme", "application/java-archive", &payload);
    let mut s = server(vec![
        batch(
            1,
            JobAction::Deliver {
                descriptor: desc,
                payload,
            },
        ),
        batch(2, JobAction::Install { app_id: "mail".into() }).barrier(),
    ]);
    let t = run_in_process(&mut s, &mut d).unwrap();
    assert_eq!(t.entries.len(), 6);
    assert!(t.alternates());
    assert_eq!(d.scm_inventory()[0].state, AppState::Inactive);
}

#[test]
fn inventory_crawl_matches_local_inventory() {
    let mut d = device();
    let payload = vec![3u8; 512];
    for id in ["mail", "gps"] {
        let desc = AppDescriptor::for_payload(id, id, "1.0", "Acme", "application/java-archive", &payload);
        d.scm_deliver(&desc, &payload).unwrap();
    }
    d.scm_perform("mail", crate::scm::Operation::Install).unwrap();
    d.scm_perform("mail", crate::scm::Operation::Activate).unwrap();
    let mut s = server(vec![batch(7, JobAction::Inventory)]);
    let t = run_in_process(&mut s, &mut d).unwrap();
    let remote = crate::scm::classify_inventory(s.crawl(7).unwrap());
    assert_eq!(remote, d.scm_inventory());
    assert_eq!(remote.len(), 2);
    // setup, inventory gets, app ids, leaves
    assert_eq!(t.entries.len(), 8);
    let packages: Vec<DmMessage> = t.entries.iter().map(|e| decode(&e.raw).unwrap()).collect();
    for pair in packages[1..].chunks(2) {
        if let [req, reply] = pair {
            assert!(validate_reply_shape(req, reply).is_empty());
        }
    }
}
