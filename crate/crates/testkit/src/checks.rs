//! Whole-property checks shared by the crate test suites and the acceptance runner.
//!
//! Each check returns a one-line summary on success and a description of the first
//! counterexample otherwise.

use std::sync::Arc;

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scm_forge_core::acl::Acl;
use scm_forge_core::codec::{decode, encode};
use scm_forge_core::device::{Device, DeviceProfile};
use scm_forge_core::repo::MemoryRepository;
use scm_forge_core::scm::{AppDescriptor, AppState, Operation};
use scm_forge_core::tree::{Clock, NodeSpec, Replacement, TreeError};
use scm_forge_core::{tree_doc, DmCommand, DmItem, NodeUri, Requester, StatusCode};

use crate::{messages, tree_oracle};

pub type CheckResult = Result<String, String>;

fn uri(s: &str) -> NodeUri {
    NodeUri::parse(s).expect("static uri")
}

/// `n` random packages survive encode then decode unchanged; every variant shows up.
pub fn codec_roundtrip(n: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = [0usize; 10];
    for i in 0..n {
        let mut m = messages::message(&mut rng);
        // make sure every variant appears early
        if i < 10 && !m.body.is_empty() {
            let pos = rng.random_range(0..m.body.len());
            if m.body[pos] != DmCommand::Final {
                let id = m.body[pos].cmd_id().unwrap_or(1);
                m.body[pos] = messages::command(&mut rng, i % 9, id);
            }
        }
        for c in &m.body {
            seen[messages::variant(c)] += 1;
        }
        let bytes = encode(&m).map_err(|e| format!("message {i}: encode failed: {e}"))?;
        let back = decode(&bytes).map_err(|e| format!("message {i}: decode failed: {e}"))?;
        if back != m {
            return Err(format!("message {i}: roundtrip changed the message\n{m:?}\n{back:?}"));
        }
    }
    if let Some(k) = seen.iter().position(|&c| c == 0) {
        return Err(format!("command variant {k} never generated"));
    }
    Ok(format!("{n} messages, variant counts {seen:?}"))
}

/// Mutated documents either fail to decode or decode to a valid, stable message.
pub fn codec_mutation(n: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut accepted, mut rejected) = (0, 0);
    for i in 0..n {
        let m = messages::message(&mut rng);
        let bytes = encode(&m).map_err(|e| format!("document {i}: encode failed: {e}"))?;
        let mut doc = messages::mutate(&mut rng, &bytes);
        if rng.random_bool(0.3) {
            doc = messages::mutate(&mut rng, &doc);
        }
        match decode(&doc) {
            Err(_) => rejected += 1,
            Ok(got) => {
                accepted += 1;
                got.validate()
                    .map_err(|e| format!("document {i}: decoded value violates invariants: {e}"))?;
                let again = encode(&got).map_err(|e| format!("document {i}: re-encode failed: {e}"))?;
                if decode(&again).ok().as_ref() != Some(&got) {
                    return Err(format!("document {i}: decoded value does not roundtrip"));
                }
            }
        }
    }
    Ok(format!("{n} documents, {accepted} decoded valid, {rejected} rejected"))
}

/// `n` random command sequences of up to `max_len` commands agree with the flat-map model.
pub fn tree_oracle(n: usize, max_len: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0;
    for run in 0..n {
        let (mut tree, mut model, clock) = tree_oracle::fresh_pair(&mut rng, 1_600_000_000);
        let len = rng.random_range(1..=max_len);
        total += len;
        tree_oracle::random_run(&mut rng, &mut tree, &mut model, &clock, len).map_err(|e| format!("run {run}: {e}"))?;
        let doc = tree_doc::save(&tree);
        let restored = tree_doc::load(&doc).map_err(|e| format!("run {run}: saved tree does not load: {e}"))?;
        if tree_oracle::snapshot_real(&restored) != model.snapshot() || tree_doc::save(&restored) != doc {
            return Err(format!("run {run}: serialized state differs from the model"));
        }
    }
    Ok(format!("{n} sequences, {total} commands"))
}

fn acl_device() -> Device {
    let clock = Clock::manual(chrono_epoch());
    let mut d = Device::from_profile(&DeviceProfile::new("SIM-ACL", "srvA", "pw"), clock);
    let t = d.tree_mut();
    let dev = Requester::Device;
    t.add(&uri("./Lab"), NodeSpec::interior(), &dev).expect("fixture");
    t.add(&uri("./Lab/Box"), NodeSpec::interior(), &dev).expect("fixture");
    t.add(&uri("./Lab/Box/Leaf"), NodeSpec::text("v"), &dev)
        .expect("fixture");
    let payload = vec![7u8; 64];
    let desc = AppDescriptor::for_payload("mail", "Mail", "1.0", "Acme", "application/java-archive", &payload);
    d.scm_deliver(&desc, &payload).expect("fixture");
    d
}

fn chrono_epoch() -> DateTime<Utc> {
    DateTime::from_timestamp(1_700_000_000, 0).expect("in range")
}

fn set_acl(d: &mut Device, at: &str, acl: &str) {
    let acl: Acl = acl.parse().expect("static acl");
    d.tree_mut()
        .replace(&uri(at), &[Replacement::Acl(acl)], &Requester::Device)
        .expect("fixture");
}

const APP_OP: &str = "./SCM/Inventory/Delivered/mail/Operations/Install";
const APP_ROOT: &str = "./SCM/Inventory/Delivered/mail";

/// (description, node whose ACL is consulted, its parent, command)
fn acl_cases() -> Vec<(&'static str, &'static str, &'static str, DmCommand)> {
    let item = |t: &str| DmItem::target(uri(t));
    let get = DmCommand::Get {
        cmd_id: 1,
        items: vec![item("./Lab/Box/Leaf")],
    };
    let add = DmCommand::Add {
        cmd_id: 1,
        items: vec![item("./Lab/Box/New").with_data("n")],
    };
    let replace = DmCommand::Replace {
        cmd_id: 1,
        items: vec![item("./Lab/Box/Leaf").with_data("w")],
    };
    let delete = DmCommand::Delete {
        cmd_id: 1,
        items: vec![item("./Lab/Box/Leaf")],
    };
    let copy = DmCommand::Copy {
        cmd_id: 1,
        items: vec![DmItem {
            source: Some("./Lab/Box/Leaf".into()),
            ..item("./Lab/Box/Dup")
        }],
    };
    let exec = DmCommand::Exec {
        cmd_id: 1,
        item: item(APP_OP),
    };
    vec![
        ("Get", "./Lab/Box/Leaf", "./Lab/Box", get),
        ("Add", "./Lab/Box", "./Lab", add),
        ("Replace", "./Lab/Box/Leaf", "./Lab/Box", replace),
        ("Delete", "./Lab/Box/Leaf", "./Lab/Box", delete),
        ("Copy(Get on source)", "./Lab/Box/Leaf", "./Lab/Box", copy.clone()),
        ("Copy(Add on target parent)", "./Lab/Box", "./Lab", copy),
        ("Exec", APP_OP, APP_ROOT, exec),
    ]
}

fn acl_kind(desc: &str) -> &'static str {
    match desc {
        "Get" | "Copy(Get on source)" => "Get",
        "Add" | "Copy(Add on target parent)" => "Add",
        "Replace" => "Replace",
        "Delete" => "Delete",
        _ => "Exec",
    }
}

/// Runs `cmd` directly against the tree API for the tree-level kinds.
fn tree_api(d: &mut Device, cmd: &DmCommand, who: &Requester) -> Option<Result<(), TreeError>> {
    let t = d.tree_mut();
    let target = cmd.items().first()?.target.clone()?;
    Some(match cmd {
        DmCommand::Get { .. } => t.get(&target, who).map(|_| ()),
        DmCommand::Add { .. } => t.add(&target, NodeSpec::text("n"), who),
        DmCommand::Replace { .. } => t.replace(&target, &[Replacement::Value(b"w".to_vec())], who),
        DmCommand::Delete { .. } => t.delete(&target, who),
        DmCommand::Copy { items, .. } => t.copy(&uri(items[0].source.as_deref()?), &target, who),
        _ => return None,
    })
}

/// Every command kind, denied through an own, inherited or explicitly empty grant, yields
/// 425 and leaves the serialized tree untouched.
pub fn acl_matrix() -> CheckResult {
    let intruder = Requester::server("srvX");
    let mut count = 0;
    for (desc, node, parent, cmd) in acl_cases() {
        let kind = acl_kind(desc);
        let setups: [(&str, Vec<(&str, String)>); 3] = [
            ("own", vec![(node, format!("{kind}=srvA"))]),
            ("inherited", vec![(parent, format!("{kind}=srvA"))]),
            (
                "empty-grant",
                vec![(parent, format!("{kind}=*")), (node, format!("{kind}="))],
            ),
        ];
        for (case, acls) in setups {
            let mut d = acl_device();
            for (at, acl) in &acls {
                set_acl(&mut d, at, acl);
            }
            let before = tree_doc::save(d.tree());
            let code = d.execute(&cmd, "srvX").code;
            if code != StatusCode::PermissionDenied {
                return Err(format!("{desc} with {case} ACL: status {} instead of 425", code.code()));
            }
            if tree_doc::save(d.tree()) != before {
                return Err(format!("{desc} with {case} ACL: tree changed after a denied command"));
            }
            if let Some(r) = tree_api(&mut d, &cmd, &intruder) {
                if !matches!(r, Err(TreeError::PermissionDenied { .. })) {
                    return Err(format!("{desc} with {case} ACL: tree api gave {r:?}"));
                }
                if tree_doc::save(d.tree()) != before {
                    return Err(format!("{desc} with {case} ACL: tree api changed the tree"));
                }
            }
            // the grant holder gets past the ACL, so the denial above is not vacuous
            if case != "empty-grant" {
                let code = d.execute(&cmd, "srvA").code;
                if code == StatusCode::PermissionDenied {
                    return Err(format!("{desc} with {case} ACL: grant holder also denied"));
                }
            }
            count += 1;
        }
    }
    Ok(format!("{count} denial cases"))
}

const APP: &str = "app";

fn lifecycle_device(state: AppState, via_download: bool) -> Device {
    let repo = Arc::new(MemoryRepository::new());
    let payload = vec![5u8; 256];
    repo.insert("app.jar", payload.clone());
    let clock = Clock::manual(chrono_epoch());
    let mut d = Device::from_profile(&DeviceProfile::new("SIM-LC", "srv", "pw"), clock).with_repo(repo);
    let desc = AppDescriptor::for_payload(APP, "App", "1.0", "Acme", "application/java-archive", &payload);
    if state == AppState::Downloadable || via_download {
        d.scm_register_download(&desc.clone().with_source(MemoryRepository::uri_for("app.jar")))
            .expect("fixture");
        if state != AppState::Downloadable {
            d.scm_perform(APP, Operation::Start).expect("fixture");
            d.complete_downloads();
        }
    } else {
        d.scm_deliver(&desc, &payload).expect("fixture");
    }
    if matches!(state, AppState::Inactive | AppState::Active) {
        d.scm_perform(APP, Operation::Install).expect("fixture");
    }
    if state == AppState::Active {
        d.scm_perform(APP, Operation::Activate).expect("fixture");
    }
    assert_eq!(d.locate_app(APP).map(|a| a.state), Some(state), "fixture state");
    d
}

/// The pairs that succeed, written out independently of the agent's own table.
const SUCCEEDS: [(&str, &str); 10] = [
    ("downloadable", "Start"),
    ("delivered", "Install"),
    ("delivered", "Remove"),
    ("delivered", "Update"),
    ("inactive", "Activate"),
    ("inactive", "Remove"),
    ("inactive", "Update"),
    ("active", "Deactivate"),
    ("active", "Remove"),
    ("active", "Update"),
];

fn run_op(d: &mut Device, op: Operation) -> StatusCode {
    let r = if op == Operation::Update {
        let payload = vec![6u8; 300];
        let desc = AppDescriptor::for_payload(APP, "App", "2.0", "Acme", "application/java-archive", &payload);
        d.scm_update(APP, &desc, &payload)
    } else {
        d.scm_perform(APP, op)
    };
    r.unwrap_or_else(|e| e.status())
}

/// All 4 x 6 (state, operation) pairs, plus Update on download-origin apps.
pub fn lifecycle_table() -> CheckResult {
    let mut ok = 0;
    let mut denied = 0;
    for via_download in [false, true] {
        for state in AppState::ALL {
            if via_download && state == AppState::Downloadable {
                continue;
            }
            for op in Operation::ALL {
                let mut d = lifecycle_device(state, via_download);
                let before = tree_doc::save(d.tree());
                let staged_before = d.staged().len();
                let listed = SUCCEEDS.contains(&(state.to_string().as_str(), op.as_str()));
                let expect_ok = listed && !(via_download && op == Operation::Update);
                let code = run_op(&mut d, op);
                let origin = if via_download { "download" } else { "dm_server" };
                let label = format!("({state}, {op:?}) origin {origin}");
                if expect_ok {
                    let want = if op == Operation::Start {
                        StatusCode::Accepted
                    } else {
                        StatusCode::Ok
                    };
                    if code != want {
                        return Err(format!("{label}: status {} instead of {}", code.code(), want.code()));
                    }
                    ok += 1;
                } else {
                    if code != StatusCode::NotAllowed {
                        return Err(format!("{label}: status {} instead of 405", code.code()));
                    }
                    if tree_doc::save(d.tree()) != before || d.staged().len() != staged_before {
                        return Err(format!("{label}: rejected operation changed the device"));
                    }
                    denied += 1;
                }
            }
        }
    }
    Ok(format!("{ok} allowed and {denied} rejected pairs as expected"))
}

/// Device whose tree exercises every property, value encoding and permanence kind.
pub fn seeded_device() -> Device {
    let repo = Arc::new(MemoryRepository::new());
    repo.insert("game.jar", vec![0x47u8; 300]);
    let clock = Clock::manual(chrono_epoch());
    let mut d = Device::from_profile(&DeviceProfile::new("SIM-0001", "srv", "s3cret"), clock).with_repo(repo);
    let mail: Vec<u8> = (0..=255u8).collect();
    let desc = AppDescriptor::for_payload(
        "mail",
        "Mail & <Co>",
        "1.0",
        "Acme \"Q\"",
        "application/java-archive",
        &mail,
    );
    d.scm_deliver(&desc, &mail).expect("fixture");
    d.scm_perform("mail", Operation::Install).expect("fixture");
    d.scm_perform("mail", Operation::Activate).expect("fixture");
    let gps = b"gps payload\n".to_vec();
    let desc = AppDescriptor::for_payload("gps", "GPS", "0.9", "Acme", "text/plain", &gps);
    d.scm_deliver(&desc, &gps).expect("fixture");
    let game = AppDescriptor::for_payload(
        "game",
        "Game",
        "2.1",
        "Play",
        "application/java-archive",
        &[0x47u8; 300],
    )
    .with_source(MemoryRepository::uri_for("game.jar"));
    d.scm_register_download(&game).expect("fixture");
    let t = d.tree_mut();
    let dev = Requester::Device;
    t.clock().advance(5);
    t.add(
        &uri("./Vendor"),
        NodeSpec::interior()
            .with_title("vendor ext")
            .with_acl("Get=*&Replace=srvA+srvB&Exec=".parse().expect("static acl")),
        &dev,
    )
    .expect("fixture");
    t.add(
        &uri("./Vendor/Note"),
        NodeSpec::text(" spaced\ttext & <markup> ").with_title("t\"q\""),
        &dev,
    )
    .expect("fixture");
    t.add(
        &uri("./Vendor/Conf"),
        NodeSpec::leaf("<a x=\"1\">é</a>", scm_forge_core::tree::Format::Xml).with_type("text/xml"),
        &dev,
    )
    .expect("fixture");
    t.add(
        &uri("./Vendor/Flag"),
        NodeSpec::leaf("true", scm_forge_core::tree::Format::Bool),
        &dev,
    )
    .expect("fixture");
    t.add(&uri("./Vendor/Empty"), NodeSpec::text(""), &dev)
        .expect("fixture");
    t.copy(&uri("./DevInfo"), &uri("./Vendor/InfoCopy"), &dev)
        .expect("fixture");
    d
}
