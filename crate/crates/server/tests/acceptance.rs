//! Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use scm_forge_core::codec::validate_reply_shape;
use scm_forge_core::device::Device;
use scm_forge_core::job::{compile_job, JobAction, JobRequest, TargetStatus};
use scm_forge_core::repo::MemoryRepository;
use scm_forge_core::scm::{AppDescriptor, AppState, InventoryEntry, Origin};
use scm_forge_core::session::{Batch, Direction, Outcome, ServerSession, Transcript};
use scm_forge_core::{tree_doc, StatusCode};
use scm_forge_server::{Address, NewDevice, Service, ServiceConfig};
use scm_forge_testkit::checks;
use scm_forge_transport::replay::{acknowledged, replay};
use scm_forge_transport::{run_session, FaultPlan, Fleet, LinkConfig, Spot, DEFAULT_SERVER_ID};
use tokio::sync::Semaphore;

type CheckResult = Result<String, String>;

const SEED: u64 = 20_240_601;
const FLEET: usize = 10;
const DOWNLOADERS: usize = 3;
const CODEC_LIMIT: Duration = Duration::from_secs(10);
const ORACLE_LIMIT: Duration = Duration::from_secs(30);
const MEMORY_LIMIT: Duration = Duration::from_secs(5);
const TCP_LIMIT: Duration = Duration::from_secs(15);
const FIXTURE: &[u8] = include_bytes!("../../core/tests/fixtures/seeded_tree.xml");

fn link() -> LinkConfig {
    LinkConfig::with_deadline(Some(Duration::from_secs(5)))
}

/// Deadline for fault sessions. Only drops wait it out.
fn fault_link() -> LinkConfig {
    LinkConfig::with_deadline(Some(Duration::from_secs(1)))
}

fn within(what: &str, took: Duration, limit: Duration) -> Result<(), String> {
    if took < limit {
        Ok(())
    } else {
        Err(format!("{what} took {took:.2?}, limit {limit:?}"))
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed())
}

fn criterion_1() -> CheckResult {
    let (r, took) = timed(|| -> CheckResult {
        let a = checks::codec_roundtrip(1000, SEED)?;
        let b = checks::codec_mutation(1000, SEED)?;
        Ok(format!("{a}; {b}"))
    });
    let summary = r?;
    within("codec checks", took, CODEC_LIMIT)?;
    Ok(format!("{summary} in {took:.2?}"))
}

fn criterion_2() -> CheckResult {
    let (r, took) = timed(|| checks::tree_oracle(500, 200, SEED));
    let summary = r?;
    within("tree oracle", took, ORACLE_LIMIT)?;
    Ok(format!("{summary} in {took:.2?}"))
}

// --- criterion 5 and 6 ---------------------------------------------------------------

struct Apps {
    mail: AppDescriptor,
    mail_payload: Vec<u8>,
    mail_v2: AppDescriptor,
    mail_v2_payload: Vec<u8>,
    nav: AppDescriptor,
}

fn apps(repo: &MemoryRepository) -> Apps {
    let mail_payload: Vec<u8> = (0..4096u32).map(|i| (i * 7 % 251) as u8).collect();
    let mail_v2_payload: Vec<u8> = (0..5000u32).map(|i| (i * 13 % 241) as u8).collect();
    let nav_payload: Vec<u8> = (0..3000u32).map(|i| (i % 199) as u8).collect();
    repo.insert("nav-1.0.bin", nav_payload.clone());
    let ty = "application/java-archive";
    Apps {
        mail: AppDescriptor::for_payload("mail", "Mail", "1.0", "Acme", ty, &mail_payload),
        mail_v2: AppDescriptor::for_payload("mail", "Mail", "2.0", "Acme", ty, &mail_v2_payload),
        nav: AppDescriptor::for_payload("nav", "Navigator", "1.0", "Acme", ty, &nav_payload)
            .with_source(MemoryRepository::uri_for("nav-1.0.bin")),
        mail_payload,
        mail_v2_payload,
    }
}

/// Each pipeline step with the status code every target must report.
fn pipeline(a: &Apps, all: &[String]) -> Vec<(JobRequest, StatusCode)> {
    let few = all[..DOWNLOADERS].to_vec();
    let job = |targets: &[String], action| JobRequest {
        targets: targets.to_vec(),
        action,
    };
    vec![
        (
            job(
                &few,
                JobAction::RegisterDownload {
                    descriptor: a.nav.clone(),
                },
            ),
            StatusCode::Ok,
        ),
        (
            job(&few, JobAction::StartDownload { app_id: "nav".into() }),
            StatusCode::Accepted,
        ),
        (
            job(
                all,
                JobAction::Deliver {
                    descriptor: a.mail.clone(),
                    payload: a.mail_payload.clone(),
                },
            ),
            StatusCode::Ok,
        ),
        (job(all, JobAction::Install { app_id: "mail".into() }), StatusCode::Ok),
        (job(all, JobAction::Activate { app_id: "mail".into() }), StatusCode::Ok),
        (
            job(
                all,
                JobAction::Update {
                    app_id: "mail".into(),
                    descriptor: a.mail_v2.clone(),
                    payload: a.mail_v2_payload.clone(),
                },
            ),
            StatusCode::Ok,
        ),
        (
            job(all, JobAction::Deactivate { app_id: "mail".into() }),
            StatusCode::Ok,
        ),
        (job(all, JobAction::Remove { app_id: "mail".into() }), StatusCode::Ok),
    ]
}

/// Independent expectation for the final inventory: mail is gone everywhere; the
/// downloaders hold nav, delivered by download.
fn expected_inventory(index: usize) -> Vec<InventoryEntry> {
    if index >= DOWNLOADERS {
        return Vec::new();
    }
    vec![InventoryEntry {
        app_id: "nav".into(),
        name: "Navigator".into(),
        version: "1.0".into(),
        state: AppState::Delivered,
        origin: Origin::Download,
    }]
}

struct FleetRun {
    took: Duration,
    transcripts: BTreeMap<String, Transcript>,
}

async fn fleet_pipeline(tcp: bool) -> Result<FleetRun, String> {
    let fleet = Fleet::spawn(FLEET, SEED).map_err(|e| e.to_string())?;
    let a = apps(fleet.repo());
    let service = Service::open(ServiceConfig {
        link: link(),
        ..ServiceConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let _agents = if tcp {
        let agents = fleet.listen_all(link()).await.map_err(|e| e.to_string())?;
        for (d, agent) in fleet.devices().iter().zip(&agents) {
            service
                .register(NewDevice {
                    device_id: d.id().into(),
                    address: Some(Address::Tcp { addr: agent.addr }),
                    auth_name: Some(d.profile.auth_name.clone()),
                    secret: d.profile.auth_secret.clone(),
                })
                .await
                .map_err(|e| e.to_string())?;
        }
        agents
    } else {
        service.attach(&fleet).await.map_err(|e| e.to_string())?;
        Vec::new()
    };
    let ids = fleet.ids();
    let start = Instant::now();
    for (req, want) in pipeline(&a, &ids) {
        let name = req.action.name();
        let job = service.run_job(req).await.map_err(|e| e.to_string())?;
        for (target, status) in &job.status {
            if *status != (TargetStatus::Done { code: want }) {
                return Err(format!(
                    "{name} on {target}: {status:?}, expected Done{{{}}}",
                    want.code()
                ));
            }
        }
    }
    let inventory = service
        .run_job(JobRequest {
            targets: ids.clone(),
            action: JobAction::Inventory,
        })
        .await
        .map_err(|e| e.to_string())?;
    let took = start.elapsed();
    for (i, d) in fleet.devices().iter().enumerate() {
        if inventory.status[d.id()] != (TargetStatus::Done { code: StatusCode::Ok }) {
            return Err(format!("inventory on {}: {:?}", d.id(), inventory.status[d.id()]));
        }
        let local = d.device.lock().await.scm_inventory();
        let remote = service.inventory(d.id()).map_err(|e| e.to_string())?;
        if remote.session_id.as_ref() != inventory.sessions.get(d.id()) {
            return Err(format!(
                "{}: cached inventory is not from the inventory session",
                d.id()
            ));
        }
        if local != remote.entries {
            return Err(format!("{}: local {local:?} != remote {:?}", d.id(), remote.entries));
        }
        if local != expected_inventory(i) {
            return Err(format!(
                "{}: inventory {local:?}, expected {:?}",
                d.id(),
                expected_inventory(i)
            ));
        }
    }
    let transcripts = service
        .sessions(None)
        .into_iter()
        .map(|s| {
            let t = service.transcript(&s.session_id).expect("listed session");
            (s.session_id, t)
        })
        .collect();
    Ok(FleetRun { took, transcripts })
}

fn criterion_5(mem: &Result<FleetRun, String>, tcp: &Result<FleetRun, String>) -> CheckResult {
    let mem = mem.as_ref().map_err(|e| format!("in-memory: {e}"))?;
    let tcp = tcp.as_ref().map_err(|e| format!("tcp: {e}"))?;
    within("in-memory pipeline", mem.took, MEMORY_LIMIT)?;
    within("tcp pipeline", tcp.took, TCP_LIMIT)?;
    if mem.transcripts.keys().ne(tcp.transcripts.keys()) {
        return Err("in-memory and tcp runs recorded different sessions".into());
    }
    for (id, t) in &mem.transcripts {
        if t.to_jsonl() != tcp.transcripts[id].to_jsonl() {
            return Err(format!("session {id}: in-memory and tcp transcripts differ"));
        }
    }
    Ok(format!(
        "{} sessions, inventories agree; in-memory {:.2?}, tcp {:.2?}; transcripts byte-identical",
        mem.transcripts.len(),
        mem.took,
        tcp.took
    ))
}

fn check_transcript(id: &str, t: &Transcript) -> Result<usize, String> {
    if t.outcome() != Some(&Outcome::Ok) {
        return Err(format!("{id}: outcome {:?}", t.outcome()));
    }
    if !t.alternates() {
        return Err(format!("{id}: packages do not alternate"));
    }
    let mut pairs = 0;
    for w in t.entries.windows(2) {
        if w[0].direction != Direction::ServerToClient {
            continue;
        }
        let (req, reply) = (w[0].decode(), w[1].decode());
        let (Ok(req), Ok(reply)) = (req, reply) else {
            return Err(format!("{id}: undecodable package near msg {}", w[0].msg_id));
        };
        let v = validate_reply_shape(&req, &reply);
        if !v.is_empty() {
            return Err(format!("{id}: reply to msg {} has violations {v:?}", w[0].msg_id));
        }
        pairs += 1;
    }
    Ok(pairs)
}

fn criterion_6(runs: &[&Result<FleetRun, String>]) -> CheckResult {
    let (mut sessions, mut pairs) = (0, 0);
    for run in runs {
        let run = run.as_ref().map_err(|e| format!("no transcripts: {e}"))?;
        for (id, t) in &run.transcripts {
            pairs += check_transcript(id, t)?;
            sessions += 1;
        }
    }
    Ok(format!(
        "{sessions} transcripts, {pairs} request/reply pairs, no violations, strict alternation"
    ))
}

// --- criterion 7 ---------------------------------------------------------------------

fn fault_queue() -> Vec<Batch> {
    let payload: Vec<u8> = (0..200u8).collect();
    let d = AppDescriptor::for_payload("mail", "Mail", "1.0", "Acme", "application/java-archive", &payload);
    let deliver = compile_job(&JobAction::Deliver { descriptor: d, payload }).expect("valid");
    let install = compile_job(&JobAction::Install { app_id: "mail".into() }).expect("valid");
    vec![
        Batch::new(1, deliver.commands),
        Batch::new(2, install.commands).barrier(),
    ]
}

fn fresh_device() -> Device {
    let fleet = Fleet::spawn(1, SEED).expect("one device");
    let d = fleet.devices()[0].device.try_lock().expect("unshared").clone();
    d
}

struct FaultRun {
    outcome: Outcome,
    tree: Vec<u8>,
    replayed: Vec<u8>,
    transcript: String,
}

async fn faulted(plan: FaultPlan) -> FaultRun {
    let fleet = Fleet::spawn(1, SEED).expect("one device");
    let d = &fleet.devices()[0];
    let mut server = ServerSession::new(DEFAULT_SERVER_ID, d.id(), d.secret(), fault_queue());
    let mut device = d.device.lock().await;
    let (run, log) = run_session(&mut server, &mut device, plan, fault_link()).await;
    let mut fresh = fresh_device();
    replay(&mut fresh, &acknowledged(&log.records()), DEFAULT_SERVER_ID);
    FaultRun {
        outcome: run.outcome().clone(),
        tree: tree_doc::save(device.tree()),
        replayed: tree_doc::save(fresh.tree()),
        transcript: run.transcript.to_jsonl(),
    }
}

async fn fault_case(label: String, plan: FaultPlan) -> Result<(), String> {
    let first = faulted(plan.clone()).await;
    if first.outcome.is_ok() {
        return Err(format!("{label}: session completed"));
    }
    if first.tree != first.replayed {
        return Err(format!(
            "{label}: tree differs from the replay of acknowledged commands"
        ));
    }
    let again = faulted(plan).await;
    if (&again.outcome, &again.tree, &again.transcript) != (&first.outcome, &first.tree, &first.transcript) {
        return Err(format!(
            "{label}: second run diverged ({:?} vs {:?})",
            again.outcome, first.outcome
        ));
    }
    Ok(())
}

async fn criterion_7() -> CheckResult {
    let fleet = Fleet::spawn(1, SEED).map_err(|e| e.to_string())?;
    let d = &fleet.devices()[0];
    let mut server = ServerSession::new(DEFAULT_SERVER_ID, d.id(), d.secret(), fault_queue());
    let (clean, log) = run_session(
        &mut server,
        &mut *d.device.lock().await,
        FaultPlan::none(),
        fault_link(),
    )
    .await;
    let sizes: Vec<usize> = log.records().iter().map(|r| r.bytes.len()).collect();
    if !clean.outcome().is_ok() || sizes.len() != 6 {
        return Err(format!(
            "clean session: {:?} with {} packages",
            clean.outcome(),
            sizes.len()
        ));
    }
    let width = std::thread::available_parallelism().map_or(4, |n| n.get());
    let permits = Arc::new(Semaphore::new(width));
    let mut cases = tokio::task::JoinSet::new();
    let mut spawn = |label: String, plan: FaultPlan| {
        let permits = permits.clone();
        cases.spawn(async move {
            let _permit = permits.acquire_owned().await.expect("open semaphore");
            fault_case(label, plan).await
        });
    };
    for (i, &len) in sizes.iter().enumerate() {
        let ordinal = i as u32 + 1;
        spawn(format!("drop package {ordinal}"), FaultPlan::drop(ordinal));
        for at in 0..len {
            spawn(
                format!("corrupt package {ordinal} byte {at}"),
                FaultPlan::corrupt_at(ordinal, Spot::At(at)),
            );
        }
    }
    let total = cases.len();
    let mut failures = Vec::new();
    while let Some(r) = cases.join_next().await {
        if let Err(e) = r.map_err(|e| e.to_string()).and_then(|r| r) {
            failures.push(e);
        }
    }
    if let Some(first) = failures.iter().min() {
        return Err(format!("{} of {total} faults misbehaved; e.g. {first}", failures.len()));
    }
    Ok(format!(
        "{total} faults (6 drops, {} corruptions over packages of {sizes:?} bytes) all abort deterministically; trees equal acknowledged replay",
        total - 6
    ))
}

// --- criterion 8 ---------------------------------------------------------------------

async fn criterion_8() -> CheckResult {
    let loaded = tree_doc::load(FIXTURE).map_err(|e| format!("fixture: {e}"))?;
    if tree_doc::save(&loaded) != FIXTURE {
        return Err("fixture document does not roundtrip byte-exact".into());
    }
    if tree_doc::save(checks::seeded_device().tree()) != FIXTURE {
        return Err("seeded device no longer renders the fixture".into());
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = || ServiceConfig {
        link: link(),
        state_dir: Some(dir.path().join("state")),
        ..ServiceConfig::default()
    };
    let fleet = Fleet::spawn(FLEET, SEED).map_err(|e| e.to_string())?;
    let a = apps(fleet.repo());
    let before = Service::open(ServiceConfig {
        repo: fleet.repo().clone(),
        ..config()
    })
    .map_err(|e| e.to_string())?;
    before.attach(&fleet).await.map_err(|e| e.to_string())?;
    let ids = fleet.ids();
    for (req, _) in pipeline(&a, &ids).into_iter().take(4) {
        before.run_job(req).await.map_err(|e| e.to_string())?;
    }
    before
        .run_job(JobRequest {
            targets: ids.clone(),
            action: JobAction::Inventory,
        })
        .await
        .map_err(|e| e.to_string())?;

    let after = Service::open(ServiceConfig {
        repo: fleet.repo().clone(),
        ..config()
    })
    .map_err(|e| format!("restore: {e}"))?;
    if before.devices() != after.devices() {
        return Err("device list differs after restore".into());
    }
    if before.jobs() != after.jobs() {
        return Err("job history differs after restore".into());
    }
    if before.sessions(None) != after.sessions(None) {
        return Err("session list differs after restore".into());
    }
    for s in before.sessions(None) {
        let (x, y) = (before.transcript(&s.session_id), after.transcript(&s.session_id));
        if x.map(|t| t.to_jsonl()).ok() != y.map(|t| t.to_jsonl()).ok() {
            return Err(format!("transcript {} differs after restore", s.session_id));
        }
    }
    for id in &ids {
        if before.tree_document(id) != after.tree_document(id) {
            return Err(format!("tree of {id} differs after restore"));
        }
        if before.inventory(id).ok() != after.inventory(id).ok() {
            return Err(format!("inventory of {id} differs after restore"));
        }
    }
    let counts = (before.jobs().len(), before.sessions(None).len());
    // The restored server and the original must behave the same from here on.
    let next = JobRequest {
        targets: ids.clone(),
        action: JobAction::Activate { app_id: "mail".into() },
    };
    let x = before.run_job(next.clone()).await.map_err(|e| e.to_string())?;
    let y = after.run_job(next).await.map_err(|e| e.to_string())?;
    if x != y {
        return Err(format!("follow-up job differs: {:?} vs {:?}", x.status, y.status));
    }
    for id in &ids {
        let sid = &x.sessions[id];
        let (tx, ty) = (before.transcript(sid), after.transcript(sid));
        if tx.map(|t| t.to_jsonl()).ok() != ty.map(|t| t.to_jsonl()).ok() {
            return Err(format!("follow-up session {sid} differs"));
        }
        if before.tree_document(id) != after.tree_document(id) {
            return Err(format!("tree of {id} diverged after the follow-up job"));
        }
    }
    Ok(format!(
        "fixture roundtrip byte-exact ({} bytes); {} devices, {} jobs, {} sessions restored identically; follow-up job agrees",
        FIXTURE.len(),
        ids.len(),
        counts.0,
        counts.1
    ))
}

fn report(n: u32, name: &str, r: &CheckResult) -> bool {
    match r {
        Ok(s) => println!("[PASS] criterion {n} {name}: {s}"),
        Err(e) => println!("[FAIL] criterion {n} {name}: {e}"),
    }
    r.is_ok()
}

fn main() {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .expect("runtime");
    let mut ok = true;
    ok &= report(1, "codec roundtrip", &criterion_1());
    ok &= report(2, "tree oracle equivalence", &criterion_2());
    ok &= report(3, "ACL enforcement", &checks::acl_matrix());
    ok &= report(4, "lifecycle exhaustion", &checks::lifecycle_table());
    let mem = rt.block_on(fleet_pipeline(false));
    let tcp = rt.block_on(fleet_pipeline(true));
    ok &= report(5, "end-to-end fleet scenario", &criterion_5(&mem, &tcp));
    ok &= report(6, "session correlation", &criterion_6(&[&mem, &tcp]));
    ok &= report(7, "fault injection", &rt.block_on(criterion_7()));
    ok &= report(8, "persistence", &rt.block_on(criterion_8()));
    if !ok {
        std::process::exit(1);
    }
}
