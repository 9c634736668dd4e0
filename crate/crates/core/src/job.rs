//! Deployment jobs and their compilation to DM commands.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{DmCommand, DmItem};
use crate::scm::{self, AppDescriptor, Location, Operation, ScmError};
use crate::status::StatusCode;
use crate::uri::NodeUri;

pub(crate) mod b64 {
    use base64::engine::general_purpose::STANDARD as B64;
    use base64::Engine as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&B64.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        B64.decode(text.as_bytes()).map_err(serde::de::Error::custom)
    }
}

/// One deployment step. Payloads travel base64-encoded in JSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum JobAction {
    Deliver {
        descriptor: AppDescriptor,
        #[serde(with = "b64")]
        payload: Vec<u8>,
    },
    Install {
        app_id: String,
    },
    Activate {
        app_id: String,
    },
    Deactivate {
        app_id: String,
    },
    Remove {
        app_id: String,
    },
    Update {
        app_id: String,
        descriptor: AppDescriptor,
        #[serde(with = "b64")]
        payload: Vec<u8>,
    },
    RegisterDownload {
        descriptor: AppDescriptor,
    },
    StartDownload {
        app_id: String,
    },
    Inventory,
    GetNode {
        uri: NodeUri,
    },
}

impl JobAction {
    pub fn name(&self) -> &'static str {
        match self {
            JobAction::Deliver { .. } => "deliver",
            JobAction::Install { .. } => "install",
            JobAction::Activate { .. } => "activate",
            JobAction::Deactivate { .. } => "deactivate",
            JobAction::Remove { .. } => "remove",
            JobAction::Update { .. } => "update",
            JobAction::RegisterDownload { .. } => "register_download",
            JobAction::StartDownload { .. } => "start_download",
            JobAction::Inventory => "inventory",
            JobAction::GetNode { .. } => "get_node",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobRequest {
    pub targets: Vec<String>,
    pub action: JobAction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TargetStatus {
    Pending,
    Done { code: StatusCode },
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum JobError {
    #[error("unknown job action {0:?}")]
    UnknownAction(String),
    #[error(transparent)]
    Scm(#[from] ScmError),
}

/// Commands for one target, plus whether their Get results drive an inventory crawl.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompiledJob {
    pub commands: Vec<DmCommand>,
    pub crawl: bool,
}

fn exec(location: Location, app_id: &str, op: Operation) -> Result<DmCommand, JobError> {
    let root = location.app_root(app_id)?;
    let target = root.join(&format!("Operations/{}", op.as_str())).expect("static");
    Ok(DmCommand::Exec {
        cmd_id: 0,
        item: DmItem::target(target),
    })
}

fn get(uri: NodeUri) -> DmCommand {
    DmCommand::Get {
        cmd_id: 0,
        items: vec![DmItem::target(uri)],
    }
}

/// Deterministic command list for `action`. Command ids are left at 0 for the session to
/// assign.
pub fn compile_job(action: &JobAction) -> Result<CompiledJob, JobError> {
    let plain = |commands| Ok(CompiledJob { commands, crawl: false });
    match action {
        JobAction::Deliver { descriptor, payload } => plain(vec![DmCommand::Add {
            cmd_id: 0,
            items: scm::delivery_items(descriptor, payload)?,
        }]),
        JobAction::Install { app_id } => plain(vec![exec(Location::Delivered, app_id, Operation::Install)?]),
        JobAction::Activate { app_id } => plain(vec![exec(Location::Deployed, app_id, Operation::Activate)?]),
        JobAction::Deactivate { app_id } => plain(vec![exec(Location::Deployed, app_id, Operation::Deactivate)?]),
        JobAction::Remove { app_id } => plain(vec![exec(Location::Deployed, app_id, Operation::Remove)?]),
        JobAction::StartDownload { app_id } => plain(vec![exec(Location::Download, app_id, Operation::Start)?]),
        JobAction::Update {
            app_id,
            descriptor,
            payload,
        } => {
            if descriptor.app_id != *app_id {
                return Err(ScmError::InvalidDescriptor(format!(
                    "descriptor is for {}, job for {app_id}",
                    descriptor.app_id
                ))
                .into());
            }
            plain(vec![DmCommand::Replace {
                cmd_id: 0,
                items: scm::update_items(Location::Deployed, descriptor, payload)?,
            }])
        }
        JobAction::RegisterDownload { descriptor } => plain(vec![DmCommand::Add {
            cmd_id: 0,
            items: scm::registration_items(descriptor)?,
        }]),
        JobAction::Inventory => Ok(CompiledJob {
            commands: vec![get(scm::uri(scm::INVENTORY)), get(scm::uri(scm::DOWNLOAD))],
            crawl: true,
        }),
        JobAction::GetNode { uri } => plain(vec![get(uri.clone())]),
    }
}

/// A target's outcome from the statuses of its job's commands: the first failure, else the
/// first command's code.
pub fn job_code(codes: &[StatusCode]) -> Option<StatusCode> {
    codes
        .iter()
        .copied()
        .find(|c| !c.is_success())
        .or_else(|| codes.first().copied())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn install_compiles_to_one_exec() {
        let job = compile_job(&JobAction::Install { app_id: "mail".into() }).unwrap();
        let DmCommand::Exec { item, .. } = &job.commands[0] else {
            panic!()
        };
        assert_eq!(
            item.target.as_ref().unwrap().to_string(),
            "./SCM/Inventory/Delivered/mail/Operations/Install"
        );
        assert_eq!(job.commands.len(), 1);
    }

    #[test]
    fn inventory_gets_both_subtrees() {
        let job = compile_job(&JobAction::Inventory).unwrap();
        let uris: Vec<String> = job
            .commands
            .iter()
            .map(|c| c.items()[0].target.as_ref().unwrap().to_string())
            .collect();
        assert_eq!(uris, ["./SCM/Inventory", "./SCM/Download"]);
        assert!(job.crawl);
    }

    #[test]
    fn action_json_shape() {
        let a: JobAction = serde_json::from_str(r#"{"action":"activate","app_id":"mail"}"#).unwrap();
        assert_eq!(a, JobAction::Activate { app_id: "mail".into() });
        assert!(serde_json::from_str::<JobAction>(r#"{"action":"frobnicate"}"#).is_err());
    }

    #[test]
    fn job_code_prefers_first_failure() {
        use StatusCode::*;
        assert_eq!(job_code(&[Ok, NotAllowed, Failed]), Some(NotAllowed));
        assert_eq!(job_code(&[Accepted]), Some(Accepted));
        assert_eq!(job_code(&[]), None);
    }
}
