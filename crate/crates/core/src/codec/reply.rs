use std::collections::BTreeMap;

use serde::Serialize;

use super::{CommandName, DmCommand, DmMessage};
use crate::status::StatusCode;

/// A way in which a reply package fails to answer its request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    SessionMismatch,
    MissingStatus {
        cmd_ref: u32,
    },
    DuplicateStatus {
        cmd_ref: u32,
    },
    /// A Status names a different command than the one it references.
    StatusCommandMismatch {
        cmd_ref: u32,
    },
    MissingResults {
        cmd_ref: u32,
    },
    DuplicateResults {
        cmd_ref: u32,
    },
    /// Results for a command that produced none (not a Get, or a failed Get).
    UnexpectedResults {
        cmd_ref: u32,
    },
    OrphanStatus {
        msg_ref: u32,
        cmd_ref: u32,
    },
    OrphanResults {
        msg_ref: u32,
        cmd_ref: u32,
    },
}

/// Checks that `reply` answers every command in `request` exactly once.
///
/// Every command other than Status and Final needs one Status. A Get whose Status is 200
/// needs exactly one Results; any other command must get none.
pub fn validate_reply_shape(request: &DmMessage, reply: &DmMessage) -> Vec<Violation> {
    let mut out = Vec::new();
    if request.header.session_id != reply.header.session_id {
        out.push(Violation::SessionMismatch);
    }
    let msg_id = request.header.msg_id;

    let mut statuses: BTreeMap<u32, Vec<(CommandName, StatusCode)>> = BTreeMap::new();
    let mut results: BTreeMap<u32, usize> = BTreeMap::new();
    for cmd in &reply.body {
        match cmd {
            DmCommand::Status {
                msg_ref,
                cmd_ref,
                cmd,
                code,
                ..
            } if *msg_ref == msg_id => {
                statuses.entry(*cmd_ref).or_default().push((*cmd, *code));
            }
            DmCommand::Status { msg_ref, cmd_ref, .. } => out.push(Violation::OrphanStatus {
                msg_ref: *msg_ref,
                cmd_ref: *cmd_ref,
            }),
            DmCommand::Results { msg_ref, cmd_ref, .. } if *msg_ref == msg_id => {
                *results.entry(*cmd_ref).or_default() += 1;
            }
            DmCommand::Results { msg_ref, cmd_ref, .. } => out.push(Violation::OrphanResults {
                msg_ref: *msg_ref,
                cmd_ref: *cmd_ref,
            }),
            _ => {}
        }
    }

    let mut answered = Vec::new();
    for cmd in &request.body {
        let (Some(id), Some(name)) = (cmd.cmd_id(), cmd.name()) else {
            continue;
        };
        answered.push(id);
        let got = statuses.get(&id).map(Vec::as_slice).unwrap_or(&[]);
        match got {
            [] => out.push(Violation::MissingStatus { cmd_ref: id }),
            [(cmd_name, _)] if *cmd_name != name => out.push(Violation::StatusCommandMismatch { cmd_ref: id }),
            [_] => {}
            _ => out.push(Violation::DuplicateStatus { cmd_ref: id }),
        }
        let n_results = results.get(&id).copied().unwrap_or(0);
        let wants_results = name == CommandName::Get && matches!(got, [(_, StatusCode::Ok)]);
        match (wants_results, n_results) {
            (true, 0) => out.push(Violation::MissingResults { cmd_ref: id }),
            (true, 1) | (false, 0) => {}
            (true, _) => out.push(Violation::DuplicateResults { cmd_ref: id }),
            (false, _) => out.push(Violation::UnexpectedResults { cmd_ref: id }),
        }
    }

    for cmd_ref in statuses.keys() {
        if !answered.contains(cmd_ref) {
            out.push(Violation::OrphanStatus {
                msg_ref: msg_id,
                cmd_ref: *cmd_ref,
            });
        }
    }
    for cmd_ref in results.keys() {
        if !answered.contains(cmd_ref) {
            out.push(Violation::OrphanResults {
                msg_ref: msg_id,
                cmd_ref: *cmd_ref,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{DmHeader, DmItem};
    use crate::uri::NodeUri;

    fn msg(msg_id: u32, body: Vec<DmCommand>) -> DmMessage {
        DmMessage {
            header: DmHeader {
                proto_version: "1.2".into(),
                session_id: "s1".into(),
                msg_id,
                source: "a".into(),
                target: "b".into(),
                credentials: None,
            },
            body,
        }
    }

    fn get(cmd_id: u32) -> DmCommand {
        DmCommand::Get {
            cmd_id,
            items: vec![DmItem::target(NodeUri::parse("./DevInfo").unwrap())],
        }
    }

    fn status(cmd_id: u32, cmd_ref: u32, cmd: CommandName, code: StatusCode) -> DmCommand {
        DmCommand::Status {
            cmd_id,
            msg_ref: 2,
            cmd_ref,
            cmd,
            code,
        }
    }

    #[test]
    fn get_answered_with_status_and_results() {
        let req = msg(2, vec![get(2), DmCommand::Final]);
        let reply = msg(
            3,
            vec![
                status(1, 2, CommandName::Get, StatusCode::Ok),
                DmCommand::Results {
                    cmd_id: 2,
                    msg_ref: 2,
                    cmd_ref: 2,
                    items: vec![DmItem::default().with_data("x")],
                },
                DmCommand::Final,
            ],
        );
        assert_eq!(validate_reply_shape(&req, &reply), vec![]);
    }

    #[test]
    fn unanswered_add() {
        let add = DmCommand::Add {
            cmd_id: 2,
            items: vec![DmItem::target(NodeUri::parse("./A").unwrap())],
        };
        let req = msg(2, vec![add, DmCommand::Final]);
        let reply = msg(3, vec![DmCommand::Final]);
        assert_eq!(
            validate_reply_shape(&req, &reply),
            vec![Violation::MissingStatus { cmd_ref: 2 }]
        );
    }

    #[test]
    fn dangling_status() {
        let req = msg(2, vec![DmCommand::Final]);
        let reply = msg(
            3,
            vec![status(1, 99, CommandName::Get, StatusCode::Ok), DmCommand::Final],
        );
        assert_eq!(
            validate_reply_shape(&req, &reply),
            vec![Violation::OrphanStatus {
                msg_ref: 2,
                cmd_ref: 99
            }]
        );
    }

    #[test]
    fn failed_get_needs_no_results() {
        let req = msg(2, vec![get(2), DmCommand::Final]);
        let reply = msg(
            3,
            vec![status(1, 2, CommandName::Get, StatusCode::NotFound), DmCommand::Final],
        );
        assert_eq!(validate_reply_shape(&req, &reply), vec![]);
        let reply = msg(
            3,
            vec![status(1, 2, CommandName::Get, StatusCode::Ok), DmCommand::Final],
        );
        assert_eq!(
            validate_reply_shape(&req, &reply),
            vec![Violation::MissingResults { cmd_ref: 2 }]
        );
    }
}
