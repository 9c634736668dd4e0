//! Replaying what a device acknowledged, for checking fault containment.

use std::collections::BTreeMap;

use scm_forge_core::codec::decode;
use scm_forge_core::device::Device;
use scm_forge_core::session::Direction;
use scm_forge_core::DmCommand;

use crate::link::WireRecord;

/// Server commands the device answered with a Status in a package it sent, in the order
/// the device executed them. Packages are taken as sent, before any fault.
pub fn acknowledged(log: &[WireRecord]) -> Vec<DmCommand> {
    let mut issued: BTreeMap<(u32, u32), DmCommand> = BTreeMap::new();
    let mut out = Vec::new();
    for rec in log {
        let Ok(pkg) = decode(&rec.bytes) else { continue };
        match rec.direction {
            Direction::ServerToClient => {
                for cmd in pkg.body.iter().filter(|c| c.needs_status()) {
                    if let Some(id) = cmd.cmd_id() {
                        issued.insert((pkg.header.msg_id, id), cmd.clone());
                    }
                }
            }
            Direction::ClientToServer => {
                for cmd in &pkg.body {
                    if let DmCommand::Status { msg_ref, cmd_ref, .. } = cmd {
                        if let Some(c) = issued.remove(&(*msg_ref, *cmd_ref)) {
                            out.push(c);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Applies `commands` to `device` as one session would: session start, then each command.
pub fn replay(device: &mut Device, commands: &[DmCommand], server_id: &str) {
    device.begin_session();
    for c in commands {
        device.execute(c, server_id);
    }
}
