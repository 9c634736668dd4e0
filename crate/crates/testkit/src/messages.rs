//! Random valid packages and mutated documents for codec testing.

use rand::seq::IndexedRandom;
use rand::Rng;
use scm_forge_core::codec::{AuthScheme, CommandName, Credentials, Meta};
use scm_forge_core::tree::Format;
use scm_forge_core::{DmCommand, DmHeader, DmItem, DmMessage, NodeUri, StatusCode};

const CHARS: &[char] = &[
    'a', 'b', 'z', 'A', 'Q', '0', '9', ' ', '-', '_', '.', ':', '/', '&', '<', '>', '"', '\'', ';', '=', '\t', '\n',
    '\r', 'é', 'ß', '中', '€', '🦀', '\u{7f}', '\u{fffd}',
];

const STATUS_CODES: [StatusCode; 9] = [
    StatusCode::Ok,
    StatusCode::Accepted,
    StatusCode::Unauthorized,
    StatusCode::NotFound,
    StatusCode::NotAllowed,
    StatusCode::Unsupported,
    StatusCode::AlreadyExists,
    StatusCode::PermissionDenied,
    StatusCode::Failed,
];

const COMMAND_NAMES: [CommandName; 8] = [
    CommandName::Alert,
    CommandName::Get,
    CommandName::Add,
    CommandName::Replace,
    CommandName::Delete,
    CommandName::Copy,
    CommandName::Exec,
    CommandName::Results,
];

const FORMATS: [Format; 6] = [
    Format::Node,
    Format::Chr,
    Format::Int,
    Format::Bool,
    Format::Bin,
    Format::Xml,
];

/// Text of up to `max` characters drawn from a pool rich in XML-significant characters.
pub fn text<R: Rng>(rng: &mut R, max: usize) -> String {
    let n = rng.random_range(0..=max);
    (0..n).map(|_| *CHARS.choose(rng).expect("non-empty")).collect()
}

fn non_empty_text<R: Rng>(rng: &mut R, max: usize) -> String {
    let mut s = text(rng, max);
    if s.is_empty() {
        s.push('x');
    }
    s
}

pub fn segment<R: Rng>(rng: &mut R) -> String {
    loop {
        let s: String = text(rng, 6).chars().filter(|c| !c.is_control() && *c != '/').collect();
        if !s.is_empty() && s != "." && s != ".." {
            return s;
        }
    }
}

pub fn uri<R: Rng>(rng: &mut R) -> NodeUri {
    let depth = rng.random_range(0..4);
    NodeUri::from_segments((0..depth).map(|_| segment(rng))).expect("valid segments")
}

fn item<R: Rng>(rng: &mut R, needs_target: bool, needs_source: bool) -> DmItem {
    let mut it = DmItem::default();
    if needs_target || rng.random_bool(0.5) {
        it.target = Some(uri(rng));
    }
    if needs_source || rng.random_bool(0.3) {
        it.source = Some(text(rng, 12));
    }
    if rng.random_bool(0.6) {
        it.meta = Some(Meta {
            format: rng.random_bool(0.7).then(|| *FORMATS.choose(rng).expect("non-empty")),
            mime_type: rng.random_bool(0.5).then(|| text(rng, 10)),
            size: rng.random_bool(0.3).then(|| rng.random()),
        });
    }
    let bin = it.format() == Some(Format::Bin);
    if rng.random_bool(0.7) || (it.target.is_none() && it.source.is_none()) {
        it.data = Some(if bin {
            let n = rng.random_range(0..40);
            (0..n).map(|_| rng.random()).collect()
        } else {
            text(rng, 20).into_bytes()
        });
    }
    it
}

fn items<R: Rng>(rng: &mut R, needs_target: bool, needs_source: bool) -> Vec<DmItem> {
    let n = rng.random_range(1..4);
    (0..n).map(|_| item(rng, needs_target, needs_source)).collect()
}

/// Command of variant `k` (0..10, in declaration order: Alert ... Final).
pub fn command<R: Rng>(rng: &mut R, k: usize, cmd_id: u32) -> DmCommand {
    let r = |rng: &mut R| rng.random_range(1..u32::MAX);
    match k {
        0 => DmCommand::Alert {
            cmd_id,
            code: rng.random(),
        },
        1 => DmCommand::Get {
            cmd_id,
            items: items(rng, true, false),
        },
        2 => DmCommand::Add {
            cmd_id,
            items: items(rng, true, false),
        },
        3 => DmCommand::Replace {
            cmd_id,
            items: items(rng, true, false),
        },
        4 => DmCommand::Delete {
            cmd_id,
            items: items(rng, true, false),
        },
        5 => DmCommand::Copy {
            cmd_id,
            items: items(rng, true, true),
        },
        6 => DmCommand::Exec {
            cmd_id,
            item: item(rng, true, false),
        },
        7 => DmCommand::Status {
            cmd_id,
            msg_ref: r(rng),
            cmd_ref: r(rng),
            cmd: *COMMAND_NAMES.choose(rng).expect("non-empty"),
            code: *STATUS_CODES.choose(rng).expect("non-empty"),
        },
        8 => DmCommand::Results {
            cmd_id,
            msg_ref: r(rng),
            cmd_ref: r(rng),
            items: items(rng, false, false),
        },
        _ => DmCommand::Final,
    }
}

/// Index of a command's variant, matching [`command`].
pub fn variant(cmd: &DmCommand) -> usize {
    match cmd {
        DmCommand::Alert { .. } => 0,
        DmCommand::Get { .. } => 1,
        DmCommand::Add { .. } => 2,
        DmCommand::Replace { .. } => 3,
        DmCommand::Delete { .. } => 4,
        DmCommand::Copy { .. } => 5,
        DmCommand::Exec { .. } => 6,
        DmCommand::Status { .. } => 7,
        DmCommand::Results { .. } => 8,
        DmCommand::Final => 9,
    }
}

/// A random package satisfying every codec invariant.
pub fn message<R: Rng>(rng: &mut R) -> DmMessage {
    let credentials = rng.random_bool(0.4).then(|| {
        let username: String = non_empty_text(rng, 8).replace(':', "-");
        let digest: String = (0..64)
            .map(|_| *b"0123456789abcdef".choose(rng).expect("non-empty") as char)
            .collect();
        Credentials {
            scheme: AuthScheme::Basic,
            username,
            digest,
        }
    });
    let header = DmHeader {
        proto_version: "1.2".into(),
        session_id: non_empty_text(rng, 12),
        msg_id: rng.random_range(1..u32::MAX),
        source: non_empty_text(rng, 10),
        target: non_empty_text(rng, 10),
        credentials,
    };
    let n = rng.random_range(0..7);
    let mut cmd_id = 0u32;
    let mut body: Vec<DmCommand> = (0..n)
        .map(|_| {
            cmd_id += rng.random_range(1..4);
            let k = rng.random_range(0..9);
            command(rng, k, cmd_id)
        })
        .collect();
    if body.is_empty() || rng.random_bool(0.8) {
        body.push(DmCommand::Final);
    }
    DmMessage { header, body }
}

/// Damages an encoded document in one of several ways.
pub fn mutate<R: Rng>(rng: &mut R, doc: &[u8]) -> Vec<u8> {
    let mut out = doc.to_vec();
    if out.is_empty() {
        return out;
    }
    let at = rng.random_range(0..out.len());
    match rng.random_range(0..8) {
        0 => out[at] ^= 1 << rng.random_range(0..8),
        1 => out[at] = rng.random(),
        2 => {
            out.remove(at);
        }
        3 => out.insert(at, *b"<>/&;\"= aZ09".choose(rng).expect("non-empty")),
        4 => out.truncate(at),
        5 => {
            // duplicate a span
            let end = rng.random_range(at..=out.len().min(at + 40));
            let span = out[at..end].to_vec();
            out.splice(at..at, span);
        }
        6 => {
            // swap one element name for another
            let text = String::from_utf8_lossy(&out).into_owned();
            let names = [
                "Alert",
                "Get",
                "Add",
                "Status",
                "Final",
                "Item",
                "Data",
                "CmdID",
                "MsgRef",
                "Meta",
                "Target",
                "Source",
                "Results",
                "Exec",
                "Frobnicate",
            ];
            let from = names.choose(rng).expect("non-empty");
            let to = names.choose(rng).expect("non-empty");
            out = text.replacen(from, to, 1).into_bytes();
        }
        _ => {
            // rewrite a digit
            if let Some(pos) = out.iter().skip(at).position(u8::is_ascii_digit) {
                out[at + pos] = *b"0123456789".choose(rng).expect("non-empty");
            }
        }
    }
    out
}
