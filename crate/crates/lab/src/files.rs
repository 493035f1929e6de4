//! Ticket (JSON) and checkpoint (binary) files.

use std::fs;
use std::path::Path;

use prunelab_core::codec::{decode_checkpoint, encode_checkpoint};
use prunelab_core::{Checkpoint, LayeredParams, Ticket};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub const TICKET_FORMAT: &str = "prunelab-ticket";
pub const TICKET_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TicketFile {
    format: String,
    version: u32,
    ticket: Ticket,
}

pub fn ticket_to_json(ticket: &Ticket) -> Result<String> {
    let file = TicketFile {
        format: TICKET_FORMAT.into(),
        version: TICKET_VERSION,
        ticket: ticket.clone(),
    };
    serde_json::to_string_pretty(&file).map_err(|e| LabError::Schema(e.to_string()))
}

pub fn ticket_from_json(text: &str, file: &str) -> Result<Ticket> {
    let parsed: TicketFile = serde_json::from_str(text).map_err(|e| LabError::Parse {
        file: file.into(),
        offset: line_col_to_offset(text, e.line(), e.column()),
        msg: e.to_string(),
    })?;
    if parsed.format != TICKET_FORMAT || parsed.version != TICKET_VERSION {
        return Err(LabError::Schema(format!(
            "{file}: expected {TICKET_FORMAT} v{TICKET_VERSION}, found {} v{}",
            parsed.format, parsed.version
        )));
    }
    let t = parsed.ticket;
    // deserialisation bypasses the constructors; re-run their checks
    let weights = LayeredParams::new(t.weights.specs().to_vec(), t.weights.layers().to_vec())?;
    Ok(Ticket::new(t.mask, weights, t.provenance)?)
}

fn line_col_to_offset(text: &str, line: usize, column: usize) -> u64 {
    if line == 0 {
        return 0;
    }
    let before: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (before + column.saturating_sub(1)) as u64
}

pub fn save_ticket(path: &Path, ticket: &Ticket) -> Result<()> {
    fs::write(path, ticket_to_json(ticket)?).map_err(LabError::io(path))
}

pub fn load_ticket(path: &Path) -> Result<Ticket> {
    let text = fs::read_to_string(path).map_err(LabError::io(path))?;
    ticket_from_json(&text, &path.display().to_string())
}

pub fn save_checkpoint(path: &Path, cp: &Checkpoint) -> Result<()> {
    fs::write(path, encode_checkpoint(cp)).map_err(LabError::io(path))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(LabError::io(path))?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        prunelab_core::Error::Schema(msg) => LabError::Schema(format!("{}: {msg}", path.display())),
        other => other.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use prunelab_core::model::preset;
    use prunelab_core::ticket::make_random_ticket;
    use prunelab_core::ArchFamily;

    #[test]
    fn ticket_json_roundtrip() {
        let specs = preset("conv-5", &[1, 8, 8], 3).unwrap();
        let t = make_random_ticket(&specs, 0.9, ArchFamily::PlainStack, 4).unwrap();
        let back = ticket_from_json(&ticket_to_json(&t).unwrap(), "t").unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn malformed_ticket_reports_offset() {
        let e = ticket_from_json("{\n  \"format\": 3", "t.json").unwrap_err();
        assert!(
            matches!(e, LabError::Parse { ref file, .. } if file == "t.json"),
            "{e}"
        );
    }
}
