//! Event-log records emitted by the simulator and consumed by the metrics
//! and harness layers.
//!
//! The wire format is one event per line: the slot number, an event kind
//! tag, then the integer payload fields for that kind.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// One simulator event, stamped with the slot at which its effect first
/// appears in the system state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    /// A status update entered the server→AP link (slot = generation slot).
    UpdateSent { slot: u64 },
    /// A status update reached the AP; `transit = slot - send_slot`.
    UpdateArrived { slot: u64, send_slot: u64, transit: u64 },
    /// The user read the AP. `aoi` is the AP age it saw; `launched` is false
    /// when every request slot was busy and no request went out.
    UserAccessed { slot: u64, aoi: u64, launched: bool },
    /// A request reached the remote service carrying age `tpaoi`.
    RequestArrived { slot: u64, access_slot: u64, tpaoi: u64 },
}

impl Event {
    pub fn slot(&self) -> u64 {
        match *self {
            Event::UpdateSent { slot }
            | Event::UpdateArrived { slot, .. }
            | Event::UserAccessed { slot, .. }
            | Event::RequestArrived { slot, .. } => slot,
        }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Event::UpdateSent { slot } => write!(f, "{slot} update_sent"),
            Event::UpdateArrived { slot, send_slot, transit } => {
                write!(f, "{slot} update_arrived {send_slot} {transit}")
            }
            Event::UserAccessed { slot, aoi, launched } => {
                write!(f, "{slot} user_accessed {aoi} {}", u8::from(launched))
            }
            Event::RequestArrived { slot, access_slot, tpaoi } => {
                write!(f, "{slot} request_arrived {access_slot} {tpaoi}")
            }
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceParseError {
    #[error("line {line}: expected `<slot> <kind> [payload..]`, got `{text}`")]
    Malformed { line: usize, text: String },
    #[error("line {line}: unknown event kind `{kind}`")]
    UnknownKind { line: usize, kind: String },
}

impl FromStr for Event {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut it = s.split_whitespace();
        let slot: u64 = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| s.to_string())?;
        let kind = it.next().ok_or_else(|| s.to_string())?;
        let int = |it: &mut std::str::SplitWhitespace<'_>| -> Result<u64, String> {
            it.next().and_then(|t| t.parse().ok()).ok_or_else(|| s.to_string())
        };
        match kind {
            "update_sent" => Ok(Event::UpdateSent { slot }),
            "update_arrived" => {
                let send_slot = int(&mut it)?;
                let transit = int(&mut it)?;
                Ok(Event::UpdateArrived { slot, send_slot, transit })
            }
            "user_accessed" => {
                let aoi = int(&mut it)?;
                let launched = int(&mut it)? != 0;
                Ok(Event::UserAccessed { slot, aoi, launched })
            }
            "request_arrived" => {
                let access_slot = int(&mut it)?;
                let tpaoi = int(&mut it)?;
                Ok(Event::RequestArrived { slot, access_slot, tpaoi })
            }
            other => Err(format!("kind:{other}")),
        }
    }
}

/// Serialize a trace to the line-delimited text format.
pub fn write_trace(events: &[Event]) -> String {
    let mut out = String::new();
    for ev in events {
        out.push_str(&ev.to_string());
        out.push('\n');
    }
    out
}

/// Parse a line-delimited trace; blank lines and `#` comments are skipped.
pub fn parse_trace(text: &str) -> Result<Vec<Event>, TraceParseError> {
    let mut events = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.parse::<Event>() {
            Ok(ev) => events.push(ev),
            Err(e) => {
                return Err(if let Some(kind) = e.strip_prefix("kind:") {
                    TraceParseError::UnknownKind { line: i + 1, kind: kind.to_string() }
                } else {
                    TraceParseError::Malformed { line: i + 1, text: line.to_string() }
                });
            }
        }
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_every_kind() {
        let events = vec![
            Event::UpdateSent { slot: 3 },
            Event::UpdateArrived { slot: 9, send_slot: 3, transit: 6 },
            Event::UserAccessed { slot: 20, aoi: 7, launched: true },
            Event::UserAccessed { slot: 41, aoi: 12, launched: false },
            Event::RequestArrived { slot: 26, access_slot: 20, tpaoi: 13 },
        ];
        let text = write_trace(&events);
        assert_eq!(parse_trace(&text).unwrap(), events);

        // Comments and blank lines are ignored.
        let commented = format!("# episode 0\n\n{text}");
        assert_eq!(parse_trace(&commented).unwrap(), events);
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(
            parse_trace("5 teleported 1"),
            Err(TraceParseError::UnknownKind { .. })
        ));
        assert!(matches!(
            parse_trace("not-a-slot update_sent"),
            Err(TraceParseError::Malformed { .. })
        ));
    }
}
