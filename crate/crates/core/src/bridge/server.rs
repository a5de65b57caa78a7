use std::io::{BufRead, Write};

use super::{BridgeMessage, PROTOCOL_VERSION};
use crate::error::Result;
use crate::tracker::ScriptedTable;

/// Per-connection protocol state for a table-backed server.
#[derive(Debug)]
pub struct ServerState<'a> {
    table: &'a ScriptedTable,
    initialized: bool,
    last_t: usize,
}

impl<'a> ServerState<'a> {
    pub fn new(table: &'a ScriptedTable) -> Self {
        Self {
            table,
            initialized: false,
            last_t: 0,
        }
    }

    /// Handles one request line. Returns the response and whether the
    /// connection should close afterwards.
    pub fn handle_line(&mut self, line: &str) -> (BridgeMessage, bool) {
        let value: serde_json::Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => return (BridgeMessage::error("parse", e.to_string()), false),
        };
        let Some(kind) = value
            .get("kind")
            .and_then(|k| k.as_str())
            .map(str::to_owned)
        else {
            return (
                BridgeMessage::error("parse", "missing string field `kind`"),
                false,
            );
        };
        let message: BridgeMessage = match serde_json::from_value(value) {
            Ok(m) => m,
            Err(_)
                if ![
                    "init",
                    "predict",
                    "predict_result",
                    "reset",
                    "close",
                    "error",
                ]
                .contains(&kind.as_str()) =>
            {
                return (
                    BridgeMessage::error("kind", format!("unknown kind {kind:?}")),
                    false,
                );
            }
            Err(e) => return (BridgeMessage::error("parse", e.to_string()), false),
        };
        match message {
            BridgeMessage::Init {
                version,
                video_length,
                capacity,
                ..
            } => {
                if version != PROTOCOL_VERSION {
                    return (
                        BridgeMessage::error(
                            "version",
                            format!(
                                "unsupported version {version:?}, expected {PROTOCOL_VERSION:?}"
                            ),
                        ),
                        false,
                    );
                }
                if (video_length, capacity) != (self.table.video_length(), self.table.capacity()) {
                    return (
                        BridgeMessage::error(
                            "init",
                            format!(
                                "table is T={} N={}, client asked for T={video_length} N={capacity}",
                                self.table.video_length(),
                                self.table.capacity()
                            ),
                        ),
                        false,
                    );
                }
                self.initialized = true;
                self.last_t = 0;
                (BridgeMessage::ack(), false)
            }
            BridgeMessage::Predict { t, bank } => {
                if !self.initialized {
                    return (BridgeMessage::error("init", "predict before init"), false);
                }
                if t <= self.last_t {
                    return (
                        BridgeMessage::error(
                            "order",
                            format!("t={t} does not follow t={} without a reset", self.last_t),
                        ),
                        false,
                    );
                }
                match self.table.lookup(t, &bank) {
                    Ok((q, predicted_empty)) => {
                        self.last_t = t;
                        (BridgeMessage::PredictResult { q, predicted_empty }, false)
                    }
                    Err(e) => (BridgeMessage::error("state", e.to_string()), false),
                }
            }
            BridgeMessage::Reset {} => {
                self.last_t = 0;
                (BridgeMessage::ack(), false)
            }
            BridgeMessage::Close {} => (BridgeMessage::ack(), true),
            BridgeMessage::PredictResult { .. } | BridgeMessage::Error { .. } => (
                BridgeMessage::error("kind", format!("{kind:?} is a response, not a request")),
                false,
            ),
        }
    }
}

/// Serves `table` until `close` or end of input.
pub fn serve<R: BufRead, W: Write>(table: &ScriptedTable, input: R, mut output: W) -> Result<()> {
    let mut state = ServerState::new(table);
    for line in input.lines() {
        let line = line?;
        let (response, close) = state.handle_line(line.trim_end_matches('\r'));
        writeln!(output, "{}", response.to_line())?;
        output.flush()?;
        if close {
            break;
        }
    }
    Ok(())
}
