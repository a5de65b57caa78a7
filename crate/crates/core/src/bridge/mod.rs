//! Line-delimited JSON protocol letting an external process act as the tracker.
//!
//! Every request line gets exactly one response line. Requests are `init`,
//! `predict`, `reset` and `close`; responses are `predict_result` (also used
//! as the acknowledgement for `init`, `reset` and `close`) or `error`.

mod client;
mod server;

pub use client::{Endpoint, RemoteTracker, DEFAULT_TIMEOUT};
pub use server::{serve, ServerState};

use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BridgeMessage {
    Init {
        version: String,
        video_id: String,
        #[serde(rename = "T")]
        video_length: usize,
        #[serde(rename = "N")]
        capacity: usize,
    },
    Predict {
        t: usize,
        bank: Vec<usize>,
    },
    PredictResult {
        q: f64,
        predicted_empty: bool,
    },
    Reset {},
    Close {},
    Error {
        code: String,
        message: String,
    },
}

impl BridgeMessage {
    pub fn ack() -> Self {
        BridgeMessage::PredictResult {
            q: 1.0,
            predicted_empty: false,
        }
    }

    pub fn error(code: &str, message: impl Into<String>) -> Self {
        BridgeMessage::Error {
            code: code.into(),
            message: message.into(),
        }
    }

    /// One protocol line, without the trailing newline.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("message serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_field_names() {
        let init = BridgeMessage::Init {
            version: "v1".into(),
            video_id: "a".into(),
            video_length: 4,
            capacity: 2,
        };
        assert_eq!(
            init.to_line(),
            r#"{"kind":"init","version":"v1","video_id":"a","T":4,"N":2}"#
        );
        assert_eq!(
            BridgeMessage::Predict {
                t: 3,
                bank: vec![0, 2]
            }
            .to_line(),
            r#"{"kind":"predict","t":3,"bank":[0,2]}"#
        );
        assert_eq!(
            BridgeMessage::ack().to_line(),
            r#"{"kind":"predict_result","q":1.0,"predicted_empty":false}"#
        );
        assert_eq!(BridgeMessage::Reset {}.to_line(), r#"{"kind":"reset"}"#);
        let back: BridgeMessage = serde_json::from_str(r#"{"kind":"close"}"#).unwrap();
        assert_eq!(back, BridgeMessage::Close {});
    }
}
