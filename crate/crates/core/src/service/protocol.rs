//! Newline-delimited JSON messages exchanged with consoles.
//!
//! Every message carries `"v": 1`. Clients may omit it; any other value is
//! refused.

use serde::{Deserialize, Serialize};

use crate::control::Clamp;
use crate::error::{Error, Result};
use crate::verification::RunReport;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    /// Operator command `U_o`, with the client's clock in milliseconds.
    Input {
        u_o: f64,
        #[serde(default)]
        ct: Option<f64>,
    },
    Pause,
    Resume,
    Reset,
    SetTimescale { r: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Paused,
    Running,
    /// Reached the configured horizon.
    Finished,
    /// The solver failed; the frame's `error` says why.
    Faulted,
}

/// Snapshot of a session, safe to render on its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    pub seq: u64,
    pub state: SessionState,
    pub t: f64,
    pub s: f64,
    pub s_r: f64,
    pub qc: f64,
    pub p: Option<f64>,
    /// Node positions of `theta`, m.
    pub x: Vec<f64>,
    pub theta: Vec<f64>,
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
    pub h_min: f64,
    /// Held operator sample; absent for controllers without an operator.
    #[serde(rename = "U_o")]
    pub u_o: Option<f64>,
    #[serde(rename = "U_lower")]
    pub u_lower: Option<f64>,
    #[serde(rename = "U_upper")]
    pub u_upper: Option<f64>,
    #[serde(rename = "U_applied")]
    pub u_applied: f64,
    pub clamp: Option<Clamp>,
    pub violations: u64,
    pub timescale: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Frame(StateFrame),
    Report(RunReport),
    Error { code: String, msg: String },
}

impl ServerMessage {
    pub fn error(code: &str, msg: impl Into<String>) -> Self {
        ServerMessage::Error { code: code.to_string(), msg: msg.into() }
    }
}

#[derive(Serialize)]
struct OutEnvelope<'a> {
    v: u32,
    #[serde(flatten)]
    msg: &'a ServerMessage,
}

#[derive(Deserialize)]
struct InEnvelope<T> {
    v: Option<u32>,
    #[serde(flatten)]
    msg: T,
}

/// One JSON line, without the trailing newline.
pub fn encode(msg: &ServerMessage) -> Result<String> {
    Ok(serde_json::to_string(&OutEnvelope { v: PROTOCOL_VERSION, msg })?)
}

fn decode_versioned<T: for<'de> Deserialize<'de>>(line: &str) -> Result<T> {
    let env: InEnvelope<T> = serde_json::from_str(line)?;
    match env.v {
        None | Some(PROTOCOL_VERSION) => Ok(env.msg),
        Some(v) => Err(Error::InvalidInput(format!("unsupported protocol version {v}"))),
    }
}

pub fn decode_client(line: &str) -> Result<ClientMessage> {
    decode_versioned(line)
}

/// Used by scripted clients.
pub fn decode_server(line: &str) -> Result<ServerMessage> {
    decode_versioned(line)
}

pub fn encode_client(msg: &ClientMessage) -> Result<String> {
    #[derive(Serialize)]
    struct Env<'a> {
        v: u32,
        #[serde(flatten)]
        msg: &'a ClientMessage,
    }
    Ok(serde_json::to_string(&Env { v: PROTOCOL_VERSION, msg })?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_messages_parse() {
        assert_eq!(
            decode_client(r#"{"type":"input","u_o":-2.5e6,"ct":12}"#).unwrap(),
            ClientMessage::Input { u_o: -2.5e6, ct: Some(12.0) }
        );
        assert_eq!(decode_client(r#"{"v":1,"type":"pause"}"#).unwrap(), ClientMessage::Pause);
        assert_eq!(
            decode_client(r#"{"type":"set_timescale","r":0.5}"#).unwrap(),
            ClientMessage::SetTimescale { r: 0.5 }
        );
        assert!(decode_client(r#"{"v":2,"type":"pause"}"#).is_err());
        assert!(decode_client(r#"{"type":"jump"}"#).is_err());
        assert!(decode_client(r#"{"type":"input","u_o":"lots"}"#).is_err());
        assert!(decode_client("not json").is_err());
    }

    #[test]
    fn server_messages_carry_version() {
        let line = encode(&ServerMessage::error("read-only", "observer")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["v"], 1);
        assert_eq!(v["type"], "error");
        assert_eq!(v["code"], "read-only");
        assert_eq!(decode_server(&line).unwrap(), ServerMessage::error("read-only", "observer"));
    }

    #[test]
    fn client_encoding_round_trips() {
        let m = ClientMessage::Input { u_o: 1e9, ct: None };
        assert_eq!(decode_client(&encode_client(&m).unwrap()).unwrap(), m);
    }
}
