//! Live sessions: the closed loop advanced against the wall clock while an
//! operator streams commands through the safety filter.

mod protocol;
mod server;
mod session;

pub use protocol::{
    decode_client, decode_server, encode, encode_client, ClientMessage, ServerMessage, SessionState, StateFrame,
    PROTOCOL_VERSION,
};
pub use server::{Server, ServerOptions};
pub use session::{Ingest, Session, SessionOptions, FRAME_POINTS, MAX_TIMESCALE, MIN_SAMPLE_INTERVAL};
