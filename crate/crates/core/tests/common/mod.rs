#![allow(dead_code)]

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use stefan_cbf::scenario::{load_config_file, ScenarioConfig};
use stefan_cbf::service::{decode_server, encode_client, ClientMessage, ServerMessage};

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

pub fn bundled(name: &str) -> ScenarioConfig {
    load_config_file(&scenario_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn median(a: f64, b: f64, c: f64) -> f64 {
    a.max(b).min(a.min(b).max(c))
}

/// Line-oriented test client for the live service.
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Client {
    pub fn connect(addr: SocketAddr) -> Client {
        let stream = TcpStream::connect(addr).expect("connect");
        stream.set_read_timeout(Some(Duration::from_secs(30))).unwrap();
        Client { reader: BufReader::new(stream.try_clone().unwrap()), writer: stream }
    }

    /// A second handle on the same connection, for writing from another
    /// thread.
    pub fn try_clone(&self) -> Client {
        let s = self.writer.try_clone().unwrap();
        Client { reader: BufReader::new(s.try_clone().unwrap()), writer: s }
    }

    pub fn send(&mut self, msg: &ClientMessage) {
        self.send_raw(&encode_client(msg).unwrap());
    }

    pub fn send_raw(&mut self, line: &str) {
        self.writer.write_all(line.as_bytes()).unwrap();
        self.writer.write_all(b"\n").unwrap();
    }

    pub fn recv_line(&mut self) -> String {
        let mut line = String::new();
        let n = self.reader.read_line(&mut line).expect("read");
        assert!(n > 0, "server closed the connection");
        line
    }

    pub fn recv(&mut self) -> ServerMessage {
        let line = self.recv_line();
        decode_server(&line).unwrap_or_else(|e| panic!("bad server line {line}: {e}"))
    }

    /// Reads until `pred` accepts a message, giving up after `timeout`.
    pub fn recv_until(&mut self, timeout: Duration, mut pred: impl FnMut(&ServerMessage) -> bool) -> ServerMessage {
        let end = Instant::now() + timeout;
        loop {
            assert!(Instant::now() < end, "timed out waiting for a message");
            let m = self.recv();
            if pred(&m) {
                return m;
            }
        }
    }
}
