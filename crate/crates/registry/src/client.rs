//! Agent side of the line protocol. A reader thread splits pushed alerts from responses.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use thiserror::Error;

use crate::protocol::{Alert, Message, PROTOCOL_VERSION};
use crate::record::{valid_agent_id, ObstacleRecord, Report, UpdateAction};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot connect: {0}")]
    Connect(std::io::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("server rejected request: {0}")]
    Rejected(String),
    #[error("connection closed")]
    Disconnected,
    #[error("no response within {0:?}")]
    Timeout(Duration),
    #[error("unexpected reply: {0}")]
    Protocol(String),
}

pub struct Client {
    agent_id: String,
    stream: TcpStream,
    writer: BufWriter<TcpStream>,
    responses: Receiver<Message>,
    alerts: Receiver<Alert>,
    timeout: Duration,
    reader: Option<JoinHandle<()>>,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs, agent_id: &str) -> Result<Self, ClientError> {
        if !valid_agent_id(agent_id) {
            return Err(ClientError::Protocol(format!("invalid agent id '{agent_id}'")));
        }
        let stream = TcpStream::connect(addr).map_err(ClientError::Connect)?;
        let read_half = stream.try_clone()?;
        let (resp_tx, responses) = mpsc::channel();
        let (alert_tx, alerts) = mpsc::channel();
        let reader = thread::spawn(move || {
            for line in BufReader::new(read_half).lines() {
                let Ok(line) = line else { break };
                let msg = Message::parse(&line).unwrap_or_else(|e| Message::Err(format!("unparseable reply: {e}")));
                let sent = match msg {
                    Message::Alert(a) => alert_tx.send(a).is_ok(),
                    other => resp_tx.send(other).is_ok(),
                };
                if !sent {
                    break;
                }
            }
        });
        let mut client = Self {
            agent_id: agent_id.to_string(),
            writer: BufWriter::new(stream.try_clone()?),
            stream,
            responses,
            alerts,
            timeout: Duration::from_secs(30),
            reader: Some(reader),
        };
        client.send(&Message::Hello { version: PROTOCOL_VERSION, agent_id: Some(agent_id.to_string()) })?;
        match client.next_response()? {
            Message::Hello { version: PROTOCOL_VERSION, .. } => Ok(client),
            Message::Err(e) => Err(ClientError::Rejected(e)),
            other => Err(ClientError::Protocol(other.to_string())),
        }
    }

    pub fn agent_id(&self) -> &str {
        &self.agent_id
    }

    /// How long to wait for each response line.
    pub fn set_timeout(&mut self, timeout: Duration) {
        self.timeout = timeout;
    }

    pub fn send(&mut self, msg: &Message) -> Result<(), ClientError> {
        self.send_line(&msg.to_string())
    }

    /// Writes one raw line; the caller is responsible for it being meaningful.
    pub fn send_line(&mut self, line: &str) -> Result<(), ClientError> {
        writeln!(self.writer, "{line}")?;
        self.writer.flush()?;
        Ok(())
    }

    /// The next non-alert line from the server.
    pub fn next_response(&mut self) -> Result<Message, ClientError> {
        self.responses.recv_timeout(self.timeout).map_err(|e| match e {
            RecvTimeoutError::Timeout => ClientError::Timeout(self.timeout),
            RecvTimeoutError::Disconnected => ClientError::Disconnected,
        })
    }

    pub fn report(&mut self, report: &Report) -> Result<(u64, UpdateAction), ClientError> {
        self.send(&Message::Report(report.clone()))?;
        match self.next_response()? {
            Message::Ack { id, action } => Ok((id, action)),
            Message::Err(e) => Err(ClientError::Rejected(e)),
            other => Err(ClientError::Protocol(other.to_string())),
        }
    }

    /// Records within `radius` of `position`, nearest first. Also moves this agent there.
    pub fn query(&mut self, position: [f64; 2], radius: f64) -> Result<Vec<ObstacleRecord>, ClientError> {
        self.send(&Message::Query { position, radius })?;
        let n = match self.next_response()? {
            Message::Records(n) => n,
            Message::Err(e) => return Err(ClientError::Rejected(e)),
            other => return Err(ClientError::Protocol(other.to_string())),
        };
        (0..n)
            .map(|_| match self.next_response()? {
                Message::Record(r) => Ok(r),
                other => Err(ClientError::Protocol(other.to_string())),
            })
            .collect()
    }

    /// Alerts received so far and not yet taken.
    pub fn drain_alerts(&mut self) -> Vec<Alert> {
        self.alerts.try_iter().collect()
    }

    pub fn wait_alert(&mut self, timeout: Duration) -> Option<Alert> {
        self.alerts.recv_timeout(timeout).ok()
    }

    /// Says goodbye and waits for the server to close the connection.
    pub fn close(mut self) -> Result<(), ClientError> {
        self.send(&Message::Bye)?;
        if let Some(r) = self.reader.take() {
            let _ = r.join();
        }
        Ok(())
    }
}

impl Drop for Client {
    fn drop(&mut self) {
        let _ = self.stream.shutdown(Shutdown::Both);
        if let Some(r) = self.reader.take() {
            let _ = r.join();
        }
    }
}
