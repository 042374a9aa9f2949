//! Client for external trainers speaking newline-delimited JSON.
//!
//! Every request and response is one compact JSON object on its own
//! `\n`-terminated UTF-8 line. Requests carry `id`, `genome`,
//! `architecture`, `epochs`, `dataset` and `seed`; responses carry `id`,
//! `status`, `fitness` (only when `status` is `ok`) and `message`. Unknown
//! keys are ignored. Responses are matched by id, never by arrival order.
//!
//! The same codec runs over a spawned process's stdin/stdout (`exec:`) or a
//! TCP stream (`tcp:`). A connection is opened per batch; if the peer goes
//! away mid-batch, its in-flight requests fail with `error` and the rest of
//! the batch continues on a fresh connection.

use std::collections::VecDeque;
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{EvalError, EvalTask, Evaluator};
use crate::compiler::{decode, ArchitectureDoc};
use crate::genome::{DatasetDescriptor, Genome, GenomeConstraints};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Oom,
    Error,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRequest {
    pub id: String,
    pub genome: Genome,
    pub architecture: ArchitectureDoc,
    pub epochs: u32,
    pub dataset: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResponse {
    pub id: String,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fitness: Option<f64>,
    #[serde(default)]
    pub message: String,
}

impl EvalResponse {
    pub fn ok(id: &str, fitness: f64) -> Self {
        Self {
            id: id.to_string(),
            status: Status::Ok,
            fitness: Some(fitness),
            message: String::new(),
        }
    }

    pub fn failed(id: &str, status: Status, message: impl Into<String>) -> Self {
        Self {
            id: id.to_string(),
            status,
            fitness: None,
            message: message.into(),
        }
    }

    /// Fitness if this is a well-formed success.
    pub fn fitness_value(&self) -> Option<f64> {
        match (self.status, self.fitness) {
            (Status::Ok, Some(f)) if (0.0..=1.0).contains(&f) => Some(f),
            _ => None,
        }
    }

    /// Coerces protocol violations (ok without a usable fitness, fitness on
    /// a failure) into well-formed responses.
    fn normalized(mut self) -> Self {
        match self.status {
            Status::Ok if self.fitness_value().is_none() => {
                self.message = format!("ok response without fitness in [0, 1]: {:?}", self.fitness);
                self.status = Status::Error;
                self.fitness = None;
            }
            Status::Ok => {}
            _ => self.fitness = None,
        }
        self
    }

    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("response serialization is infallible");
        s.push('\n');
        s
    }
}

impl EvalRequest {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("request serialization is infallible");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// Shell command whose stdin/stdout carry the protocol.
    Exec(String),
    /// `host:port` of a listening trainer.
    Tcp(String),
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Exec(cmd) => write!(f, "exec:{cmd}"),
            Endpoint::Tcp(addr) => write!(f, "tcp:{addr}"),
        }
    }
}

enum Incoming {
    Line(String),
    Closed,
}

struct Connection {
    writer: Box<dyn Write + Send>,
    lines: Receiver<Incoming>,
    child: Option<Child>,
    socket: Option<TcpStream>,
}

const CONNECT_TIMEOUT: Duration = Duration::from_secs(10);

impl Connection {
    fn open(endpoint: &Endpoint) -> Result<Self, EvalError> {
        let unreachable = |reason: String| EvalError::Unreachable {
            endpoint: endpoint.to_string(),
            reason,
        };
        match endpoint {
            Endpoint::Exec(cmd) => {
                let mut child = Command::new("sh")
                    .arg("-c")
                    .arg(cmd)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| unreachable(e.to_string()))?;
                let stdin: ChildStdin = child.stdin.take().unwrap();
                let stdout = child.stdout.take().unwrap();
                Ok(Self {
                    writer: Box::new(stdin),
                    lines: spawn_reader(stdout),
                    child: Some(child),
                    socket: None,
                })
            }
            Endpoint::Tcp(addr) => {
                let addrs: Vec<_> = addr
                    .to_socket_addrs()
                    .map_err(|e| unreachable(e.to_string()))?
                    .collect();
                let mut last = String::from("address resolved to nothing");
                for a in addrs {
                    match TcpStream::connect_timeout(&a, CONNECT_TIMEOUT) {
                        Ok(stream) => {
                            let _ = stream.set_nodelay(true);
                            let reader = stream.try_clone().map_err(|e| unreachable(e.to_string()))?;
                            let writer = stream.try_clone().map_err(|e| unreachable(e.to_string()))?;
                            return Ok(Self {
                                writer: Box::new(writer),
                                lines: spawn_reader(reader),
                                child: None,
                                socket: Some(stream),
                            });
                        }
                        Err(e) => last = e.to_string(),
                    }
                }
                Err(unreachable(last))
            }
        }
    }

    fn send(&mut self, line: &str) -> std::io::Result<()> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.flush()
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(socket) = &self.socket {
            let _ = socket.shutdown(Shutdown::Both);
        }
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn spawn_reader<R: Read + Send + 'static>(source: R) -> Receiver<Incoming> {
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let mut reader = BufReader::new(source);
        let mut buf = Vec::new();
        loop {
            buf.clear();
            match reader.read_until(b'\n', &mut buf) {
                Ok(0) | Err(_) => {
                    let _ = tx.send(Incoming::Closed);
                    return;
                }
                Ok(_) => {
                    let line = String::from_utf8_lossy(&buf).trim_end().to_string();
                    if line.is_empty() {
                        continue;
                    }
                    if tx.send(Incoming::Line(line)).is_err() {
                        return;
                    }
                }
            }
        }
    });
    rx
}

/// Protocol client bound to one endpoint.
#[derive(Debug, Clone)]
pub struct ExternalEvaluator {
    pub endpoint: Endpoint,
    pub dataset: DatasetDescriptor,
    pub constraints: GenomeConstraints,
    pub epochs: u32,
    pub timeout: Duration,
}

struct InFlight {
    index: usize,
    deadline: Instant,
}

impl ExternalEvaluator {
    pub fn new(endpoint: Endpoint, dataset: &DatasetDescriptor, constraints: &GenomeConstraints) -> Self {
        Self {
            endpoint,
            dataset: dataset.clone(),
            constraints: constraints.clone(),
            epochs: 1,
            timeout: Duration::from_secs(3600),
        }
    }

    fn request_line(&self, task: &EvalTask) -> Result<String, String> {
        let graph = decode(&task.genome, &self.dataset, &self.constraints).map_err(|e| e.to_string())?;
        Ok(EvalRequest {
            id: task.id.clone(),
            genome: task.genome.clone(),
            architecture: graph.to_document(),
            epochs: self.epochs,
            dataset: self.dataset.name.clone(),
            seed: task.seed,
        }
        .to_line())
    }
}

impl Evaluator for ExternalEvaluator {
    fn evaluate(&self, tasks: &[EvalTask], parallel_limit: usize) -> Result<Vec<EvalResponse>, EvalError> {
        let limit = parallel_limit.max(1);
        let mut results: Vec<Option<EvalResponse>> = vec![None; tasks.len()];
        let mut next = 0;

        while next < tasks.len() {
            let mut conn = Connection::open(&self.endpoint)?;
            let mut in_flight: VecDeque<InFlight> = VecDeque::new();

            'connection: loop {
                while in_flight.len() < limit && next < tasks.len() {
                    let task = &tasks[next];
                    let index = next;
                    next += 1;
                    let line = match self.request_line(task) {
                        Ok(line) => line,
                        Err(e) => {
                            results[index] = Some(EvalResponse::failed(&task.id, Status::Error, e));
                            continue;
                        }
                    };
                    if let Err(e) = conn.send(&line) {
                        results[index] = Some(EvalResponse::failed(
                            &task.id,
                            Status::Error,
                            format!("write to evaluator failed: {e}"),
                        ));
                        fail_all(&mut in_flight, &mut results, tasks, "evaluator connection lost");
                        break 'connection;
                    }
                    in_flight.push_back(InFlight {
                        index,
                        deadline: Instant::now() + self.timeout,
                    });
                }
                let Some(earliest) = in_flight.iter().map(|f| f.deadline).min() else {
                    break;
                };
                let wait = earliest.saturating_duration_since(Instant::now());
                match conn.lines.recv_timeout(wait) {
                    Ok(Incoming::Line(text)) => match serde_json::from_str::<EvalResponse>(&text) {
                        Ok(resp) => {
                            if let Some(pos) = in_flight.iter().position(|f| tasks[f.index].id == resp.id) {
                                let done = in_flight.remove(pos).unwrap();
                                results[done.index] = Some(resp.normalized());
                            }
                        }
                        Err(e) => {
                            if let Some(oldest) = in_flight.pop_front() {
                                results[oldest.index] = Some(EvalResponse::failed(
                                    &tasks[oldest.index].id,
                                    Status::Error,
                                    format!("malformed response line: {e}"),
                                ));
                            }
                        }
                    },
                    Err(RecvTimeoutError::Timeout) => {
                        let now = Instant::now();
                        in_flight.retain(|f| {
                            if f.deadline <= now {
                                results[f.index] = Some(EvalResponse::failed(
                                    &tasks[f.index].id,
                                    Status::Timeout,
                                    format!("no response within {:?}", self.timeout),
                                ));
                                false
                            } else {
                                true
                            }
                        });
                    }
                    Ok(Incoming::Closed) | Err(RecvTimeoutError::Disconnected) => {
                        fail_all(
                            &mut in_flight,
                            &mut results,
                            tasks,
                            "evaluator closed the connection",
                        );
                        break;
                    }
                }
            }
        }

        Ok(results
            .into_iter()
            .zip(tasks)
            .map(|(r, t)| r.unwrap_or_else(|| EvalResponse::failed(&t.id, Status::Error, "unresolved")))
            .collect())
    }

    fn describe(&self) -> String {
        self.endpoint.to_string()
    }
}

fn fail_all(
    in_flight: &mut VecDeque<InFlight>,
    results: &mut [Option<EvalResponse>],
    tasks: &[EvalTask],
    why: &str,
) {
    for f in in_flight.drain(..) {
        results[f.index] = Some(EvalResponse::failed(&tasks[f.index].id, Status::Error, why));
    }
}
