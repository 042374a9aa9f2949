//! Scriptable protocol responder for tests and demos.
//!
//! Serves the trainer side of the wire protocol without training anything.
//! Faults (hangs, crashes, garbage lines, reordered replies, out-of-memory
//! reports) can be switched on to exercise the client.

use std::io::{self, BufRead, Write};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::protocol::{EvalRequest, EvalResponse, Status};
use super::surrogate::param_budget_fitness;
use crate::compiler::{count_params, LayerGraph};

const IDLE_FLUSH: Duration = Duration::from_millis(50);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockFitness {
    /// Same fitness for every request.
    Fixed(f64),
    /// Parameter-budget surrogate computed from the request's architecture.
    ParamBudget(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockBehavior {
    pub fitness: MockFitness,
    /// Read requests but never answer.
    pub hang: bool,
    /// Stop serving right after reading this many requests (1-based), leaving
    /// the last one unanswered.
    pub crash_after: Option<usize>,
    /// Replace every n-th reply with a line that is not JSON.
    pub malformed_every: Option<usize>,
    /// Hold replies until this many are queued, then send them reversed.
    pub shuffle_window: Option<usize>,
    /// Report `oom` for genomes longer than this many units.
    pub oom_above_units: Option<usize>,
}

impl Default for MockBehavior {
    fn default() -> Self {
        Self {
            fitness: MockFitness::Fixed(0.5),
            hang: false,
            crash_after: None,
            malformed_every: None,
            shuffle_window: None,
            oom_above_units: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServeEnd {
    /// Input reached end of stream.
    Finished,
    /// `crash_after` triggered.
    Crashed,
}

impl MockBehavior {
    pub fn fixed(fitness: f64) -> Self {
        Self {
            fitness: MockFitness::Fixed(fitness),
            ..Self::default()
        }
    }

    fn answer(&self, line: &str) -> EvalResponse {
        let req: EvalRequest = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|i| i.as_str()).map(str::to_string))
                    .unwrap_or_default();
                return EvalResponse::failed(&id, Status::Error, format!("unparseable request: {e}"));
            }
        };
        if self.oom_above_units.is_some_and(|n| req.genome.len() > n) {
            return EvalResponse::failed(&req.id, Status::Oom, "out of memory");
        }
        match self.fitness {
            MockFitness::Fixed(f) => EvalResponse::ok(&req.id, f),
            MockFitness::ParamBudget(target) => match LayerGraph::from_document(&req.architecture) {
                Ok(graph) => EvalResponse::ok(&req.id, param_budget_fitness(count_params(&graph), target)),
                Err(e) => EvalResponse::failed(&req.id, Status::Error, e.to_string()),
            },
        }
    }

    /// Answers requests read from `input` on `output` until end of input or
    /// a scripted crash. Held (shuffled) replies are flushed once input has
    /// been idle briefly, so a short final window never stalls the client.
    pub fn serve<R, W>(&self, input: R, mut output: W) -> io::Result<ServeEnd>
    where
        R: BufRead + Send + 'static,
        W: Write,
    {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in input.lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let flush = |held: &mut Vec<String>, output: &mut W| -> io::Result<()> {
            for reply in held.drain(..).rev() {
                output.write_all(reply.as_bytes())?;
            }
            output.flush()
        };
        let window = self.shuffle_window.unwrap_or(1).max(1);
        let mut seen = 0usize;
        let mut replies = 0usize;
        let mut held: Vec<String> = Vec::new();
        loop {
            let line = if held.is_empty() {
                rx.recv().map_err(|_| RecvTimeoutError::Disconnected)
            } else {
                rx.recv_timeout(IDLE_FLUSH)
            };
            let line = match line {
                Ok(line) => line?,
                Err(RecvTimeoutError::Timeout) => {
                    flush(&mut held, &mut output)?;
                    continue;
                }
                Err(RecvTimeoutError::Disconnected) => break,
            };
            if line.trim().is_empty() {
                continue;
            }
            seen += 1;
            if self.crash_after.is_some_and(|n| seen >= n) {
                return Ok(ServeEnd::Crashed);
            }
            if self.hang {
                continue;
            }
            replies += 1;
            let text = if self.malformed_every.is_some_and(|k| replies.is_multiple_of(k)) {
                "this is not json\n".to_string()
            } else {
                self.answer(&line).to_line()
            };
            held.push(text);
            if held.len() >= window {
                flush(&mut held, &mut output)?;
            }
        }
        flush(&mut held, &mut output)?;
        Ok(ServeEnd::Finished)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::decode;
    use crate::genome::{DatasetDescriptor, Genome, GenomeConstraints, Unit};

    fn request(id: &str) -> String {
        let d = DatasetDescriptor::cifar10();
        let c = GenomeConstraints::default();
        let genome = Genome::new(vec![Unit::Rbu {
            amount: 1,
            in_channels: 3,
            out_channels: 64,
        }]);
        let architecture = decode(&genome, &d, &c).unwrap().to_document();
        EvalRequest {
            id: id.into(),
            genome,
            architecture,
            epochs: 1,
            dataset: "cifar10".into(),
            seed: 1,
        }
        .to_line()
    }

    fn run(b: &MockBehavior, input: String) -> (Vec<EvalResponse>, Vec<String>) {
        let mut out = Vec::new();
        b.serve(io::Cursor::new(input.into_bytes()), &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<String> = text.lines().map(str::to_string).collect();
        let parsed = lines
            .iter()
            .filter_map(|l| serde_json::from_str(l).ok())
            .collect();
        (parsed, lines)
    }

    #[test]
    fn echoes_fixed_fitness() {
        let (resp, _) = run(&MockBehavior::fixed(0.42), request("a") + &request("b"));
        assert_eq!(resp.len(), 2);
        assert!(resp.iter().all(|r| r.fitness == Some(0.42)));
    }

    #[test]
    fn param_budget_matches_compiler() {
        let b = MockBehavior {
            fitness: MockFitness::ParamBudget(6.0),
            ..MockBehavior::default()
        };
        let (resp, _) = run(&b, request("a"));
        assert_eq!(resp[0].fitness, Some(param_budget_fitness(4218, 6.0)));
    }

    #[test]
    fn reverses_within_window() {
        let b = MockBehavior {
            shuffle_window: Some(3),
            ..MockBehavior::fixed(0.1)
        };
        let (resp, _) = run(&b, request("a") + &request("b") + &request("c"));
        let ids: Vec<_> = resp.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["c", "b", "a"]);
    }

    #[test]
    fn garbage_request_gets_error_reply() {
        let (resp, _) = run(&MockBehavior::fixed(0.1), "{nope\n".into());
        assert_eq!(resp[0].status, Status::Error);
    }

    #[test]
    fn malformed_and_crash() {
        let b = MockBehavior {
            malformed_every: Some(2),
            ..MockBehavior::fixed(0.1)
        };
        let (resp, lines) = run(&b, request("a") + &request("b"));
        assert_eq!((resp.len(), lines.len()), (1, 2));

        let b = MockBehavior {
            crash_after: Some(2),
            ..MockBehavior::fixed(0.1)
        };
        let mut out = Vec::new();
        let input = request("a") + &request("b") + &request("c");
        let end = b.serve(io::Cursor::new(input.into_bytes()), &mut out).unwrap();
        assert_eq!(end, ServeEnd::Crashed);
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 1);
    }
}
