//! Fitness sources.
//!
//! [`surrogate`] holds two cheap deterministic landscapes; [`protocol`] is
//! the client side of the newline-delimited JSON trainer protocol, and
//! [`mock`] a configurable responder used to exercise it.

pub mod mock;
pub mod protocol;
pub mod surrogate;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::genome::Genome;

pub use protocol::{Endpoint, EvalRequest, EvalResponse, ExternalEvaluator, Status};
pub use surrogate::{edit_distance, SurrogateEvaluator, SurrogateKind, SurrogateSpec};

/// One genome to score.
#[derive(Debug, Clone)]
pub struct EvalTask {
    pub id: String,
    pub genome: Genome,
    pub seed: u64,
}

/// Anything that turns genomes into fitness values in `[0, 1]`.
///
/// Responses come back in task order. Individual failures are reported as
/// non-ok responses; an `Err` means the fitness source itself is unusable.
pub trait Evaluator: Send + Sync {
    fn evaluate(&self, tasks: &[EvalTask], parallel_limit: usize) -> Result<Vec<EvalResponse>, EvalError>;

    fn describe(&self) -> String;
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("evaluator endpoint {endpoint} unreachable: {reason}")]
    Unreachable { endpoint: String, reason: String },
    #[error("invalid evaluator binding `{0}` (expected surrogate:<name>, exec:<command> or tcp:<addr>)")]
    Binding(String),
    #[error("unknown surrogate `{0}` (expected target_distance or param_budget)")]
    UnknownSurrogate(String),
}

/// Where fitness comes from, in its `surrogate:…`, `exec:…` or `tcp:…` form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvaluatorBinding {
    Surrogate(SurrogateKind),
    External(Endpoint),
}

impl FromStr for EvaluatorBinding {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (scheme, rest) = s
            .split_once(':')
            .ok_or_else(|| EvalError::Binding(s.to_string()))?;
        if rest.trim().is_empty() {
            return Err(EvalError::Binding(s.to_string()));
        }
        match scheme {
            "surrogate" => Ok(EvaluatorBinding::Surrogate(rest.parse()?)),
            "exec" => Ok(EvaluatorBinding::External(Endpoint::Exec(rest.to_string()))),
            "tcp" => Ok(EvaluatorBinding::External(Endpoint::Tcp(rest.to_string()))),
            _ => Err(EvalError::Binding(s.to_string())),
        }
    }
}

impl fmt::Display for EvaluatorBinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvaluatorBinding::Surrogate(kind) => write!(f, "surrogate:{kind}"),
            EvaluatorBinding::External(ep) => write!(f, "{ep}"),
        }
    }
}

impl Serialize for EvaluatorBinding {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EvaluatorBinding {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Applies `f` to every item on at most `limit` threads, keeping input order.
pub(crate) fn parallel_map<T, U, F>(items: &[T], limit: usize, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync,
{
    let workers = limit.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<U>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let value = f(&items[i]);
                *slots[i].lock().unwrap() = Some(value);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().unwrap().expect("every slot filled"))
        .collect()
}
