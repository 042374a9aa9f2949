mod support;

use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::time::{Duration, Instant};

use aecnn::compiler::{count_params, decode};
use aecnn::evaluators::mock::{MockBehavior, MockFitness};
use aecnn::evaluators::surrogate::param_budget_fitness;
use aecnn::evaluators::{Endpoint, EvalRequest, EvalTask, Evaluator, ExternalEvaluator, Status};
use aecnn::{DatasetDescriptor, Genome, GenomeConstraints};

const BIN: &str = env!("CARGO_BIN_EXE_aecnn");

fn tcp_mock(b: MockBehavior) -> Endpoint {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            let b = b.clone();
            std::thread::spawn(move || {
                let reader = BufReader::new(stream.try_clone().unwrap());
                let _ = b.serve(reader, &stream);
                let _ = stream.shutdown(std::net::Shutdown::Both);
            });
        }
    });
    Endpoint::Tcp(addr.to_string())
}

fn exec_mock(flags: &str) -> Endpoint {
    Endpoint::Exec(format!("{BIN} mock-evaluator {flags}"))
}

fn tasks(n: usize, seed: u64) -> Vec<EvalTask> {
    support::random_genomes(n, seed)
        .into_iter()
        .enumerate()
        .map(|(i, genome)| EvalTask {
            id: format!("t{i}"),
            genome,
            seed: i as u64,
        })
        .collect()
}

fn client(endpoint: Endpoint, timeout: Duration) -> ExternalEvaluator {
    let mut ev = ExternalEvaluator::new(
        endpoint,
        &DatasetDescriptor::cifar10(),
        &GenomeConstraints::default(),
    );
    ev.timeout = timeout;
    ev
}

fn expected_budget(g: &Genome) -> f64 {
    let graph = decode(g, &DatasetDescriptor::cifar10(), &GenomeConstraints::default()).unwrap();
    param_budget_fitness(count_params(&graph), 6.0)
}

#[test]
fn shuffled_replies_are_matched_by_id() {
    let budget = MockBehavior {
        fitness: MockFitness::ParamBudget(6.0),
        shuffle_window: Some(4),
        ..MockBehavior::default()
    };
    let t = tasks(10, 50);
    for endpoint in [tcp_mock(budget), exec_mock("--param-budget 6 --shuffle 4")] {
        let out = client(endpoint, Duration::from_secs(30)).evaluate(&t, 4).unwrap();
        for (task, resp) in t.iter().zip(&out) {
            assert_eq!(resp.id, task.id);
            assert_eq!(resp.fitness_value(), Some(expected_budget(&task.genome)));
        }
    }
}

#[test]
fn crash_fails_only_the_unanswered_request() {
    // Each connection dies on its third request; the client reconnects.
    let t = tasks(7, 51);
    for endpoint in [
        tcp_mock(MockBehavior {
            crash_after: Some(3),
            ..MockBehavior::fixed(0.7)
        }),
        exec_mock("--fitness 0.7 --crash-after 3"),
    ] {
        let out = client(endpoint, Duration::from_secs(30)).evaluate(&t, 1).unwrap();
        let failed: Vec<usize> = (0..out.len())
            .filter(|&i| out[i].fitness_value().is_none())
            .collect();
        assert_eq!(failed, vec![2, 5]);
        assert!(out
            .iter()
            .all(|r| r.status != Status::Ok || r.fitness == Some(0.7)));
    }
}

#[test]
fn hung_worker_times_out() {
    let t = tasks(3, 52);
    let timeout = Duration::from_millis(300);
    let start = Instant::now();
    let out = client(exec_mock("--hang"), timeout).evaluate(&t, 3).unwrap();
    assert!(out.iter().all(|r| r.status == Status::Timeout));
    assert!(start.elapsed() < timeout + Duration::from_secs(5));
}

#[test]
fn malformed_lines_fail_their_request() {
    let t = tasks(6, 53);
    let out = client(
        tcp_mock(MockBehavior {
            malformed_every: Some(3),
            ..MockBehavior::fixed(0.4)
        }),
        Duration::from_secs(30),
    )
    .evaluate(&t, 1)
    .unwrap();
    let statuses: Vec<Status> = out.iter().map(|r| r.status).collect();
    use Status::{Error as E, Ok as K};
    assert_eq!(statuses, vec![K, K, E, K, K, E]);
}

#[test]
fn oom_reports_fail() {
    let t = tasks(20, 54);
    let out = client(exec_mock("--oom-above 5"), Duration::from_secs(30))
        .evaluate(&t, 2)
        .unwrap();
    for (task, r) in t.iter().zip(&out) {
        assert_eq!(r.status == Status::Oom, task.genome.len() > 5);
    }
}

#[test]
fn unreachable_endpoint_is_an_error() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    drop(listener);
    let err = client(Endpoint::Tcp(addr), Duration::from_secs(1))
        .evaluate(&tasks(1, 55), 1)
        .unwrap_err();
    assert!(err.to_string().contains("unreachable"));
}

#[test]
fn requests_follow_the_wire_schema() {
    // A hand-written responder: checks each request, answers out of order.
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let server = std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut writer = stream;
        let mut seen = Vec::new();
        for _ in 0..2 {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            assert!(line.ends_with('\n'));
            let v: serde_json::Value = serde_json::from_str(&line).unwrap();
            for key in ["id", "genome", "architecture", "epochs", "dataset", "seed"] {
                assert!(v.get(key).is_some(), "missing {key}");
            }
            assert_eq!(v["dataset"], "cifar10");
            assert_eq!(v["epochs"], 3);
            assert_eq!(v["architecture"]["nodes"][0]["kind"], "input");
            let req: EvalRequest = serde_json::from_value(v).unwrap();
            seen.push(req.id);
        }
        for id in seen.iter().rev() {
            writeln!(
                writer,
                r#"{{"id":"{id}","status":"ok","fitness":0.25,"extra":true}}"#
            )
            .unwrap();
        }
        seen
    });
    let mut ev = client(Endpoint::Tcp(addr), Duration::from_secs(30));
    ev.epochs = 3;
    let out = ev.evaluate(&tasks(2, 56), 2).unwrap();
    assert_eq!(server.join().unwrap(), vec!["t0", "t1"]);
    assert!(out.iter().all(|r| r.fitness_value() == Some(0.25)));
}
