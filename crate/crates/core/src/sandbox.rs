//! Host side of the guest-code worker protocol.
//!
//! A worker process runs one guest candidate. Host and worker exchange
//! newline-delimited JSON objects tagged by `kind`; every balanced-SINR
//! evaluation the guest needs is requested from the host, so the solver
//! has a single implementation. Isolation is process-level only.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::channel::{write_fchan, ChannelBatch};
use crate::eoh::{EvalStatus, FitnessReport, GuestRunner, Task};
use crate::error::{Error, Result};
use crate::eval::Evaluator;

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_WALL_TIMEOUT_S: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub wall_timeout_s: f64,
    pub max_eval_calls: usize,
}

impl Limits {
    /// 60 s and `20·N·n·B` evaluation calls.
    pub fn defaults(num_ports: usize, selected_n: usize, b: usize) -> Self {
        Limits {
            wall_timeout_s: DEFAULT_WALL_TIMEOUT_S,
            max_eval_calls: 20 * num_ports * selected_n * b,
        }
    }
}

/// Host → worker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HostMessage {
    Init {
        version: u32,
        task: Task,
        limits: Limits,
        channel_path: String,
        #[serde(rename = "K")]
        users_k: usize,
        n: usize,
        #[serde(rename = "N")]
        num_ports: usize,
        #[serde(rename = "P_mw")]
        power_mw: f64,
        noise_mw: f64,
        #[serde(rename = "B")]
        batch_b: usize,
    },
    Run {
        source: String,
    },
    EvalResult {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        value: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
}

/// Worker → host.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorkerMessage {
    Eval {
        realization: i64,
        ports: Vec<i64>,
    },
    Done {
        fitness: f64,
        per_instance: Vec<f64>,
        eval_calls: usize,
    },
    Fail {
        status: EvalStatus,
        message: String,
    },
}

pub fn encode<T: Serialize>(msg: &T) -> Result<String> {
    Ok(serde_json::to_string(msg)?)
}

pub fn decode_worker(line: &str) -> Result<WorkerMessage> {
    serde_json::from_str(line).map_err(|e| Error::Sandbox(format!("malformed worker message: {e}")))
}

pub fn decode_host(line: &str) -> Result<HostMessage> {
    serde_json::from_str(line).map_err(|e| Error::Sandbox(format!("malformed host message: {e}")))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Incoming {
    Line(String),
    Closed,
    TimedOut,
}

/// One bidirectional line channel to a worker.
pub trait Transport: Send {
    fn send(&mut self, line: &str) -> Result<()>;
    fn recv(&mut self, timeout: Duration) -> Incoming;
    /// Tears the worker down; safe to call repeatedly.
    fn kill(&mut self);
}

/// Opens a fresh transport per candidate.
pub trait TransportFactory: Sync {
    fn open(&self) -> Result<Box<dyn Transport>>;
}

impl<F> TransportFactory for F
where
    F: Fn() -> Result<Box<dyn Transport>> + Sync,
{
    fn open(&self) -> Result<Box<dyn Transport>> {
        self()
    }
}

/// A worker subprocess speaking the protocol on stdin/stdout.
pub struct ProcessTransport {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<String>,
}

impl ProcessTransport {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| Error::Sandbox(format!("cannot start `{program}`: {e}")))?;
        let stdout = child.stdout.take().expect("stdout is piped");
        let stdin = child.stdin.take();
        let (tx, lines) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(l) = line else { break };
                if tx.send(l).is_err() {
                    break;
                }
            }
        });
        Ok(ProcessTransport { child, stdin, lines })
    }
}

impl Transport for ProcessTransport {
    fn send(&mut self, line: &str) -> Result<()> {
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| Error::Sandbox("worker stdin closed".into()))?;
        writeln!(stdin, "{line}")
            .and_then(|_| stdin.flush())
            .map_err(|e| Error::Sandbox(format!("broken pipe: {e}")))
    }

    fn recv(&mut self, timeout: Duration) -> Incoming {
        match self.lines.recv_timeout(timeout) {
            Ok(l) => Incoming::Line(l),
            Err(RecvTimeoutError::Timeout) => Incoming::TimedOut,
            Err(RecvTimeoutError::Disconnected) => Incoming::Closed,
        }
    }

    fn kill(&mut self) {
        self.stdin = None;
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for ProcessTransport {
    fn drop(&mut self) {
        self.kill();
    }
}

/// Spawns `program args...` for every candidate.
#[derive(Debug, Clone)]
pub struct ProcessFactory {
    pub program: String,
    pub args: Vec<String>,
}

impl TransportFactory for ProcessFactory {
    fn open(&self) -> Result<Box<dyn Transport>> {
        Ok(Box::new(ProcessTransport::spawn(&self.program, &self.args)?))
    }
}

/// In-memory transport; the other end is handed to a worker thread.
pub struct ChannelTransport {
    to_worker: Option<Sender<String>>,
    from_worker: Receiver<String>,
}

/// Worker side of a [`ChannelTransport`].
pub struct WorkerEnd {
    from_host: Receiver<String>,
    to_host: Sender<String>,
}

impl ChannelTransport {
    pub fn pair() -> (ChannelTransport, WorkerEnd) {
        let (to_worker, from_host) = mpsc::channel();
        let (to_host, from_worker) = mpsc::channel();
        (
            ChannelTransport {
                to_worker: Some(to_worker),
                from_worker,
            },
            WorkerEnd { from_host, to_host },
        )
    }
}

impl Transport for ChannelTransport {
    fn send(&mut self, line: &str) -> Result<()> {
        self.to_worker
            .as_ref()
            .and_then(|tx| tx.send(line.to_owned()).ok())
            .ok_or_else(|| Error::Sandbox("worker hung up".into()))
    }

    fn recv(&mut self, timeout: Duration) -> Incoming {
        match self.from_worker.recv_timeout(timeout) {
            Ok(l) => Incoming::Line(l),
            Err(RecvTimeoutError::Timeout) => Incoming::TimedOut,
            Err(RecvTimeoutError::Disconnected) => Incoming::Closed,
        }
    }

    fn kill(&mut self) {
        self.to_worker = None;
    }
}

impl WorkerEnd {
    /// Next host message, or `None` once the host has hung up.
    pub fn recv(&self) -> Option<HostMessage> {
        self.from_host.recv().ok().and_then(|l| decode_host(&l).ok())
    }

    pub fn send(&self, msg: &WorkerMessage) -> bool {
        encode(msg).ok().is_some_and(|l| self.to_host.send(l).is_ok())
    }

    pub fn send_raw(&self, line: &str) -> bool {
        self.to_host.send(line.to_owned()).is_ok()
    }
}

/// Session settings; unset fields take the per-candidate defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SandboxConfig {
    pub command: Vec<String>,
    #[serde(default)]
    pub wall_timeout_s: Option<f64>,
    #[serde(default)]
    pub max_eval_calls: Option<usize>,
}

pub struct SandboxRunner {
    factory: Box<dyn TransportFactory>,
    wall_timeout_s: Option<f64>,
    max_eval_calls: Option<usize>,
}

impl SandboxRunner {
    pub fn new(factory: Box<dyn TransportFactory>) -> Self {
        SandboxRunner {
            factory,
            wall_timeout_s: None,
            max_eval_calls: None,
        }
    }

    pub fn from_config(cfg: &SandboxConfig) -> Result<Self> {
        let (program, args) = cfg
            .command
            .split_first()
            .ok_or_else(|| Error::Config("sandbox command is empty".into()))?;
        let mut runner = SandboxRunner::new(Box::new(ProcessFactory {
            program: program.clone(),
            args: args.to_vec(),
        }));
        runner.wall_timeout_s = cfg.wall_timeout_s;
        runner.max_eval_calls = cfg.max_eval_calls;
        Ok(runner)
    }

    pub fn with_timeout(mut self, seconds: f64) -> Self {
        self.wall_timeout_s = Some(seconds);
        self
    }

    pub fn with_max_eval_calls(mut self, calls: usize) -> Self {
        self.max_eval_calls = Some(calls);
        self
    }

    fn limits(&self, batch: &ChannelBatch, b: usize) -> Limits {
        let d = Limits::defaults(batch.num_ports(), batch.selected_n(), b);
        Limits {
            wall_timeout_s: self.wall_timeout_s.unwrap_or(d.wall_timeout_s),
            max_eval_calls: self.max_eval_calls.unwrap_or(d.max_eval_calls),
        }
    }

    /// Runs one session and also returns the host-side evaluation count.
    pub fn run_session(&self, task: Task, source: &str, batch: &ChannelBatch, b: usize) -> (FitnessReport, usize) {
        let start = Instant::now();
        let sub = ChannelBatch {
            realizations: batch.realizations[..b.min(batch.len())].to_vec(),
            ..batch.clone()
        };
        let limits = self.limits(batch, sub.len());
        let file = match tempfile::Builder::new()
            .prefix("fas-guest-")
            .suffix(".fchan")
            .tempfile()
        {
            Ok(f) => f,
            Err(e) => return (fail(EvalStatus::RuntimeError, format!("scratch file: {e}"), start), 0),
        };
        if let Err(e) = write_fchan(&sub, file.path()) {
            return (fail(EvalStatus::RuntimeError, e.to_string(), start), 0);
        }
        let mut transport = match self.factory.open() {
            Ok(t) => t,
            Err(e) => return (fail(EvalStatus::RuntimeError, e.to_string(), start), 0),
        };
        let init = HostMessage::Init {
            version: PROTOCOL_VERSION,
            task,
            limits,
            channel_path: file.path().to_string_lossy().into_owned(),
            users_k: sub.users(),
            n: sub.selected_n(),
            num_ports: sub.num_ports(),
            power_mw: sub.scenario.power_mw(),
            noise_mw: sub.scenario.noise_mw(),
            batch_b: sub.len(),
        };
        let mut session = Session {
            batch: &sub,
            evaluators: HashMap::new(),
            returned: vec![Vec::new(); sub.len()],
            calls: 0,
            invalid: None,
        };
        let report = session.drive(transport.as_mut(), &init, source, limits, start);
        transport.kill();
        (report, session.calls)
    }
}

impl GuestRunner for SandboxRunner {
    fn run(&self, task: Task, source: &str, batch: &ChannelBatch, b: usize) -> FitnessReport {
        self.run_session(task, source, batch, b).0
    }
}

fn fail(status: EvalStatus, message: impl Into<String>, start: Instant) -> FitnessReport {
    FitnessReport::failed(status, message, start.elapsed().as_secs_f64())
}

struct Session<'a> {
    batch: &'a ChannelBatch,
    evaluators: HashMap<usize, Evaluator<'a>>,
    /// Values sent back per realization, for cross-checking the result.
    returned: Vec<Vec<f64>>,
    calls: usize,
    invalid: Option<String>,
}

impl<'a> Session<'a> {
    fn drive(
        &mut self,
        t: &mut dyn Transport,
        init: &HostMessage,
        source: &str,
        limits: Limits,
        start: Instant,
    ) -> FitnessReport {
        let run = HostMessage::Run {
            source: source.to_owned(),
        };
        for msg in [init, &run] {
            if let Err(e) = encode(msg).and_then(|l| t.send(&l)) {
                return fail(EvalStatus::RuntimeError, e.to_string(), start);
            }
        }
        let deadline = start + Duration::from_secs_f64(limits.wall_timeout_s.max(0.0));
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            let line = match t.recv(left) {
                Incoming::Line(l) => l,
                Incoming::TimedOut => {
                    return fail(
                        EvalStatus::Timeout,
                        format!("no result within {} s", limits.wall_timeout_s),
                        start,
                    )
                }
                Incoming::Closed => return fail(EvalStatus::RuntimeError, "worker exited without a result", start),
            };
            let msg = match decode_worker(&line) {
                Ok(m) => m,
                Err(e) => return fail(EvalStatus::RuntimeError, e.to_string(), start),
            };
            match msg {
                WorkerMessage::Eval { realization, ports } => {
                    self.calls += 1;
                    if self.calls > limits.max_eval_calls {
                        return fail(
                            EvalStatus::Timeout,
                            format!("evaluation budget of {} calls exceeded", limits.max_eval_calls),
                            start,
                        );
                    }
                    let reply = match self.eval(realization, &ports) {
                        Ok(v) => HostMessage::EvalResult {
                            value: Some(v),
                            error: None,
                        },
                        Err(e) => HostMessage::EvalResult {
                            value: None,
                            error: Some(e.to_string()),
                        },
                    };
                    if let Err(e) = encode(&reply).and_then(|l| t.send(&l)) {
                        return fail(EvalStatus::RuntimeError, e.to_string(), start);
                    }
                }
                WorkerMessage::Done {
                    fitness,
                    per_instance,
                    eval_calls,
                } => return self.finish(fitness, per_instance, eval_calls, start),
                WorkerMessage::Fail { status, message } => {
                    let status = if status == EvalStatus::Ok {
                        EvalStatus::RuntimeError
                    } else {
                        status
                    };
                    return fail(status, message, start);
                }
            }
        }
    }

    fn eval(&mut self, realization: i64, ports: &[i64]) -> Result<f64> {
        let checked = (|| {
            let r = usize::try_from(realization)
                .ok()
                .filter(|&r| r < self.batch.len())
                .ok_or_else(|| Error::Domain(format!("realization {realization} out of range")))?;
            let ports = ports
                .iter()
                .map(|&p| usize::try_from(p).map_err(|_| Error::Domain(format!("port {p} out of range"))))
                .collect::<Result<Vec<_>>>()?;
            Ok::<_, Error>((r, ports))
        })();
        let (r, ports) = match checked {
            Ok(v) => v,
            Err(e) => {
                self.invalid.get_or_insert_with(|| e.to_string());
                return Err(e);
            }
        };
        let batch = self.batch;
        let ev = match self.evaluators.entry(r) {
            std::collections::hash_map::Entry::Occupied(o) => o.into_mut(),
            std::collections::hash_map::Entry::Vacant(v) => v.insert(Evaluator::new(batch, r)?),
        };
        match ev.evaluate_raw(&ports) {
            Ok(g) => {
                self.returned[r].push(g);
                Ok(g)
            }
            Err(e) => {
                if matches!(e, Error::Domain(_)) {
                    self.invalid.get_or_insert_with(|| e.to_string());
                }
                Err(e)
            }
        }
    }

    fn finish(&self, fitness: f64, per_instance: Vec<f64>, eval_calls: usize, start: Instant) -> FitnessReport {
        if eval_calls != self.calls {
            return fail(
                EvalStatus::RuntimeError,
                format!("worker counted {eval_calls} evaluations, host served {}", self.calls),
                start,
            );
        }
        if let Some(why) = &self.invalid {
            return fail(EvalStatus::InvalidOutput, why.clone(), start);
        }
        if per_instance.len() != self.batch.len() {
            return fail(
                EvalStatus::InvalidOutput,
                format!(
                    "{} per-instance values for {} realizations",
                    per_instance.len(),
                    self.batch.len()
                ),
                start,
            );
        }
        if let Some(r) = (0..per_instance.len()).find(|&r| !self.returned[r].contains(&per_instance[r])) {
            return fail(
                EvalStatus::InvalidOutput,
                format!("value for realization {r} was never served by the host"),
                start,
            );
        }
        let report = FitnessReport::ok(per_instance, start.elapsed().as_secs_f64());
        if (fitness - report.mean_min_sinr).abs() > 1e-9 * report.mean_min_sinr.abs().max(1e-300) {
            return fail(
                EvalStatus::InvalidOutput,
                format!("reported fitness {fitness} is not the mean {}", report.mean_min_sinr),
                start,
            );
        }
        report
    }
}
