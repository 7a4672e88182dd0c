use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{classify_messages, VerificationResult, VerificationStatus, Verifier, VerifyError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplConfig {
    /// Program followed by its arguments.
    pub launch_command: Vec<String>,
    /// A Lean project with Mathlib available.
    pub working_dir: PathBuf,
    pub startup_timeout_s: f64,
    pub check_timeout_s: f64,
    /// Prepended to every statement.
    pub header: String,
    /// Restart a session after this many checks.
    pub recycle_after: u32,
    pub pool_size: usize,
}

impl Default for ReplConfig {
    fn default() -> Self {
        Self {
            launch_command: vec!["lake".into(), "exe".into(), "repl".into()],
            working_dir: PathBuf::from("."),
            startup_timeout_s: 600.0,
            check_timeout_s: 120.0,
            header: "import Mathlib".into(),
            recycle_after: 100,
            pool_size: 1,
        }
    }
}

impl ReplConfig {
    fn validate(&self) -> Result<(), VerifyError> {
        if self.launch_command.is_empty() || self.launch_command[0].trim().is_empty() {
            return Err(VerifyError::LaunchFailed("empty launch command".into()));
        }
        if !(self.startup_timeout_s > 0.0 && self.check_timeout_s > 0.0) {
            return Err(VerifyError::LaunchFailed("timeouts must be positive".into()));
        }
        if !self.working_dir.is_dir() {
            return Err(VerifyError::LaunchFailed(format!(
                "working directory {} does not exist",
                self.working_dir.display()
            )));
        }
        Ok(())
    }

    /// The exact source sent for `statement`.
    pub fn command_source(&self, statement: &str) -> String {
        if self.header.is_empty() {
            statement.to_string()
        } else {
            format!("{}\n{}", self.header, statement)
        }
    }
}

/// Encodes one request: a single-line JSON object followed by a blank line.
pub fn encode_request(source: &str) -> String {
    format!("{}\n\n", json!({ "cmd": source }))
}

enum ReadOutcome {
    Response(String),
    Timeout,
    Closed(String),
}

/// One live REPL child process. One command in flight at a time.
pub struct ReplSession {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
    checks: u32,
    dead: bool,
}

impl std::fmt::Debug for ReplSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReplSession")
            .field("pid", &self.child.id())
            .field("checks", &self.checks)
            .field("dead", &self.dead)
            .finish()
    }
}

impl ReplSession {
    /// Spawns the REPL and waits for it to process the header.
    pub fn start(cfg: &ReplConfig) -> Result<Self, VerifyError> {
        cfg.validate()?;
        let mut child = Command::new(&cfg.launch_command[0])
            .args(&cfg.launch_command[1..])
            .current_dir(&cfg.working_dir)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| VerifyError::LaunchFailed(format!("{}: {e}", cfg.launch_command[0])))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");

        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });

        let mut session = Self {
            child,
            stdin,
            lines: rx,
            checks: 0,
            dead: false,
        };
        if cfg.header.is_empty() {
            return Ok(session);
        }
        let budget = Duration::from_secs_f64(cfg.startup_timeout_s);
        match session.exchange(&cfg.header, budget)? {
            ReadOutcome::Response(text) => {
                let r = super::classify_response_text(&text);
                if r.status == VerificationStatus::Error || r.status == VerificationStatus::Crash {
                    session.kill();
                    return Err(VerifyError::HeaderRejected(text));
                }
                Ok(session)
            }
            ReadOutcome::Timeout => {
                session.kill();
                Err(VerifyError::StartupTimeout(cfg.startup_timeout_s))
            }
            ReadOutcome::Closed(partial) => {
                session.kill();
                Err(VerifyError::LaunchFailed(format!(
                    "REPL exited during startup {partial}"
                )))
            }
        }
    }

    fn exchange(&mut self, source: &str, budget: Duration) -> Result<ReadOutcome, VerifyError> {
        if let Err(e) = self
            .stdin
            .write_all(encode_request(source).as_bytes())
            .and_then(|_| self.stdin.flush())
        {
            self.dead = true;
            return Err(VerifyError::SessionDead(e.to_string()));
        }
        Ok(self.read_response(Instant::now() + budget))
    }

    /// Collects lines until a blank line ends the reply.
    fn read_response(&mut self, deadline: Instant) -> ReadOutcome {
        let mut buf = String::new();
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            match self.lines.recv_timeout(remaining) {
                Ok(line) => {
                    if line.trim().is_empty() {
                        if buf.trim().is_empty() {
                            continue;
                        }
                        // JSON never contains a raw blank line, so this ends the reply
                        // whether or not it parses.
                        return ReadOutcome::Response(buf);
                    }
                    buf.push_str(&line);
                    buf.push('\n');
                }
                Err(RecvTimeoutError::Timeout) => return ReadOutcome::Timeout,
                Err(RecvTimeoutError::Disconnected) => {
                    self.dead = true;
                    if !buf.trim().is_empty() && serde_json::from_str::<Value>(&buf).is_ok() {
                        return ReadOutcome::Response(buf);
                    }
                    return ReadOutcome::Closed(buf);
                }
            }
        }
    }

    /// Sends `header + "\n" + statement` and classifies the reply. A timeout
    /// kills the session and yields `status=timeout`; a vanished process is
    /// [`VerifyError::SessionDead`].
    pub fn verify_statement(&mut self, cfg: &ReplConfig, statement: &str) -> Result<VerificationResult, VerifyError> {
        if self.dead {
            return Err(VerifyError::SessionDead("session already closed".into()));
        }
        let started = Instant::now();
        let outcome = self.exchange(
            &cfg.command_source(statement),
            Duration::from_secs_f64(cfg.check_timeout_s),
        )?;
        self.checks += 1;
        let elapsed_ms = started.elapsed().as_millis() as u64;
        match outcome {
            ReadOutcome::Response(text) => {
                let mut r = match serde_json::from_str::<Value>(&text) {
                    Ok(v) => classify_messages(&v),
                    Err(_) => VerificationResult::crash(text),
                };
                r.elapsed_ms = elapsed_ms;
                Ok(r)
            }
            ReadOutcome::Timeout => {
                self.kill();
                Ok(VerificationResult::timeout(elapsed_ms))
            }
            ReadOutcome::Closed(partial) => Err(VerifyError::SessionDead(format!(
                "REPL exited mid-command; partial output {:?}",
                partial
            ))),
        }
    }

    pub fn checks(&self) -> u32 {
        self.checks
    }

    pub fn is_dead(&self) -> bool {
        self.dead
    }

    pub fn kill(&mut self) {
        self.dead = true;
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for ReplSession {
    fn drop(&mut self) {
        self.kill();
    }
}

/// A fixed-size pool of REPL sessions shared by pipeline workers.
///
/// Sessions start lazily, are recycled after `recycle_after` checks or any
/// crash or timeout, and are never shared mid-command.
#[derive(Debug)]
pub struct ReplPool {
    cfg: ReplConfig,
    idle: Mutex<Vec<ReplSession>>,
    live: Mutex<usize>,
    returned: Condvar,
}

impl ReplPool {
    pub fn new(cfg: ReplConfig) -> Self {
        Self {
            cfg,
            idle: Mutex::new(Vec::new()),
            live: Mutex::new(0),
            returned: Condvar::new(),
        }
    }

    pub fn config(&self) -> &ReplConfig {
        &self.cfg
    }

    fn checkout(&self) -> Result<ReplSession, VerifyError> {
        let mut live = self.live.lock().unwrap();
        loop {
            if let Some(s) = self.idle.lock().unwrap().pop() {
                return Ok(s);
            }
            if *live < self.cfg.pool_size.max(1) {
                *live += 1;
                drop(live);
                return ReplSession::start(&self.cfg).inspect_err(|_| {
                    *self.live.lock().unwrap() -= 1;
                });
            }
            live = self.returned.wait(live).unwrap();
        }
    }

    fn checkin(&self, session: ReplSession) {
        let _live = self.live.lock().unwrap();
        self.idle.lock().unwrap().push(session);
        self.returned.notify_one();
    }

    fn retire(&self, session: ReplSession) {
        drop(session);
        *self.live.lock().unwrap() -= 1;
        self.returned.notify_one();
    }

    fn run_once(&self, statement: &str) -> Result<VerificationResult, VerifyError> {
        let mut session = self.checkout()?;
        if session.checks() >= self.cfg.recycle_after.max(1) {
            self.retire(session);
            session = self.checkout()?;
        }
        let result = session.verify_statement(&self.cfg, statement);
        let healthy =
            matches!(&result, Ok(r) if !matches!(r.status, VerificationStatus::Timeout | VerificationStatus::Crash));
        if healthy && !session.is_dead() {
            self.checkin(session);
        } else {
            self.retire(session);
        }
        result
    }
}

impl Verifier for ReplPool {
    fn verify(&self, statement: &str) -> Result<VerificationResult, VerifyError> {
        match self.run_once(statement) {
            Err(VerifyError::SessionDead(first)) => match self.run_once(statement) {
                Err(VerifyError::SessionDead(second)) => {
                    Ok(VerificationResult::crash(format!("{first}; after restart: {second}")))
                }
                other => other,
            },
            other => other,
        }
    }
}
