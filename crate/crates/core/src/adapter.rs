//! JSON request/response transport for out-of-process adapters.
//!
//! An adapter is either a subprocess (one JSON request written to stdin, one
//! JSON response read from stdout) or an HTTP endpoint receiving a POST.

use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("failed to start adapter `{program}`: {source}")]
    Spawn { program: String, source: std::io::Error },
    #[error("adapter timed out after {0:?}")]
    Timeout(Duration),
    #[error("adapter exited with {status}: {stderr}")]
    Exit { status: String, stderr: String },
    #[error("adapter i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("http request to {url} failed: {message}")]
    Http { url: String, message: String },
    #[error("adapter response is not valid JSON for this protocol: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transport {
    Subprocess { program: String, args: Vec<String> },
    /// Base URL; the protocol path (e.g. `/decode`) is appended per call.
    Http { base_url: String },
}

impl Transport {
    /// `http://` and `https://` specs select HTTP; anything else is a command
    /// line split on whitespace.
    pub fn parse(spec: &str) -> Option<Self> {
        let spec = spec.trim();
        if spec.starts_with("http://") || spec.starts_with("https://") {
            return Some(Self::Http { base_url: spec.trim_end_matches('/').to_string() });
        }
        let mut parts = spec.split_whitespace().map(str::to_string);
        let program = parts.next()?;
        Some(Self::Subprocess { program, args: parts.collect() })
    }
}

#[derive(Debug, Clone)]
pub struct JsonAdapter {
    pub transport: Transport,
    pub timeout: Duration,
}

impl JsonAdapter {
    pub fn new(transport: Transport) -> Self {
        Self { transport, timeout: DEFAULT_TIMEOUT }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// Sends `request` and decodes the response. `path` is used only by the
    /// HTTP transport.
    pub fn call<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        path: &str,
        request: &Req,
    ) -> Result<Resp, AdapterError> {
        let body = serde_json::to_vec(request).map_err(|e| AdapterError::Protocol(e.to_string()))?;
        let raw = self.call_raw(path, &body)?;
        serde_json::from_slice(&raw).map_err(|e| AdapterError::Protocol(e.to_string()))
    }

    pub fn call_raw(&self, path: &str, body: &[u8]) -> Result<Vec<u8>, AdapterError> {
        match &self.transport {
            Transport::Subprocess { program, args } => {
                run_subprocess(program, args, body, self.timeout)
            }
            Transport::Http { base_url } => post(&format!("{base_url}{path}"), body, self.timeout),
        }
    }
}

fn run_subprocess(
    program: &str,
    args: &[String],
    body: &[u8],
    timeout: Duration,
) -> Result<Vec<u8>, AdapterError> {
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|source| AdapterError::Spawn { program: program.to_string(), source })?;

    let mut stdin = child.stdin.take().expect("piped stdin");
    let mut stdout = child.stdout.take().expect("piped stdout");
    let mut stderr = child.stderr.take().expect("piped stderr");

    let payload = body.to_vec();
    let writer = std::thread::spawn(move || {
        let r = stdin.write_all(&payload).and_then(|_| stdin.write_all(b"\n"));
        drop(stdin);
        r
    });
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let r = stdout.read_to_end(&mut out).and_then(|_| stderr.read_to_end(&mut err));
        let _ = tx.send(r.map(|_| (out, err)));
    });

    let (out, err) = match rx.recv_timeout(timeout) {
        Ok(r) => r?,
        Err(_) => {
            let _ = child.kill();
            let _ = child.wait();
            return Err(AdapterError::Timeout(timeout));
        }
    };
    // A broken pipe here only means the adapter answered without reading
    // all of stdin.
    let _ = writer.join();
    let status = child.wait()?;
    if !status.success() {
        return Err(AdapterError::Exit {
            status: status.to_string(),
            stderr: String::from_utf8_lossy(&err).trim().to_string(),
        });
    }
    Ok(out)
}

fn post(url: &str, body: &[u8], timeout: Duration) -> Result<Vec<u8>, AdapterError> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into();
    let http = |message: String| AdapterError::Http { url: url.to_string(), message };
    let mut resp = agent
        .post(url)
        .header("content-type", "application/json")
        .send(body)
        .map_err(|e| match e {
            ureq::Error::Timeout(_) => AdapterError::Timeout(timeout),
            other => http(other.to_string()),
        })?;
    let status = resp.status();
    let bytes = resp.body_mut().read_to_vec().map_err(|e| http(e.to_string()))?;
    if !status.is_success() {
        return Err(http(format!("status {status}: {}", String::from_utf8_lossy(&bytes))));
    }
    Ok(bytes)
}
