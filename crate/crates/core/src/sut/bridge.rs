//! Client side of the FMU bridge line protocol.
//!
//! The bridge is a child process that speaks newline-delimited JSON on its
//! standard streams. Each request `{"cmd", "id", "payload"}` is answered by
//! one response `{"id", "ok", "payload"}` or `{"id", "ok": false, "error":
//! {"code", "message"}}`. Traces longer than [`CHUNK_SAMPLES`] travel in
//! several messages sharing one id, all but the last flagged `"more": true`.
//! See `docs/bridge_protocol.md`.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use serde_json::{json, Map, Value};

use crate::extraction::InterfaceSpec;
use crate::signals::{SignalBundle, Trace};

use super::{check_inputs, BackendError, BackendKind, Simulator, SutDescriptor, SutError};

pub const PROTOCOL_VERSION: &str = "1.0";
pub const CHUNK_SAMPLES: usize = 100_000;

pub struct BridgeClient<R, W> {
    reader: R,
    writer: W,
    next_id: u64,
}

fn major(version: &str) -> &str {
    version.split('.').next().unwrap_or("")
}

impl<R: BufRead, W: Write> BridgeClient<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        Self {
            reader,
            writer,
            next_id: 1,
        }
    }

    fn send(&mut self, message: &Value) -> Result<(), BackendError> {
        let mut line = serde_json::to_string(message).expect("protocol messages serialize");
        line.push('\n');
        self.writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.flush())
            .map_err(|e| BackendError::BridgeDown(e.to_string()))
    }

    fn receive(&mut self, id: u64) -> Result<Value, BackendError> {
        let mut line = String::new();
        let read = self
            .reader
            .read_line(&mut line)
            .map_err(|e| BackendError::BridgeDown(e.to_string()))?;
        if read == 0 {
            return Err(BackendError::BridgeDown("bridge closed its output".into()));
        }
        let message: Value = serde_json::from_str(line.trim_end())
            .map_err(|e| BackendError::Protocol(format!("unparseable response: {e}")))?;
        if message.get("id").and_then(Value::as_u64) != Some(id) {
            return Err(BackendError::Protocol(format!(
                "expected response to request {id}, got {}",
                message.get("id").unwrap_or(&Value::Null)
            )));
        }
        match message.get("ok").and_then(Value::as_bool) {
            Some(true) => Ok(message.get("payload").cloned().unwrap_or(Value::Null)),
            Some(false) => {
                let error = message.get("error").cloned().unwrap_or(Value::Null);
                let code = error.get("code").and_then(Value::as_str).unwrap_or("Unknown").to_string();
                let text = error.get("message").and_then(Value::as_str).unwrap_or("").to_string();
                Err(match code.as_str() {
                    "BadFmu" => BackendError::BadFmu(text),
                    _ => BackendError::Remote { code, message: text },
                })
            }
            None => Err(BackendError::Protocol("response lacks a boolean `ok`".into())),
        }
    }

    /// Sends one request, possibly split into several chunk messages, and
    /// collects the possibly chunked response payloads.
    fn call(&mut self, cmd: &str, chunks: Vec<Value>) -> Result<Vec<Value>, BackendError> {
        let id = self.next_id;
        self.next_id += 1;
        let last = chunks.len().saturating_sub(1);
        for (i, mut payload) in chunks.into_iter().enumerate() {
            if last > 0 {
                payload["more"] = Value::Bool(i < last);
            }
            self.send(&json!({"cmd": cmd, "id": id, "payload": payload}))?;
        }
        let mut replies = Vec::new();
        loop {
            let payload = self.receive(id)?;
            let more = payload.get("more").and_then(Value::as_bool).unwrap_or(false);
            replies.push(payload);
            if !more {
                return Ok(replies);
            }
        }
    }

    pub fn hello(&mut self) -> Result<String, BackendError> {
        let reply = self
            .call("hello", vec![json!({"protocol_version": PROTOCOL_VERSION, "client": "mrflow"})])
            .map_err(|e| match e {
                BackendError::BridgeDown(m) => BackendError::BridgeDown(m),
                other => BackendError::HandshakeFailed(other.to_string()),
            })?;
        let version = reply[0]
            .get("protocol_version")
            .and_then(Value::as_str)
            .ok_or_else(|| BackendError::HandshakeFailed("no protocol_version in reply".into()))?;
        if major(version) != major(PROTOCOL_VERSION) {
            return Err(BackendError::HandshakeFailed(format!(
                "bridge speaks protocol {version}, client speaks {PROTOCOL_VERSION}"
            )));
        }
        Ok(version.to_string())
    }

    pub fn describe(&mut self, fmu: &Path) -> Result<InterfaceSpec, BackendError> {
        let reply = self.call("describe", vec![json!({"fmu": fmu.display().to_string()})])?;
        serde_json::from_value(reply[0].get("interface").cloned().unwrap_or(Value::Null))
            .map_err(|e| BackendError::Protocol(format!("bad interface payload: {e}")))
    }

    pub fn simulate(&mut self, fmu: &Path, inputs: &SignalBundle) -> Result<SignalBundle, BackendError> {
        let grid = inputs.grid;
        let n = grid.len();
        let mut chunks = Vec::new();
        let mut offset = 0;
        while offset < n || chunks.is_empty() {
            let end = (offset + CHUNK_SAMPLES).min(n);
            let traces: Map<String, Value> = inputs
                .traces
                .iter()
                .map(|(var, values)| (var.clone(), json!(values[offset..end])))
                .collect();
            chunks.push(json!({
                "fmu": fmu.display().to_string(),
                "grid": grid,
                "offset": offset,
                "inputs": traces,
            }));
            offset = end;
        }
        let replies = self.call("simulate", chunks)?;

        let mut outputs: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for reply in replies {
            let expected = outputs.values().next().map_or(0, Vec::len);
            let offset = reply.get("offset").and_then(Value::as_u64).unwrap_or(0) as usize;
            if offset != expected {
                return Err(BackendError::Protocol(format!("chunk offset {offset}, expected {expected}")));
            }
            let part: BTreeMap<String, Vec<f64>> =
                serde_json::from_value(reply.get("outputs").cloned().unwrap_or(Value::Null))
                    .map_err(|e| BackendError::Protocol(format!("bad outputs payload: {e}")))?;
            for (var, values) in part {
                outputs.entry(var).or_default().extend(values);
            }
        }
        let mut bundle = SignalBundle::new(grid);
        for (var, values) in outputs {
            let trace = Trace::new(var, grid, values).map_err(|e| BackendError::Protocol(e.to_string()))?;
            bundle.insert(trace).map_err(|e| BackendError::Protocol(e.to_string()))?;
        }
        Ok(bundle)
    }

    pub fn shutdown(&mut self) -> Result<(), BackendError> {
        self.call("shutdown", vec![json!({})]).map(|_| ())
    }
}

/// Bridge running as a child process.
pub struct BridgeProcess {
    child: Child,
    client: BridgeClient<BufReader<ChildStdout>, ChildStdin>,
    fmu: PathBuf,
    descriptor: SutDescriptor,
}

impl BridgeProcess {
    /// Starts the bridge, checks the protocol version and fetches the
    /// interface of `fmu`.
    pub fn spawn(command: &[String], fmu: &Path) -> Result<Self, SutError> {
        if !fmu.is_file() {
            return Err(BackendError::BadFmu(format!("{} does not exist", fmu.display())).into());
        }
        let (program, args) = command
            .split_first()
            .ok_or_else(|| BackendError::BridgeDown("empty bridge command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| BackendError::BridgeDown(format!("cannot start `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped");
        let stdout = child.stdout.take().expect("piped");
        let mut client = BridgeClient::new(BufReader::new(stdout), stdin);
        let interface = client.hello().and_then(|_| client.describe(fmu));
        let interface = match interface {
            Ok(i) => i,
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(e.into());
            }
        };
        Ok(Self {
            child,
            client,
            fmu: fmu.to_path_buf(),
            descriptor: SutDescriptor {
                id: format!("fmu:{}", fmu.display()),
                interface,
                backend: BackendKind::Bridge,
            },
        })
    }
}

impl Simulator for BridgeProcess {
    fn descriptor(&self) -> &SutDescriptor {
        &self.descriptor
    }

    fn simulate(&mut self, inputs: &SignalBundle) -> Result<SignalBundle, SutError> {
        check_inputs(&self.descriptor.interface, inputs)?;
        let out = self.client.simulate(&self.fmu, inputs)?;
        for spec in self.descriptor.interface.outputs() {
            if !out.contains(&spec.name) {
                return Err(SutError::InterfaceMismatch(format!("bridge returned no `{}` trace", spec.name)));
            }
        }
        Ok(out)
    }
}

impl Drop for BridgeProcess {
    fn drop(&mut self) {
        if self.client.shutdown().is_err() {
            let _ = self.child.kill();
        }
        let _ = self.child.wait();
    }
}
