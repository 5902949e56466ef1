//! External classifier adapter: one child process speaking JSON lines.
//!
//! Request: `{"id": u64, "h": u32, "w": u32, "c": u32, "data": [f32...]}`
//! with data row-major. Response: `{"id": u64, "label": u32}`. Handshake:
//! the adapter sends `{"id":0,"op":"num_classes"}` and expects
//! `{"id":0,"num_classes": u32}`. Unknown fields are ignored. This adapter
//! is the only component that performs I/O during metric computation.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::json;

use super::Classifier;
use crate::error::{Error, Result, TransportKind};
use crate::image::{ImageTensor, LabelId};

#[derive(Deserialize)]
struct LabelResponse {
    id: u64,
    label: Option<u32>,
    num_classes: Option<u32>,
}

struct ProcessState {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
}

/// Black-box classifier backed by a child process. Queries are strictly
/// serial over the process's pipes.
pub struct ExternalClassifier {
    state: Mutex<ProcessState>,
    num_classes: u32,
    timeout: Duration,
}

impl ExternalClassifier {
    /// Spawns `command` through `sh -c` and performs the handshake.
    pub fn spawn(command: &str, timeout_ms: u64) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::transport(TransportKind::ProcessExit, format!("spawn: {e}")))?;
        let stdin = child
            .stdin
            .take()
            .ok_or_else(|| Error::transport(TransportKind::ProcessExit, "no stdin"))?;
        let stdout = child
            .stdout
            .take()
            .ok_or_else(|| Error::transport(TransportKind::ProcessExit, "no stdout"))?;

        let (tx, rx) = std::sync::mpsc::channel();
        std::thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                let mut line = String::new();
                match reader.read_line(&mut line) {
                    Ok(0) => break,
                    Ok(_) => {
                        if tx.send(Ok(line)).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        break;
                    }
                }
            }
        });

        let mut state = ProcessState {
            child,
            stdin,
            lines: rx,
            next_id: 1,
        };
        let timeout = Duration::from_millis(timeout_ms);
        let reply = request(&mut state, &json!({"id": 0, "op": "num_classes"}), timeout)?;
        if reply.id != 0 {
            return Err(Error::transport(
                TransportKind::IdMismatch,
                format!("handshake answered id {}", reply.id),
            ));
        }
        let num_classes = reply.num_classes.ok_or_else(|| {
            Error::transport(TransportKind::MalformedResponse, "handshake missing num_classes")
        })?;
        if num_classes == 0 {
            return Err(Error::transport(
                TransportKind::MalformedResponse,
                "num_classes must be positive",
            ));
        }
        Ok(Self {
            state: Mutex::new(state),
            num_classes,
            timeout,
        })
    }
}

fn request(
    state: &mut ProcessState,
    payload: &serde_json::Value,
    timeout: Duration,
) -> Result<LabelResponse> {
    let mut line = serde_json::to_string(payload)
        .map_err(|e| Error::transport(TransportKind::MalformedResponse, e.to_string()))?;
    line.push('\n');
    state
        .stdin
        .write_all(line.as_bytes())
        .and_then(|_| state.stdin.flush())
        .map_err(|e| Error::transport(TransportKind::ProcessExit, format!("write: {e}")))?;

    let deadline = Instant::now() + timeout;
    let remaining = deadline.saturating_duration_since(Instant::now());
    let raw = match state.lines.recv_timeout(remaining) {
        Ok(Ok(l)) => l,
        Ok(Err(e)) => {
            return Err(Error::transport(TransportKind::ProcessExit, format!("read: {e}")))
        }
        Err(RecvTimeoutError::Timeout) => {
            return Err(Error::transport(
                TransportKind::Timeout,
                format!("no response within {}ms", timeout.as_millis()),
            ))
        }
        Err(RecvTimeoutError::Disconnected) => {
            return Err(Error::transport(TransportKind::ProcessExit, "stdout closed"))
        }
    };
    let parsed: LabelResponse = serde_json::from_str(raw.trim()).map_err(|_| {
        Error::transport(TransportKind::MalformedResponse, format!("payload: {}", raw.trim()))
    })?;
    Ok(parsed)
}

impl Classifier for ExternalClassifier {
    fn classify(&self, image: &ImageTensor) -> Result<LabelId> {
        let mut state = self.state.lock().unwrap();
        let id = state.next_id;
        state.next_id += 1;
        let payload = json!({
            "id": id,
            "h": image.height() as u32,
            "w": image.width() as u32,
            "c": image.channels() as u32,
            "data": image.data(),
        });
        let reply = request(&mut state, &payload, self.timeout)?;
        if reply.id != id {
            return Err(Error::transport(
                TransportKind::IdMismatch,
                format!("sent id {id}, got {}", reply.id),
            ));
        }
        let label = reply.label.ok_or_else(|| {
            Error::transport(TransportKind::MalformedResponse, "response missing label")
        })?;
        if label >= self.num_classes {
            return Err(Error::transport(
                TransportKind::MalformedResponse,
                format!("label {label} outside {} classes", self.num_classes),
            ));
        }
        Ok(LabelId(label))
    }

    fn num_classes(&self) -> u32 {
        self.num_classes
    }

    /// One process, one pipe pair: queries must be serialized.
    fn supports_concurrent(&self) -> bool {
        false
    }
}

impl Drop for ExternalClassifier {
    fn drop(&mut self) {
        if let Ok(mut state) = self.state.lock() {
            let _ = state.child.kill();
            let _ = state.child.wait();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timeout_when_process_stays_silent() {
        let err = ExternalClassifier::spawn("sleep 30", 200).unwrap_err();
        match err {
            Error::Transport { kind, .. } => assert_eq!(kind, TransportKind::Timeout),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_handshake_is_a_transport_error() {
        let err = ExternalClassifier::spawn("echo not-json; sleep 30", 2000).unwrap_err();
        match err {
            Error::Transport { kind, detail } => {
                assert_eq!(kind, TransportKind::MalformedResponse);
                assert!(detail.contains("not-json"), "payload carried: {detail}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn process_exit_is_a_transport_error() {
        let err = ExternalClassifier::spawn("true", 2000).unwrap_err();
        match err {
            Error::Transport { kind, .. } => assert_eq!(kind, TransportKind::ProcessExit),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mismatched_id_is_a_transport_error() {
        // Replies to the handshake correctly, then answers id 999 forever.
        let script = r#"read line; echo '{"id":0,"num_classes":10}'; while read line; do echo '{"id":999,"label":4}'; done"#;
        let clf = ExternalClassifier::spawn(script, 2000).unwrap();
        assert_eq!(clf.num_classes(), 10);
        let img = ImageTensor::zeros(2, 2, 1);
        match clf.classify(&img).unwrap_err() {
            Error::Transport { kind, .. } => assert_eq!(kind, TransportKind::IdMismatch),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn protocol_echo_returns_label() {
        // Answers every request with the request's id and label 4.
        let script = r#"
while read line; do
  id=$(printf '%s' "$line" | sed -n 's/.*"id":[[:space:]]*\([0-9][0-9]*\).*/\1/p')
  if [ "$id" = "0" ]; then
    echo "{\"id\":0,\"num_classes\":10}"
  else
    echo "{\"id\":$id,\"label\":4,\"extra\":true}"
  fi
done
"#;
        let clf = ExternalClassifier::spawn(script, 5000).unwrap();
        let img = ImageTensor::zeros(2, 2, 1);
        assert_eq!(clf.classify(&img).unwrap(), LabelId(4));
        assert_eq!(clf.classify(&img).unwrap(), LabelId(4));
        assert!(!clf.supports_concurrent());
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let script = r#"read line; echo '{"id":0,"num_classes":3}'; while read line; do echo '{"id":1,"label":7}'; done"#;
        let clf = ExternalClassifier::spawn(script, 2000).unwrap();
        let img = ImageTensor::zeros(2, 2, 1);
        match clf.classify(&img).unwrap_err() {
            Error::Transport { kind, .. } => assert_eq!(kind, TransportKind::MalformedResponse),
            other => panic!("unexpected {other:?}"),
        }
    }
}
