//! Deterministic in-process transports for tests and fixture authoring.

use std::collections::HashMap;
use std::sync::Mutex;

use super::transport::{ChatRequest, Transport, TransportError};

/// Marker line every engine prompt carries for the user's command.
pub const COMMAND_MARKER: &str = "USER COMMAND:";

type Responder = dyn Fn(&ChatRequest) -> Result<String, TransportError> + Send + Sync;

/// Transport answering from a closure or from per-command reply sequences.
/// Every request is captured for later inspection.
pub struct ScriptedTransport {
    responder: Box<Responder>,
    captured: Mutex<Vec<ChatRequest>>,
}

impl std::fmt::Debug for ScriptedTransport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScriptedTransport")
            .field("captured", &self.captured.lock().map(|c| c.len()).unwrap_or(0))
            .finish()
    }
}

impl ScriptedTransport {
    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(&ChatRequest) -> Result<String, TransportError> + Send + Sync + 'static,
    {
        Self {
            responder: Box::new(f),
            captured: Mutex::new(Vec::new()),
        }
    }

    /// Replies keyed by the command found in the request. The k-th request
    /// for a command gets the k-th reply; the last reply repeats once the
    /// sequence is exhausted. Unknown commands are a transport error.
    pub fn by_command<I, C, R>(script: I) -> Self
    where
        I: IntoIterator<Item = (C, Vec<R>)>,
        C: Into<String>,
        R: Into<String>,
    {
        let replies: HashMap<String, Vec<String>> = script
            .into_iter()
            .map(|(c, rs)| (c.into(), rs.into_iter().map(Into::into).collect()))
            .collect();
        let counters: Mutex<HashMap<String, usize>> = Mutex::new(HashMap::new());
        Self::from_fn(move |req| {
            let command = command_of(req)
                .ok_or_else(|| TransportError::Other("request carries no command marker".into()))?;
            let seq = replies
                .get(&command)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| TransportError::Other(format!("no scripted reply for {command:?}")))?;
            let mut counters = counters.lock().expect("counter lock");
            let n = counters.entry(command).or_insert(0);
            let reply = seq[(*n).min(seq.len() - 1)].clone();
            *n += 1;
            Ok(reply)
        })
    }

    pub fn captured(&self) -> Vec<ChatRequest> {
        self.captured.lock().expect("capture lock").clone()
    }
}

impl Transport for ScriptedTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        self.captured.lock().expect("capture lock").push(request.clone());
        (self.responder)(request)
    }
}

/// The command of the first user message carrying [`COMMAND_MARKER`].
pub fn command_of(req: &ChatRequest) -> Option<String> {
    req.messages
        .iter()
        .filter(|m| m.role == "user")
        .find_map(|m| {
            m.content
                .lines()
                .find_map(|l| l.trim().strip_prefix(COMMAND_MARKER))
                .map(|c| c.trim().to_string())
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::transport::WireMessage;

    fn req(cmd: &str) -> ChatRequest {
        ChatRequest {
            model: "m".into(),
            temperature: 0.0,
            messages: vec![
                WireMessage { role: "system".into(), content: "s".into() },
                WireMessage { role: "user".into(), content: format!("context\n{COMMAND_MARKER} {cmd}\n") },
            ],
        }
    }

    #[test]
    fn sequences_advance_and_repeat() {
        let t = ScriptedTransport::by_command([("a", vec!["one", "two"])]);
        assert_eq!(t.complete(&req("a")).unwrap(), "one");
        assert_eq!(t.complete(&req("a")).unwrap(), "two");
        assert_eq!(t.complete(&req("a")).unwrap(), "two");
        assert!(t.complete(&req("b")).is_err());
        assert_eq!(t.captured().len(), 4);
    }
}
