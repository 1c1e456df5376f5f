//! Client side of the model sidecar protocol.
//!
//! Requests and responses are single-line JSON objects exchanged over the
//! sidecar's stdin/stdout. Every request carries a client-chosen `id` that the
//! response echoes. One request is in flight per connection.
//!
//! ```text
//! -> {"id":1,"op":"embed","text":"Gouda is a cheese.","span":[0,5]}
//! <- {"id":1,"status":"ok","dim":4,"tokens":2,"rows":[[...],[...]],"token_spans":[[0,5],[6,8]]}
//! -> {"id":2,"op":"ner","text":"..."}
//! <- {"id":2,"status":"ok","spans":[{"start":0,"end":5,"label":"LOC"}]}
//! -> {"id":3,"op":"synthesize","document":"...","contexts":[{"surface":"...","passages":["..."]}],"prompt_template":"..."}
//! <- {"id":3,"status":"ok","text":"..."}
//! <- {"id":4,"status":"error","reason":"unknown op"}
//! ```

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::embedding::{
    pool_span, EmbedInput, EmbeddingProvider, EmbeddingVector, Granularity, ProviderDescriptor,
    ProviderKind, TokenMatrix,
};
use crate::text::{self, Span};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeRequest {
    pub id: u64,
    #[serde(flatten)]
    pub op: BridgeOp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum BridgeOp {
    Embed {
        text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        span: Option<Span>,
    },
    Ner {
        text: String,
    },
    Synthesize {
        document: String,
        contexts: Vec<EntityContext>,
        prompt_template: String,
    },
}

/// KB passages retrieved for one flagged surface form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityContext {
    pub surface: String,
    pub passages: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NerSpan {
    pub start: usize,
    pub end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeResponse {
    pub id: u64,
    pub status: ResponseStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<Vec<Vec<f32>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_spans: Option<Vec<Span>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spans: Option<Vec<NerSpan>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl BridgeResponse {
    fn blank(id: u64, status: ResponseStatus) -> Self {
        BridgeResponse {
            id,
            status,
            reason: None,
            dim: None,
            tokens: None,
            rows: None,
            token_spans: None,
            spans: None,
            text: None,
        }
    }

    pub fn error(id: u64, reason: impl Into<String>) -> Self {
        BridgeResponse {
            reason: Some(reason.into()),
            ..Self::blank(id, ResponseStatus::Error)
        }
    }

    pub fn embedded(id: u64, rows: Vec<Vec<f32>>, token_spans: Vec<Span>) -> Self {
        BridgeResponse {
            dim: rows.first().map(Vec::len),
            tokens: Some(rows.len()),
            rows: Some(rows),
            token_spans: Some(token_spans),
            ..Self::blank(id, ResponseStatus::Ok)
        }
    }

    pub fn entities(id: u64, spans: Vec<NerSpan>) -> Self {
        BridgeResponse {
            spans: Some(spans),
            ..Self::blank(id, ResponseStatus::Ok)
        }
    }

    pub fn generated(id: u64, text: impl Into<String>) -> Self {
        BridgeResponse {
            text: Some(text.into()),
            ..Self::blank(id, ResponseStatus::Ok)
        }
    }

    /// Validates an embed response against the declared dim and the encoded text.
    pub fn into_token_matrix(self, expected_dim: usize, text_len: usize, granularity: Granularity) -> Result<TokenMatrix> {
        let dim = self.dim.ok_or_else(|| Error::Protocol("embed response lacks `dim`".into()))?;
        if dim != expected_dim {
            return Err(Error::Protocol(format!(
                "embed response declares dim {dim}, provider expects dim {expected_dim}"
            )));
        }
        let rows = self.rows.ok_or_else(|| Error::Protocol("embed response lacks `rows`".into()))?;
        let spans = self
            .token_spans
            .ok_or_else(|| Error::Protocol("embed response lacks `token_spans`".into()))?;
        if let Some(tokens) = self.tokens {
            if tokens != rows.len() {
                return Err(Error::Protocol(format!(
                    "embed response declares {tokens} tokens but carries {} rows",
                    rows.len()
                )));
            }
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::Protocol(format!(
                "embed response row has dim {}, declared dim {dim}",
                bad.len()
            )));
        }
        let rows = rows
            .into_iter()
            .map(EmbeddingVector::new)
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Protocol(format!("embed response row rejected: {e}")))?;
        match granularity {
            Granularity::Sentence => {
                let row = rows
                    .into_iter()
                    .next()
                    .ok_or_else(|| Error::Protocol("embed response has no rows".into()))?;
                Ok(TokenMatrix::sentence(row, text_len))
            }
            Granularity::Token => TokenMatrix::new(rows, spans, text_len),
        }
    }
}

/// A bidirectional line channel to a sidecar.
pub trait LineTransport: Send {
    fn send_line(&mut self, line: &str) -> Result<()>;
    fn recv_line(&mut self) -> Result<String>;
}

/// Sidecar launched as a child process speaking over stdin/stdout.
pub struct StdioTransport {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl StdioTransport {
    pub fn spawn(command: &[String]) -> Result<Self> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| Error::Transport("bridge command is empty".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Transport(format!("cannot launch bridge `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = BufReader::new(child.stdout.take().expect("stdout is piped"));
        Ok(StdioTransport { child, stdin, stdout })
    }
}

impl LineTransport for StdioTransport {
    fn send_line(&mut self, line: &str) -> Result<()> {
        writeln!(self.stdin, "{line}")
            .and_then(|_| self.stdin.flush())
            .map_err(|e| Error::Transport(format!("writing to bridge: {e}")))
    }

    fn recv_line(&mut self) -> Result<String> {
        let mut line = String::new();
        let n = self
            .stdout
            .read_line(&mut line)
            .map_err(|e| Error::Transport(format!("reading from bridge: {e}")))?;
        if n == 0 {
            return Err(Error::Transport("bridge closed its output".into()));
        }
        Ok(line.trim_end_matches(['\n', '\r']).to_string())
    }
}

impl Drop for StdioTransport {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// In-process transport answering each line with a handler; used to host a
/// reference server inside tests and examples.
pub struct LoopbackTransport<F> {
    handler: F,
    pending: Option<String>,
}

impl<F> LoopbackTransport<F>
where
    F: FnMut(&str) -> String + Send,
{
    pub fn new(handler: F) -> Self {
        LoopbackTransport {
            handler,
            pending: None,
        }
    }
}

impl<F> LineTransport for LoopbackTransport<F>
where
    F: FnMut(&str) -> String + Send,
{
    fn send_line(&mut self, line: &str) -> Result<()> {
        self.pending = Some((self.handler)(line));
        Ok(())
    }

    fn recv_line(&mut self) -> Result<String> {
        self.pending
            .take()
            .ok_or_else(|| Error::Transport("no response pending".into()))
    }
}

/// Applies the bridge command override from the environment, if set.
pub fn resolve_command(configured: &[String]) -> Vec<String> {
    match std::env::var(crate::embedding::BRIDGE_ENV) {
        Ok(cmd) if !cmd.trim().is_empty() => cmd.split_whitespace().map(String::from).collect(),
        _ => configured.to_vec(),
    }
}

pub struct BridgeClient {
    transport: Mutex<Box<dyn LineTransport>>,
    next_id: AtomicU64,
}

impl BridgeClient {
    pub fn new(transport: Box<dyn LineTransport>) -> Self {
        BridgeClient {
            transport: Mutex::new(transport),
            next_id: AtomicU64::new(1),
        }
    }

    pub fn spawn(command: &[String]) -> Result<Self> {
        Ok(Self::new(Box::new(StdioTransport::spawn(command)?)))
    }

    /// Sends one request and waits for its response. Error responses become
    /// [`Error::Protocol`] carrying the server's reason.
    pub fn call(&self, op: BridgeOp) -> Result<BridgeResponse> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let request = BridgeRequest { id, op };
        let line = serde_json::to_string(&request).map_err(|e| Error::json("encoding bridge request", e))?;
        let reply = {
            let mut transport = self.transport.lock().unwrap_or_else(|p| p.into_inner());
            transport.send_line(&line)?;
            transport.recv_line()?
        };
        let response = parse_response(&reply)?;
        if response.id != id {
            return Err(Error::Protocol(format!(
                "response id {} does not match request id {id}",
                response.id
            )));
        }
        if response.status == ResponseStatus::Error {
            return Err(Error::Protocol(format!(
                "bridge error: {}",
                response.reason.as_deref().unwrap_or("unspecified")
            )));
        }
        Ok(response)
    }

    pub fn embed(&self, text: &str, span: Option<Span>, dim: usize, granularity: Granularity) -> Result<TokenMatrix> {
        let response = self.call(BridgeOp::Embed {
            text: text.to_string(),
            span,
        })?;
        response.into_token_matrix(dim, text::char_len(text), granularity)
    }

    pub fn ner(&self, text: &str) -> Result<Vec<NerSpan>> {
        let response = self.call(BridgeOp::Ner { text: text.to_string() })?;
        let spans = response
            .spans
            .ok_or_else(|| Error::Protocol("ner response lacks `spans`".into()))?;
        let len = text::char_len(text);
        for s in &spans {
            Span::new(s.start, s.end)
                .check_within(len)
                .map_err(|e| Error::Protocol(format!("ner span rejected: {e}")))?;
        }
        Ok(spans)
    }

    pub fn synthesize(&self, document: &str, contexts: Vec<EntityContext>, prompt_template: &str) -> Result<String> {
        let response = self.call(BridgeOp::Synthesize {
            document: document.to_string(),
            contexts,
            prompt_template: prompt_template.to_string(),
        })?;
        response
            .text
            .ok_or_else(|| Error::Protocol("synthesize response lacks `text`".into()))
    }
}

/// Parses one response line, reporting the parse location on failure.
pub fn parse_response(line: &str) -> Result<BridgeResponse> {
    serde_json::from_str(line).map_err(|e| {
        Error::Protocol(format!(
            "malformed response at line {} column {}: {e}",
            e.line(),
            e.column()
        ))
    })
}

/// Embedding provider backed by a sidecar encoder; pooling happens locally
/// from the returned token spans.
pub struct BridgeProvider {
    client: BridgeClient,
    dim: usize,
    granularity: Granularity,
}

impl BridgeProvider {
    pub fn new(client: BridgeClient, dim: usize, granularity: Granularity) -> Self {
        BridgeProvider {
            client,
            dim,
            granularity,
        }
    }
}

impl EmbeddingProvider for BridgeProvider {
    fn descriptor(&self) -> ProviderDescriptor {
        ProviderDescriptor {
            kind: ProviderKind::Bridge,
            dim: self.dim,
            granularity: self.granularity,
        }
    }

    fn embed(&self, input: &EmbedInput<'_>) -> Result<EmbeddingVector> {
        let matrix = self.client.embed(input.text, input.span, self.dim, self.granularity)?;
        match input.span {
            Some(span) => pool_span(&matrix, span),
            None => matrix.mean(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::embed_entity;

    fn echo_server(dim: usize) -> impl FnMut(&str) -> String + Send {
        move |line| {
            let req: BridgeRequest = serde_json::from_str(line).unwrap();
            let resp = match req.op {
                BridgeOp::Embed { text, .. } => {
                    let n = text::char_len(&text);
                    BridgeResponse::embedded(req.id, vec![vec![0.5; dim]], vec![Span::new(0, n)])
                }
                BridgeOp::Ner { .. } => BridgeResponse::entities(req.id, vec![]),
                BridgeOp::Synthesize { document, .. } => BridgeResponse::generated(req.id, document),
            };
            serde_json::to_string(&resp).unwrap()
        }
    }

    #[test]
    fn echo_provider_with_matching_dim_is_accepted() {
        let client = BridgeClient::new(Box::new(LoopbackTransport::new(echo_server(8))));
        let provider = BridgeProvider::new(client, 8, Granularity::Sentence);
        let v = embed_entity(&provider, &EmbedInput::mention("x", "Gouda is a cheese", Span::new(0, 5))).unwrap();
        assert_eq!(v.values(), &[0.5; 8]);
    }

    #[test]
    fn wrong_dim_is_a_protocol_error_naming_dim() {
        let client = BridgeClient::new(Box::new(LoopbackTransport::new(echo_server(4))));
        let provider = BridgeProvider::new(client, 8, Granularity::Token);
        let err = provider.embed(&EmbedInput::whole("x", "abc")).unwrap_err();
        assert!(matches!(&err, Error::Protocol(m) if m.contains("dim")), "{err}");
    }

    #[test]
    fn mismatched_correlation_id_is_rejected() {
        let client = BridgeClient::new(Box::new(LoopbackTransport::new(|_: &str| {
            serde_json::to_string(&BridgeResponse::generated(999, "x")).unwrap()
        })));
        let err = client.synthesize("doc", vec![], "{document}").unwrap_err();
        assert!(matches!(err, Error::Protocol(m) if m.contains("999")));
    }

    #[test]
    fn error_status_carries_reason() {
        let client = BridgeClient::new(Box::new(LoopbackTransport::new(|line: &str| {
            let req: BridgeRequest = serde_json::from_str(line).unwrap();
            serde_json::to_string(&BridgeResponse::error(req.id, "unknown op")).unwrap()
        })));
        let err = client.ner("text").unwrap_err();
        assert!(err.to_string().contains("unknown op"));
    }

    #[test]
    fn truncated_line_reports_location() {
        let err = parse_response(r#"{"id":1,"status":"o"#).unwrap_err();
        assert!(err.to_string().contains("column"), "{err}");
    }

    #[test]
    fn ner_spans_are_bounds_checked() {
        let client = BridgeClient::new(Box::new(LoopbackTransport::new(|line: &str| {
            let req: BridgeRequest = serde_json::from_str(line).unwrap();
            let span = NerSpan {
                start: 2,
                end: 40,
                label: None,
            };
            serde_json::to_string(&BridgeResponse::entities(req.id, vec![span])).unwrap()
        })));
        assert!(client.ner("short").is_err());
    }

    #[test]
    fn ids_increase_per_request() {
        let seen = std::sync::Arc::new(Mutex::new(Vec::new()));
        let log = seen.clone();
        let client = BridgeClient::new(Box::new(LoopbackTransport::new(move |line: &str| {
            let req: BridgeRequest = serde_json::from_str(line).unwrap();
            log.lock().unwrap().push(req.id);
            serde_json::to_string(&BridgeResponse::generated(req.id, "")).unwrap()
        })));
        for _ in 0..3 {
            client.synthesize("d", vec![], "").unwrap();
        }
        assert_eq!(*seen.lock().unwrap(), vec![1, 2, 3]);
    }
}
