//! Embedding vectors, mention-span pooling and the providers that produce them.
//!
//! A provider turns `(key, text, span)` into one vector. Token-level providers
//! encode the full text and mean-pool the token rows overlapping the span;
//! sentence-level providers return their single vector and ignore the span.
//! Vectors are stored raw; normalization happens inside [`EmbeddingVector::cosine`].

mod store;
mod synthetic;

use serde::{Deserialize, Serialize};

pub use store::{FileStoreProvider, VectorStore};
pub use synthetic::{synthetic_embed, HashedTokenProvider, SyntheticProvider};

use crate::text::Span;
use crate::{Error, Result};

/// A finite, non-zero real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Validation("embedding has dimension 0".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("embedding component {i} is not finite")));
        }
        let v = EmbeddingVector(values);
        if v.norm() == 0.0 {
            return Err(Error::Validation("embedding has zero norm".into()));
        }
        Ok(v)
    }

    pub fn from_f64(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| v as f32).collect())
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| v as f64).collect()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &EmbeddingVector) -> Result<f64> {
        self.check_dim(other)?;
        Ok(self.dot_unchecked(other))
    }

    fn dot_unchecked(&self, other: &EmbeddingVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| (a as f64) * (b as f64))
            .sum()
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> Result<f64> {
        self.check_dim(other)?;
        Ok(self.dot_unchecked(other) / (self.norm() * other.norm()))
    }

    pub fn scaled(&self, factor: f32) -> Result<EmbeddingVector> {
        EmbeddingVector::new(self.0.iter().map(|v| v * factor).collect())
    }

    pub fn check_dim(&self, other: &EmbeddingVector) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(())
    }
}

impl TryFrom<Vec<f32>> for EmbeddingVector {
    type Error = Error;

    fn try_from(values: Vec<f32>) -> Result<Self> {
        EmbeddingVector::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f32> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Sentence,
    Token,
}

/// Encoder output for one text: token rows with their char spans, or a single
/// sentence vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    rows: Vec<EmbeddingVector>,
    token_spans: Vec<Span>,
    text_len: usize,
    granularity: Granularity,
}

impl TokenMatrix {
    pub fn new(rows: Vec<EmbeddingVector>, token_spans: Vec<Span>, text_len: usize) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Validation("token matrix has no rows".into()));
        }
        if rows.len() != token_spans.len() {
            return Err(Error::Validation(format!(
                "{} token rows but {} token spans",
                rows.len(),
                token_spans.len()
            )));
        }
        let dim = rows[0].dim();
        if let Some(bad) = rows.iter().find(|r| r.dim() != dim) {
            return Err(Error::DimMismatch {
                expected: dim,
                got: bad.dim(),
            });
        }
        for pair in token_spans.windows(2) {
            if pair[1].start < pair[0].start {
                return Err(Error::Validation("token spans are not monotonically ordered".into()));
            }
        }
        if let Some(s) = token_spans.iter().find(|s| s.end > text_len || s.start > s.end) {
            return Err(Error::Span {
                start: s.start,
                end: s.end,
                len: text_len,
                reason: "token span outside the encoded text",
            });
        }
        Ok(TokenMatrix {
            rows,
            token_spans,
            text_len,
            granularity: Granularity::Token,
        })
    }

    /// One vector standing for the whole text.
    pub fn sentence(vector: EmbeddingVector, text_len: usize) -> Self {
        TokenMatrix {
            rows: vec![vector],
            token_spans: vec![Span::new(0, text_len)],
            text_len,
            granularity: Granularity::Sentence,
        }
    }

    pub fn rows(&self) -> &[EmbeddingVector] {
        &self.rows
    }

    pub fn token_spans(&self) -> &[Span] {
        &self.token_spans
    }

    pub fn dim(&self) -> usize {
        self.rows[0].dim()
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn text_len(&self) -> usize {
        self.text_len
    }

    /// Mean of every row (whole-text pooling).
    pub fn mean(&self) -> Result<EmbeddingVector> {
        mean_of(self.rows.iter())
    }
}

fn mean_of<'a>(rows: impl Iterator<Item = &'a EmbeddingVector>) -> Result<EmbeddingVector> {
    let mut acc: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for row in rows {
        if acc.is_empty() {
            acc = vec![0.0; row.dim()];
        }
        for (a, &v) in acc.iter_mut().zip(row.values()) {
            *a += v as f64;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::Validation("nothing to pool".into()));
    }
    let mean: Vec<f32> = acc.iter().map(|a| (a / count as f64) as f32).collect();
    EmbeddingVector::new(mean)
        .map_err(|e| Error::Numerical(format!("pooled vector is degenerate: {e}")))
}

/// Mean of the token rows whose span overlaps `span` by at least one char.
/// Sentence-level matrices return their vector unchanged.
pub fn pool_span(matrix: &TokenMatrix, span: Span) -> Result<EmbeddingVector> {
    span.check_within(matrix.text_len)?;
    if matrix.granularity == Granularity::Sentence {
        return Ok(matrix.rows[0].clone());
    }
    let overlapping = matrix
        .rows
        .iter()
        .zip(&matrix.token_spans)
        .filter(|(_, ts)| ts.intersects(&span))
        .map(|(row, _)| row);
    let mut overlapping = overlapping.peekable();
    if overlapping.peek().is_none() {
        return Err(Error::Span {
            start: span.start,
            end: span.end,
            len: matrix.text_len,
            reason: "span overlaps no token",
        });
    }
    mean_of(overlapping)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    FileStore,
    Synthetic,
    Bridge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderDescriptor {
    pub kind: ProviderKind,
    pub dim: usize,
    pub granularity: Granularity,
}

/// What to embed. `key` addresses precomputed stores; `span` selects the
/// mention to pool, `None` pools the whole text.
#[derive(Debug, Clone, Copy)]
pub struct EmbedInput<'a> {
    pub key: &'a str,
    pub text: &'a str,
    pub span: Option<Span>,
}

impl<'a> EmbedInput<'a> {
    pub fn mention(key: &'a str, text: &'a str, span: Span) -> Self {
        EmbedInput {
            key,
            text,
            span: Some(span),
        }
    }

    pub fn whole(key: &'a str, text: &'a str) -> Self {
        EmbedInput {
            key,
            text,
            span: None,
        }
    }
}

/// Store key for a mention inside a document: `doc_id#start:end`.
pub fn mention_key(doc_id: &str, span: Span) -> String {
    format!("{doc_id}#{}:{}", span.start, span.end)
}

pub trait EmbeddingProvider: Send + Sync {
    fn descriptor(&self) -> ProviderDescriptor;

    fn embed(&self, input: &EmbedInput<'_>) -> Result<EmbeddingVector>;
}

/// Embeds a full paragraph pooled at `input.span`, enforcing the declared dim.
pub fn embed_entity(provider: &dyn EmbeddingProvider, input: &EmbedInput<'_>) -> Result<EmbeddingVector> {
    let v = provider.embed(input)?;
    let dim = provider.descriptor().dim;
    if v.dim() != dim {
        return Err(Error::Protocol(format!(
            "provider declared dim {dim} but returned a vector of dim {}",
            v.dim()
        )));
    }
    Ok(v)
}

/// Provider configuration as it appears in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProviderSpec {
    /// Span-aware pseudo-random unit vectors from a hash of the input.
    Synthetic {
        dim: usize,
        #[serde(default)]
        seed: u64,
    },
    /// Token-level test encoder: each word maps to a fixed pseudo-random vector.
    HashedTokens {
        dim: usize,
        #[serde(default)]
        seed: u64,
    },
    FileStore { path: std::path::PathBuf },
    Bridge {
        command: Vec<String>,
        dim: usize,
        granularity: Granularity,
    },
}

/// Environment variable overriding the bridge command line (whitespace separated).
pub const BRIDGE_ENV: &str = "ARGUS_BRIDGE_CMD";

impl ProviderSpec {
    pub fn build(&self) -> Result<Box<dyn EmbeddingProvider>> {
        Ok(match self {
            ProviderSpec::Synthetic { dim, seed } => Box::new(SyntheticProvider::new(*dim, *seed)?),
            ProviderSpec::HashedTokens { dim, seed } => Box::new(HashedTokenProvider::new(*dim, *seed)?),
            ProviderSpec::FileStore { path } => {
                crate::io::require(path, "embedding store not found")?;
                Box::new(FileStoreProvider::new(VectorStore::open(path)?))
            }
            ProviderSpec::Bridge {
                command,
                dim,
                granularity,
            } => {
                let command = crate::bridge::resolve_command(command);
                let client = crate::bridge::BridgeClient::spawn(&command)?;
                Box::new(crate::bridge::BridgeProvider::new(client, *dim, *granularity))
            }
        })
    }
}
