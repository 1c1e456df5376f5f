use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{
    pool_span, EmbedInput, EmbeddingProvider, EmbeddingVector, Granularity, ProviderDescriptor,
    ProviderKind, TokenMatrix,
};
use crate::seed::stable_hash;
use crate::text::{self, Span};
use crate::{Error, Result};

/// Deterministic pseudo-random unit vector keyed by `(text, span, seed)`.
///
/// Distinct inputs give statistically independent directions; there is no
/// smoothness between similar texts.
pub fn synthetic_embed(text: &str, span: Option<Span>, dim: usize, seed: u64) -> Result<EmbeddingVector> {
    if dim < 2 {
        return Err(Error::Validation(format!("synthetic dim must be at least 2, got {dim}")));
    }
    let span_bytes = match span {
        Some(s) => [s.start as u64, s.end as u64, 1],
        None => [0, 0, 0],
    };
    let span_bytes: Vec<u8> = span_bytes.iter().flat_map(|v| v.to_le_bytes()).collect();
    let key = stable_hash([&seed.to_le_bytes()[..], &span_bytes, text.as_bytes()]);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    loop {
        let raw: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return EmbeddingVector::new(raw.iter().map(|x| (x / norm) as f32).collect());
        }
    }
}

/// Span-aware synthetic embedder.
#[derive(Debug, Clone)]
pub struct SyntheticProvider {
    dim: usize,
    seed: u64,
}

impl SyntheticProvider {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Validation(format!("synthetic dim must be at least 2, got {dim}")));
        }
        Ok(SyntheticProvider { dim, seed })
    }
}

impl EmbeddingProvider for SyntheticProvider {
    fn descriptor(&self) -> ProviderDescriptor {
        ProviderDescriptor {
            kind: ProviderKind::Synthetic,
            dim: self.dim,
            granularity: Granularity::Token,
        }
    }

    fn embed(&self, input: &EmbedInput<'_>) -> Result<EmbeddingVector> {
        if let Some(span) = input.span {
            span.check_within(text::char_len(input.text))?;
        }
        synthetic_embed(input.text, input.span, self.dim, self.seed)
    }
}

/// Token-level synthetic encoder: every lowercased word maps to a fixed
/// pseudo-random unit vector, so texts sharing words share geometry and
/// appending text moves the whole-text mean toward the appended words.
#[derive(Debug, Clone)]
pub struct HashedTokenProvider {
    dim: usize,
    seed: u64,
}

impl HashedTokenProvider {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Validation(format!("synthetic dim must be at least 2, got {dim}")));
        }
        Ok(HashedTokenProvider { dim, seed })
    }

    pub fn token_vector(&self, word: &str) -> EmbeddingVector {
        synthetic_embed(&word.to_lowercase(), None, self.dim, self.seed).expect("dim checked at construction")
    }

    pub fn encode(&self, text: &str) -> Result<TokenMatrix> {
        let tokens = text::tokenize(text);
        if tokens.is_empty() {
            return Err(Error::Validation("text contains no tokens to encode".into()));
        }
        let rows = tokens.iter().map(|t| self.token_vector(&t.text)).collect();
        let spans = tokens.iter().map(|t| t.span).collect();
        TokenMatrix::new(rows, spans, text::char_len(text))
    }
}

impl EmbeddingProvider for HashedTokenProvider {
    fn descriptor(&self) -> ProviderDescriptor {
        ProviderDescriptor {
            kind: ProviderKind::Synthetic,
            dim: self.dim,
            granularity: Granularity::Token,
        }
    }

    fn embed(&self, input: &EmbedInput<'_>) -> Result<EmbeddingVector> {
        let matrix = self.encode(input.text)?;
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

    #[test]
    fn synthetic_is_deterministic_and_unit_norm() {
        let a = synthetic_embed("Gouda is a cheese.", Some(Span::new(0, 5)), 32, 3).unwrap();
        let b = synthetic_embed("Gouda is a cheese.", Some(Span::new(0, 5)), 32, 3).unwrap();
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-6);
        let c = synthetic_embed("Gouda is a cheese.", Some(Span::new(6, 8)), 32, 3).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synthetic_distinct_texts_are_nearly_uncorrelated() {
        // Reference: for independent uniform directions in 64-d, E|cos| = sqrt(2/(pi*64)) ~ 0.0997.
        let mut sum = 0.0;
        for i in 0..1000 {
            let a = synthetic_embed(&format!("text a {i}"), None, 64, 0).unwrap();
            let b = synthetic_embed(&format!("text b {i}"), None, 64, 0).unwrap();
            sum += a.cosine(&b).unwrap().abs();
        }
        assert!(sum / 1000.0 < 0.2, "mean |cos| = {}", sum / 1000.0);
    }

    #[test]
    fn synthetic_rejects_tiny_dim() {
        assert!(synthetic_embed("x", None, 1, 0).is_err());
    }

    #[test]
    fn provider_is_bit_identical_across_calls() {
        let p = SyntheticProvider::new(16, 9).unwrap();
        let input = EmbedInput::mention("e1", "Gouda is a cheese.", Span::new(0, 5));
        assert_eq!(embed_entity(&p, &input).unwrap(), embed_entity(&p, &input).unwrap());
        assert_eq!(embed_entity(&p, &input).unwrap().dim(), 16);
    }

    #[test]
    fn hashed_tokens_pool_mentions_independent_of_context() {
        let p = HashedTokenProvider::new(16, 1).unwrap();
        let a = p.embed(&EmbedInput::mention("a", "Gouda is a cheese", Span::new(0, 5))).unwrap();
        let b = p.embed(&EmbedInput::mention("b", "I like gouda", Span::new(7, 12))).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, p.token_vector("gouda"));
    }

    #[test]
    fn hashed_tokens_whole_text_is_mean_of_words() {
        let p = HashedTokenProvider::new(8, 1).unwrap();
        let whole = p.embed(&EmbedInput::whole("d", "red, blue")).unwrap();
        let (r, b) = (p.token_vector("red"), p.token_vector("blue"));
        for i in 0..8 {
            let expected = ((r.values()[i] as f64 + b.values()[i] as f64) / 2.0) as f32;
            assert_eq!(whole.values()[i], expected);
        }
        assert!(p.embed(&EmbedInput::whole("d", "...")).is_err());
    }
}
