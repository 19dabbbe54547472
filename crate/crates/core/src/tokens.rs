//! Token sequences and categorical distributions.
//!
//! The vocabulary convention is fixed: id 0 is PAD (used only for
//! left-padding contexts), id 1 is BOS (starts every prompt), id 2 is EOS
//! (terminates responses). Ids 3.. are content tokens.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD_TOKEN: u32 = 0;
pub const BOS_TOKEN: u32 = 1;
pub const EOS_TOKEN: u32 = 2;
/// First content token id; content ids are `FIRST_CONTENT_TOKEN..vocab_size`.
pub const FIRST_CONTENT_TOKEN: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceKind {
    Prompt,
    Response,
}

/// An ordered list of token ids, tagged as prompt or response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<u32>,
    pub kind: SequenceKind,
}

impl TokenSequence {
    pub fn prompt(tokens: Vec<u32>) -> Self {
        Self {
            tokens,
            kind: SequenceKind::Prompt,
        }
    }

    /// A response must not contain BOS; callers constructing responses from
    /// untrusted ids should use [`TokenSequence::try_response`].
    pub fn response(tokens: Vec<u32>) -> Self {
        debug_assert!(!tokens.contains(&BOS_TOKEN), "response contains BOS");
        Self {
            tokens,
            kind: SequenceKind::Response,
        }
    }

    pub fn try_response(tokens: Vec<u32>) -> Result<Self> {
        if tokens.contains(&BOS_TOKEN) {
            return Err(Error::InvalidArgument(
                "response contains BOS token".into(),
            ));
        }
        Ok(Self {
            tokens,
            kind: SequenceKind::Response,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Response tokens excluding a single terminating EOS, i.e. the scored
    /// content of a response.
    pub fn body(&self) -> &[u32] {
        match self.tokens.split_last() {
            Some((&last, rest)) if last == EOS_TOKEN => rest,
            _ => &self.tokens,
        }
    }

    /// Checks every id against a vocabulary size.
    pub fn validate_ids(&self, vocab_size: u32) -> Result<()> {
        for &t in &self.tokens {
            if t >= vocab_size {
                return Err(Error::TokenOutOfRange {
                    token: t,
                    vocab_size,
                });
            }
        }
        Ok(())
    }
}

/// A probability distribution over the vocabulary.
///
/// Invariants: all entries non-negative, entries sum to 1 within 1e-6.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalDist {
    pub probs: Vec<f64>,
}

impl CategoricalDist {
    pub fn vocab_size(&self) -> usize {
        self.probs.len()
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        let sum: f64 = self.probs.iter().sum();
        (sum - 1.0).abs() <= tol && self.probs.iter().all(|&p| p >= 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn body_strips_single_trailing_eos() {
        let r = TokenSequence::response(vec![3, 4, EOS_TOKEN]);
        assert_eq!(r.body(), &[3, 4]);
        let no_eos = TokenSequence::response(vec![3, 4]);
        assert_eq!(no_eos.body(), &[3, 4]);
        let double_eos = TokenSequence::response(vec![3, EOS_TOKEN, EOS_TOKEN]);
        assert_eq!(double_eos.body(), &[3, EOS_TOKEN]);
        let empty = TokenSequence::response(vec![]);
        assert!(empty.body().is_empty());
    }

    #[test]
    fn try_response_rejects_bos() {
        assert!(TokenSequence::try_response(vec![3, BOS_TOKEN]).is_err());
        assert!(TokenSequence::try_response(vec![3, EOS_TOKEN]).is_ok());
    }

    #[test]
    fn validate_ids_bounds() {
        let s = TokenSequence::prompt(vec![0, 1, 18]);
        assert!(s.validate_ids(19).is_ok());
        assert!(s.validate_ids(18).is_err());
    }
}
