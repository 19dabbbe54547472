//! Architecture descriptor and the canonical parameter layout.
//!
//! The backbone is a windowed feed-forward language model: the last
//! `context_window` tokens are embedded, the embeddings are concatenated,
//! passed through one tanh hidden layer, and projected to a head. The policy
//! head produces vocabulary logits; the reward head produces one scalar.
//!
//! Canonical layout (row-major within each segment, segments in this order):
//!
//! | segment  | shape            | policy count | reward count |
//! |----------|------------------|--------------|--------------|
//! | embed    | V x d            | V*d          | V*d          |
//! | w1       | h x (W*d)        | h*W*d        | h*W*d        |
//! | b1       | h                | h            | h            |
//! | head_w   | out x h          | V*h          | h            |
//! | head_b   | out              | V            | 1            |
//!
//! The first three segments (the backbone) occupy identical positions in
//! both layouts, so a reward model can be initialized from a policy
//! checkpoint by copying the backbone prefix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Current canonical layout version; bumping it invalidates old checkpoints.
pub const PARAM_LAYOUT_VERSION: u32 = 1;

/// Which head a parameter vector carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Vocabulary-logit head (base, SFT, soup, and RLHF checkpoints).
    Policy,
    /// Scalar reward head (reward-model checkpoints).
    Reward,
}

impl std::fmt::Display for HeadKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HeadKind::Policy => write!(f, "policy"),
            HeadKind::Reward => write!(f, "reward"),
        }
    }
}

/// Shape of the shared backbone plus head; equal descriptors are
/// soup-compatible, nothing else is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchDescriptor {
    /// Vocabulary size including PAD, BOS, EOS.
    pub vocab_size: u32,
    /// Context window length W in tokens.
    pub context_window: u32,
    /// Embedding dimension d.
    pub embed_dim: u32,
    /// Hidden layer width h.
    pub hidden_dim: u32,
    /// Maximum response length (including the terminating EOS).
    pub max_response_len: u32,
    pub param_layout_version: u32,
}

impl ArchDescriptor {
    pub fn new(
        vocab_size: u32,
        context_window: u32,
        embed_dim: u32,
        hidden_dim: u32,
        max_response_len: u32,
    ) -> Self {
        Self {
            vocab_size,
            context_window,
            embed_dim,
            hidden_dim,
            max_response_len,
            param_layout_version: PARAM_LAYOUT_VERSION,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 4 {
            return Err(Error::InvalidArgument(format!(
                "vocab_size must be >= 4 (PAD, BOS, EOS plus content), got {}",
                self.vocab_size
            )));
        }
        if self.context_window < 1
            || self.embed_dim < 1
            || self.hidden_dim < 1
            || self.max_response_len < 1
        {
            return Err(Error::InvalidArgument(
                "context_window, embed_dim, hidden_dim, max_response_len must be >= 1".into(),
            ));
        }
        if self.param_layout_version != PARAM_LAYOUT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: self.param_layout_version,
                supported: PARAM_LAYOUT_VERSION,
            });
        }
        Ok(())
    }

    pub fn head_out(&self, head: HeadKind) -> usize {
        match head {
            HeadKind::Policy => self.vocab_size as usize,
            HeadKind::Reward => 1,
        }
    }

    /// Number of content tokens (vocabulary minus PAD/BOS/EOS).
    pub fn content_tokens(&self) -> u32 {
        self.vocab_size - crate::tokens::FIRST_CONTENT_TOKEN
    }

    fn v(&self) -> usize {
        self.vocab_size as usize
    }
    fn w(&self) -> usize {
        self.context_window as usize
    }
    fn d(&self) -> usize {
        self.embed_dim as usize
    }
    fn h(&self) -> usize {
        self.hidden_dim as usize
    }

    /// Flat input width of the hidden layer: W*d.
    pub fn window_dim(&self) -> usize {
        self.w() * self.d()
    }

    // Segment offsets into the canonical flat layout.
    pub fn embed_offset(&self) -> usize {
        0
    }
    pub fn w1_offset(&self) -> usize {
        self.v() * self.d()
    }
    pub fn b1_offset(&self) -> usize {
        self.w1_offset() + self.h() * self.window_dim()
    }
    pub fn head_w_offset(&self) -> usize {
        self.b1_offset() + self.h()
    }
    pub fn head_b_offset(&self, head: HeadKind) -> usize {
        self.head_w_offset() + self.head_out(head) * self.h()
    }

    /// Length of the backbone prefix shared by both layouts.
    pub fn backbone_len(&self) -> usize {
        self.head_w_offset()
    }

    /// Total parameter count for the given head layout.
    pub fn param_count(&self, head: HeadKind) -> usize {
        self.head_b_offset(head) + self.head_out(head)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent count oracle: enumerate the layout table segment by
    /// segment instead of composing offsets.
    fn enumerated_count(a: &ArchDescriptor, head: HeadKind) -> usize {
        let (v, w, d, h) = (
            a.vocab_size as usize,
            a.context_window as usize,
            a.embed_dim as usize,
            a.hidden_dim as usize,
        );
        let out = match head {
            HeadKind::Policy => v,
            HeadKind::Reward => 1,
        };
        let segments = [v * d, h * (w * d), h, out * h, out];
        segments.iter().sum()
    }

    #[test]
    fn param_count_matches_enumerated_layout() {
        let arch = ArchDescriptor::new(16, 8, 16, 64, 16);
        assert_eq!(
            arch.param_count(HeadKind::Policy),
            enumerated_count(&arch, HeadKind::Policy)
        );
        assert_eq!(
            arch.param_count(HeadKind::Reward),
            enumerated_count(&arch, HeadKind::Reward)
        );
        // frozen values: V*d + (W*d+1)*h + (h+1)*out
        assert_eq!(arch.param_count(HeadKind::Policy), 9552);
        assert_eq!(arch.param_count(HeadKind::Reward), 8577);

        for (v, w, d, h) in [(4, 1, 1, 1), (19, 8, 16, 64), (6, 2, 3, 5)] {
            let a = ArchDescriptor::new(v, w, d, h, 16);
            for head in [HeadKind::Policy, HeadKind::Reward] {
                assert_eq!(a.param_count(head), enumerated_count(&a, head));
            }
        }
    }

    #[test]
    fn offsets_are_contiguous() {
        let a = ArchDescriptor::new(19, 8, 16, 64, 16);
        assert_eq!(a.embed_offset(), 0);
        assert_eq!(a.w1_offset(), 19 * 16);
        assert_eq!(a.b1_offset(), a.w1_offset() + 64 * 128);
        assert_eq!(a.head_w_offset(), a.b1_offset() + 64);
        assert_eq!(a.backbone_len(), a.head_w_offset());
        assert_eq!(
            a.head_b_offset(HeadKind::Policy),
            a.head_w_offset() + 19 * 64
        );
    }

    #[test]
    fn validation_rejects_degenerate_shapes() {
        assert!(ArchDescriptor::new(3, 1, 1, 1, 1).validate().is_err());
        assert!(ArchDescriptor::new(4, 0, 1, 1, 1).validate().is_err());
        assert!(ArchDescriptor::new(4, 1, 1, 1, 1).validate().is_ok());
        let mut a = ArchDescriptor::new(4, 1, 1, 1, 1);
        a.param_layout_version = 999;
        assert!(a.validate().is_err());
    }
}
