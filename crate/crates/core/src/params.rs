//! Flat parameter vectors and elementwise arithmetic.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arch::{ArchDescriptor, HeadKind};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

/// All trainable weights of one model, stored as f32 in canonical layout
/// order. Internal math upcasts to f64; storage and serialization stay f32
/// so checkpoints round-trip bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub arch: ArchDescriptor,
    pub head: HeadKind,
    pub values: Vec<f32>,
}

impl ParameterVector {
    pub fn zeros(arch: ArchDescriptor, head: HeadKind) -> Self {
        let n = arch.param_count(head);
        Self {
            arch,
            head,
            values: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let expected = self.arch.param_count(self.head);
        if self.values.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "parameter vector length {} does not match {} layout count {}",
                self.values.len(),
                self.head,
                expected
            )));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Little-endian IEEE-754 bytes of the payload, the persisted form.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.values.len() * 4);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(arch: ArchDescriptor, head: HeadKind, bytes: &[u8]) -> Result<Self> {
        if bytes.len() % 4 != 0 {
            return Err(Error::InvalidArgument(
                "payload length is not a multiple of 4".into(),
            ));
        }
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect();
        let pv = Self { arch, head, values };
        pv.validate()?;
        Ok(pv)
    }

    /// SHA-256 of the payload bytes, hex-encoded. Identifies parameter
    /// content independent of metadata.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_le_bytes());
        hex_string(&digest)
    }

    /// Adds elementwise Gaussian noise of the given scale; used to realize
    /// "different random seed" fine-tuning starts.
    pub fn jittered(&self, scale: f64, seed: u64) -> Self {
        if scale == 0.0 {
            return self.clone();
        }
        let mut rng = rng_from_seed(derive_seed(seed, "params/jitter", &[]));
        let mut out = self.clone();
        for v in &mut out.values {
            *v = (*v as f64 + scale * gaussian(&mut rng)) as f32;
        }
        out
    }

    /// Adds Gaussian noise scaled per layout segment: `scale` is relative to
    /// each segment's initialization scale, so every layer is perturbed
    /// proportionally and the model stays within its basin for moderate
    /// scales.
    pub fn jittered_relative(&self, scale: f64, seed: u64) -> Self {
        if scale == 0.0 {
            return self.clone();
        }
        let mut rng = rng_from_seed(derive_seed(seed, "params/jitter-rel", &[]));
        let mut out = self.clone();
        let a = &self.arch;
        let w1_scale = 1.0 / (a.window_dim() as f64).sqrt();
        let head_scale = 1.0 / (a.hidden_dim as f64).sqrt();
        let (w1_off, b1_off, hw_off) = (a.w1_offset(), a.b1_offset(), a.head_w_offset());
        for (i, v) in out.values.iter_mut().enumerate() {
            let seg_scale = if i < w1_off {
                1.0
            } else if i < b1_off {
                w1_scale
            } else if i < hw_off {
                w1_scale // biases move on the hidden layer's scale
            } else {
                head_scale
            };
            *v = (*v as f64 + scale * seg_scale * gaussian(&mut rng)) as f32;
        }
        out
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Standard normal via Box-Muller; depends only on the RNG stream.
pub(crate) fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Deterministic initialization: weights are zero-mean Gaussian with scale
/// 1/sqrt(fan_in) per layer (embeddings use fan_in 1), biases zero.
pub fn init_params(arch: ArchDescriptor, seed: u64) -> Result<ParameterVector> {
    init_params_with_head(arch, HeadKind::Policy, seed)
}

pub fn init_params_with_head(
    arch: ArchDescriptor,
    head: HeadKind,
    seed: u64,
) -> Result<ParameterVector> {
    arch.validate()?;
    let mut pv = ParameterVector::zeros(arch, head);
    let mut rng = rng_from_seed(derive_seed(seed, "params/init", &[]));

    let embed_scale = 1.0;
    let w1_scale = 1.0 / (arch.window_dim() as f64).sqrt();
    let head_scale = 1.0 / (arch.hidden_dim as f64).sqrt();

    let w1_off = arch.w1_offset();
    let b1_off = arch.b1_offset();
    let hw_off = arch.head_w_offset();
    let hb_off = arch.head_b_offset(head);
    for i in 0..pv.values.len() {
        let scale = if i < w1_off {
            embed_scale
        } else if i < b1_off {
            w1_scale
        } else if i < hw_off {
            continue; // b1 stays zero
        } else if i < hb_off {
            head_scale
        } else {
            continue; // head bias stays zero
        };
        pv.values[i] = (scale * gaussian(&mut rng)) as f32;
    }
    Ok(pv)
}

/// Freshly samples a reward head (scale 1/sqrt(h), zero bias) on top of a
/// backbone copied from `source`.
pub fn reward_params_from_backbone(source: &ParameterVector, seed: u64) -> Result<ParameterVector> {
    source.validate()?;
    let arch = source.arch;
    let mut pv = ParameterVector::zeros(arch, HeadKind::Reward);
    let backbone = arch.backbone_len();
    pv.values[..backbone].copy_from_slice(&source.values[..backbone]);
    let mut rng = rng_from_seed(derive_seed(seed, "params/reward-head", &[]));
    let head_scale = 1.0 / (arch.hidden_dim as f64).sqrt();
    let hw_off = arch.head_w_offset();
    let hb_off = arch.head_b_offset(HeadKind::Reward);
    for i in hw_off..hb_off {
        pv.values[i] = (head_scale * gaussian(&mut rng)) as f32;
    }
    Ok(pv)
}

/// Elementwise a*x + y. Rejects arch or layout mismatches.
pub fn axpy(a: f64, x: &ParameterVector, y: &ParameterVector) -> Result<ParameterVector> {
    check_compatible(x, y)?;
    let values = x
        .values
        .iter()
        .zip(&y.values)
        .map(|(&xv, &yv)| (a * xv as f64 + yv as f64) as f32)
        .collect();
    Ok(ParameterVector {
        arch: x.arch,
        head: x.head,
        values,
    })
}

pub(crate) fn check_compatible(x: &ParameterVector, y: &ParameterVector) -> Result<()> {
    if x.arch != y.arch {
        return Err(Error::ArchMismatch(format!(
            "{:?} vs {:?}",
            x.arch, y.arch
        )));
    }
    if x.head != y.head {
        return Err(Error::LayoutMismatch {
            expected: x.head.to_string(),
            got: y.head.to_string(),
        });
    }
    Ok(())
}
