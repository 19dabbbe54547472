//! Weight-space averaging: two-model alpha soups, uniform n-model soups,
//! and signed barycentric combinations for plane scans.
//!
//! All accumulation happens in f64 and, for n-way means, in a canonical
//! member order (sorted by payload hash), so results are bit-reproducible
//! regardless of invocation order.

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, Stage};
use crate::error::{Error, Result};
use crate::params::{check_compatible, ParameterVector};

/// Declarative description of a soup: member payload hashes and weights.
/// Weights must sum to 1 within 1e-9; members must share an architecture
/// and, unless overridden, a lineage root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoupSpec {
    pub members: Vec<String>,
    pub weights: Vec<f64>,
}

pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// theta_soup = (1 - alpha) * reference + alpha * other, elementwise.
/// Alpha outside [0, 1] is permitted for extrapolation scans.
pub fn make_soup(
    reference: &ParameterVector,
    other: &ParameterVector,
    alpha: f64,
) -> Result<ParameterVector> {
    check_compatible(reference, other)?;
    let values = reference
        .values
        .iter()
        .zip(&other.values)
        .map(|(&r, &o)| ((1.0 - alpha) * r as f64 + alpha * o as f64) as f32)
        .collect();
    Ok(ParameterVector {
        arch: reference.arch,
        head: reference.head,
        values,
    })
}

/// Uniform mean of n members; n = 1 is the identity and n = 2 equals
/// `make_soup` at alpha = 0.5 exactly.
pub fn make_soup_n(members: &[ParameterVector]) -> Result<ParameterVector> {
    if members.is_empty() {
        return Err(Error::InvalidArgument("soup needs at least one member".into()));
    }
    for m in &members[1..] {
        check_compatible(&members[0], m)?;
    }
    if members.len() == 1 {
        return Ok(members[0].clone());
    }
    let order = canonical_order(members);
    let n = members.len() as f64;
    let len = members[0].len();
    let mut acc = vec![0.0f64; len];
    for &idx in &order {
        for (a, &v) in acc.iter_mut().zip(&members[idx].values) {
            *a += v as f64;
        }
    }
    let values = acc.iter().map(|&a| (a / n) as f32).collect();
    Ok(ParameterVector {
        arch: members[0].arch,
        head: members[0].head,
        values,
    })
}

/// w1*m1 + w2*m2 + w3*m3 with w1+w2+w3 = 1; negative weights parameterize
/// points outside the triangle.
pub fn barycentric_combine(
    m1: &ParameterVector,
    m2: &ParameterVector,
    m3: &ParameterVector,
    w: (f64, f64, f64),
) -> Result<ParameterVector> {
    check_compatible(m1, m2)?;
    check_compatible(m1, m3)?;
    let sum = w.0 + w.1 + w.2;
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::InvalidArgument(format!(
            "barycentric weights must sum to 1 within {WEIGHT_SUM_TOL}, got {sum}"
        )));
    }
    let values = m1
        .values
        .iter()
        .zip(&m2.values)
        .zip(&m3.values)
        .map(|((&a, &b), &c)| (w.0 * a as f64 + w.1 * b as f64 + w.2 * c as f64) as f32)
        .collect();
    Ok(ParameterVector {
        arch: m1.arch,
        head: m1.head,
        values,
    })
}

/// General weighted combination in canonical member order; backs the soup
/// CLI subcommand and reference materialization.
pub fn weighted_soup(members: &[ParameterVector], weights: &[f64]) -> Result<ParameterVector> {
    if members.is_empty() || members.len() != weights.len() {
        return Err(Error::InvalidArgument(format!(
            "need matching member/weight counts >= 1, got {}/{}",
            members.len(),
            weights.len()
        )));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::InvalidArgument(format!(
            "soup weights must sum to 1 within {WEIGHT_SUM_TOL}, got {sum}"
        )));
    }
    for m in &members[1..] {
        check_compatible(&members[0], m)?;
    }
    let order = canonical_order(members);
    let mut acc = vec![0.0f64; members[0].len()];
    for &idx in &order {
        let wgt = weights[idx];
        for (a, &v) in acc.iter_mut().zip(&members[idx].values) {
            *a += wgt * v as f64;
        }
    }
    Ok(ParameterVector {
        arch: members[0].arch,
        head: members[0].head,
        values: acc.iter().map(|&a| a as f32).collect(),
    })
}

fn canonical_order(members: &[ParameterVector]) -> Vec<usize> {
    let mut order: Vec<(String, usize)> = members
        .iter()
        .enumerate()
        .map(|(i, m)| (m.content_hash(), i))
        .collect();
    order.sort();
    order.into_iter().map(|(_, i)| i).collect()
}

/// Validates soup membership over checkpoints: arch equality, weight sum,
/// and the shared-lineage guard (members must descend from the same base
/// checkpoint unless `allow_cross_lineage` is set).
pub fn validate_soup_members(
    members: &[&Checkpoint],
    weights: &[f64],
    allow_cross_lineage: bool,
) -> Result<SoupSpec> {
    if members.is_empty() || members.len() != weights.len() {
        return Err(Error::InvalidArgument(
            "soup needs matching member/weight counts >= 1".into(),
        ));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::InvalidArgument(format!(
            "soup weights must sum to 1 within {WEIGHT_SUM_TOL}, got {sum}"
        )));
    }
    for m in &members[1..] {
        if m.params.arch != members[0].params.arch || m.params.head != members[0].params.head {
            return Err(Error::ArchMismatch(
                "soup members must share architecture and layout".into(),
            ));
        }
    }
    if !allow_cross_lineage {
        let base = members[0].lineage_base();
        for m in &members[1..] {
            if m.lineage_base() != base {
                return Err(Error::LineageMismatch(format!(
                    "member {} descends from base {}, expected {}",
                    m.content_hash(),
                    m.lineage_base(),
                    base
                )));
            }
        }
    }
    Ok(SoupSpec {
        members: members.iter().map(|m| m.content_hash().to_string()).collect(),
        weights: weights.to_vec(),
    })
}

/// Builds a stage=soup checkpoint from member checkpoints, recording the
/// SoupSpec in its metadata.
pub fn soup_checkpoint(
    members: &[&Checkpoint],
    weights: &[f64],
    allow_cross_lineage: bool,
) -> Result<Checkpoint> {
    let spec = validate_soup_members(members, weights, allow_cross_lineage)?;
    let owned: Vec<ParameterVector> = members.iter().map(|m| m.params.clone()).collect();
    let params = weighted_soup(&owned, weights)?;
    let parents = spec.members.clone();
    let base_hash = Some(members[0].lineage_base());
    Ok(Checkpoint::new(
        params,
        Stage::Soup,
        Default::default(),
        parents,
        base_hash,
        Some(spec),
        None,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{ArchDescriptor, HeadKind};
    use crate::params::{axpy, init_params};

    fn arch() -> ArchDescriptor {
        ArchDescriptor::new(9, 3, 4, 5, 8)
    }

    fn hand_vector(entries: &[f32]) -> ParameterVector {
        // smallest valid arch: V=4, W=1, d=1, h=1 has 4 + 1 + 1 + 4 + 4 = 14 params
        let a = ArchDescriptor::new(4, 1, 1, 1, 4);
        let mut p = ParameterVector::zeros(a, HeadKind::Policy);
        for (i, &e) in entries.iter().enumerate() {
            p.values[i] = e;
        }
        p
    }

    #[test]
    fn alpha_zero_and_one_are_the_endpoints_bitwise() {
        let r = init_params(arch(), 1).unwrap();
        let o = init_params(arch(), 2).unwrap();
        assert_eq!(make_soup(&r, &o, 0.0).unwrap().to_le_bytes(), r.to_le_bytes());
        assert_eq!(make_soup(&r, &o, 1.0).unwrap().to_le_bytes(), o.to_le_bytes());
    }

    #[test]
    fn identical_members_are_a_fixed_point() {
        let r = init_params(arch(), 1).unwrap();
        for alpha in [-0.5, 0.0, 0.3, 0.5, 1.0, 1.7] {
            assert_eq!(
                make_soup(&r, &r, alpha).unwrap().to_le_bytes(),
                r.to_le_bytes()
            );
        }
    }

    #[test]
    fn hand_arithmetic_midpoint() {
        let a = hand_vector(&[2.0, 4.0]);
        let b = hand_vector(&[4.0, 8.0]);
        let s = make_soup(&a, &b, 0.5).unwrap();
        assert_eq!(s.values[0], 3.0);
        assert_eq!(s.values[1], 6.0);
    }

    #[test]
    fn soup_n_identities() {
        let m1 = init_params(arch(), 1).unwrap();
        let m2 = init_params(arch(), 2).unwrap();
        // n = 1: identity
        assert_eq!(
            make_soup_n(std::slice::from_ref(&m1)).unwrap().to_le_bytes(),
            m1.to_le_bytes()
        );
        // n = 2: exactly the alpha = 0.5 soup
        let n2 = make_soup_n(&[m1.clone(), m2.clone()]).unwrap();
        let half = make_soup(&m1, &m2, 0.5).unwrap();
        assert_eq!(n2.to_le_bytes(), half.to_le_bytes());
    }

    #[test]
    fn soup_n_hand_arithmetic() {
        let a = hand_vector(&[0.0]);
        let b = hand_vector(&[3.0]);
        let c = hand_vector(&[6.0]);
        let s = make_soup_n(&[a, b, c]).unwrap();
        assert_eq!(s.values[0], 3.0);
    }

    #[test]
    fn soup_n_is_permutation_invariant_bitwise() {
        let m1 = init_params(arch(), 1).unwrap();
        let m2 = init_params(arch(), 2).unwrap();
        let m3 = init_params(arch(), 3).unwrap();
        let orders = [
            vec![m1.clone(), m2.clone(), m3.clone()],
            vec![m3.clone(), m1.clone(), m2.clone()],
            vec![m2.clone(), m3.clone(), m1.clone()],
        ];
        let first = make_soup_n(&orders[0]).unwrap().to_le_bytes();
        for o in &orders[1..] {
            assert_eq!(make_soup_n(o).unwrap().to_le_bytes(), first);
        }
    }

    #[test]
    fn barycentric_identities() {
        let m1 = init_params(arch(), 1).unwrap();
        let m2 = init_params(arch(), 2).unwrap();
        let m3 = init_params(arch(), 3).unwrap();
        let v = barycentric_combine(&m1, &m2, &m3, (1.0, 0.0, 0.0)).unwrap();
        assert_eq!(v.to_le_bytes(), m1.to_le_bytes());

        let third = 1.0 / 3.0;
        let center =
            barycentric_combine(&m1, &m2, &m3, (third, third, 1.0 - 2.0 * third)).unwrap();
        let uniform = make_soup_n(&[m1.clone(), m2.clone(), m3.clone()]).unwrap();
        for (a, b) in center.values.iter().zip(&uniform.values) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn barycentric_outside_simplex_hand_case() {
        let a = hand_vector(&[1.0]);
        let b = hand_vector(&[2.0]);
        let c = hand_vector(&[3.0]);
        let v = barycentric_combine(&a, &b, &c, (1.5, -0.25, -0.25)).unwrap();
        // 1.5*1 - 0.25*2 - 0.25*3 = 0.25
        assert!((v.values[0] - 0.25).abs() < 1e-7);
    }

    #[test]
    fn barycentric_consistency_with_make_soup() {
        let m1 = init_params(arch(), 1).unwrap();
        let m2 = init_params(arch(), 2).unwrap();
        let m3 = init_params(arch(), 3).unwrap();
        for alpha in [0.0, 0.25, 0.5, 0.9, 1.0, 1.3, -0.2] {
            let b = barycentric_combine(&m1, &m2, &m3, (1.0 - alpha, alpha, 0.0)).unwrap();
            let s = make_soup(&m1, &m2, alpha).unwrap();
            assert_eq!(b.values, s.values, "alpha = {alpha}");
        }
    }

    #[test]
    fn make_soup_distributes_over_axpy() {
        let x = init_params(arch(), 1).unwrap();
        let y = init_params(arch(), 2).unwrap();
        let z = init_params(arch(), 3).unwrap();
        let a = 0.7;
        let alpha = 0.3;
        // soup(a*x + y, a*x + z) == a*x + soup(y, z), within float rounding
        let lhs = make_soup(
            &axpy(a, &x, &y).unwrap(),
            &axpy(a, &x, &z).unwrap(),
            alpha,
        )
        .unwrap();
        let rhs = axpy(a, &x, &make_soup(&y, &z, alpha).unwrap()).unwrap();
        for (l, r) in lhs.values.iter().zip(&rhs.values) {
            assert!((l - r).abs() < 1e-5);
        }
    }

    #[test]
    fn weight_sum_violations_are_rejected() {
        let m1 = init_params(arch(), 1).unwrap();
        let m2 = init_params(arch(), 2).unwrap();
        let m3 = init_params(arch(), 3).unwrap();
        assert!(barycentric_combine(&m1, &m2, &m3, (0.5, 0.5, 0.1)).is_err());
        assert!(weighted_soup(&[m1.clone(), m2.clone()], &[0.6, 0.6]).is_err());
    }

    #[test]
    fn arch_mismatch_is_rejected() {
        let m1 = init_params(arch(), 1).unwrap();
        let other = init_params(ArchDescriptor::new(9, 3, 4, 6, 8), 1).unwrap();
        assert!(make_soup(&m1, &other, 0.5).is_err());
        assert!(make_soup_n(&[m1, other]).is_err());
    }
}
