//! Left/right mirror augmentation of canonical skeleton data.
//!
//! A canonical body is symmetric about the `yOz` plane, so reflecting
//! `x → -x` and then exchanging every left joint with its right partner
//! yields a plausible motion performed with the other side of the body.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::skeleton::{MotionSequence, SkeletonSpec};
use crate::tensor::Tensor;

/// Joint relabelling that exchanges every symmetric pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MirrorPermutation {
    perm: Vec<usize>,
}

impl MirrorPermutation {
    /// Composes one transposition per pair, starting from the identity.
    pub fn new(joints: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut perm: Vec<usize> = (0..joints).collect();
        for &(l, r) in pairs {
            if l >= joints || r >= joints {
                return Err(Error::Skeleton(format!(
                    "symmetric pair ({l}, {r}) out of range for {joints} joints"
                )));
            }
            perm.swap(l, r);
        }
        Ok(Self { perm })
    }

    pub fn from_spec(spec: &SkeletonSpec) -> Self {
        Self::new(spec.joints, &spec.symmetric_pairs).expect("validated skeleton")
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.perm
    }

    pub fn apply(&self, joint: usize) -> usize {
        self.perm[joint]
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn is_involution(&self) -> bool {
        self.perm.iter().enumerate().all(|(i, &p)| self.perm[p] == i)
    }
}

/// Reflects a `J × 3` frame through the `yOz` plane.
pub fn mirror_reflect<S: Scalar>(frame: &Tensor<S>) -> Tensor<S> {
    let mut out = frame.clone();
    for j in 0..frame.rows() {
        out.set2(j, 0, -frame.at2(j, 0));
    }
    out
}

/// Row `i` of the output is row `perm(i)` of `frame`.
pub fn swap_symmetric<S: Scalar>(frame: &Tensor<S>, perm: &MirrorPermutation) -> Result<Tensor<S>> {
    if frame.rank() != 2 || frame.rows() != perm.len() || frame.cols() != 3 {
        return Err(Error::shape(
            "swap_symmetric",
            format!("frame {:?} for {} joints", frame.shape(), perm.len()),
        ));
    }
    let mut out = frame.clone();
    for i in 0..perm.len() {
        for d in 0..3 {
            out.set2(i, d, frame.at2(perm.apply(i), d));
        }
    }
    Ok(out)
}

/// Mirrored copy of a canonical sequence, frame by frame.
pub fn mirror_transform<S: Scalar>(seq: &MotionSequence<S>, spec: &SkeletonSpec) -> Result<MotionSequence<S>> {
    let perm = MirrorPermutation::from_spec(spec);
    let frames = seq
        .all_frames()
        .iter()
        .map(|f| swap_symmetric(&mirror_reflect(f), &perm))
        .collect::<Result<Vec<_>>>()?;
    seq.with_frames(&frames)
}

/// The same mirror applied directly to a joint-major `3J × C` trajectory matrix.
pub fn mirror_subjoint_matrix<S: Scalar>(m: &Tensor<S>, perm: &MirrorPermutation) -> Result<Tensor<S>> {
    if m.rank() != 2 || m.rows() != 3 * perm.len() {
        return Err(Error::shape(
            "mirror_subjoint_matrix",
            format!("matrix {:?} for {} joints", m.shape(), perm.len()),
        ));
    }
    let c = m.cols();
    let mut out = Tensor::zeros(m.shape());
    for j in 0..perm.len() {
        let src = perm.apply(j);
        for d in 0..3 {
            for t in 0..c {
                let v = m.at2(3 * src + d, t);
                out.set2(3 * j + d, t, if d == 0 { -v } else { v });
            }
        }
    }
    Ok(out)
}
