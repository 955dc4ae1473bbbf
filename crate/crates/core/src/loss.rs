//! Position error plus bone-length penalty.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::skeleton::SkeletonSpec;
use crate::tape::{Graph, Var};
use crate::tensor::Tensor;

/// Mean Euclidean joint error over joints, frames, and batch.
pub fn mpjpe_loss<S: Scalar>(g: &mut Graph<S>, pred: Var, gt: Var) -> Result<Var> {
    let (p, t) = (g.value(pred), g.value(gt));
    if p.shape() != t.shape() {
        return Err(Error::shape(
            "mpjpe_loss",
            format!("prediction {:?} vs target {:?}", p.shape(), t.shape()),
        ));
    }
    let diff = g.sub(pred, gt)?;
    let dist = g.triplet_norm(diff)?;
    g.mean(dist)
}

/// Mean absolute deviation of predicted bone lengths from `gt_lengths: B × bones`.
pub fn bone_length_loss<S: Scalar>(
    g: &mut Graph<S>,
    pred: Var,
    gt_lengths: &Tensor<S>,
    spec: &SkeletonSpec,
) -> Result<Var> {
    let p = g.value(pred);
    let nb = spec.bones.len();
    if p.rank() != 3 || p.rows() != spec.subjoints() {
        return Err(Error::shape(
            "bone_length_loss",
            format!("prediction {:?} for {} joints", p.shape(), spec.joints),
        ));
    }
    if gt_lengths.shape() != [p.batch(), nb] {
        return Err(Error::shape(
            "bone_length_loss",
            format!("lengths {:?}, expected [{}, {nb}]", gt_lengths.shape(), p.batch()),
        ));
    }
    if nb == 0 {
        return Err(Error::InvalidArgument("skeleton has no bones".into()));
    }
    let (batch, frames) = (p.batch(), p.cols());
    let rows_of = |k: usize| [3 * k, 3 * k + 1, 3 * k + 2];
    let from: Vec<usize> = spec.bones.iter().flat_map(|&(a, _)| rows_of(a)).collect();
    let to: Vec<usize> = spec.bones.iter().flat_map(|&(_, b)| rows_of(b)).collect();
    let pa = g.gather_rows(pred, &from)?;
    let pb = g.gather_rows(pred, &to)?;
    let vec = g.sub(pa, pb)?;
    let lengths = g.triplet_norm(vec)?;

    let mut target = Tensor::zeros(&[batch, nb, frames]);
    for b in 0..batch {
        for k in 0..nb {
            let l = gt_lengths.at2(b, k);
            for t in 0..frames {
                target.set3(b, k, t, l);
            }
        }
    }
    let target = g.constant(target);
    let dev = g.sub(target, lengths)?;
    let dev = g.abs(dev)?;
    g.mean(dev)
}

pub struct LossTerms {
    pub total: Var,
    pub mpjpe: Var,
    pub bone: Option<Var>,
}

/// `mpjpe + λ · bone`; the bone term is skipped when `gt_lengths` is `None`.
pub fn total_loss<S: Scalar>(
    g: &mut Graph<S>,
    pred: Var,
    gt: Var,
    gt_lengths: Option<&Tensor<S>>,
    spec: &SkeletonSpec,
    lambda: S,
) -> Result<LossTerms> {
    if lambda < S::zero() {
        return Err(Error::InvalidArgument(format!("λ must be non-negative, got {lambda}")));
    }
    let mpjpe = mpjpe_loss(g, pred, gt)?;
    let Some(lengths) = gt_lengths else {
        return Ok(LossTerms {
            total: mpjpe,
            mpjpe,
            bone: None,
        });
    };
    let bone = bone_length_loss(g, pred, lengths, spec)?;
    let weighted = g.scale(bone, lambda)?;
    let total = g.add(mpjpe, weighted)?;
    Ok(LossTerms {
        total,
        mpjpe,
        bone: Some(bone),
    })
}

/// Value-only evaluation of [`total_loss`], returning `(total, mpjpe, bone)`.
pub fn evaluate_loss<S: Scalar>(
    pred: &Tensor<S>,
    gt: &Tensor<S>,
    gt_lengths: Option<&Tensor<S>>,
    spec: &SkeletonSpec,
    lambda: S,
) -> Result<(S, S, Option<S>)> {
    let mut g = Graph::new();
    let p = g.constant(pred.clone());
    let t = g.constant(gt.clone());
    let terms = total_loss(&mut g, p, t, gt_lengths, spec, lambda)?;
    let v = |x: Var| g.value(x).data()[0];
    Ok((v(terms.total), v(terms.mpjpe), terms.bone.map(v)))
}
