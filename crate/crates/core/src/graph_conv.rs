//! Trajectory graph convolutions with learnable adjacency.
//!
//! All three layers read and write the joint-major sub-joint layout: row
//! `3i + d` holds the axis-`d` trajectory of joint `i` (features along
//! columns). Inputs may be a single `3J × H` matrix or a batch `B × 3J × H`.
//!
//! * joint trajectory (JTGC): `A_jt: J×J` mixes whole joints, one axis slice at a time
//! * global sub-joint (GSTGC): `A_gs: 3J×3J` mixes every sub-joint trajectory
//! * local sub-joint (LSTGC): one `3×3` block per joint mixes its own x, y, z

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Graph, Var};
use crate::tensor::Tensor;

/// Tensor with entries drawn from `U[-1/√fan_in, 1/√fan_in]`.
pub fn uniform_fan_in<S: Scalar, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<S> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| S::from_f64_lossy(rng.gen_range(-bound..=bound)))
        .collect();
    Tensor::from_vec(shape, data).expect("valid shape")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    JointTrajectory,
    GlobalSubJoint,
    LocalSubJoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JtgcLayer<S> {
    pub adjacency: Tensor<S>,
    pub weight: Tensor<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GstgcLayer<S> {
    pub adjacency: Tensor<S>,
    pub weight: Tensor<S>,
}

/// Per-joint `3×3` adjacencies stored as one `J × 3 × 3` tensor, plus a shared weight.
#[derive(Debug, Clone, PartialEq)]
pub struct LstgcLayer<S> {
    pub adjacency: Tensor<S>,
    pub weight: Tensor<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GraphConvLayer<S> {
    JointTrajectory(JtgcLayer<S>),
    GlobalSubJoint(GstgcLayer<S>),
    LocalSubJoint(LstgcLayer<S>),
}

impl<S: Scalar> JtgcLayer<S> {
    pub fn init<R: Rng>(joints: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            adjacency: uniform_fan_in(&[joints, joints], joints, rng),
            weight: uniform_fan_in(&[hidden, hidden], hidden, rng),
        }
    }

    pub fn joints(&self) -> usize {
        self.adjacency.rows()
    }
}

impl<S: Scalar> GstgcLayer<S> {
    pub fn init<R: Rng>(subjoints: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            adjacency: uniform_fan_in(&[subjoints, subjoints], subjoints, rng),
            weight: uniform_fan_in(&[hidden, hidden], hidden, rng),
        }
    }
}

impl<S: Scalar> LstgcLayer<S> {
    pub fn init<R: Rng>(joints: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            adjacency: uniform_fan_in(&[joints, 3, 3], 3, rng),
            weight: uniform_fan_in(&[hidden, hidden], hidden, rng),
        }
    }

    pub fn joints(&self) -> usize {
        self.adjacency.shape()[0]
    }
}

/// Freshly initialized layer of `kind`, deterministic in `seed`.
pub fn init_layer<S: Scalar>(kind: LayerKind, joints: usize, hidden: usize, seed: u64) -> Result<GraphConvLayer<S>> {
    if joints == 0 || hidden == 0 {
        return Err(Error::InvalidArgument("layer dimensions must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(match kind {
        LayerKind::JointTrajectory => GraphConvLayer::JointTrajectory(JtgcLayer::init(joints, hidden, &mut rng)),
        LayerKind::GlobalSubJoint => GraphConvLayer::GlobalSubJoint(GstgcLayer::init(3 * joints, hidden, &mut rng)),
        LayerKind::LocalSubJoint => GraphConvLayer::LocalSubJoint(LstgcLayer::init(joints, hidden, &mut rng)),
    })
}

impl<S: Scalar> GraphConvLayer<S> {
    pub fn tensors(&self) -> [&Tensor<S>; 2] {
        match self {
            GraphConvLayer::JointTrajectory(l) => [&l.adjacency, &l.weight],
            GraphConvLayer::GlobalSubJoint(l) => [&l.adjacency, &l.weight],
            GraphConvLayer::LocalSubJoint(l) => [&l.adjacency, &l.weight],
        }
    }
}

/// Row order that takes axis-major rows (`d·J + i`) back to joint-major (`3i + d`).
pub fn axis_major_to_joint_major(joints: usize) -> Vec<usize> {
    (0..3 * joints).map(|r| (r % 3) * joints + r / 3).collect()
}

/// Joint trajectory convolution on the tape.
///
/// Each axis slice `V[:, d, :]` is multiplied by the adjacency; the three
/// results are concatenated (x, y, z blocks), put back into joint-major
/// order, and mapped by the weight.
pub fn jtgc<S: Scalar>(g: &mut Graph<S>, adjacency: Var, weight: Var, v: Var) -> Result<Var> {
    let joints = g.value(adjacency).rows();
    if g.value(v).rows() != 3 * joints {
        return Err(Error::shape(
            "jtgc",
            format!("input {:?} for {joints} joints", g.value(v).shape()),
        ));
    }
    let mut slices = Vec::with_capacity(3);
    for d in 0..3 {
        let rows: Vec<usize> = (0..joints).map(|i| 3 * i + d).collect();
        let slice = g.gather_rows(v, &rows)?;
        slices.push(g.left_mul(adjacency, slice)?);
    }
    let stacked = g.concat_rows(&slices)?;
    let joint_major = g.gather_rows(stacked, &axis_major_to_joint_major(joints))?;
    g.right_mul(joint_major, weight)
}

/// Global sub-joint convolution `A · V · W` on the tape.
pub fn gstgc<S: Scalar>(g: &mut Graph<S>, adjacency: Var, weight: Var, v: Var) -> Result<Var> {
    let mixed = g.left_mul(adjacency, v)?;
    g.right_mul(mixed, weight)
}

/// Local sub-joint convolution: block `i` mixes rows `3i..3i+3`, then the shared weight.
pub fn lstgc<S: Scalar>(g: &mut Graph<S>, adjacency: Var, weight: Var, v: Var) -> Result<Var> {
    let mixed = g.block_left_mul(adjacency, v)?;
    g.right_mul(mixed, weight)
}

fn as_subjoint_rows<S: Scalar>(v: &Tensor<S>, joints: usize, hidden: usize, op: &'static str) -> Result<Tensor<S>> {
    if v.shape() != [joints, 3, hidden] {
        return Err(Error::shape(
            op,
            format!("expected [{joints}, 3, {hidden}], got {:?}", v.shape()),
        ));
    }
    v.reshape(&[3 * joints, hidden])
}

fn run_single<S: Scalar>(
    layer: [&Tensor<S>; 2],
    input: Tensor<S>,
    f: fn(&mut Graph<S>, Var, Var, Var) -> Result<Var>,
) -> Result<Tensor<S>> {
    let mut g = Graph::new();
    let a = g.constant(layer[0].clone());
    let w = g.constant(layer[1].clone());
    let x = g.constant(input);
    let y = f(&mut g, a, w, x)?;
    Ok(g.value(y).clone())
}

/// `V: J × 3 × H` to the joint-major `3J × H` output.
pub fn jtgc_forward<S: Scalar>(v: &Tensor<S>, layer: &JtgcLayer<S>) -> Result<Tensor<S>> {
    let input = as_subjoint_rows(v, layer.joints(), layer.weight.rows(), "jtgc")?;
    run_single([&layer.adjacency, &layer.weight], input, jtgc)
}

/// `V: N × H` to `A · V · W`.
pub fn gstgc_forward<S: Scalar>(v: &Tensor<S>, layer: &GstgcLayer<S>) -> Result<Tensor<S>> {
    let n = layer.adjacency.rows();
    let h = layer.weight.rows();
    if v.shape() != [n, h] {
        return Err(Error::shape("gstgc", format!("expected [{n}, {h}], got {:?}", v.shape())));
    }
    run_single([&layer.adjacency, &layer.weight], v.clone(), gstgc)
}

/// `V: J × 3 × H` to the joint-major `3J × H` output.
pub fn lstgc_forward<S: Scalar>(v: &Tensor<S>, layer: &LstgcLayer<S>) -> Result<Tensor<S>> {
    let input = as_subjoint_rows(v, layer.joints(), layer.weight.rows(), "lstgc")?;
    run_single([&layer.adjacency, &layer.weight], input, lstgc)
}
