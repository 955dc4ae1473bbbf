//! Smooth synthetic motion for desk-scale experiments.

use std::f64::consts::TAU;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::skeleton::{MotionSequence, SkeletonSpec};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub count: usize,
    pub frames: usize,
    pub seed: u64,
    /// Bone lengths are drawn from `[0.5, 1.0] · scale`.
    pub scale: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            count: 20,
            frames: 20,
            seed: 0,
            scale: 1.0,
        }
    }
}

/// Eight-joint toy body: hip, two legs of two joints, spine, two shoulders.
pub fn toy_skeleton() -> SkeletonSpec {
    SkeletonSpec::new(
        8,
        vec![(0, 1), (0, 2), (1, 3), (2, 4), (0, 5), (5, 6), (5, 7)],
        vec![(1, 2), (3, 4), (6, 7)],
        0,
        25,
    )
    .expect("toy skeleton is valid")
}

/// Children visited breadth-first from the hip, with each joint's parent.
fn tree_order(spec: &SkeletonSpec) -> Vec<(usize, usize)> {
    let mut order = Vec::with_capacity(spec.joints.saturating_sub(1));
    let mut visited = vec![false; spec.joints];
    visited[spec.hip] = true;
    let mut queue = std::collections::VecDeque::from([spec.hip]);
    while let Some(p) = queue.pop_front() {
        for &(a, b) in &spec.bones {
            let child = if a == p { b } else if b == p { a } else { continue };
            if !visited[child] {
                visited[child] = true;
                order.push((p, child));
                queue.push_back(child);
            }
        }
    }
    order
}

struct RestPose {
    direction: Vec<[f64; 3]>,
    length: Vec<f64>,
}

/// Mirror-symmetric rest pose: paired joints get reflected directions and equal lengths.
fn rest_pose(spec: &SkeletonSpec, scale: f64, rng: &mut ChaCha8Rng) -> RestPose {
    let mut direction = vec![[0.0; 3]; spec.joints];
    let mut length = vec![0.0; spec.joints];
    let mut assigned = vec![false; spec.joints];
    for &(l, r) in &spec.symmetric_pairs {
        let a = rng.gen_range(0.3..1.0);
        let b = rng.gen_range(-0.3..0.3);
        let c = rng.gen_range(-1.0..1.0);
        let len = rng.gen_range(0.5..1.0) * scale;
        direction[l] = [-a, b, c];
        direction[r] = [a, b, c];
        length[l] = len;
        length[r] = len;
        assigned[l] = true;
        assigned[r] = true;
    }
    for j in 0..spec.joints {
        if !assigned[j] {
            let up = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            direction[j] = [0.0, rng.gen_range(-0.3..0.3), up * rng.gen_range(0.5..1.0)];
            length[j] = rng.gen_range(0.5..1.0) * scale;
        }
    }
    RestPose { direction, length }
}

/// Generates `count` canonical sequences labelled `synthetic`.
///
/// Each non-hip joint swings around its rest direction by a sum of two or
/// three sinusoids per axis and is then placed at its fixed bone length from
/// its parent, so bone lengths stay constant over time.
pub fn generate(spec: &SkeletonSpec, opts: &SynthOptions) -> Result<Vec<MotionSequence<f64>>> {
    if opts.frames == 0 || !(opts.scale > 0.0) {
        return Err(Error::InvalidArgument("frames and scale must be positive".into()));
    }
    spec.validate()?;
    let mut skel_rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let rest = rest_pose(spec, opts.scale, &mut skel_rng);
    let order = tree_order(spec);
    let fps = f64::from(spec.fps);

    (0..opts.count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(1 + i as u64).wrapping_mul(0x2545_F491_4F6C_DD1D));
            // (amplitude, frequency Hz, phase) per joint and axis
            let waves: Vec<[Vec<(f64, f64, f64)>; 3]> = (0..spec.joints)
                .map(|_| {
                    std::array::from_fn(|_| {
                        let k = rng.gen_range(2..=3);
                        (0..k)
                            .map(|_| (rng.gen_range(0.05..0.25), rng.gen_range(0.3..1.5), rng.gen_range(0.0..TAU)))
                            .collect()
                    })
                })
                .collect();
            let frames: Vec<Tensor<f64>> = (0..opts.frames)
                .map(|t| {
                    let time = t as f64 / fps;
                    let mut pos = vec![[0.0f64; 3]; spec.joints];
                    for &(p, c) in &order {
                        let mut dir = rest.direction[c];
                        for (d, axis) in dir.iter_mut().enumerate() {
                            *axis += waves[c][d]
                                .iter()
                                .map(|&(a, f, ph)| a * (TAU * f * time + ph).sin())
                                .sum::<f64>();
                        }
                        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                        for d in 0..3 {
                            pos[c][d] = pos[p][d] + rest.length[c] * dir[d] / norm;
                        }
                    }
                    Tensor::from_rows(&pos.iter().map(|p| p.to_vec()).collect::<Vec<_>>())
                })
                .collect();
            let mut seq = MotionSequence::from_frames(&frames, spec.fps)?.canonicalize(spec)?;
            seq.action = Some("synthetic".to_string());
            Ok(seq)
        })
        .collect()
}
