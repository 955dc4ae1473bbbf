//! Finite-difference verification of the network's backward pass.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::network::{Model, ModelConfig};
use crate::skeleton::SkeletonSpec;
use crate::tape::{Graph, OpKind};
use crate::tensor::Tensor;
use crate::training::{loss_and_gradients, Batch, TrainConfig};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this are compared on an absolute scale.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub batch: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Corrupts the named backward rule; for testing the checker itself.
    pub fault: Option<(OpKind, f64)>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            batch: 3,
            step: DEFAULT_STEP,
            tolerance: DEFAULT_TOLERANCE,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupResult {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub groups: Vec<GroupResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.passed)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for g in &self.groups {
            s.push_str(&format!(
                "{:<18} {:>6} entries  max rel err {:.3e}  {}\n",
                g.name,
                g.entries,
                g.max_rel_error,
                if g.passed { "PASS" } else { "FAIL" }
            ));
        }
        s
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Chain skeleton `0-1-…-(J-1)` rooted at joint 0.
fn chain_skeleton(joints: usize) -> SkeletonSpec {
    let bones = (1..joints).map(|j| (j - 1, j)).collect();
    SkeletonSpec::new(joints, bones, vec![], 0, 25).expect("chain is a tree")
}

/// Compares backward gradients with central differences for every parameter group.
///
/// The loss is the full training objective (train-mode BN, position error and
/// bone-length penalty) on random inputs and targets in `[-1, 1]`.
pub fn gradcheck(config: &ModelConfig, spec: Option<&SkeletonSpec>, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    if config.joints > 4 || config.hidden > 8 || config.input_frames > 5 {
        return Err(Error::InvalidArgument(format!(
            "gradcheck needs a tiny config (J <= 4, H <= 8, T <= 5), got J={}, H={}, T={}",
            config.joints, config.hidden, config.input_frames
        )));
    }
    let owned;
    let spec = match spec {
        Some(s) if s.joints == config.joints => s,
        Some(s) => {
            return Err(Error::Skeleton(format!(
                "skeleton has {} joints, config has {}",
                s.joints, config.joints
            )))
        }
        None => {
            owned = chain_skeleton(config.joints);
            &owned
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut model = Model::<f64>::new(*config, rng.gen())?;
    // move BN affine away from its identity init so its gradients are generic
    for b in &mut model.blocks {
        for v in b.bn.gamma.data_mut().iter_mut().chain(b.bn.beta.data_mut()) {
            *v += rng.gen_range(-0.5..0.5);
        }
    }
    let n = config.subjoints();
    let mut uniform = |shape: &[usize]| {
        let len = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape")
    };
    let inputs = uniform(&[opts.batch, n, config.input_frames]);
    let targets = uniform(&[opts.batch, n, config.output_frames]);
    let nb = spec.bones.len().max(1);
    let lengths = uniform(&[opts.batch, nb]).map(|v: f64| 0.5 + v.abs());
    let batch = Batch {
        inputs,
        targets,
        bone_lengths: lengths,
    };
    let cfg = TrainConfig::default();

    let loss_at = |m: &Model<f64>| -> Result<f64> {
        Ok(loss_and_gradients(m, &batch, spec, &cfg, Graph::new())?.total)
    };
    let mut graph = Graph::new();
    if let Some((kind, factor)) = opts.fault {
        graph.inject_fault(kind, factor);
    }
    let analytic = loss_and_gradients(&model, &batch, spec, &cfg, graph)?.grads;

    let names = model.param_names();
    let mut groups = Vec::with_capacity(names.len());
    for (gi, name) in names.into_iter().enumerate() {
        let len = model.params()[gi].len();
        let mut worst = 0.0f64;
        for k in 0..len {
            let orig = model.params()[gi].data()[k];
            model.params_mut()[gi].data_mut()[k] = orig + opts.step;
            let up = loss_at(&model)?;
            model.params_mut()[gi].data_mut()[k] = orig - opts.step;
            let down = loss_at(&model)?;
            model.params_mut()[gi].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            worst = worst.max(relative_error(analytic[gi].data()[k], numeric));
        }
        groups.push(GroupResult {
            name,
            entries: len,
            max_rel_error: worst,
            passed: worst < opts.tolerance,
        });
    }
    Ok(GradcheckReport { groups })
}
