//! MTGCM blocks and the end-to-end trajectory predictor.
//!
//! ```text
//! F (B×N×T) ─ ·W_in ─▶ E (B×N×H) ─▶ [MTGCM] × L ─ ·W_out ─▶ B×N×T_out
//!
//! MTGCM(X):  Z  = BN(X)
//!            S  = GSTGC₂(tanh(GSTGC₁(Z)))          sub-joint stream
//!            Jt = JTGC(tanh(LSTGC(Z)))             joint stream
//!            out = tanh(S + Jt) + X
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph_conv::{gstgc, jtgc, lstgc, uniform_fan_in, GstgcLayer, JtgcLayer, LstgcLayer};
use crate::scalar::Scalar;
use crate::tape::{BatchStats, Graph, Var};
use crate::tensor::Tensor;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub joints: usize,
    /// Observed frames `T`.
    pub input_frames: usize,
    /// Predicted frames `T_out`.
    pub output_frames: usize,
    pub hidden: usize,
    pub layers: usize,
    /// Adds the last observed frame to every predicted frame.
    pub use_global_residual: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            joints: 22,
            input_frames: 10,
            output_frames: 10,
            hidden: 128,
            layers: 4,
            use_global_residual: false,
        }
    }
}

impl ModelConfig {
    pub fn subjoints(&self) -> usize {
        3 * self.joints
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("joints", self.joints),
            ("input_frames", self.input_frames),
            ("output_frames", self.output_frames),
            ("hidden", self.hidden),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Closed-form learnable parameter count.
    pub fn count_params(&self) -> usize {
        let (j, n, h) = (self.joints, self.subjoints(), self.hidden);
        let per_block = 2 * (n * n + h * h) + (9 * j + h * h) + (j * j + h * h) + 2 * n;
        self.input_frames * h + self.layers * per_block + h * self.output_frames
    }

    /// Lists every dimension on which `self` and `other` disagree.
    pub fn diff(&self, other: &Self) -> Vec<String> {
        let mut out = Vec::new();
        let mut cmp = |name: &str, a: usize, b: usize| {
            if a != b {
                out.push(format!("{name}: {a} vs {b}"));
            }
        };
        cmp("J", self.joints, other.joints);
        cmp("T", self.input_frames, other.input_frames);
        cmp("T_out", self.output_frames, other.output_frames);
        cmp("H", self.hidden, other.hidden);
        cmp("L", self.layers, other.layers);
        cmp(
            "global_residual",
            usize::from(self.use_global_residual),
            usize::from(other.use_global_residual),
        );
        out
    }
}

/// Affine per-feature batch norm with running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<S> {
    pub gamma: Tensor<S>,
    pub beta: Tensor<S>,
    pub running_mean: Tensor<S>,
    pub running_var: Tensor<S>,
}

impl<S: Scalar> BatchNorm<S> {
    pub fn new(features: usize) -> Self {
        Self {
            gamma: Tensor::full(&[features], S::one()),
            beta: Tensor::zeros(&[features]),
            running_mean: Tensor::zeros(&[features]),
            running_var: Tensor::full(&[features], S::one()),
        }
    }

    pub fn update_running(&mut self, stats: &BatchStats<S>) {
        let m = S::from_f64_lossy(BN_MOMENTUM);
        let keep = S::one() - m;
        for (r, &b) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
            *r = keep * *r + m * b;
        }
        for (r, &b) in self.running_var.data_mut().iter_mut().zip(&stats.var) {
            *r = keep * *r + m * b;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mtgcm<S> {
    pub bn: BatchNorm<S>,
    pub gs1: GstgcLayer<S>,
    pub gs2: GstgcLayer<S>,
    pub ls: LstgcLayer<S>,
    pub jt: JtgcLayer<S>,
}

impl<S: Scalar> Mtgcm<S> {
    pub fn init(joints: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let n = 3 * joints;
        Self {
            bn: BatchNorm::new(n),
            gs1: GstgcLayer::init(n, hidden, rng),
            gs2: GstgcLayer::init(n, hidden, rng),
            ls: LstgcLayer::init(joints, hidden, rng),
            jt: JtgcLayer::init(joints, hidden, rng),
        }
    }

    /// Learnable tensors in storage order (checkpoint order without running stats).
    fn learnable(&self) -> [&Tensor<S>; 10] {
        [
            &self.bn.gamma,
            &self.bn.beta,
            &self.gs1.adjacency,
            &self.gs2.adjacency,
            &self.gs1.weight,
            &self.gs2.weight,
            &self.ls.adjacency,
            &self.ls.weight,
            &self.jt.adjacency,
            &self.jt.weight,
        ]
    }

    fn learnable_mut(&mut self) -> [&mut Tensor<S>; 10] {
        [
            &mut self.bn.gamma,
            &mut self.bn.beta,
            &mut self.gs1.adjacency,
            &mut self.gs2.adjacency,
            &mut self.gs1.weight,
            &mut self.gs2.weight,
            &mut self.ls.adjacency,
            &mut self.ls.weight,
            &mut self.jt.adjacency,
            &mut self.jt.weight,
        ]
    }

    const GROUP_NAMES: [&'static str; 10] = [
        "bn.gamma", "bn.beta", "gs1.adj", "gs2.adj", "gs1.w", "gs2.w", "ls.adj", "ls.w", "jt.adj", "jt.w",
    ];

    /// Zeros every graph-convolution weight matrix, turning the block into the identity.
    pub fn zero_weights(&mut self) {
        for w in [
            &mut self.gs1.weight,
            &mut self.gs2.weight,
            &mut self.ls.weight,
            &mut self.jt.weight,
        ] {
            w.data_mut().iter_mut().for_each(|v| *v = S::zero());
        }
    }
}

/// Tape handles for one block's learnable tensors, in [`Mtgcm`] storage order.
#[derive(Debug, Clone, Copy)]
pub struct BoundBlock {
    pub gamma: Var,
    pub beta: Var,
    pub gs1_adj: Var,
    pub gs2_adj: Var,
    pub gs1_w: Var,
    pub gs2_w: Var,
    pub ls_adj: Var,
    pub ls_w: Var,
    pub jt_adj: Var,
    pub jt_w: Var,
}


/// One MTGCM applied to `x: B × N × H` on the tape.
///
/// Returns the output and, in train mode, the batch statistics used by BN.
pub fn mtgcm_forward<S: Scalar>(
    g: &mut Graph<S>,
    block: &Mtgcm<S>,
    vars: &BoundBlock,
    x: Var,
    mode: Mode,
) -> Result<(Var, Option<BatchStats<S>>)> {
    let n = block.bn.gamma.len();
    let xv = g.value(x);
    if xv.rank() != 3 || xv.rows() != n || xv.cols() != block.gs1.weight.rows() {
        return Err(Error::shape(
            "mtgcm",
            format!("input {:?} for N={n}, H={}", xv.shape(), block.gs1.weight.rows()),
        ));
    }
    let eps = S::from_f64_lossy(BN_EPS);
    let running = match mode {
        Mode::Train => None,
        Mode::Eval => Some((block.bn.running_mean.data(), block.bn.running_var.data())),
    };
    let (z, stats) = g.batch_norm(x, vars.gamma, vars.beta, eps, running)?;

    let s1 = gstgc(g, vars.gs1_adj, vars.gs1_w, z)?;
    let s1 = g.tanh(s1)?;
    let sub_stream = gstgc(g, vars.gs2_adj, vars.gs2_w, s1)?;

    let j1 = lstgc(g, vars.ls_adj, vars.ls_w, z)?;
    let j1 = g.tanh(j1)?;
    let joint_stream = jtgc(g, vars.jt_adj, vars.jt_w, j1)?;

    let fused = g.add(sub_stream, joint_stream)?;
    let fused = g.tanh(fused)?;
    Ok((g.add(fused, x)?, stats))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<S> {
    pub config: ModelConfig,
    pub w_in: Tensor<S>,
    pub blocks: Vec<Mtgcm<S>>,
    pub w_out: Tensor<S>,
}

/// Everything recorded by one forward pass.
pub struct ForwardPass<S> {
    pub output: Var,
    /// Tape handles of the learnable tensors, in [`Model::params`] order.
    pub params: Vec<Var>,
    /// Per-block BN batch statistics (train mode only).
    pub bn_stats: Vec<BatchStats<S>>,
}

impl<S: Scalar> Model<S> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden;
        let w_in = uniform_fan_in(&[config.input_frames, h], config.input_frames, &mut rng);
        let blocks = (0..config.layers)
            .map(|_| Mtgcm::init(config.joints, h, &mut rng))
            .collect();
        let w_out = uniform_fan_in(&[h, config.output_frames], h, &mut rng);
        Ok(Self {
            config,
            w_in,
            blocks,
            w_out,
        })
    }

    pub fn params(&self) -> Vec<&Tensor<S>> {
        let mut out = vec![&self.w_in];
        for b in &self.blocks {
            out.extend(b.learnable());
        }
        out.push(&self.w_out);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut out = vec![&mut self.w_in];
        for b in &mut self.blocks {
            out.extend(b.learnable_mut());
        }
        out.push(&mut self.w_out);
        out
    }

    /// Human-readable name of each learnable tensor, in [`Model::params`] order.
    pub fn param_names(&self) -> Vec<String> {
        let mut out = vec!["w_in".to_string()];
        for i in 0..self.blocks.len() {
            out.extend(Mtgcm::<S>::GROUP_NAMES.iter().map(|n| format!("block{i}.{n}")));
        }
        out.push("w_out".to_string());
        out
    }

    /// Number of learnable entries actually stored.
    pub fn num_learnable(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Records the network on `g` for an input `B × N × T` already on the tape.
    pub fn forward(&self, g: &mut Graph<S>, input: Var, mode: Mode) -> Result<ForwardPass<S>> {
        let cfg = &self.config;
        let iv = g.value(input);
        if iv.rank() != 3 || iv.rows() != cfg.subjoints() || iv.cols() != cfg.input_frames {
            return Err(Error::shape(
                "model_forward",
                format!(
                    "input {:?}, model expects [batch, {}, {}]",
                    iv.shape(),
                    cfg.subjoints(),
                    cfg.input_frames
                ),
            ));
        }
        let residual_base = cfg.use_global_residual.then(|| last_frame_broadcast(iv, cfg.output_frames));

        let mut params = Vec::with_capacity(2 + 10 * self.blocks.len());
        let w_in = g.param(self.w_in.clone());
        params.push(w_in);
        let mut bound = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let v = b.learnable().map(|t| g.param(t.clone()));
            params.extend(v);
            bound.push(BoundBlock {
                gamma: v[0],
                beta: v[1],
                gs1_adj: v[2],
                gs2_adj: v[3],
                gs1_w: v[4],
                gs2_w: v[5],
                ls_adj: v[6],
                ls_w: v[7],
                jt_adj: v[8],
                jt_w: v[9],
            });
        }
        let w_out = g.param(self.w_out.clone());
        params.push(w_out);

        let mut h = g.right_mul(input, w_in)?;
        let mut bn_stats = Vec::new();
        for (block, vars) in self.blocks.iter().zip(&bound) {
            let (next, stats) = mtgcm_forward(g, block, vars, h, mode)?;
            h = next;
            bn_stats.extend(stats);
        }
        let mut output = g.right_mul(h, w_out)?;
        if let Some(base) = residual_base {
            let base = g.constant(base);
            output = g.add(output, base)?;
        }
        Ok(ForwardPass {
            output,
            params,
            bn_stats,
        })
    }

    /// Eval-mode prediction for `input: B × N × T`; leaves the model untouched.
    pub fn predict(&self, input: &Tensor<S>) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let pass = self.forward(&mut g, x, Mode::Eval)?;
        Ok(g.value(pass.output).clone())
    }

    /// Folds train-mode batch statistics into the running averages.
    pub fn update_running_stats(&mut self, stats: &[BatchStats<S>]) {
        for (b, s) in self.blocks.iter_mut().zip(stats) {
            b.bn.update_running(s);
        }
    }

    pub fn cast<T: Scalar>(&self) -> Model<T> {
        let cast_block = |b: &Mtgcm<S>| Mtgcm {
            bn: BatchNorm {
                gamma: b.bn.gamma.cast(),
                beta: b.bn.beta.cast(),
                running_mean: b.bn.running_mean.cast(),
                running_var: b.bn.running_var.cast(),
            },
            gs1: GstgcLayer {
                adjacency: b.gs1.adjacency.cast(),
                weight: b.gs1.weight.cast(),
            },
            gs2: GstgcLayer {
                adjacency: b.gs2.adjacency.cast(),
                weight: b.gs2.weight.cast(),
            },
            ls: LstgcLayer {
                adjacency: b.ls.adjacency.cast(),
                weight: b.ls.weight.cast(),
            },
            jt: JtgcLayer {
                adjacency: b.jt.adjacency.cast(),
                weight: b.jt.weight.cast(),
            },
        };
        Model {
            config: self.config,
            w_in: self.w_in.cast(),
            blocks: self.blocks.iter().map(cast_block).collect(),
            w_out: self.w_out.cast(),
        }
    }
}

/// `B × N × T_out` tensor repeating each trajectory's last observed value.
fn last_frame_broadcast<S: Scalar>(input: &Tensor<S>, out_frames: usize) -> Tensor<S> {
    let (nb, n, t) = (input.batch(), input.rows(), input.cols());
    let mut base = Tensor::zeros(&[nb, n, out_frames]);
    for b in 0..nb {
        for r in 0..n {
            let last = input.at3(b, r, t - 1);
            for k in 0..out_frames {
                base.set3(b, r, k, last);
            }
        }
    }
    base
}
