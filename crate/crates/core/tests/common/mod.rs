//! Naive reference implementations and random fixtures shared by the integration tests.
#![allow(dead_code)]

use mtgcn::graph_conv::{GstgcLayer, JtgcLayer, LstgcLayer};
use mtgcn::network::{BoundBlock, Model, Mtgcm, BN_EPS};
use mtgcn::tape::Graph;
use mtgcn::tensor::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(t: &Tensor<f64>) -> Mat {
    assert_eq!(t.rank(), 2);
    (0..t.rows()).map(|i| (0..t.cols()).map(|j| t.at2(i, j)).collect()).collect()
}

pub fn from_mat(m: &Mat) -> Tensor<f64> {
    Tensor::from_rows(m)
}

pub fn naive_matmul(a: &Mat, b: &Mat) -> Mat {
    let (m, k, n) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; n]; m];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i][p] * b[p][j];
            }
            out[i][j] = acc;
        }
    }
    out
}

/// `Y[r][c] = Σ_s Σ_h A[r][s] V[s][h] W[h][c]`
pub fn naive_gstgc(a: &Mat, v: &Mat, w: &Mat) -> Mat {
    let (n, h) = (a.len(), w.len());
    let mut out = vec![vec![0.0; h]; n];
    for r in 0..n {
        for c in 0..h {
            let mut acc = 0.0;
            for s in 0..n {
                for k in 0..h {
                    acc += a[r][s] * v[s][k] * w[k][c];
                }
            }
            out[r][c] = acc;
        }
    }
    out
}

/// `v` is joint-major `3J × H`; `Y[3i+d][c] = Σ_k Σ_h A[i][k] V[3k+d][h] W[h][c]`
pub fn naive_jtgc(a: &Mat, v: &Mat, w: &Mat) -> Mat {
    let (j, h) = (a.len(), w.len());
    let mut out = vec![vec![0.0; h]; 3 * j];
    for i in 0..j {
        for d in 0..3 {
            for c in 0..h {
                let mut acc = 0.0;
                for k in 0..j {
                    for p in 0..h {
                        acc += a[i][k] * v[3 * k + d][p] * w[p][c];
                    }
                }
                out[3 * i + d][c] = acc;
            }
        }
    }
    out
}

/// `blocks` is `J × 3 × 3`; `Y[3i+d][c] = Σ_e Σ_h B_i[d][e] V[3i+e][h] W[h][c]`
pub fn naive_lstgc(blocks: &Tensor<f64>, v: &Mat, w: &Mat) -> Mat {
    let j = blocks.shape()[0];
    let h = w.len();
    let mut out = vec![vec![0.0; h]; 3 * j];
    for i in 0..j {
        for d in 0..3 {
            for c in 0..h {
                let mut acc = 0.0;
                for e in 0..3 {
                    for p in 0..h {
                        acc += blocks.at3(i, d, e) * v[3 * i + e][p] * w[p][c];
                    }
                }
                out[3 * i + d][c] = acc;
            }
        }
    }
    out
}

fn tanh_mat(m: &Mat) -> Mat {
    m.iter().map(|r| r.iter().map(|v| v.tanh()).collect()).collect()
}

fn add_mat(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

/// Batch norm over a batch of `N × H` matrices; `running` switches to eval statistics.
pub fn naive_batch_norm(xs: &[Mat], gamma: &[f64], beta: &[f64], running: Option<(&[f64], &[f64])>) -> Vec<Mat> {
    let n = xs[0].len();
    let h = xs[0][0].len();
    let mut out = xs.to_vec();
    for f in 0..n {
        let (mean, var) = match running {
            Some((m, v)) => (m[f], v[f]),
            None => {
                let vals: Vec<f64> = xs.iter().flat_map(|x| x[f].iter().copied()).collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
                (mean, var)
            }
        };
        for (b, x) in xs.iter().enumerate() {
            for t in 0..h {
                out[b][f][t] = gamma[f] * (x[f][t] - mean) / (var + BN_EPS).sqrt() + beta[f];
            }
        }
    }
    out
}

fn gs(l: &GstgcLayer<f64>, v: &Mat) -> Mat {
    naive_gstgc(&to_mat(&l.adjacency), v, &to_mat(&l.weight))
}

fn ls(l: &LstgcLayer<f64>, v: &Mat) -> Mat {
    naive_lstgc(&l.adjacency, v, &to_mat(&l.weight))
}

fn jt(l: &JtgcLayer<f64>, v: &Mat) -> Mat {
    naive_jtgc(&to_mat(&l.adjacency), v, &to_mat(&l.weight))
}

/// One MTGCM over a batch, written out term by term.
pub fn naive_mtgcm(block: &Mtgcm<f64>, xs: &[Mat], eval: bool) -> Vec<Mat> {
    let running = eval.then(|| (block.bn.running_mean.data(), block.bn.running_var.data()));
    let zs = naive_batch_norm(xs, block.bn.gamma.data(), block.bn.beta.data(), running);
    xs.iter()
        .zip(&zs)
        .map(|(x, z)| {
            let s = gs(&block.gs2, &tanh_mat(&gs(&block.gs1, z)));
            let j = jt(&block.jt, &tanh_mat(&ls(&block.ls, z)));
            add_mat(&tanh_mat(&add_mat(&s, &j)), x)
        })
        .collect()
}

/// Full network forward over a batch of `N × T` inputs.
pub fn naive_model(model: &Model<f64>, inputs: &[Mat], eval: bool) -> Vec<Mat> {
    let w_in = to_mat(&model.w_in);
    let w_out = to_mat(&model.w_out);
    let mut hs: Vec<Mat> = inputs.iter().map(|x| naive_matmul(x, &w_in)).collect();
    for b in &model.blocks {
        hs = naive_mtgcm(b, &hs, eval);
    }
    let t_out = model.config.output_frames;
    hs.iter()
        .zip(inputs)
        .map(|(h, x)| {
            let mut y = naive_matmul(h, &w_out);
            if model.config.use_global_residual {
                for (row, xr) in y.iter_mut().zip(x) {
                    let last = xr[xr.len() - 1];
                    for v in row.iter_mut().take(t_out) {
                        *v += last;
                    }
                }
            }
            y
        })
        .collect()
}

pub fn batch_of(mats: &[Mat]) -> Tensor<f64> {
    let (n, c) = (mats[0].len(), mats[0][0].len());
    let data = mats.iter().flat_map(|m| m.iter().flatten().copied()).collect();
    Tensor::from_vec(&[mats.len(), n, c], data).unwrap()
}

pub fn unbatch(t: &Tensor<f64>) -> Vec<Mat> {
    (0..t.batch())
        .map(|b| (0..t.rows()).map(|i| (0..t.cols()).map(|j| t.at3(b, i, j)).collect()).collect())
        .collect()
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len());
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}

/// Puts a block's tensors on the tape as constants.
pub fn bind_block(g: &mut Graph<f64>, b: &Mtgcm<f64>) -> BoundBlock {
    let mut c = |t: &Tensor<f64>| g.constant(t.clone());
    BoundBlock {
        gamma: c(&b.bn.gamma),
        beta: c(&b.bn.beta),
        gs1_adj: c(&b.gs1.adjacency),
        gs2_adj: c(&b.gs2.adjacency),
        gs1_w: c(&b.gs1.weight),
        gs2_w: c(&b.gs2.weight),
        ls_adj: c(&b.ls.adjacency),
        ls_w: c(&b.ls.weight),
        jt_adj: c(&b.jt.adjacency),
        jt_w: c(&b.jt.weight),
    }
}
