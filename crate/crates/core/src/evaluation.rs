//! Per-action MPJPE at fixed future horizons.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::network::Model;
use crate::scalar::Scalar;
use crate::skeleton::ms_to_frame;
use crate::tensor::Tensor;
use crate::training::Sample;

/// Short-term horizons reported for motion prediction, in milliseconds.
pub const DEFAULT_HORIZONS_MS: [f64; 4] = [80.0, 160.0, 320.0, 400.0];

/// Mean joint error at one predicted frame (1-based) of `N × T_out` trajectories.
pub fn mpjpe_at_horizon<S: Scalar>(pred: &Tensor<S>, gt: &Tensor<S>, frame: usize) -> Result<S> {
    if pred.shape() != gt.shape() || pred.rank() != 2 || pred.rows() % 3 != 0 {
        return Err(Error::shape(
            "mpjpe_at_horizon",
            format!("prediction {:?} vs target {:?}", pred.shape(), gt.shape()),
        ));
    }
    if frame == 0 || frame > pred.cols() {
        return Err(Error::InvalidArgument(format!(
            "frame {frame} outside 1..={}",
            pred.cols()
        )));
    }
    let t = frame - 1;
    let joints = pred.rows() / 3;
    let mut acc = S::zero();
    for j in 0..joints {
        let mut sq = S::zero();
        for d in 0..3 {
            let e = pred.at2(3 * j + d, t) - gt.at2(3 * j + d, t);
            sq = sq + e * e;
        }
        acc = acc + sq.sqrt();
    }
    Ok(acc / S::from_usize_lossy(joints))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow<S> {
    pub action: String,
    pub samples: usize,
    /// One value per horizon.
    pub errors: Vec<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport<S> {
    pub horizons_ms: Vec<f64>,
    pub frames: Vec<usize>,
    /// Sorted by action label.
    pub rows: Vec<EvalRow<S>>,
    /// Mean of the per-action rows for each horizon.
    pub average: Vec<S>,
    pub params: usize,
}

impl<S: Scalar> EvalReport<S> {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("action,horizon_ms,mpjpe_mm\n");
        let rows = self
            .rows
            .iter()
            .map(|r| (r.action.as_str(), &r.errors))
            .chain(std::iter::once(("average", &self.average)));
        for (action, errors) in rows {
            for (h, e) in self.horizons_ms.iter().zip(errors) {
                s.push_str(&format!("{action},{h},{e}\n"));
            }
        }
        s
    }

    /// Aligned plain-text table, one action per line plus the average row.
    pub fn to_table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.action.len())
            .chain([7, 6])
            .max()
            .unwrap_or(7);
        let mut s = format!("{:<width$}", "action");
        for h in &self.horizons_ms {
            s.push_str(&format!(" {:>10}", format!("{h}ms")));
        }
        s.push('\n');
        let mut line = |name: &str, errors: &[S]| {
            s.push_str(&format!("{name:<width$}"));
            for e in errors {
                s.push_str(&format!(" {:>10.3}", e.as_f64()));
            }
            s.push('\n');
        };
        for r in &self.rows {
            line(&r.action, &r.errors);
        }
        line("average", &self.average);
        s.push_str(&format!("params: {}\n", self.params));
        s
    }
}

/// Eval-mode predictions for every sample, in sample order.
pub fn predict_samples<S: Scalar>(model: &Model<S>, samples: &[Sample<S>]) -> Result<Vec<Tensor<S>>> {
    const CHUNK: usize = 256;
    let cfg = &model.config;
    let (n, t_out) = (cfg.subjoints(), cfg.output_frames);
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(CHUNK) {
        let mut data = Vec::with_capacity(chunk.len() * n * cfg.input_frames);
        for s in chunk {
            if s.input.shape() != [n, cfg.input_frames] {
                return Err(Error::shape(
                    "evaluate",
                    format!("sample input {:?}, model expects [{n}, {}]", s.input.shape(), cfg.input_frames),
                ));
            }
            data.extend_from_slice(s.input.data());
        }
        let x = Tensor::from_vec(&[chunk.len(), n, cfg.input_frames], data)?;
        let y = model.predict(&x)?;
        for b in 0..chunk.len() {
            let slice = y.data()[b * n * t_out..(b + 1) * n * t_out].to_vec();
            out.push(Tensor::from_vec(&[n, t_out], slice)?);
        }
    }
    Ok(out)
}

/// Per-action MPJPE at each horizon, averaged over that action's samples.
pub fn evaluate<S: Scalar>(
    model: &Model<S>,
    samples: &[Sample<S>],
    horizons_ms: &[f64],
    fps: u32,
) -> Result<EvalReport<S>> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples to evaluate".into()));
    }
    let t_out = model.config.output_frames;
    let mut horizons: Vec<f64> = horizons_ms.to_vec();
    horizons.sort_by(|a, b| a.total_cmp(b));
    horizons.dedup();
    let mut frames = Vec::with_capacity(horizons.len());
    for &h in &horizons {
        let f = ms_to_frame(h, fps)?;
        if f > t_out {
            return Err(Error::InvalidArgument(format!(
                "horizon {h} ms is frame {f}, beyond the {t_out} predicted frames"
            )));
        }
        frames.push(f);
    }

    let preds = predict_samples(model, samples)?;
    let mut groups: BTreeMap<&str, (usize, Vec<S>)> = BTreeMap::new();
    for (s, p) in samples.iter().zip(&preds) {
        let entry = groups
            .entry(s.action.as_str())
            .or_insert_with(|| (0, vec![S::zero(); frames.len()]));
        entry.0 += 1;
        for (acc, &f) in entry.1.iter_mut().zip(&frames) {
            *acc = *acc + mpjpe_at_horizon(p, &s.target, f)?;
        }
    }
    let rows: Vec<EvalRow<S>> = groups
        .into_iter()
        .map(|(action, (count, sums))| EvalRow {
            action: action.to_string(),
            samples: count,
            errors: sums
                .into_iter()
                .map(|v| v / S::from_usize_lossy(count))
                .collect(),
        })
        .collect();
    let average = (0..frames.len())
        .map(|k| rows.iter().map(|r| r.errors[k]).fold(S::zero(), |a, b| a + b) / S::from_usize_lossy(rows.len()))
        .collect();
    Ok(EvalReport {
        horizons_ms: horizons,
        frames,
        rows,
        average,
        params: model.num_learnable(),
    })
}
