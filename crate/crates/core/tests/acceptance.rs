//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p mtgcn --test acceptance`; extra arguments select
//! criteria whose key contains them (e.g. `-- overfit`).

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use mtgcn::augment::{mirror_reflect, mirror_transform, MirrorPermutation};
use mtgcn::checkpoint::{load_checkpoint, save_checkpoint, to_bytes};
use mtgcn::evaluation::{evaluate, DEFAULT_HORIZONS_MS};
use mtgcn::gradcheck::{gradcheck, GradcheckOptions};
use mtgcn::graph_conv::{gstgc_forward, jtgc_forward, lstgc_forward, GstgcLayer, JtgcLayer, LstgcLayer};
use mtgcn::loss::evaluate_loss;
use mtgcn::network::{mtgcm_forward, Model, Mode, Mtgcm};
use mtgcn::optim::{adam_step, clip_gradients_l2, global_norm, AdamState};
use mtgcn::skeleton::{bone_lengths, ms_to_frame, MotionSequence, SkeletonSpec};
use mtgcn::synth::{generate, toy_skeleton, SynthOptions};
use mtgcn::tape::Graph;
use mtgcn::tensor::Tensor;
use mtgcn::training::{extract_windows, lr_at_epoch, train, with_mirrored, TrainLog};
use mtgcn::{ModelConfig, TrainConfig};
use rand::Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

type Criterion = (&'static str, &'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 10] = [
    ("gradients", "gradient suite", gradient_suite),
    ("oracles", "brute-force oracle equivalence", oracle_equivalence),
    ("params", "parameter budget", parameter_budget),
    ("mirror", "mirror-transformation properties", mirror_properties),
    ("loss", "loss correctness", loss_correctness),
    ("schedule", "schedule, clipping and Adam", schedule_and_clipping),
    ("overfit", "overfit run", overfit_run),
    ("residual", "residual identity", residual_identity),
    ("checkpoint", "checkpoint roundtrip", checkpoint_roundtrip),
    ("horizons", "horizon mapping", horizon_mapping),
];

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected: Vec<&Criterion> = CRITERIA
        .iter()
        .filter(|(key, _, _)| filters.is_empty() || filters.iter().any(|f| key.contains(f.as_str())))
        .collect();
    let mut failed = 0;
    for (key, name, run) in &selected {
        let start = Instant::now();
        let result = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.passed {
            failed += 1;
        }
        println!(
            "{} [{key}] {name}: {} ({:.1}s)",
            if result.passed { "PASS" } else { "FAIL" },
            result.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("{}/{} criteria passed", selected.len() - failed, selected.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn gradient_suite() -> Outcome {
    let config = ModelConfig {
        joints: 4,
        input_frames: 5,
        output_frames: 3,
        hidden: 8,
        layers: 2,
        use_global_residual: false,
    };
    let start = Instant::now();
    let report = gradcheck(&config, None, &GradcheckOptions::default()).expect("gradcheck runs");
    let elapsed = start.elapsed();
    let worst = report.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max);
    let failing: Vec<&str> = report.groups.iter().filter(|g| !g.passed).map(|g| g.name.as_str()).collect();
    outcome(
        report.passed() && elapsed < Duration::from_secs(60),
        format!(
            "{} groups, worst max rel err {worst:.2e}, failing {failing:?}, {:.1}s",
            report.groups.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut r = rng(2024);
    let mut worst = [0.0f64; 3];
    for _ in 0..50 {
        let (j, h) = (r.gen_range(1..=5), r.gen_range(1..=6));
        let v = random_tensor(&[j, 3, h], &mut r);
        let flat = to_mat(&v.reshape(&[3 * j, h]).unwrap());

        let jt = JtgcLayer {
            adjacency: random_tensor(&[j, j], &mut r),
            weight: random_tensor(&[h, h], &mut r),
        };
        let want = naive_jtgc(&to_mat(&jt.adjacency), &flat, &to_mat(&jt.weight));
        worst[0] = worst[0].max(max_abs_diff(&to_mat(&jtgc_forward(&v, &jt).unwrap()), &want));

        let gs = GstgcLayer {
            adjacency: random_tensor(&[3 * j, 3 * j], &mut r),
            weight: random_tensor(&[h, h], &mut r),
        };
        let want = naive_gstgc(&to_mat(&gs.adjacency), &flat, &to_mat(&gs.weight));
        worst[1] = worst[1].max(max_abs_diff(&to_mat(&gstgc_forward(&from_mat(&flat), &gs).unwrap()), &want));

        let ls = LstgcLayer {
            adjacency: random_tensor(&[j, 3, 3], &mut r),
            weight: random_tensor(&[h, h], &mut r),
        };
        let want = naive_lstgc(&ls.adjacency, &flat, &to_mat(&ls.weight));
        worst[2] = worst[2].max(max_abs_diff(&to_mat(&lstgc_forward(&v, &ls).unwrap()), &want));
    }
    let elapsed = start.elapsed();
    outcome(
        worst.iter().all(|&w| w <= 1e-12) && elapsed < Duration::from_secs(10),
        format!(
            "50 cases each, max |diff| jtgc {:.1e} gstgc {:.1e} lstgc {:.1e}",
            worst[0], worst[1], worst[2]
        ),
    )
}

fn parameter_budget() -> Outcome {
    let cfg = ModelConfig::default();
    let (j, t, t_out, h, l) = (cfg.joints, cfg.input_frames, cfg.output_frames, cfg.hidden, cfg.layers);
    let n = 3 * j;
    let formula = t * h + l * (2 * (n * n + h * h) + (9 * j + h * h) + (j * j + h * h) + 2 * n) + h * t_out;
    let counted = cfg.count_params();
    let stored = Model::<f64>::new(cfg, 0).unwrap().num_learnable();
    let unit = ModelConfig {
        joints: 1,
        input_frames: 1,
        output_frames: 1,
        hidden: 1,
        layers: 1,
        use_global_residual: false,
    };
    outcome(
        (250_000..=320_000).contains(&counted) && counted == formula && counted == stored && unit.count_params() == 40,
        format!("count {counted}, formula {formula}, stored {stored}, unit config {}", unit.count_params()),
    )
}

fn mirror_properties() -> Outcome {
    let spec = toy_skeleton();
    let perm = MirrorPermutation::from_spec(&spec);
    let mut r = rng(7);
    let mut involution = perm.is_involution();
    let mut plane_fixed = true;
    let mut worst_len = 0.0f64;
    for _ in 0..20 {
        let seq = MotionSequence::new(random_tensor(&[spec.joints, 3, 5], &mut r).scale(300.0), 25).unwrap();
        let mt = mirror_transform(&seq, &spec).unwrap();
        involution &= mirror_transform(&mt, &spec).unwrap() == seq;

        let mut on_plane = random_tensor(&[spec.joints, 3], &mut r);
        for k in 0..spec.joints {
            on_plane.set2(k, 0, 0.0);
        }
        plane_fixed &= mirror_reflect(&on_plane) == on_plane;

        let sym = spec.symmetric_bones();
        for t in 0..5 {
            let multiset = |f: &Tensor<f64>| {
                let all = bone_lengths(f, &spec);
                let mut v: Vec<f64> = sym.iter().map(|&b| all[b]).collect();
                v.sort_by(f64::total_cmp);
                v
            };
            for (a, b) in multiset(&seq.frame(t)).iter().zip(multiset(&mt.frame(t))) {
                worst_len = worst_len.max((a - b).abs());
            }
        }
    }
    let seqs = generate(&spec, &SynthOptions { count: 7, ..Default::default() }).unwrap();
    let samples: Vec<_> = seqs
        .iter()
        .flat_map(|s| extract_windows(s, 10, 10, 10, &spec).unwrap())
        .collect();
    let doubled = with_mirrored(&samples, &spec).unwrap();
    let doubling = doubled.len() == 2 * samples.len()
        && doubled[..samples.len()] == samples[..]
        && doubled[samples.len()..]
            .iter()
            .zip(&samples)
            .all(|(m, s)| *m == s.mirrored(&spec).unwrap());
    outcome(
        involution && plane_fixed && worst_len < 1e-9 && doubling,
        format!(
            "involution {involution}, plane fixed {plane_fixed}, bone multiset diff {worst_len:.1e}, doubling {} -> {}",
            samples.len(),
            doubled.len()
        ),
    )
}

fn loss_correctness() -> Outcome {
    let spec = SkeletonSpec::new(2, vec![(0, 1)], vec![], 0, 25).unwrap();
    // joint-major rows (x0 y0 z0 x1 y1 z1), two future frames as columns
    let gt: Tensor<f64> = Tensor::from_vec(
        &[1, 6, 2],
        vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 5.0, 5.0, 0.0, 0.0, 0.0, 0.0],
    )
    .unwrap();
    // frame 0: joint 1 at x=3 (error 2, length 3); frame 1: joints at x=3 and x=10 (errors 3 and 5, length 7)
    let pred = Tensor::from_vec(
        &[1, 6, 2],
        vec![0.0, 3.0, 0.0, 0.0, 0.0, 0.0, 3.0, 10.0, 0.0, 0.0, 0.0, 0.0],
    )
    .unwrap();
    let lengths = Tensor::from_vec(&[1, 1], vec![5.0]).unwrap();
    let (total, mpjpe, bone) = evaluate_loss(&pred, &gt, Some(&lengths), &spec, 0.1).unwrap();
    let bone = bone.unwrap();
    let (zero, _, zero_bone) = evaluate_loss(&gt, &gt, Some(&lengths), &spec, 0.1).unwrap();
    let ok = (mpjpe - 2.5).abs() < 1e-12 && (bone - 2.0).abs() < 1e-12 && (total - 2.7).abs() < 1e-12 && zero == 0.0;
    outcome(
        ok,
        format!(
            "mpjpe {mpjpe}, bone {bone}, total {total}, pred==gt total {zero} (bone {})",
            zero_bone.unwrap()
        ),
    )
}

fn schedule_and_clipping() -> Outcome {
    let cfg = TrainConfig::default();
    let lr_ok = lr_at_epoch(0, &cfg) == 0.001
        && (lr_at_epoch(1, &cfg) - 0.00098).abs() < 1e-12
        && (0..200).all(|e| (lr_at_epoch(e, &cfg) - 0.001 * 0.98f64.powi(e as i32)).abs() < 1e-12);

    let mut r = rng(11);
    let mut worst_clip = 0.0f64;
    for k in 0..50 {
        let scale = 0.05 * (k + 1) as f64;
        let mut grads: Vec<Tensor<f64>> = (0..4).map(|i| random_tensor(&[i + 1, 3], &mut r).scale(scale)).collect();
        let pre = global_norm(&grads);
        clip_gradients_l2(&mut grads, 1.0).unwrap();
        worst_clip = worst_clip.max((global_norm(&grads) - pre.min(1.0)).abs());
    }

    let mut theta: Tensor<f64> = Tensor::from_vec(&[1], vec![0.5]).unwrap();
    let mut state = AdamState::new(&[&theta]);
    adam_step(&mut [&mut theta], &[Tensor::from_vec(&[1], vec![1.0]).unwrap()], &mut state, 0.001).unwrap();
    let delta = theta.data()[0] - 0.5;
    let adam_err = (delta + 0.001 / (1.0 + 1e-8)).abs();

    let mut still = Tensor::from_vec(&[1], vec![0.5]).unwrap();
    let mut fresh = AdamState::new(&[&still]);
    adam_step(&mut [&mut still], &[Tensor::from_vec(&[1], vec![0.0]).unwrap()], &mut fresh, 0.001).unwrap();

    outcome(
        lr_ok && worst_clip <= 1e-12 && adam_err <= 1e-12 && still.data()[0] == 0.5,
        format!(
            "lr(0..2) {:?}, lr(10) {:.10e}, clip norm err {worst_clip:.1e}, first Adam step {delta:.15e} (err {adam_err:.1e})",
            [lr_at_epoch(0, &cfg), lr_at_epoch(1, &cfg)],
            lr_at_epoch(10, &cfg)
        ),
    )
}

struct OverfitRun {
    checkpoint: Vec<u8>,
    log: TrainLog,
    horizon_errors: Vec<f64>,
    elapsed: Duration,
}

fn overfit_once() -> OverfitRun {
    let spec = toy_skeleton();
    let config = ModelConfig {
        joints: 8,
        ..ModelConfig::default()
    };
    let seqs = generate(&spec, &SynthOptions::default()).unwrap();
    let samples: Vec<_> = seqs
        .iter()
        .flat_map(|s| extract_windows(s, config.input_frames, config.output_frames, config.output_frames, &spec).unwrap())
        .collect();
    assert_eq!(samples.len(), 20);
    let cfg = TrainConfig {
        epochs: 2000,
        batch_size: 32,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let mut model = Model::<f64>::new(config, 0).unwrap();
    let log = train(&mut model, &samples, &spec, &cfg).unwrap();
    let elapsed = start.elapsed();
    let report = evaluate(&model, &samples, &DEFAULT_HORIZONS_MS, spec.fps).unwrap();
    OverfitRun {
        checkpoint: to_bytes(&model),
        log,
        horizon_errors: report.average,
        elapsed,
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn overfit_run() -> Outcome {
    let first = overfit_once();
    let second = overfit_once();
    let deterministic = first.checkpoint == second.checkpoint && first.log == second.log;
    let converged = first.horizon_errors.iter().all(|&e| e < 1e-2);
    let fast = first.elapsed.max(second.elapsed) < Duration::from_secs(300);
    let losses: Vec<f64> = first.log.epochs.iter().map(|e| e.total_loss).collect();
    let early = median(losses[..=100].to_vec());
    let late = median(losses[1900..].to_vec());
    let last = first.log.epochs.last().unwrap();
    outcome(
        converged && deterministic && fast,
        format!(
            "MPJPE at {:?} ms = [{}] (need < 1e-2), final epoch mpjpe term {:.4}, loss median {early:.4} -> {late:.4}, \
             deterministic {deterministic}, runs {:.0}s / {:.0}s",
            DEFAULT_HORIZONS_MS,
            first
                .horizon_errors
                .iter()
                .map(|e| format!("{e:.4}"))
                .collect::<Vec<_>>()
                .join(", "),
            last.mpjpe_term,
            first.elapsed.as_secs_f64(),
            second.elapsed.as_secs_f64()
        ),
    )
}

fn residual_identity() -> Outcome {
    let mut r = rng(31);
    let mut exact = true;
    let mut cases = 0;
    for (joints, hidden, batch) in [(1, 2, 1), (4, 8, 3), (8, 16, 5), (22, 128, 2)] {
        let mut block = Mtgcm::init(joints, hidden, &mut r);
        block.zero_weights();
        let x = random_tensor(&[batch, 3 * joints, hidden], &mut r).scale(10.0);
        for mode in [Mode::Train, Mode::Eval] {
            let mut g = Graph::new();
            let vars = bind_block(&mut g, &block);
            let xv = g.constant(x.clone());
            let (y, _) = mtgcm_forward(&mut g, &block, &vars, xv, mode).unwrap();
            exact &= *g.value(y) == x;
            cases += 1;
        }
    }
    outcome(exact, format!("{cases} block/mode cases, output == input bitwise: {exact}"))
}

fn checkpoint_roundtrip() -> Outcome {
    let mut r = rng(41);
    let config = ModelConfig {
        use_global_residual: true,
        ..ModelConfig::default()
    };
    let mut model = Model::<f64>::new(config, 5).unwrap();
    for b in &mut model.blocks {
        b.bn.running_mean = random_tensor(&[config.subjoints()], &mut r);
        b.bn.running_var = random_tensor(&[config.subjoints()], &mut r).map(|v| 0.5 + v.abs());
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&model, &path).unwrap();
    let loaded: Model<f64> = load_checkpoint(&path).unwrap();
    let mut identical = loaded == model;
    for _ in 0..10 {
        let x = random_tensor(&[2, config.subjoints(), config.input_frames], &mut r);
        let (a, b) = (model.predict(&x).unwrap(), loaded.predict(&x).unwrap());
        identical &= a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits());
    }
    outcome(
        identical,
        format!(
            "{} bytes, parameters and 10 forward passes bitwise identical: {identical}",
            std::fs::metadata(&path).unwrap().len()
        ),
    )
}

fn horizon_mapping() -> Outcome {
    let got: Vec<usize> = [80.0, 160.0, 320.0, 400.0, 1000.0]
        .iter()
        .map(|&ms| ms_to_frame(ms, 25).unwrap())
        .collect();
    outcome(got == [2, 4, 8, 10, 25], format!("{{80,160,320,400,1000}} ms @ 25 fps -> {got:?}"))
}
