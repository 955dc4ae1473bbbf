use std::path::{Path, PathBuf};

use mtgcn::augment::mirror_transform;
use mtgcn::checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint};
use mtgcn::evaluation::evaluate;
use mtgcn::gradcheck::{gradcheck, GradcheckOptions};
use mtgcn::seqfile::{list_sequence_files, read_sequence, write_sequence};
use mtgcn::synth::{generate, toy_skeleton, SynthOptions};
use mtgcn::training::{extract_windows, train_with};
use mtgcn::{Error, Model64, MotionSequence64, Result, Sample64, SkeletonSpec, Tensor64};

use crate::config::RunConfig;
use crate::{Command, Common, ModelArgs, Outcome};

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn require<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| invalid(format!("missing required setting: {what}")))
}

fn require_existing<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    let path = require(p, what)?;
    if !path.exists() {
        return Err(invalid(format!("{what} {} does not exist", path.display())));
    }
    Ok(path)
}

/// Flag values that become config keys when present.
struct Flags(Vec<(&'static str, String)>);

impl Flags {
    fn new(common: &Common) -> Self {
        let mut f = Flags(Vec::new());
        f.opt("seed", common.seed);
        f.path("skeleton", &common.skeleton);
        f.path("out", &common.out);
        f
    }

    fn opt<T: ToString>(&mut self, key: &'static str, v: Option<T>) {
        if let Some(v) = v {
            self.0.push((key, v.to_string()));
        }
    }

    fn path(&mut self, key: &'static str, p: &Option<PathBuf>) {
        if let Some(p) = p {
            self.0.push((key, p.display().to_string()));
        }
    }

    fn model(&mut self, m: &ModelArgs) {
        self.opt("input_frames", m.input_frames);
        self.opt("output_frames", m.output_frames);
        self.opt("hidden", m.hidden);
        self.opt("layers", m.layers);
    }
}

/// Defaults, then the config file, then `--set`, then dedicated flags; joints follow the skeleton unless set.
fn resolve(base: RunConfig, common: &Common, flags: Flags) -> Result<(RunConfig, Option<SkeletonSpec>)> {
    let mut cfg = base;
    if let Some(path) = &common.config {
        if !path.exists() {
            return Err(invalid(format!("config file {} does not exist", path.display())));
        }
        cfg.apply_file(path)?;
    }
    cfg.apply_overrides(&common.set)?;
    for (k, v) in flags.0 {
        cfg.set(k, &v)?;
    }
    let spec = match &cfg.skeleton {
        Some(_) => Some(SkeletonSpec::load(require_existing(&cfg.skeleton, "skeleton")?)?),
        None => None,
    };
    if let Some(spec) = &spec {
        if !cfg.is_explicit("joints") {
            cfg.model.joints = spec.joints;
        } else if cfg.model.joints != spec.joints {
            return Err(invalid(format!(
                "joints = {} but the skeleton has {} joints",
                cfg.model.joints, spec.joints
            )));
        }
    }
    cfg.validate()?;
    eprint!("# resolved config\n{}", cfg.to_text());
    Ok((cfg, spec))
}

/// A chain over `joints` joints; used where bones only feed unused bone lengths.
fn chain_spec(joints: usize, fps: u32) -> Result<SkeletonSpec> {
    SkeletonSpec::new(joints, (1..joints).map(|j| (j - 1, j)).collect(), vec![], 0, fps)
}

fn read_dir_sequences(dir: &Path) -> Result<Vec<(PathBuf, MotionSequence64)>> {
    if !dir.is_dir() {
        return Err(invalid(format!("data directory {} does not exist", dir.display())));
    }
    let files = list_sequence_files(dir)?;
    if files.is_empty() {
        return Err(invalid(format!("no .seq files in {}", dir.display())));
    }
    files
        .into_iter()
        .map(|p| read_sequence(&p).map(|s| (p, s)))
        .collect()
}

fn check_joints(seqs: &[(PathBuf, MotionSequence64)], joints: usize) -> Result<()> {
    for (p, s) in seqs {
        if s.joints() != joints {
            return Err(invalid(format!(
                "{} has {} joints, expected {joints}",
                p.display(),
                s.joints()
            )));
        }
    }
    Ok(())
}

fn windows(
    seqs: &[(PathBuf, MotionSequence64)],
    cfg: &RunConfig,
    spec: &SkeletonSpec,
) -> Result<Vec<Sample64>> {
    let (t, t_out) = (cfg.model.input_frames, cfg.model.output_frames);
    let mut samples = Vec::new();
    for (_, s) in seqs {
        samples.extend(extract_windows(s, t, t_out, cfg.stride(), spec)?);
    }
    if samples.is_empty() {
        let (path, shortest) = seqs
            .iter()
            .min_by_key(|(_, s)| s.frames())
            .expect("at least one sequence");
        return Err(invalid(format!(
            "no usable windows: every sequence is shorter than T + T_out = {} frames (shortest: {} with {} frames)",
            t + t_out,
            path.display(),
            shortest.frames()
        )));
    }
    Ok(samples)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

fn cmd_train(cfg: &RunConfig, spec: &SkeletonSpec) -> Result<Outcome> {
    let data = require(&cfg.data, "data")?;
    let out = require(&cfg.out, "out")?;
    let mut seqs = read_dir_sequences(data)?;
    check_joints(&seqs, spec.joints)?;
    for (_, s) in &mut seqs {
        *s = s.canonicalize(spec)?;
    }
    let samples = windows(&seqs, cfg, spec)?;
    let mut model = Model64::new(cfg.model, cfg.train.seed)?;
    let per_epoch = samples.len() * if cfg.train.augment_mirror { 2 } else { 1 };
    eprintln!("windows: {}  samples_per_epoch: {per_epoch}", samples.len());
    let log = train_with(&mut model, &samples, spec, &cfg.train, |r| {
        eprintln!(
            "epoch {:>5}  lr {:.3e}  loss {:.6}  mpjpe {:.6}  bone {:.6}",
            r.epoch, r.lr, r.total_loss, r.mpjpe_term, r.bone_term
        );
    })?;
    save_checkpoint(&model, out)?;
    if let Some(path) = &cfg.log {
        write_text(path, &log.to_csv())?;
    }
    println!("samples_per_epoch: {}", log.samples_per_epoch);
    println!("checkpoint: {}", out.display());
    Ok(Outcome::Success)
}

fn load_model(cfg: &RunConfig) -> Result<Model64> {
    let path = require_existing(&cfg.checkpoint, "checkpoint")?;
    if cfg.model_is_explicit() {
        load_checkpoint_for(path, &cfg.model)
    } else {
        load_checkpoint(path)
    }
}

fn cmd_predict(cfg: &RunConfig, spec: Option<&SkeletonSpec>) -> Result<Outcome> {
    let model = load_model(cfg)?;
    let input = require_existing(&cfg.input, "input")?;
    let out = require(&cfg.out, "out")?;
    let mut seq: MotionSequence64 = read_sequence(input)?;
    let mc = model.config;
    if seq.joints() != mc.joints {
        return Err(invalid(format!(
            "{} has {} joints, the model expects {}",
            input.display(),
            seq.joints(),
            mc.joints
        )));
    }
    if seq.frames() < mc.input_frames {
        return Err(invalid(format!(
            "{} has {} frames; prediction needs at least {}",
            input.display(),
            seq.frames(),
            mc.input_frames
        )));
    }
    if let Some(spec) = spec {
        seq = seq.canonicalize(spec)?;
    }
    let observed = seq.window(seq.frames() - mc.input_frames, mc.input_frames)?;
    let n = mc.subjoints();
    let x = Tensor64::from_vec(&[1, n, mc.input_frames], observed.to_global_subjoint().data().to_vec())?;
    let y = model.predict(&x)?;
    let y = Tensor64::from_vec(&[n, mc.output_frames], y.data().to_vec())?;
    let mut pred = MotionSequence64::from_global_subjoint(&y, seq.fps)?;
    pred.action = seq.action.clone();
    write_sequence(&pred, out)?;
    println!("wrote {} frames to {}", mc.output_frames, out.display());
    Ok(Outcome::Success)
}

fn cmd_eval(cfg: &RunConfig, spec: Option<&SkeletonSpec>) -> Result<Outcome> {
    let model = load_model(cfg)?;
    let data = require(&cfg.data, "data")?;
    let mut seqs = read_dir_sequences(data)?;
    check_joints(&seqs, model.config.joints)?;
    let fps = seqs[0].1.fps;
    if let Some((p, s)) = seqs.iter().find(|(_, s)| s.fps != fps) {
        return Err(invalid(format!("{} is at {} fps, expected {fps}", p.display(), s.fps)));
    }
    let owned;
    let spec = match spec {
        Some(spec) => {
            for (_, s) in &mut seqs {
                *s = s.canonicalize(spec)?;
            }
            spec
        }
        None => {
            owned = chain_spec(model.config.joints, fps)?;
            &owned
        }
    };
    let mut wcfg = cfg.clone();
    wcfg.model = model.config;
    let samples = windows(&seqs, &wcfg, spec)?;
    let report = evaluate(&model, &samples, &cfg.horizons_ms, fps)?;
    if let Some(out) = &cfg.out {
        write_text(out, &report.to_csv())?;
    }
    let table = report.to_table();
    if let Some(path) = &cfg.table {
        write_text(path, &table)?;
    }
    print!("{table}");
    Ok(Outcome::Success)
}

fn cmd_gradcheck(cfg: &RunConfig, spec: Option<&SkeletonSpec>) -> Result<Outcome> {
    let opts = GradcheckOptions {
        seed: cfg.train.seed,
        ..GradcheckOptions::default()
    };
    let report = gradcheck(&cfg.model, spec, &opts)?;
    print!("{}", report.to_text());
    if report.passed() {
        println!("gradcheck passed");
        Ok(Outcome::Success)
    } else {
        println!("gradcheck FAILED");
        Ok(Outcome::CheckFailed)
    }
}

fn cmd_synth(cfg: &RunConfig, spec: Option<&SkeletonSpec>) -> Result<Outcome> {
    let out = require(&cfg.out, "out")?;
    let spec = spec.cloned().unwrap_or_else(toy_skeleton);
    let opts = SynthOptions {
        count: cfg.count,
        frames: cfg.length,
        seed: cfg.train.seed,
        scale: cfg.scale,
    };
    let seqs = generate(&spec, &opts)?;
    std::fs::create_dir_all(out)?;
    for (i, s) in seqs.iter().enumerate() {
        write_sequence(s, &out.join(format!("synth_{i:03}.seq")))?;
    }
    write_text(&out.join("skeleton.txt"), &spec.to_text())?;
    println!("wrote {} sequences and skeleton.txt to {}", seqs.len(), out.display());
    Ok(Outcome::Success)
}

fn mirrored_name(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy()).unwrap_or_default();
    PathBuf::from(format!("{stem}_mt.seq"))
}

fn cmd_augment(cfg: &RunConfig, spec: &SkeletonSpec) -> Result<Outcome> {
    let files = match (&cfg.input, &cfg.data) {
        (Some(_), _) => vec![require_existing(&cfg.input, "input")?.to_path_buf()],
        (None, Some(dir)) => {
            if !dir.is_dir() {
                return Err(invalid(format!("data directory {} does not exist", dir.display())));
            }
            list_sequence_files(dir)?
        }
        (None, None) => return Err(invalid("augment needs data or input")),
    };
    let mut failed = 0;
    let mut written = 0;
    for path in &files {
        let dir = cfg
            .out
            .clone()
            .or_else(|| path.parent().map(Path::to_path_buf))
            .unwrap_or_default();
        let result = read_sequence::<f64>(path).and_then(|s| {
            if s.joints() != spec.joints {
                return Err(invalid(format!("{} joints, skeleton has {}", s.joints(), spec.joints)));
            }
            let m = mirror_transform(&s, spec)?;
            std::fs::create_dir_all(&dir)?;
            write_sequence(&m, &dir.join(mirrored_name(path)))
        });
        match result {
            Ok(()) => written += 1,
            Err(e) => {
                eprintln!("warning: skipping {}: {e}", path.display());
                failed += 1;
            }
        }
    }
    println!("mirrored {written} of {} files", files.len());
    Ok(if failed > 0 {
        Outcome::PartialFailure
    } else {
        Outcome::Success
    })
}

fn tiny_defaults() -> RunConfig {
    let mut c = RunConfig::default();
    c.model.joints = 3;
    c.model.input_frames = 4;
    c.model.output_frames = 2;
    c.model.hidden = 4;
    c.model.layers = 2;
    c
}

pub fn dispatch(command: Command) -> Result<Outcome> {
    match command {
        Command::Train {
            common,
            model,
            data,
            epochs,
            batch_size,
            stride,
            log,
            no_augment,
        } => {
            let mut f = Flags::new(&common);
            f.model(&model);
            f.path("data", &data);
            f.opt("epochs", epochs);
            f.opt("batch_size", batch_size);
            f.opt("stride", stride);
            f.path("log", &log);
            if no_augment {
                f.opt("augment_mirror", Some(false));
            }
            let (cfg, spec) = resolve(RunConfig::default(), &common, f)?;
            let spec = spec.ok_or_else(|| invalid("train needs a skeleton"))?;
            cmd_train(&cfg, &spec)
        }
        Command::Predict {
            common,
            checkpoint,
            input,
        } => {
            let mut f = Flags::new(&common);
            f.path("checkpoint", &checkpoint);
            f.path("input", &input);
            let (cfg, spec) = resolve(RunConfig::default(), &common, f)?;
            cmd_predict(&cfg, spec.as_ref())
        }
        Command::Eval {
            common,
            checkpoint,
            data,
            horizons,
            stride,
            table,
        } => {
            let mut f = Flags::new(&common);
            f.path("checkpoint", &checkpoint);
            f.path("data", &data);
            if let Some(h) = horizons {
                let h: Vec<String> = h.iter().map(f64::to_string).collect();
                f.opt("horizons_ms", Some(h.join(",")));
            }
            f.opt("stride", stride);
            f.path("table", &table);
            let (cfg, spec) = resolve(RunConfig::default(), &common, f)?;
            cmd_eval(&cfg, spec.as_ref())
        }
        Command::Gradcheck {
            common,
            model,
            joints,
        } => {
            let mut f = Flags::new(&common);
            f.model(&model);
            f.opt("joints", joints);
            let (cfg, spec) = resolve(tiny_defaults(), &common, f)?;
            cmd_gradcheck(&cfg, spec.as_ref())
        }
        Command::Synth {
            common,
            count,
            length,
            scale,
        } => {
            let mut f = Flags::new(&common);
            f.opt("count", count);
            f.opt("length", length);
            f.opt("scale", scale);
            let (cfg, spec) = resolve(RunConfig::default(), &common, f)?;
            cmd_synth(&cfg, spec.as_ref())
        }
        Command::Augment { common, data, input } => {
            let mut f = Flags::new(&common);
            f.path("data", &data);
            f.path("input", &input);
            let (cfg, spec) = resolve(RunConfig::default(), &common, f)?;
            let spec = spec.ok_or_else(|| invalid("augment needs a skeleton"))?;
            cmd_augment(&cfg, &spec)
        }
        Command::Params {
            common,
            model,
            joints,
        } => {
            let mut f = Flags::new(&common);
            f.model(&model);
            f.opt("joints", joints);
            let (cfg, _) = resolve(RunConfig::default(), &common, f)?;
            println!("{}", cfg.model.count_params());
            Ok(Outcome::Success)
        }
    }
}
