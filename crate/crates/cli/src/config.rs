//! Flat `key = value` run configuration.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mtgcn::evaluation::DEFAULT_HORIZONS_MS;
use mtgcn::{Error, ModelConfig, Result, TrainConfig};

/// Every setting a command can read, after defaults, config file and flags are merged.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Window stride for sample extraction; `None` means `T_out`.
    pub stride: Option<usize>,
    pub skeleton: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub table: Option<PathBuf>,
    pub horizons_ms: Vec<f64>,
    pub count: usize,
    pub length: usize,
    pub scale: f64,
    explicit: BTreeSet<String>,
}

pub const KEYS: [&str; 27] = [
    "joints",
    "input_frames",
    "output_frames",
    "hidden",
    "layers",
    "global_residual",
    "batch_size",
    "lr0",
    "lr_decay",
    "clip_norm",
    "lambda",
    "epochs",
    "seed",
    "augment_mirror",
    "bone_loss",
    "stride",
    "skeleton",
    "data",
    "checkpoint",
    "input",
    "out",
    "log",
    "table",
    "horizons_ms",
    "count",
    "length",
    "scale",
];

const MODEL_KEYS: [&str; 6] = ["joints", "input_frames", "output_frames", "hidden", "layers", "global_residual"];

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            stride: None,
            skeleton: None,
            data: None,
            checkpoint: None,
            input: None,
            out: None,
            log: None,
            table: None,
            horizons_ms: DEFAULT_HORIZONS_MS.to_vec(),
            count: 20,
            length: 20,
            scale: 1.0,
            explicit: BTreeSet::new(),
        }
    }
}

fn invalid(key: &str, value: &str, what: &str) -> Error {
    Error::InvalidArgument(format!("{key} = {value:?}: expected {what}"))
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value.trim().parse().map_err(|_| invalid(key, value, what))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(invalid(key, value, "a boolean")),
    }
}

fn parse_path(value: &str) -> Option<PathBuf> {
    let v = value.trim();
    (!v.is_empty() && v != "-").then(|| PathBuf::from(v))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or_else(|| "-".to_string(), |p| p.display().to_string())
}

impl RunConfig {
    /// Assigns one setting by name; the key is remembered as explicitly set.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (m, t) = (&mut self.model, &mut self.train);
        match key {
            "joints" => m.joints = parse_num(key, value, "a positive integer")?,
            "input_frames" => m.input_frames = parse_num(key, value, "a positive integer")?,
            "output_frames" => m.output_frames = parse_num(key, value, "a positive integer")?,
            "hidden" => m.hidden = parse_num(key, value, "a positive integer")?,
            "layers" => m.layers = parse_num(key, value, "an integer")?,
            "global_residual" => m.use_global_residual = parse_bool(key, value)?,
            "batch_size" => t.batch_size = parse_num(key, value, "a positive integer")?,
            "lr0" => t.lr0 = parse_num(key, value, "a number")?,
            "lr_decay" => t.lr_decay = parse_num(key, value, "a number")?,
            "clip_norm" => t.clip_norm = parse_num(key, value, "a number")?,
            "lambda" => t.lambda = parse_num(key, value, "a number")?,
            "epochs" => t.epochs = parse_num(key, value, "an integer")?,
            "seed" => t.seed = parse_num(key, value, "an unsigned integer")?,
            "augment_mirror" => t.augment_mirror = parse_bool(key, value)?,
            "bone_loss" => t.use_bone_loss = parse_bool(key, value)?,
            "stride" => {
                self.stride = match value.trim() {
                    "-" | "" => None,
                    v => Some(parse_num(key, v, "a positive integer or -")?),
                }
            }
            "skeleton" => self.skeleton = parse_path(value),
            "data" => self.data = parse_path(value),
            "checkpoint" => self.checkpoint = parse_path(value),
            "input" => self.input = parse_path(value),
            "out" => self.out = parse_path(value),
            "log" => self.log = parse_path(value),
            "table" => self.table = parse_path(value),
            "horizons_ms" => {
                self.horizons_ms = value
                    .split(',')
                    .map(|h| parse_num(key, h, "comma-separated milliseconds"))
                    .collect::<Result<_>>()?
            }
            "count" => self.count = parse_num(key, value, "an integer")?,
            "length" => self.length = parse_num(key, value, "a positive integer")?,
            "scale" => self.scale = parse_num(key, value, "a number")?,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown setting {key:?}; known settings: {}",
                    KEYS.join(", ")
                )))
            }
        }
        self.explicit.insert(key.to_string());
        Ok(())
    }

    /// Applies a `key = value` file; blank lines and `#` comments are ignored.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected key = value, found {line:?}")))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| parse_err(e.to_string()))?;
        }
        Ok(())
    }

    /// Applies `KEY=VALUE` overrides given on the command line.
    pub fn apply_overrides(&mut self, pairs: &[String]) -> Result<()> {
        for p in pairs {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("--set expects KEY=VALUE, got {p:?}")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    pub fn model_is_explicit(&self) -> bool {
        MODEL_KEYS.iter().any(|k| self.is_explicit(k))
    }

    pub fn stride(&self) -> usize {
        self.stride.unwrap_or(self.model.output_frames)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.stride == Some(0) {
            return Err(Error::InvalidArgument("stride must be positive".into()));
        }
        if self.horizons_ms.is_empty() {
            return Err(Error::InvalidArgument("horizons_ms is empty".into()));
        }
        Ok(())
    }

    /// The resolved settings as a config file that reproduces them.
    pub fn to_text(&self) -> String {
        let (m, t) = (&self.model, &self.train);
        let horizons: Vec<String> = self.horizons_ms.iter().map(|h| h.to_string()).collect();
        let values: [String; 27] = [
            m.joints.to_string(),
            m.input_frames.to_string(),
            m.output_frames.to_string(),
            m.hidden.to_string(),
            m.layers.to_string(),
            m.use_global_residual.to_string(),
            t.batch_size.to_string(),
            t.lr0.to_string(),
            t.lr_decay.to_string(),
            t.clip_norm.to_string(),
            t.lambda.to_string(),
            t.epochs.to_string(),
            t.seed.to_string(),
            t.augment_mirror.to_string(),
            t.use_bone_loss.to_string(),
            self.stride().to_string(),
            show_path(&self.skeleton),
            show_path(&self.data),
            show_path(&self.checkpoint),
            show_path(&self.input),
            show_path(&self.out),
            show_path(&self.log),
            show_path(&self.table),
            horizons.join(","),
            self.count.to_string(),
            self.length.to_string(),
            self.scale.to_string(),
        ];
        let mut s = String::new();
        for (k, v) in KEYS.iter().zip(values) {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrips_through_file() {
        let mut c = RunConfig::default();
        c.set("hidden", "16").unwrap();
        c.set("horizons_ms", "80, 160").unwrap();
        c.set("skeleton", "s.txt").unwrap();
        c.set("augment_mirror", "off").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.cfg");
        std::fs::write(&p, c.to_text()).unwrap();
        let mut back = RunConfig::default();
        back.apply_file(&p).unwrap();
        assert_eq!(back.to_text(), c.to_text());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let mut c = RunConfig::default();
        assert!(c.set("hiden", "3").is_err());
        assert!(c.set("hidden", "x").is_err());
        assert!(c.set("augment_mirror", "maybe").is_err());
        assert!(c.apply_overrides(&["epochs".to_string()]).is_err());
    }

    #[test]
    fn file_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.cfg");
        std::fs::write(&p, "# comment\nhidden = 8\nlayers 2\n").unwrap();
        match RunConfig::default().apply_file(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn stride_defaults_to_output_frames() {
        let mut c = RunConfig::default();
        c.set("output_frames", "7").unwrap();
        assert_eq!(c.stride(), 7);
        c.set("stride", "2").unwrap();
        assert_eq!(c.stride(), 2);
    }
}
