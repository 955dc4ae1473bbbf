//! Plain-text motion sequence files.
//!
//! ```text
//! J 3 T 2 FPS 25 ACTION walking
//! x0 y0 z0 x1 y1 z1 x2 y2 z2      # frame 0
//! x0 y0 z0 x1 y1 z1 x2 y2 z2      # frame 1
//! ```

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::skeleton::MotionSequence;
use crate::tensor::Tensor;

pub fn parse_sequence<S: Scalar>(text: &str, origin: &Path) -> Result<MotionSequence<S>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if !(toks.len() == 6 || toks.len() == 8) {
        return Err(err(1, format!("malformed header {header:?}")));
    }
    let field = |i: usize, key: &str| -> Result<usize> {
        if toks[i] != key {
            return Err(err(1, format!("expected {key}, found {:?}", toks[i])));
        }
        toks[i + 1]
            .parse::<usize>()
            .map_err(|e| err(1, format!("bad {key} value {:?}: {e}", toks[i + 1])))
    };
    let joints = field(0, "J")?;
    let frames = field(2, "T")?;
    let fps = field(4, "FPS")?;
    let action = if toks.len() == 8 {
        if toks[6] != "ACTION" {
            return Err(err(1, format!("expected ACTION, found {:?}", toks[6])));
        }
        Some(toks[7].to_string())
    } else {
        None
    };
    if joints == 0 || frames == 0 || fps == 0 {
        return Err(err(1, "J, T and FPS must be positive".into()));
    }
    let fps = u32::try_from(fps).map_err(|_| err(1, "FPS too large".into()))?;

    let mut data = Tensor::zeros(&[joints, 3, frames]);
    let mut seen = 0;
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if seen == frames {
            return Err(err(i + 1, format!("more than the {frames} declared frames")));
        }
        let values: Vec<&str> = line.split_whitespace().collect();
        if values.len() != 3 * joints {
            return Err(err(
                i + 1,
                format!("expected {} values, found {}", 3 * joints, values.len()),
            ));
        }
        for (k, v) in values.iter().enumerate() {
            let x: S = v
                .parse()
                .map_err(|_| err(i + 1, format!("bad number {v:?}")))?;
            if !x.is_finite() {
                return Err(err(i + 1, format!("non-finite value {v:?}")));
            }
            data.set3(k / 3, k % 3, seen, x);
        }
        seen += 1;
    }
    if seen != frames {
        return Err(err(
            text.lines().count(),
            format!("header declares {frames} frames, found {seen}"),
        ));
    }
    let mut seq = MotionSequence::new(data, fps)?;
    seq.action = action;
    Ok(seq)
}

pub fn format_sequence<S: Scalar>(seq: &MotionSequence<S>) -> String {
    let (j, t) = (seq.joints(), seq.frames());
    let mut s = format!("J {j} T {t} FPS {}", seq.fps);
    if let Some(a) = &seq.action {
        s.push_str(&format!(" ACTION {a}"));
    }
    s.push('\n');
    let prec = S::ROUNDTRIP_DIGITS - 1;
    for ti in 0..t {
        let row: Vec<String> = (0..j)
            .flat_map(|ji| (0..3).map(move |d| (ji, d)))
            .map(|(ji, d)| format!("{:.*e}", prec, seq.get(ji, d, ti)))
            .collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn read_sequence<S: Scalar>(path: &Path) -> Result<MotionSequence<S>> {
    parse_sequence(&std::fs::read_to_string(path)?, path)
}

pub fn write_sequence<S: Scalar>(seq: &MotionSequence<S>, path: &Path) -> Result<()> {
    std::fs::write(path, format_sequence(seq))?;
    Ok(())
}

/// Sequence files (`*.seq`) directly inside `dir`, sorted by file name.
pub fn list_sequence_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "seq"))
        .collect();
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_header_and_rows() {
        let text = "J 1 T 2 FPS 25 ACTION walk\n1 2 3\n4 5 6\n";
        let seq: MotionSequence<f64> = parse_sequence(text, Path::new("a.seq")).unwrap();
        assert_eq!(seq.joints(), 1);
        assert_eq!(seq.frames(), 2);
        assert_eq!(seq.action.as_deref(), Some("walk"));
        assert_eq!(seq.get(0, 2, 1), 6.0);
    }

    #[test]
    fn rejects_wrong_counts() {
        let p = Path::new("b.seq");
        assert!(parse_sequence::<f64>("J 1 T 2 FPS 25\n1 2 3\n", p).is_err());
        assert!(parse_sequence::<f64>("J 1 T 1 FPS 25\n1 2\n", p).is_err());
        assert!(parse_sequence::<f64>("J 1 T 1 FPS 25\n1 2 3\n4 5 6\n", p).is_err());
        assert!(parse_sequence::<f64>("J 1 T 1 FPS 25\n1 2 x\n", p).is_err());
        assert!(parse_sequence::<f64>("J 1 X 1 FPS 25\n1 2 3\n", p).is_err());
        assert!(parse_sequence::<f64>("J 1 T 1 FPS 25\nNaN 2 3\n", p).is_err());
    }

    #[test]
    fn awkward_values_roundtrip_exactly() {
        let vals = [0.1, -1.0 / 3.0, 1e-300, 123456.789012345678, f64::MIN_POSITIVE, -0.0];
        let data = Tensor::from_vec(&[2, 3, 1], vals.to_vec()).unwrap();
        let seq = MotionSequence::new(data, 50).unwrap();
        let back: MotionSequence<f64> = parse_sequence(&format_sequence(&seq), Path::new("c")).unwrap();
        for (a, b) in back.data().data().iter().zip(vals) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
