//! Skeleton topology, motion sequences, and their trajectory layouts.
//!
//! A [`MotionSequence`] stores coordinates as `J × 3 × T`, so entry
//! `(j, d, t)` sits at `(3j + d)·T + t`. Flattening the first two axes gives
//! the global sub-joint matrix (`3J × T`, joint-major rows) used everywhere
//! in the network without any copying logic of its own.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonSpec {
    pub joints: usize,
    pub bones: Vec<(usize, usize)>,
    pub symmetric_pairs: Vec<(usize, usize)>,
    pub hip: usize,
    pub fps: u32,
    /// Explicit (left, right) joints used to find the facing direction.
    pub facing_override: Option<(usize, usize)>,
}

impl SkeletonSpec {
    pub fn new(
        joints: usize,
        bones: Vec<(usize, usize)>,
        symmetric_pairs: Vec<(usize, usize)>,
        hip: usize,
        fps: u32,
    ) -> Result<Self> {
        let spec = Self {
            joints,
            bones,
            symmetric_pairs,
            hip,
            fps,
            facing_override: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.joints;
        let bad = |msg: String| Err(Error::Skeleton(msg));
        if j == 0 {
            return bad("joint count must be positive".into());
        }
        if self.fps == 0 {
            return bad("fps must be positive".into());
        }
        if self.hip >= j {
            return bad(format!("hip index {} out of range for {j} joints", self.hip));
        }
        if self.bones.len() != j - 1 {
            return bad(format!(
                "a tree over {j} joints needs {} bones, got {}",
                j - 1,
                self.bones.len()
            ));
        }
        let mut parent: Vec<usize> = (0..j).collect();
        fn root(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for &(a, b) in &self.bones {
            if a >= j || b >= j || a == b {
                return bad(format!("invalid bone ({a}, {b})"));
            }
            let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
            if ra == rb {
                return bad(format!("bone ({a}, {b}) closes a cycle"));
            }
            parent[ra] = rb;
        }
        let mut seen = HashSet::new();
        for &(l, r) in &self.symmetric_pairs {
            if l >= j || r >= j {
                return bad(format!("symmetric pair ({l}, {r}) out of range"));
            }
            if l == r {
                return bad(format!("symmetric pair ({l}, {r}) pairs a joint with itself"));
            }
            if !seen.insert(l) || !seen.insert(r) {
                return bad(format!("joint repeated in symmetric pair ({l}, {r})"));
            }
        }
        if let Some((l, r)) = self.facing_override {
            if l >= j || r >= j || l == r {
                return bad(format!("invalid facing pair ({l}, {r})"));
            }
        }
        Ok(())
    }

    /// Number of global sub-joint trajectories, `3J`.
    pub fn subjoints(&self) -> usize {
        3 * self.joints
    }

    /// Left/right joints that define the facing direction.
    ///
    /// Defaults to the first symmetric pair whose joints are both bone
    /// neighbours of the hip, then to the first symmetric pair at all.
    pub fn facing_pair(&self) -> Option<(usize, usize)> {
        if self.facing_override.is_some() {
            return self.facing_override;
        }
        let hip_neighbour = |k: usize| {
            self.bones
                .iter()
                .any(|&(a, b)| (a == self.hip && b == k) || (b == self.hip && a == k))
        };
        self.symmetric_pairs
            .iter()
            .copied()
            .find(|&(l, r)| hip_neighbour(l) && hip_neighbour(r))
            .or_else(|| self.symmetric_pairs.first().copied())
    }

    /// Parses the line-oriented skeleton format (`J`, `FPS`, `HIP`, `BONE`, `SYM`, `FACING`).
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            msg,
        };
        let (mut joints, mut fps, mut hip) = (None, None, None);
        let mut bones = Vec::new();
        let mut sym = Vec::new();
        let mut facing = None;
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            let nums = |n: usize| -> Result<Vec<usize>> {
                if toks.len() != n + 1 {
                    return Err(err(lineno, format!("{} expects {n} integer(s)", toks[0])));
                }
                toks[1..]
                    .iter()
                    .map(|t| {
                        t.parse::<usize>()
                            .map_err(|e| err(lineno, format!("bad integer {t:?}: {e}")))
                    })
                    .collect()
            };
            match toks[0] {
                "J" => joints = Some(nums(1)?[0]),
                "FPS" => fps = Some(nums(1)?[0]),
                "HIP" => hip = Some(nums(1)?[0]),
                "BONE" => {
                    let v = nums(2)?;
                    bones.push((v[0], v[1]));
                }
                "SYM" => {
                    let v = nums(2)?;
                    sym.push((v[0], v[1]));
                }
                "FACING" => {
                    let v = nums(2)?;
                    facing = Some((v[0], v[1]));
                }
                other => return Err(err(lineno, format!("unknown keyword {other:?}"))),
            }
        }
        let missing = |k: &str| err(0, format!("missing {k} line"));
        let fps = fps.ok_or_else(|| missing("FPS"))?;
        let spec = Self {
            joints: joints.ok_or_else(|| missing("J"))?,
            bones,
            symmetric_pairs: sym,
            hip: hip.ok_or_else(|| missing("HIP"))?,
            fps: u32::try_from(fps).map_err(|_| err(0, "FPS too large".into()))?,
            facing_override: facing,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("J {}\nFPS {}\nHIP {}\n", self.joints, self.fps, self.hip);
        for (a, b) in &self.bones {
            s.push_str(&format!("BONE {a} {b}\n"));
        }
        for (l, r) in &self.symmetric_pairs {
            s.push_str(&format!("SYM {l} {r}\n"));
        }
        if let Some((l, r)) = self.facing_override {
            s.push_str(&format!("FACING {l} {r}\n"));
        }
        s
    }

    /// Bone endpoints of the symmetric partner of each bone, when it has one.
    pub fn mirrored_bone(&self, bone: (usize, usize)) -> (usize, usize) {
        let partner = |k: usize| {
            self.symmetric_pairs
                .iter()
                .find_map(|&(l, r)| {
                    if l == k {
                        Some(r)
                    } else if r == k {
                        Some(l)
                    } else {
                        None
                    }
                })
                .unwrap_or(k)
        };
        (partner(bone.0), partner(bone.1))
    }

    /// Bones that touch at least one joint of a symmetric pair.
    pub fn symmetric_bones(&self) -> Vec<usize> {
        let paired: BTreeSet<usize> = self
            .symmetric_pairs
            .iter()
            .flat_map(|&(l, r)| [l, r])
            .collect();
        self.bones
            .iter()
            .enumerate()
            .filter(|(_, (a, b))| paired.contains(a) || paired.contains(b))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Coordinates of `J` joints over `T` frames, stored as `J × 3 × T`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence<S> {
    data: Tensor<S>,
    pub fps: u32,
    pub action: Option<String>,
    /// Set when canonicalization could not determine a facing direction.
    pub rotation_skipped: bool,
}

impl<S: Scalar> MotionSequence<S> {
    pub fn new(data: Tensor<S>, fps: u32) -> Result<Self> {
        if data.rank() != 3 || data.shape()[1] != 3 {
            return Err(Error::shape(
                "motion_sequence",
                format!("expected J×3×T, got {:?}", data.shape()),
            ));
        }
        if !data.all_finite() {
            return Err(Error::InvalidArgument("non-finite coordinate".into()));
        }
        Ok(Self {
            data,
            fps,
            action: None,
            rotation_skipped: false,
        })
    }

    /// Builds a sequence from per-frame `J × 3` matrices.
    pub fn from_frames(frames: &[Tensor<S>], fps: u32) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::InvalidArgument("sequence needs at least one frame".into()));
        };
        let j = first.rows();
        let t = frames.len();
        let mut data = Tensor::zeros(&[j, 3, t]);
        for (ti, f) in frames.iter().enumerate() {
            if f.shape() != [j, 3] {
                return Err(Error::shape(
                    "from_frames",
                    format!("frame {ti} has shape {:?}, expected [{j}, 3]", f.shape()),
                ));
            }
            for ji in 0..j {
                for d in 0..3 {
                    data.set3(ji, d, ti, f.at2(ji, d));
                }
            }
        }
        Self::new(data, fps)
    }

    pub fn joints(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn data(&self) -> &Tensor<S> {
        &self.data
    }

    pub fn get(&self, joint: usize, axis: usize, t: usize) -> S {
        self.data.at3(joint, axis, t)
    }

    /// Joint positions of frame `t` as a `J × 3` matrix.
    pub fn frame(&self, t: usize) -> Tensor<S> {
        let j = self.joints();
        let mut f = Tensor::zeros(&[j, 3]);
        for ji in 0..j {
            for d in 0..3 {
                f.set2(ji, d, self.get(ji, d, t));
            }
        }
        f
    }

    pub fn all_frames(&self) -> Vec<Tensor<S>> {
        (0..self.frames()).map(|t| self.frame(t)).collect()
    }

    /// Rebuilds the sequence from transformed frames, keeping its metadata.
    pub fn with_frames(&self, frames: &[Tensor<S>]) -> Result<Self> {
        let mut out = Self::from_frames(frames, self.fps)?;
        out.action = self.action.clone();
        out.rotation_skipped = self.rotation_skipped;
        Ok(out)
    }

    /// Frames `start..start + len` as a new sequence.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.frames() {
            return Err(Error::InvalidArgument(format!(
                "window {start}..{} outside {} frames",
                start + len,
                self.frames()
            )));
        }
        let frames: Vec<_> = (start..start + len).map(|t| self.frame(t)).collect();
        self.with_frames(&frames)
    }

    /// Joint-major `3J × T` matrix: row `3j + d` is the axis-`d` trajectory of joint `j`.
    pub fn to_global_subjoint(&self) -> Tensor<S> {
        let (j, t) = (self.joints(), self.frames());
        self.data.reshape(&[3 * j, t]).expect("same element count")
    }

    /// Inverse of [`MotionSequence::to_global_subjoint`].
    pub fn from_global_subjoint(m: &Tensor<S>, fps: u32) -> Result<Self> {
        if m.rank() != 2 || m.rows() % 3 != 0 {
            return Err(Error::shape(
                "from_global_subjoint",
                format!("row count of {:?} must be a multiple of 3", m.shape()),
            ));
        }
        let (n, t) = (m.rows(), m.cols());
        Self::new(m.reshape(&[n / 3, 3, t])?, fps)
    }

    /// Moves the hip to the origin in every frame and turns the body to face +y.
    ///
    /// One rotation about +z, taken from the first frame's left→right facing
    /// pair, is applied to the whole sequence so that pair points along +x.
    pub fn canonicalize(&self, spec: &SkeletonSpec) -> Result<Self> {
        if spec.hip >= self.joints() || spec.joints != self.joints() {
            return Err(Error::Skeleton(format!(
                "skeleton with {} joints (hip {}) does not fit a {}-joint sequence",
                spec.joints,
                spec.hip,
                self.joints()
            )));
        }
        let centred: Vec<Tensor<S>> = self
            .all_frames()
            .into_iter()
            .map(|f| {
                let h = [f.at2(spec.hip, 0), f.at2(spec.hip, 1), f.at2(spec.hip, 2)];
                let mut g = f.clone();
                for ji in 0..f.rows() {
                    for (d, hd) in h.iter().enumerate() {
                        g.set2(ji, d, f.at2(ji, d) - *hd);
                    }
                }
                g
            })
            .collect();

        let rotation = spec.facing_pair().and_then(|(l, r)| {
            let f0 = &centred[0];
            let vx = f0.at2(r, 0) - f0.at2(l, 0);
            let vy = f0.at2(r, 1) - f0.at2(l, 1);
            let len = (vx * vx + vy * vy).sqrt();
            let scale = f0.max_abs().max(S::one());
            if len <= S::epsilon().sqrt() * scale {
                None
            } else {
                Some((vx / len, vy / len))
            }
        });

        let mut out = match rotation {
            Some((c, s)) => {
                // rotate by -θ where (c, s) = (cos θ, sin θ)
                let frames: Vec<_> = centred
                    .iter()
                    .map(|f| {
                        let mut g = f.clone();
                        for ji in 0..f.rows() {
                            let (x, y) = (f.at2(ji, 0), f.at2(ji, 1));
                            g.set2(ji, 0, c * x + s * y);
                            g.set2(ji, 1, c * y - s * x);
                        }
                        g
                    })
                    .collect();
                self.with_frames(&frames)?
            }
            None => self.with_frames(&centred)?,
        };
        out.rotation_skipped = rotation.is_none();
        Ok(out)
    }

    /// Converts every coordinate to another scalar type.
    pub fn cast<T: Scalar>(&self) -> MotionSequence<T> {
        MotionSequence {
            data: self.data.cast(),
            fps: self.fps,
            action: self.action.clone(),
            rotation_skipped: self.rotation_skipped,
        }
    }
}

/// Length of every bone in one `J × 3` frame, in bone-list order.
pub fn bone_lengths<S: Scalar>(frame: &Tensor<S>, spec: &SkeletonSpec) -> Vec<S> {
    spec.bones
        .iter()
        .map(|&(a, b)| {
            (0..3)
                .map(|d| {
                    let diff = frame.at2(a, d) - frame.at2(b, d);
                    diff * diff
                })
                .fold(S::zero(), |acc, v| acc + v)
                .sqrt()
        })
        .collect()
}

/// Number of future frames covering `ms` milliseconds at `fps`.
pub fn ms_to_frame(ms: f64, fps: u32) -> Result<usize> {
    if !(ms > 0.0) || !ms.is_finite() {
        return Err(Error::InvalidArgument(format!("horizon {ms} ms must be positive")));
    }
    let frame = (ms * f64::from(fps) / 1000.0).round();
    if frame < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "horizon {ms} ms is shorter than one frame at {fps} fps"
        )));
    }
    Ok(frame as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain3() -> SkeletonSpec {
        SkeletonSpec::new(3, vec![(0, 1), (0, 2)], vec![(1, 2)], 0, 25).unwrap()
    }

    #[test]
    fn rejects_cycles_and_duplicate_pairs() {
        assert!(SkeletonSpec::new(3, vec![(0, 1), (1, 0)], vec![], 0, 25).is_err());
        assert!(SkeletonSpec::new(3, vec![(0, 1)], vec![], 0, 25).is_err());
        assert!(SkeletonSpec::new(4, vec![(0, 1), (0, 2), (0, 3)], vec![(1, 2), (2, 3)], 0, 25).is_err());
        assert!(SkeletonSpec::new(3, vec![(0, 1), (0, 2)], vec![(1, 1)], 0, 25).is_err());
        assert!(SkeletonSpec::new(3, vec![(0, 1), (0, 2)], vec![], 3, 25).is_err());
    }

    #[test]
    fn parses_text_format_with_comments() {
        let text = "# demo\nJ 3\nFPS 25\nHIP 0\nBONE 0 1\nBONE 0 2 # right\nSYM 1 2\n";
        let spec = SkeletonSpec::parse(text, Path::new("demo.skel")).unwrap();
        assert_eq!(spec, chain3());
        let again = SkeletonSpec::parse(&spec.to_text(), Path::new("x")).unwrap();
        assert_eq!(again, spec);
    }

    #[test]
    fn parse_reports_line_of_bad_keyword() {
        let err = SkeletonSpec::parse("J 2\nFPS 25\nHOP 0\n", Path::new("s")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn single_joint_subjoint_rows_are_xyz() {
        let data = Tensor::from_vec(&[1, 3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let seq = MotionSequence::new(data, 25).unwrap();
        let m = seq.to_global_subjoint();
        assert_eq!(m.shape(), &[3, 2]);
        assert_eq!(m.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn subjoint_row_counts_follow_joint_count() {
        let seq = MotionSequence::<f64>::new(Tensor::zeros(&[22, 3, 4]), 25).unwrap();
        assert_eq!(seq.to_global_subjoint().rows(), 66);
        let m = Tensor::<f64>::zeros(&[75, 4]);
        assert_eq!(MotionSequence::from_global_subjoint(&m, 25).unwrap().joints(), 25);
        assert!(MotionSequence::from_global_subjoint(&Tensor::<f64>::zeros(&[7, 4]), 25).is_err());
    }

    #[test]
    fn row_permutation_moves_joints() {
        // swap the row blocks of joints 0 and 1
        let mut rows = Vec::new();
        for r in 0..6 {
            rows.push(vec![r as f64, 10.0 + r as f64]);
        }
        let m = Tensor::from_rows(&rows);
        let perm = [3, 4, 5, 0, 1, 2];
        let permuted = Tensor::from_rows(&perm.iter().map(|&p| rows[p].clone()).collect::<Vec<_>>());
        let a = MotionSequence::from_global_subjoint(&m, 25).unwrap();
        let b = MotionSequence::from_global_subjoint(&permuted, 25).unwrap();
        for d in 0..3 {
            for t in 0..2 {
                assert_eq!(a.get(0, d, t), b.get(1, d, t));
                assert_eq!(a.get(1, d, t), b.get(0, d, t));
            }
        }
    }

    #[test]
    fn bone_length_hand_values() {
        let spec = SkeletonSpec::new(2, vec![(0, 1)], vec![], 0, 25).unwrap();
        let f = Tensor::from_rows(&[vec![0.0, 0.0, 0.0], vec![3.0, 4.0, 0.0]]);
        assert_eq!(bone_lengths(&f, &spec), vec![5.0]);
        let z = Tensor::from_rows(&[vec![1.0, 1.0, 1.0], vec![1.0, 1.0, 1.0]]);
        assert_eq!(bone_lengths(&z, &spec), vec![0.0]);
    }

    #[test]
    fn horizon_frames_at_25fps() {
        assert_eq!(ms_to_frame(400.0, 25).unwrap(), 10);
        assert_eq!(ms_to_frame(80.0, 25).unwrap(), 2);
        assert_eq!(ms_to_frame(1000.0, 25).unwrap(), 25);
        assert!(ms_to_frame(10.0, 25).is_err());
        assert!(ms_to_frame(-5.0, 25).is_err());
    }

    #[test]
    fn canonicalize_centres_hip_and_aligns_facing() {
        let spec = chain3();
        // hips along +y (left at y=-1, right at y=+1), translated by (5, 5, 1)
        let f = Tensor::from_rows(&[
            vec![5.0, 5.0, 1.0],
            vec![5.0, 4.0, 1.0],
            vec![5.0, 6.0, 1.0],
        ]);
        let seq: MotionSequence<f64> = MotionSequence::from_frames(&[f.clone(), f], 25).unwrap();
        let c = seq.canonicalize(&spec).unwrap();
        assert!(!c.rotation_skipped);
        for t in 0..2 {
            for d in 0..3 {
                assert_eq!(c.get(0, d, t), 0.0);
            }
            assert!((c.get(1, 0, t) + 1.0).abs() < 1e-12);
            assert!((c.get(2, 0, t) - 1.0).abs() < 1e-12);
            assert!(c.get(2, 1, t).abs() < 1e-12);
        }
    }

    #[test]
    fn canonicalize_flags_degenerate_facing() {
        let spec = chain3();
        // both hips directly above the root: no ground-plane direction
        let f = Tensor::from_rows(&[
            vec![0.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.0, 0.0, 2.0],
        ]);
        let seq = MotionSequence::from_frames(&[f], 25).unwrap();
        let c = seq.canonicalize(&spec).unwrap();
        assert!(c.rotation_skipped);
        assert_eq!(c.data(), seq.data());
    }
}
