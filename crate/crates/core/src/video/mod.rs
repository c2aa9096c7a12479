//! Frame sequences, labelled synthetic videos, and sliding-window clips.

pub mod pnm;
pub mod synthetic;

use std::fmt;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub use pnm::{load_frames, read_ppm, save_frames, write_ppm};
pub use synthetic::{gen_synthetic, ActionEntry, ActionScript, ShapeParams};

/// Action class identifier. Non-negative ids are real actions; two negative
/// ids are reserved for inactivity gaps and the end of a video.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassId(pub i32);

impl ClassId {
    /// Inactivity between two actions.
    pub const GAP: ClassId = ClassId(-1);
    /// Nothing follows: the video ends.
    pub const END: ClassId = ClassId(-2);

    pub fn is_action(self) -> bool {
        self.0 >= 0
    }

    /// Index into a class table; `None` for GAP/END.
    pub fn index(self) -> Option<usize> {
        self.is_action().then_some(self.0 as usize)
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

pub const DEFAULT_FPS: u32 = 30;

/// Ordered RGB frames (3×H×W, values in [0,1]) with optional per-frame labels.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSequence {
    pub name: String,
    pub fps: u32,
    frames: Vec<Tensor<f32>>,
    labels: Option<Vec<ClassId>>,
}

impl VideoSequence {
    pub fn new(name: impl Into<String>, frames: Vec<Tensor<f32>>, fps: u32) -> Result<Self> {
        let name = name.into();
        let first = frames
            .first()
            .ok_or_else(|| Error::invalid(format!("video `{name}` has no frames")))?;
        let (c, _, _) = first.dims3()?;
        if c != 3 {
            return Err(Error::shape(format!("frames must have 3 channels, got {c}")));
        }
        if let Some((i, f)) = frames
            .iter()
            .enumerate()
            .find(|(_, f)| f.shape() != first.shape())
        {
            return Err(Error::shape(format!(
                "frame {i} of `{name}` is {:?}, expected {:?}",
                f.shape(),
                first.shape()
            )));
        }
        Ok(VideoSequence {
            name,
            fps,
            frames,
            labels: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<ClassId>) -> Result<Self> {
        if labels.len() != self.frames.len() {
            return Err(Error::invalid(format!(
                "{} labels for {} frames",
                labels.len(),
                self.frames.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn frames(&self) -> &[Tensor<f32>] {
        &self.frames
    }

    pub fn labels(&self) -> Option<&[ClassId]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `(H, W)` shared by every frame.
    pub fn frame_size(&self) -> (usize, usize) {
        let s = self.frames[0].shape();
        (s[1], s[2])
    }
}

/// Clip length and hop, both in frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub window: usize,
    pub stride: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            window: 30,
            stride: 5,
        }
    }
}

impl WindowSpec {
    pub fn new(window: usize, stride: usize) -> Result<Self> {
        if window < 2 || stride < 1 {
            return Err(Error::config(format!(
                "window must be ≥ 2 and stride ≥ 1 (got {window}, {stride})"
            )));
        }
        Ok(WindowSpec { window, stride })
    }

    /// Number of complete windows in a video of `len` frames.
    pub fn count(&self, len: usize) -> usize {
        if len < self.window {
            0
        } else {
            (len - self.window) / self.stride + 1
        }
    }
}

/// One clip cut from a video.
#[derive(Debug, Clone, Copy)]
pub struct Window<'a> {
    pub start: usize,
    pub frames: &'a [Tensor<f32>],
}

/// Cuts windows starting at `0, s, 2s, …`; windows running past the end are dropped.
pub fn sliding_windows<'a>(video: &'a VideoSequence, spec: WindowSpec) -> Result<Vec<Window<'a>>> {
    if video.len() < spec.window {
        return Err(Error::invalid(format!(
            "video `{}` has {} frames, shorter than window {}",
            video.name,
            video.len(),
            spec.window
        )));
    }
    Ok((0..spec.count(video.len()))
        .map(|i| {
            let start = i * spec.stride;
            Window {
                start,
                frames: &video.frames[start..start + spec.window],
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn blank_video(len: usize) -> VideoSequence {
        let frames = (0..len)
            .map(|i| Tensor::full(&[3, 2, 2], i as f32 / len as f32))
            .collect();
        VideoSequence::new("v", frames, DEFAULT_FPS).unwrap()
    }

    #[test]
    fn window_counts() {
        let spec = WindowSpec::default();
        assert_eq!(sliding_windows(&blank_video(75), spec).unwrap().len(), 10);
        let v30 = blank_video(30);
        let one = sliding_windows(&v30, spec).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].start, 0);
        assert_eq!(sliding_windows(&blank_video(34), spec).unwrap().len(), 1);
        assert!(sliding_windows(&blank_video(29), spec).is_err());
    }

    #[test]
    fn window_spec_validation() {
        assert!(WindowSpec::new(1, 1).is_err());
        assert!(WindowSpec::new(2, 0).is_err());
        assert!(WindowSpec::new(2, 1).is_ok());
    }

    #[test]
    fn rejects_inconsistent_frames_and_labels() {
        let frames = vec![Tensor::zeros(&[3, 2, 2]), Tensor::zeros(&[3, 2, 4])];
        assert!(VideoSequence::new("x", frames, 30).is_err());
        assert!(blank_video(3).with_labels(vec![ClassId(0); 2]).is_err());
        assert!(VideoSequence::new("x", vec![], 30).is_err());
    }

    proptest! {
        #[test]
        fn windows_are_arithmetic(len in 2usize..80, w in 2usize..20, s in 1usize..8) {
            prop_assume!(len >= w);
            let v = blank_video(len);
            let spec = WindowSpec::new(w, s).unwrap();
            let wins = sliding_windows(&v, spec).unwrap();
            prop_assert_eq!(wins.len(), (len - w) / s + 1);
            for (i, win) in wins.iter().enumerate() {
                prop_assert_eq!(win.start, i * s);
                prop_assert_eq!(win.frames.len(), w);
                prop_assert!(win.start + w <= len);
            }
        }
    }
}
