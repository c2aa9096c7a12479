//! Labelled synthetic multi-action videos: a bright disc moving over a static
//! textured background, one motion pattern per action class.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::video::{ClassId, VideoSequence, DEFAULT_FPS};

/// The motion rendered for each action class id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Motion {
    TranslateRight,
    TranslateLeft,
    TranslateDown,
    Grow,
}

impl Motion {
    pub const ALL: [Motion; 4] = [
        Motion::TranslateRight,
        Motion::TranslateLeft,
        Motion::TranslateDown,
        Motion::Grow,
    ];

    pub fn from_class(class: ClassId) -> Result<Self> {
        class
            .index()
            .and_then(|i| Self::ALL.get(i).copied())
            .ok_or_else(|| Error::invalid(format!("unknown action class id {class}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Motion::TranslateRight => "translate-right",
            Motion::TranslateLeft => "translate-left",
            Motion::TranslateDown => "translate-down",
            Motion::Grow => "grow",
        }
    }
}

/// Names of the built-in classes, indexed by class id.
pub fn class_names() -> Vec<String> {
    Motion::ALL.iter().map(|m| m.name().to_string()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionEntry {
    pub class: ClassId,
    pub duration: usize,
    pub gap_after: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeParams {
    /// Disc radius in pixels; `None` scales with the frame (min(H, W) / 8).
    pub radius: Option<f32>,
    pub color: [f32; 3],
    /// Peak deviation of the background texture around its mean level.
    pub background_amplitude: f32,
    /// Random offset (pixels) applied to the fixed coordinate of each action.
    pub jitter: f32,
}

impl Default for ShapeParams {
    fn default() -> Self {
        ShapeParams {
            radius: None,
            color: [0.95, 0.85, 0.3],
            background_amplitude: 0.08,
            jitter: 3.0,
        }
    }
}

/// What happens in a synthetic video, in order.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionScript {
    pub entries: Vec<ActionEntry>,
    pub shape: ShapeParams,
    pub seed: u64,
}

impl ActionScript {
    pub fn new(entries: Vec<ActionEntry>, seed: u64) -> Self {
        ActionScript {
            entries,
            shape: ShapeParams::default(),
            seed,
        }
    }

    /// A random script of `n_actions` actions drawn from the first
    /// `n_classes` motions. Consecutive actions always differ in class.
    pub fn random(
        seed: u64,
        n_actions: usize,
        n_classes: usize,
        duration: (usize, usize),
        gap: (usize, usize),
    ) -> Result<Self> {
        if n_classes < 2 || n_classes > Motion::ALL.len() {
            return Err(Error::config(format!(
                "n_classes must be in 2..={}, got {n_classes}",
                Motion::ALL.len()
            )));
        }
        if duration.0 < 1 || duration.0 > duration.1 || gap.0 > gap.1 {
            return Err(Error::config("empty duration or gap range"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5c41_7000_0001);
        let mut entries: Vec<ActionEntry> = Vec::with_capacity(n_actions);
        for _ in 0..n_actions {
            let prev = entries.last().map(|e| e.class);
            let choices: Vec<i32> = (0..n_classes as i32)
                .filter(|&c| Some(ClassId(c)) != prev)
                .collect();
            let class = ClassId(*choices.choose(&mut rng).unwrap());
            entries.push(ActionEntry {
                class,
                duration: rng.gen_range(duration.0..=duration.1),
                gap_after: rng.gen_range(gap.0..=gap.1),
            });
        }
        Ok(ActionScript::new(entries, seed))
    }

    pub fn total_frames(&self) -> usize {
        self.entries.iter().map(|e| e.duration + e.gap_after).sum()
    }

    /// Flat `key = value` form: `seed`, `shape.*` and one
    /// `action.N = class,duration,gap_after` line per entry.
    pub fn to_text(&self) -> String {
        let s = &self.shape;
        let mut out = format!("seed = {}\n", self.seed);
        let radius = s.radius.map_or("auto".to_string(), |r| r.to_string());
        out += &format!("shape.radius = {radius}\n");
        out += &format!("shape.color = {},{},{}\n", s.color[0], s.color[1], s.color[2]);
        out += &format!("shape.background_amplitude = {}\n", s.background_amplitude);
        out += &format!("shape.jitter = {}\n", s.jitter);
        for (i, e) in self.entries.iter().enumerate() {
            out += &format!("action.{i} = {},{},{}\n", e.class, e.duration, e.gap_after);
        }
        out
    }

    /// Inverse of [`ActionScript::to_text`]; actions must be numbered from 0 in order.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut script = ActionScript::new(Vec::new(), 0);
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = || Error::Format {
                what: "action script",
                reason: format!("line {}: `{line}`", n + 1),
            };
            let (k, v) = line.split_once('=').ok_or_else(bad)?;
            let (k, v) = (k.trim(), v.trim());
            let floats = |v: &str| -> Result<Vec<f32>> {
                v.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect()
            };
            match k {
                "seed" => script.seed = v.parse().map_err(|_| bad())?,
                "shape.radius" if v == "auto" => script.shape.radius = None,
                "shape.radius" => script.shape.radius = Some(v.parse().map_err(|_| bad())?),
                "shape.color" => {
                    script.shape.color = floats(v)?.try_into().map_err(|_| bad())?;
                }
                "shape.background_amplitude" => {
                    script.shape.background_amplitude = v.parse().map_err(|_| bad())?
                }
                "shape.jitter" => script.shape.jitter = v.parse().map_err(|_| bad())?,
                _ => {
                    let idx: usize = k
                        .strip_prefix("action.")
                        .and_then(|i| i.parse().ok())
                        .ok_or_else(bad)?;
                    let parts: Vec<i64> = v
                        .split(',')
                        .map(|x| x.trim().parse().map_err(|_| bad()))
                        .collect::<Result<_>>()?;
                    if idx != script.entries.len() || parts.len() != 3 || parts[1] < 0 || parts[2] < 0 {
                        return Err(bad());
                    }
                    script.entries.push(ActionEntry {
                        class: ClassId(parts[0] as i32),
                        duration: parts[1] as usize,
                        gap_after: parts[2] as usize,
                    });
                }
            }
        }
        Ok(script)
    }
}

/// The static texture every frame of a video sits on.
pub fn background(seed: u64, h: usize, w: usize, amplitude: f32) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xbac6_9a0d);
    let base = [0.22f32, 0.25, 0.3];
    let waves: Vec<[f32; 4]> = (0..9)
        .map(|_| {
            [
                rng.gen_range(0.15..0.9),
                rng.gen_range(0.15..0.9),
                rng.gen_range(0.0..std::f32::consts::TAU),
                rng.gen_range(0.3..1.0),
            ]
        })
        .collect();
    Tensor::from_fn(&[3, h, w], |i| {
        let ch = i / (h * w);
        let y = ((i / w) % h) as f32;
        let x = (i % w) as f32;
        let mut v = 0.0;
        for [fy, fx, phase, amp] in &waves[ch * 3..ch * 3 + 3] {
            v += amp * (fy * y + fx * x + phase).sin();
        }
        base[ch] + amplitude * v / 3.0
    })
}

#[derive(Debug, Clone, Copy)]
struct Disc {
    cx: f32,
    cy: f32,
    r: f32,
}

fn render(bg: &Tensor<f32>, disc: Disc, color: [f32; 3]) -> Tensor<f32> {
    let (_, h, w) = bg.dims3().expect("background is C×H×W");
    let mut f = bg.clone();
    let hw = h * w;
    let d = f.data_mut();
    for y in 0..h {
        for x in 0..w {
            let dist = ((x as f32 - disc.cx).powi(2) + (y as f32 - disc.cy).powi(2)).sqrt();
            let alpha = (disc.r + 0.5 - dist).clamp(0.0, 1.0);
            if alpha > 0.0 {
                for (ch, &c) in color.iter().enumerate() {
                    let p = &mut d[ch * hw + y * w + x];
                    *p = *p * (1.0 - alpha) + c * alpha;
                }
            }
        }
    }
    f
}

/// Coverage of the disc at each pixel; exposed for tests and tools that need
/// the exact shape mask of a synthetic frame.
pub fn disc_alpha(frame: &Tensor<f32>, bg: &Tensor<f32>, color: [f32; 3]) -> Vec<f32> {
    let hw = bg.len() / 3;
    (0..hw)
        .map(|i| {
            let denom = color[0] - bg.data()[i];
            ((frame.data()[i] - bg.data()[i]) / denom).clamp(0.0, 1.0)
        })
        .collect()
}

/// Renders `script` at `h`×`w`. Labels are the action class per frame, with
/// gap frames labelled [`ClassId::GAP`].
pub fn gen_synthetic(script: &ActionScript, h: usize, w: usize) -> Result<VideoSequence> {
    if h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 {
        return Err(Error::config(format!(
            "frame size must be positive multiples of 8, got {h}×{w}"
        )));
    }
    if script.entries.is_empty() {
        return Err(Error::invalid("script has no actions"));
    }
    let motions = script
        .entries
        .iter()
        .map(|e| {
            if e.duration == 0 {
                Err(Error::invalid("action duration must be ≥ 1"))
            } else {
                Motion::from_class(e.class)
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let shape = script.shape;
    let bg = background(script.seed, h, w, shape.background_amplitude);
    let mut rng = ChaCha8Rng::seed_from_u64(script.seed ^ 0x00d1_5c00);
    let (hf, wf) = (h as f32, w as f32);
    let r0 = shape.radius.unwrap_or(hf.min(wf) / 8.0);
    let margin = r0 + 2.0;

    let mut frames = Vec::with_capacity(script.total_frames());
    let mut labels = Vec::with_capacity(script.total_frames());
    for (entry, motion) in script.entries.iter().zip(motions) {
        let mut jit = |lo: f32, hi: f32| {
            let mid = 0.5 * (lo + hi);
            let span = (0.5 * (hi - lo)).min(shape.jitter).max(0.0);
            mid + rng.gen_range(-1.0..=1.0) * span
        };
        let cross_y = jit(margin, hf - 1.0 - margin);
        let cross_x = jit(margin, wf - 1.0 - margin);
        let n = entry.duration;
        let mut last = None;
        for k in 0..n {
            let u = if n > 1 { k as f32 / (n - 1) as f32 } else { 0.0 };
            let lerp = |a: f32, b: f32| a + (b - a) * u;
            let disc = match motion {
                Motion::TranslateRight => Disc {
                    cx: lerp(margin, wf - 1.0 - margin),
                    cy: cross_y,
                    r: r0,
                },
                Motion::TranslateLeft => Disc {
                    cx: lerp(wf - 1.0 - margin, margin),
                    cy: cross_y,
                    r: r0,
                },
                Motion::TranslateDown => Disc {
                    cx: cross_x,
                    cy: lerp(margin, hf - 1.0 - margin),
                    r: r0,
                },
                Motion::Grow => Disc {
                    cx: cross_x,
                    cy: cross_y,
                    r: lerp(0.5 * r0, (hf.min(wf) / 2.0 - 2.0).max(r0)),
                },
            };
            let frame = render(&bg, disc, shape.color);
            frames.push(frame.clone());
            labels.push(entry.class);
            last = Some(frame);
        }
        let held = last.expect("duration ≥ 1");
        for _ in 0..entry.gap_after {
            frames.push(held.clone());
            labels.push(ClassId::GAP);
        }
    }
    let name = format!("synthetic_{:016x}", script.seed);
    VideoSequence::new(name, frames, DEFAULT_FPS)?.with_labels(labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(class: i32, duration: usize, gap_after: usize) -> ActionEntry {
        ActionEntry {
            class: ClassId(class),
            duration,
            gap_after,
        }
    }

    #[test]
    fn script_text_round_trip() {
        let mut s = ActionScript::random(4, 5, 4, (10, 20), (0, 5)).unwrap();
        assert_eq!(ActionScript::from_text(&s.to_text()).unwrap(), s);
        s.shape.radius = Some(2.5);
        assert_eq!(ActionScript::from_text(&s.to_text()).unwrap(), s);
        assert!(ActionScript::from_text("action.1 = 0,3,0").is_err());
        assert!(ActionScript::from_text("shape.color = 1,2").is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let s = ActionScript::random(9, 3, 4, (10, 20), (0, 5)).unwrap();
        let a = gen_synthetic(&s, 16, 24).unwrap();
        let b = gen_synthetic(&s, 16, 24).unwrap();
        assert_eq!(a, b);
        let other = gen_synthetic(&ActionScript { seed: 10, ..s }, 16, 24).unwrap();
        assert_ne!(a.frames(), other.frames());
    }

    #[test]
    fn translate_right_centroid_increases() {
        let s = ActionScript::new(vec![entry(0, 30, 0)], 4);
        let v = gen_synthetic(&s, 32, 40).unwrap();
        let bg = background(s.seed, 32, 40, s.shape.background_amplitude);
        let mut prev = f32::NEG_INFINITY;
        for f in v.frames() {
            let alpha = disc_alpha(f, &bg, s.shape.color);
            let mass: f32 = alpha.iter().sum();
            let cx: f32 = alpha
                .iter()
                .enumerate()
                .map(|(i, a)| a * (i % 40) as f32)
                .sum::<f32>()
                / mass;
            assert!(cx > prev, "{cx} <= {prev}");
            prev = cx;
        }
    }

    #[test]
    fn gap_frames_are_still_and_labelled() {
        let s = ActionScript::new(vec![entry(3, 5, 4), entry(1, 3, 0)], 2);
        let v = gen_synthetic(&s, 8, 8).unwrap();
        assert_eq!(v.len(), 12);
        let labels = v.labels().unwrap();
        for t in 5..9 {
            assert_eq!(labels[t], ClassId::GAP);
            assert_eq!(v.frames()[t], v.frames()[4]);
        }
        assert_eq!(labels[9], ClassId(1));
    }

    #[test]
    fn frames_in_unit_range_with_one_label_each() {
        let s = ActionScript::random(5, 4, 4, (8, 12), (0, 3)).unwrap();
        let v = gen_synthetic(&s, 32, 40).unwrap();
        assert_eq!(v.labels().unwrap().len(), v.len());
        assert_eq!(v.len(), s.total_frames());
        assert!(v
            .frames()
            .iter()
            .all(|f| f.data().iter().all(|&x| (0.0..=1.0).contains(&x))));
    }

    #[test]
    fn errors() {
        let s = ActionScript::new(vec![entry(7, 5, 0)], 1);
        assert!(gen_synthetic(&s, 8, 8).is_err());
        let s = ActionScript::new(vec![entry(0, 5, 0)], 1);
        assert!(gen_synthetic(&s, 12, 8).is_err());
        let s = ActionScript::new(vec![entry(0, 0, 0)], 1);
        assert!(gen_synthetic(&s, 8, 8).is_err());
    }

    #[test]
    fn random_scripts_alternate_classes() {
        let s = ActionScript::random(3, 12, 2, (5, 6), (0, 0)).unwrap();
        for pair in s.entries.windows(2) {
            assert_ne!(pair[0].class, pair[1].class);
        }
    }
}
