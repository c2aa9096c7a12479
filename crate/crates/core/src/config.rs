//! Flat `key = value` run configuration covering every pipeline stage.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::classifier::ClassifierConfig;
use crate::error::{Error, Result};
use crate::evaluation::EvalConfig;
use crate::prednet::PredNetConfig;
use crate::rankpool::RankPoolConfig;
use crate::seed;
use crate::video::WindowSpec;

/// Synthetic corpus layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataConfig {
    pub train_videos: usize,
    pub val_videos: usize,
    pub test_videos: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub actions_per_video: usize,
    pub duration: (usize, usize),
    pub gap: (usize, usize),
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_videos: 20,
            val_videos: 2,
            test_videos: 4,
            height: 32,
            width: 40,
            classes: 4,
            actions_per_video: 6,
            duration: (20, 40),
            gap: (0, 15),
        }
    }
}

/// Which label a ground-truth DI carries when training the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelTarget {
    /// Majority frame label of the DI's own window.
    Current,
    /// Class of the action following the window.
    Next,
}

impl FromStr for LabelTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "current" => Ok(LabelTarget::Current),
            "next" => Ok(LabelTarget::Next),
            _ => Err(Error::config(format!("unknown label target `{s}` (current|next)"))),
        }
    }
}

impl std::fmt::Display for LabelTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LabelTarget::Current => "current",
            LabelTarget::Next => "next",
        })
    }
}

/// Every tunable of a pipeline run. Frame size and prediction context are
/// shared: `data.height`/`data.width` size the network input and
/// `prednet.context` is also the evaluation context.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub window: WindowSpec,
    pub rankpool: RankPoolConfig,
    pub prednet: PredNetConfig,
    pub classifier: ClassifierConfig,
    pub classifier_target: LabelTarget,
    pub eval_horizon: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut c = RunConfig {
            seed: 0,
            data: DataConfig::default(),
            window: WindowSpec { window: 30, stride: 5 },
            rankpool: RankPoolConfig::default(),
            prednet: PredNetConfig::default(),
            classifier: ClassifierConfig::default(),
            classifier_target: LabelTarget::Current,
            eval_horizon: 5,
        };
        c.sync();
        c
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("bad value `{value}` for `{key}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn parse_range(key: &str, value: &str) -> Result<(usize, usize)> {
    match parse_list::<usize>(key, value)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err(Error::config(format!("`{key}` takes `min,max`"))),
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Applies one `key = value` setting. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let d = &mut self.data;
        let r = &mut self.rankpool;
        let p = &mut self.prednet;
        let c = &mut self.classifier;
        match key.trim() {
            "seed" => self.seed = parse(key, v)?,
            "data.train_videos" => d.train_videos = parse(key, v)?,
            "data.val_videos" => d.val_videos = parse(key, v)?,
            "data.test_videos" => d.test_videos = parse(key, v)?,
            "data.height" => d.height = parse(key, v)?,
            "data.width" => d.width = parse(key, v)?,
            "data.classes" => d.classes = parse(key, v)?,
            "data.actions_per_video" => d.actions_per_video = parse(key, v)?,
            "data.duration" => d.duration = parse_range(key, v)?,
            "data.gap" => d.gap = parse_range(key, v)?,
            "rankpool.window" => self.window.window = parse(key, v)?,
            "rankpool.stride" => self.window.stride = parse(key, v)?,
            "rankpool.lambda" => r.lambda = parse(key, v)?,
            "rankpool.iters" => r.iters = parse(key, v)?,
            "rankpool.tol" => r.tol = parse(key, v)?,
            "rankpool.solver" => r.solver = v.parse()?,
            "rankpool.eta0" => r.eta0 = parse(key, v)?,
            "rankpool.decay" => r.decay = parse(key, v)?,
            "prednet.channels" => p.channels = parse_list(key, v)?,
            "prednet.kernel" => p.kernel = parse(key, v)?,
            "prednet.error_mode" => p.error_mode = v.parse()?,
            "prednet.sigma" => p.sigma = parse(key, v)?,
            "prednet.layer_weights" => p.layer_weights = parse_list(key, v)?,
            "prednet.lr" => p.lr = parse(key, v)?,
            "prednet.lr_late" => p.lr_late = parse(key, v)?,
            "prednet.epochs" => p.epochs = parse(key, v)?,
            "prednet.batch" => p.batch = parse(key, v)?,
            "prednet.seq_len" => p.seq_len = parse(key, v)?,
            "prednet.context" => p.context = parse(key, v)?,
            "prednet.horizon" => p.horizon = parse(key, v)?,
            "prednet.finetune_epochs" => p.finetune_epochs = parse(key, v)?,
            "prednet.finetune_lr" => p.finetune_lr = parse(key, v)?,
            "prednet.stride" => p.stride = parse(key, v)?,
            "classifier.channels" => {
                c.channels = parse_list::<usize>(key, v)?
                    .try_into()
                    .map_err(|_| Error::config("classifier.channels takes three sizes"))?
            }
            "classifier.lr" => c.lr = parse(key, v)?,
            "classifier.momentum" => c.momentum = parse(key, v)?,
            "classifier.weight_decay" => c.weight_decay = parse(key, v)?,
            "classifier.batch" => c.batch = parse(key, v)?,
            "classifier.epochs" => c.epochs = parse(key, v)?,
            "classifier.decay_every" => c.decay_every = parse(key, v)?,
            "classifier.decay_factor" => c.decay_factor = parse(key, v)?,
            "classifier.shift" => c.shift = parse(key, v)?,
            "classifier.target" => self.classifier_target = v.parse()?,
            "eval.horizon" => self.eval_horizon = parse(key, v)?,
            other => return Err(Error::config(format!("unknown config key `{other}`"))),
        }
        self.sync();
        Ok(())
    }

    /// Propagates shared values and the stage seeds derived from `seed`.
    fn sync(&mut self) {
        self.prednet.height = self.data.height;
        self.prednet.width = self.data.width;
        self.prednet.seed = seed::stage(self.seed, "prednet");
        self.classifier.seed = seed::stage(self.seed, "classifier");
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = RunConfig::default();
        c.apply_text(&text)?;
        Ok(c)
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override `{pair}` is not key=value")))?;
        self.set(k, v)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.classes < 2 || d.actions_per_video == 0 {
            return Err(Error::config("data.classes ≥ 2 and data.actions_per_video ≥ 1 required"));
        }
        WindowSpec::new(self.window.window, self.window.stride)?;
        self.rankpool.validate()?;
        self.prednet.validate()?;
        self.classifier.validate()?;
        if self.eval_horizon == 0 {
            return Err(Error::config("eval.horizon must be ≥ 1"));
        }
        Ok(())
    }

    pub fn eval(&self) -> EvalConfig {
        EvalConfig {
            context: self.prednet.context,
            horizon: self.eval_horizon,
        }
    }

    /// Every key with its resolved value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let d = &self.data;
        let r = &self.rankpool;
        let p = &self.prednet;
        let c = &self.classifier;
        vec![
            ("seed", self.seed.to_string()),
            ("data.train_videos", d.train_videos.to_string()),
            ("data.val_videos", d.val_videos.to_string()),
            ("data.test_videos", d.test_videos.to_string()),
            ("data.height", d.height.to_string()),
            ("data.width", d.width.to_string()),
            ("data.classes", d.classes.to_string()),
            ("data.actions_per_video", d.actions_per_video.to_string()),
            ("data.duration", format!("{},{}", d.duration.0, d.duration.1)),
            ("data.gap", format!("{},{}", d.gap.0, d.gap.1)),
            ("rankpool.window", self.window.window.to_string()),
            ("rankpool.stride", self.window.stride.to_string()),
            ("rankpool.lambda", r.lambda.to_string()),
            ("rankpool.iters", r.iters.to_string()),
            ("rankpool.tol", r.tol.to_string()),
            ("rankpool.solver", r.solver.to_string()),
            ("rankpool.eta0", r.eta0.to_string()),
            ("rankpool.decay", r.decay.to_string()),
            ("prednet.channels", join(&p.channels)),
            ("prednet.kernel", p.kernel.to_string()),
            ("prednet.error_mode", p.error_mode.to_string()),
            ("prednet.sigma", p.sigma.to_string()),
            ("prednet.layer_weights", join(&p.layer_weights)),
            ("prednet.lr", p.lr.to_string()),
            ("prednet.lr_late", p.lr_late.to_string()),
            ("prednet.epochs", p.epochs.to_string()),
            ("prednet.batch", p.batch.to_string()),
            ("prednet.seq_len", p.seq_len.to_string()),
            ("prednet.context", p.context.to_string()),
            ("prednet.horizon", p.horizon.to_string()),
            ("prednet.finetune_epochs", p.finetune_epochs.to_string()),
            ("prednet.finetune_lr", p.finetune_lr.to_string()),
            ("prednet.stride", p.stride.to_string()),
            ("classifier.channels", join(&c.channels)),
            ("classifier.lr", c.lr.to_string()),
            ("classifier.momentum", c.momentum.to_string()),
            ("classifier.weight_decay", c.weight_decay.to_string()),
            ("classifier.batch", c.batch.to_string()),
            ("classifier.epochs", c.epochs.to_string()),
            ("classifier.decay_every", c.decay_every.to_string()),
            ("classifier.decay_factor", c.decay_factor.to_string()),
            ("classifier.shift", c.shift.to_string()),
            ("classifier.target", self.classifier_target.to_string()),
            ("eval.horizon", self.eval_horizon.to_string()),
        ]
    }

    /// The resolved configuration in the same format [`RunConfig::apply_text`] reads.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_round_trips() {
        let mut c = RunConfig::default();
        c.apply_text("seed = 9\nprednet.channels = 3, 4\nprednet.layer_weights = 1,0.1 # comment\ndata.gap = 2,3\nrankpool.solver = subgradient\nclassifier.channels=4,4,4\nclassifier.target = next\n")
            .unwrap();
        assert_eq!(c.prednet.channels, vec![3, 4]);
        assert_eq!(c.data.gap, (2, 3));
        let mut back = RunConfig::default();
        back.apply_text(&c.dump()).unwrap();
        assert_eq!(back, c);
        back.validate().unwrap();
    }

    #[test]
    fn unknown_keys_and_bad_values_fail() {
        let mut c = RunConfig::default();
        assert!(c.set("prednet.sigmaa", "0.1").is_err());
        assert!(c.set("prednet.sigma", "abc").is_err());
        assert!(c.set_pair("seed").is_err());
        assert!(c.apply_text("just words").is_err());
        assert!(c.set("classifier.channels", "1,2").is_err());
    }

    #[test]
    fn shared_values_and_seeds_follow() {
        let mut c = RunConfig::default();
        c.set("data.height", "64").unwrap();
        assert_eq!(c.prednet.height, 64);
        let before = c.prednet.seed;
        c.set("seed", "5").unwrap();
        assert_ne!(c.prednet.seed, before);
        assert_ne!(c.prednet.seed, c.classifier.seed);
        assert_eq!(c.eval().context, c.prednet.context);
    }

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
        assert_eq!(RunConfig::default().entries().len(), RunConfig::default().dump().lines().count());
    }
}
