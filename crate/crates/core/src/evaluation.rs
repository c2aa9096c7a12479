//! Prediction and anticipation metrics: model MSE against the copy-previous
//! baseline, rollout MSE and next-action accuracy per horizon step, and the
//! per-class temporal distance of stable correct predictions (AvgOfTD).

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use crate::classifier::{classify, ClassifierModel, LabelTimeline};
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};
use crate::prednet::PredNet;
use crate::rankpool::DynamicImage;
use crate::video::ClassId;

/// Mean of `(a − b)²` over all elements.
pub fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    a.same_shape(b, "mse")?;
    if a.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    Ok(s / a.len() as f64)
}

/// Mean of `mse(DI_t, DI_{t+1})` over every position whose context of `context`
/// DIs ends at `t` and has a successor.
pub fn prev_baseline_mse(seq: &[Tensor<f32>], context: usize) -> Result<f64> {
    if context == 0 || seq.len() <= context {
        return Err(Error::invalid(format!(
            "prev baseline needs more than {context} DIs, got {}",
            seq.len()
        )));
    }
    let mut total = 0.0;
    let n = seq.len() - context;
    for p in 0..n {
        total += mse(&seq[p + context - 1], &seq[p + context])?;
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalConfig {
    /// Real DIs observed before predicting.
    pub context: usize,
    /// Rollout steps evaluated per position.
    pub horizon: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            context: 10,
            horizon: 5,
        }
    }
}

/// One test video: its DIs in window order and its frame-level ground truth.
#[derive(Debug, Clone)]
pub struct EvalVideo {
    pub name: String,
    pub dis: Vec<DynamicImage>,
    pub timeline: LabelTimeline,
}

impl EvalVideo {
    fn stride(&self) -> Result<usize> {
        match self.dis.as_slice() {
            [] | [_] => Ok(1),
            [a, b, ..] => {
                let s = b.source.start_frame.saturating_sub(a.source.start_frame);
                let uniform = self
                    .dis
                    .windows(2)
                    .all(|w| w[1].source.start_frame == w[0].source.start_frame + s);
                if s == 0 || !uniform {
                    return Err(Error::invalid(format!("{}: DIs are not evenly strided", self.name)));
                }
                Ok(s)
            }
        }
    }
}

/// Running sum and count; merging is exact and order independent for integers.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Tally {
    pub sum: f64,
    pub count: usize,
}

impl Tally {
    fn add(&mut self, v: f64) {
        self.sum += v;
        self.count += 1;
    }

    fn merge(&mut self, o: Tally) {
        self.sum += o.sum;
        self.count += o.count;
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }
}

/// Temporal distance of every action instance in `timeline`. `predicted[t]` is
/// the next-action prediction standing at frame `t`. For an action of class `c`
/// starting at `s`, TD = `s − t*` where `t*` is the earliest frame with the
/// prediction equal to `c` on all of `[t*, s)`, or 0 when frame `s − 1` is wrong.
pub fn temporal_distances(predicted: &[Option<ClassId>], timeline: &LabelTimeline) -> Vec<(ClassId, usize)> {
    let labels = timeline.labels();
    let mut out = Vec::new();
    for s in 0..labels.len() {
        let c = labels[s];
        if !c.is_action() || (s > 0 && labels[s - 1] == c) {
            continue;
        }
        let mut t = s;
        while t > 0 && predicted.get(t - 1).copied().flatten() == Some(c) {
            t -= 1;
        }
        out.push((c, s - t));
    }
    out
}

/// Per-class mean temporal distance over one video.
pub fn avg_of_td(predicted: &[Option<ClassId>], timeline: &LabelTimeline) -> BTreeMap<ClassId, Tally> {
    let mut map: BTreeMap<ClassId, Tally> = BTreeMap::new();
    for (c, td) in temporal_distances(predicted, timeline) {
        map.entry(c).or_default().add(td as f64);
    }
    map
}

/// One video's contribution before pooling.
#[derive(Debug, Clone, Default)]
struct VideoEval {
    name: String,
    model: Tally,
    prev: Tally,
    raw_model: Tally,
    raw_prev: Tally,
    rollout: Vec<Tally>,
    hits: Vec<Tally>,
    td: BTreeMap<ClassId, Tally>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoMetrics {
    pub name: String,
    pub model_mse: f64,
    pub prev_mse: f64,
    pub positions: usize,
}

/// Everything the evaluation stage measures.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Single-step MSE on normalized DIs, and the copy-previous baseline over
    /// the same positions.
    pub model_mse: f64,
    pub prev_mse: f64,
    /// The same pair on unnormalized DI values.
    pub raw_model_mse: f64,
    pub raw_prev_mse: f64,
    pub positions: usize,
    /// Index `k − 1`: mean MSE of the k-th rollout prediction and its count.
    pub rollout_mse: Vec<Tally>,
    /// Index `k − 1`: next-action accuracy of the k-th rollout prediction.
    /// Empty when no classifier was given.
    pub accuracy_by_horizon: Vec<Tally>,
    pub avg_of_td: BTreeMap<ClassId, Tally>,
    pub class_names: Vec<String>,
    pub per_video: Vec<VideoMetrics>,
}

impl MetricsReport {
    pub fn classifier_present(&self) -> bool {
        !self.accuracy_by_horizon.is_empty()
    }

    pub fn accuracy(&self, k: usize) -> Option<f64> {
        self.accuracy_by_horizon.get(k.checked_sub(1)?).map(Tally::mean)
    }

    fn class_name(&self, c: ClassId) -> String {
        c.index()
            .and_then(|i| self.class_names.get(i).cloned())
            .unwrap_or_else(|| c.to_string())
    }

    /// Report rows in their fixed order.
    pub fn rows(&self) -> Vec<ReportRow> {
        let row = |metric: &str, name: String, value: f64, count: usize| ReportRow {
            metric: metric.to_string(),
            name,
            value,
            count,
        };
        let mut rows = vec![
            row("mse", "model".into(), self.model_mse, self.positions),
            row("mse", "prev".into(), self.prev_mse, self.positions),
            row("mse_raw", "model".into(), self.raw_model_mse, self.positions),
            row("mse_raw", "prev".into(), self.raw_prev_mse, self.positions),
        ];
        for (k, t) in self.rollout_mse.iter().enumerate() {
            rows.push(row("rollout_mse", format!("k{}", k + 1), t.mean(), t.count));
        }
        if self.classifier_present() {
            for (k, t) in self.accuracy_by_horizon.iter().enumerate() {
                rows.push(row("accuracy", format!("k{}", k + 1), t.mean(), t.count));
            }
            for (c, t) in &self.avg_of_td {
                rows.push(row("avg_of_td", self.class_name(*c), t.mean(), t.count));
            }
        } else {
            rows.push(row("classifier", "absent".into(), 0.0, 0));
        }
        for v in &self.per_video {
            rows.push(row("video_mse_model", v.name.clone(), v.model_mse, v.positions));
            rows.push(row("video_mse_prev", v.name.clone(), v.prev_mse, v.positions));
        }
        rows
    }
}

/// One `metric,name,value,count` line.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub metric: String,
    pub name: String,
    pub value: f64,
    pub count: usize,
}

fn eval_video(
    model: &PredNet<f32>,
    classifier: Option<&ClassifierModel<f32>>,
    video: &EvalVideo,
    cfg: EvalConfig,
) -> Result<VideoEval> {
    let c = cfg.context;
    let k_max = cfg.horizon;
    let stride = video.stride()?;
    let norm: Vec<Tensor<f32>> = video.dis.iter().map(DynamicImage::normalized).collect();
    let n = norm.len();
    let mut ev = VideoEval {
        name: video.name.clone(),
        rollout: vec![Tally::default(); k_max],
        hits: vec![Tally::default(); if classifier.is_some() { k_max } else { 0 }],
        ..VideoEval::default()
    };
    let mut predicted: Vec<Option<ClassId>> = vec![None; video.timeline.len()];
    for p in 0..n.saturating_sub(c) {
        let steps = k_max.min(n - p - c);
        let preds = model.predict_rollout(&norm[p..p + c], steps)?;
        let last = &video.dis[p + c - 1];
        let next = &video.dis[p + c];
        ev.model.add(mse(&preds[0], &norm[p + c])?);
        ev.prev.add(mse(&norm[p + c - 1], &norm[p + c])?);
        let (lo, hi) = last.norm_bounds;
        let raw_pred = preds[0].map(|v| lo + v * (hi - lo));
        ev.raw_model.add(mse(&raw_pred, &next.values)?);
        ev.raw_prev.add(mse(&last.values, &next.values)?);
        for (k, pred) in preds.iter().enumerate() {
            ev.rollout[k].add(mse(pred, &norm[p + c + k])?);
            let Some(clf) = classifier else { continue };
            let truth = video.dis[p + c + k].next_label.ok_or_else(|| {
                Error::invalid(format!("{}: DI without a next-action label", video.name))
            })?;
            let (idx, _) = classify(clf, pred)?;
            if truth.is_action() {
                ev.hits[k].add(if ClassId(idx as i32) == truth { 1.0 } else { 0.0 });
            }
            if k == 0 {
                let now = last.source.start_frame + last.source.window;
                let end = (now + stride).min(predicted.len());
                for slot in predicted.iter_mut().take(end).skip(now) {
                    *slot = Some(ClassId(idx as i32));
                }
            }
        }
    }
    if classifier.is_some() {
        ev.td = avg_of_td(&predicted, &video.timeline);
    }
    Ok(ev)
}

/// Runs single-step prediction, `horizon`-step rollouts and, with a
/// classifier, next-action accuracy and AvgOfTD over every test video.
/// Each position slides a `context`-DI window over a video; the k-th rollout
/// step is scored where DI `context + k − 1` past the window start exists.
pub fn evaluate(
    model: &PredNet<f32>,
    classifier: Option<&ClassifierModel<f32>>,
    videos: &[EvalVideo],
    cfg: EvalConfig,
) -> Result<MetricsReport> {
    if cfg.context != model.config().context {
        return Err(Error::config(format!(
            "eval context {} differs from the model's {}",
            cfg.context,
            model.config().context
        )));
    }
    if cfg.horizon == 0 {
        return Err(Error::config("eval horizon must be ≥ 1"));
    }
    let per: Vec<VideoEval> = videos
        .par_iter()
        .map(|v| eval_video(model, classifier, v, cfg))
        .collect::<Result<_>>()?;
    let mut total = VideoEval {
        rollout: vec![Tally::default(); cfg.horizon],
        hits: vec![Tally::default(); if classifier.is_some() { cfg.horizon } else { 0 }],
        ..VideoEval::default()
    };
    let mut per_video = Vec::with_capacity(per.len());
    for v in &per {
        total.model.merge(v.model);
        total.prev.merge(v.prev);
        total.raw_model.merge(v.raw_model);
        total.raw_prev.merge(v.raw_prev);
        for (a, b) in total.rollout.iter_mut().zip(&v.rollout) {
            a.merge(*b);
        }
        for (a, b) in total.hits.iter_mut().zip(&v.hits) {
            a.merge(*b);
        }
        for (c, t) in &v.td {
            total.td.entry(*c).or_default().merge(*t);
        }
        per_video.push(VideoMetrics {
            name: v.name.clone(),
            model_mse: v.model.mean(),
            prev_mse: v.prev.mean(),
            positions: v.model.count,
        });
    }
    Ok(MetricsReport {
        model_mse: total.model.mean(),
        prev_mse: total.prev.mean(),
        raw_model_mse: total.raw_model.mean(),
        raw_prev_mse: total.raw_prev.mean(),
        positions: total.model.count,
        rollout_mse: total.rollout,
        accuracy_by_horizon: total.hits,
        avg_of_td: total.td,
        class_names: classifier.map(|c| c.class_names.clone()).unwrap_or_default(),
        per_video,
    })
}

/// Next-action accuracy of the k-th rollout step, `k = 1..=horizon`.
pub fn horizon_accuracy(
    model: &PredNet<f32>,
    classifier: &ClassifierModel<f32>,
    videos: &[EvalVideo],
    horizon: usize,
) -> Result<Vec<Tally>> {
    let cfg = EvalConfig {
        context: model.config().context,
        horizon,
    };
    Ok(evaluate(model, Some(classifier), videos, cfg)?.accuracy_by_horizon)
}

/// Writes `metric,name,value,count`. Values use the shortest exact decimal form.
pub fn write_report(report: &MetricsReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["metric", "name", "value", "count"])?;
    for r in report.rows() {
        w.write_record([r.metric, r.name, r.value.to_string(), r.count.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = || Error::Format {
            what: "report CSV",
            reason: format!("{}: bad row {}", path.display(), i + 1),
        };
        let field = |j: usize| rec.get(j).ok_or_else(bad);
        rows.push(ReportRow {
            metric: field(0)?.to_string(),
            name: field(1)?.to_string(),
            value: field(2)?.parse().map_err(|_| bad())?,
            count: field(3)?.parse().map_err(|_| bad())?,
        });
    }
    Ok(rows)
}

/// Writes `horizon,accuracy` for plotting.
pub fn write_horizon_csv(report: &MetricsReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["horizon", "accuracy"])?;
    for (k, t) in report.accuracy_by_horizon.iter().enumerate() {
        w.write_record([(k + 1).to_string(), t.mean().to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
