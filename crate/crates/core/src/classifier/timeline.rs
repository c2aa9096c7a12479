use std::path::Path;

use crate::error::{Error, Result};
use crate::rankpool::DynamicImage;
use crate::video::ClassId;

/// A maximal run of one label, frames `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub class: ClassId,
    pub start: usize,
    pub end: usize,
}

/// Per-frame class ids of one video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelTimeline {
    labels: Vec<ClassId>,
}

impl LabelTimeline {
    pub fn new(labels: Vec<ClassId>) -> Self {
        LabelTimeline { labels }
    }

    /// Builds a timeline from `(class, length)` runs.
    pub fn from_runs(runs: &[(ClassId, usize)]) -> Self {
        LabelTimeline {
            labels: runs
                .iter()
                .flat_map(|&(c, n)| std::iter::repeat(c).take(n))
                .collect(),
        }
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn segments(&self) -> Vec<Segment> {
        let mut out: Vec<Segment> = Vec::new();
        for (i, &c) in self.labels.iter().enumerate() {
            match out.last_mut() {
                Some(s) if s.class == c => s.end = i + 1,
                _ => out.push(Segment {
                    class: c,
                    start: i,
                    end: i + 1,
                }),
            }
        }
        out
    }

    /// Gives every gap the class of the next non-gap segment; a trailing gap
    /// becomes [`ClassId::END`].
    pub fn relabel_gaps(&self) -> LabelTimeline {
        let mut labels = self.labels.clone();
        let mut next = ClassId::END;
        for l in labels.iter_mut().rev() {
            if *l == ClassId::GAP {
                *l = next;
            } else {
                next = *l;
            }
        }
        LabelTimeline { labels }
    }

    /// Writes `frame,class_id` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["frame", "class_id"])?;
        for (i, c) in self.labels.iter().enumerate() {
            w.write_record([i.to_string(), c.0.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Reads a `frame,class_id` CSV; frames must be listed in order from 0.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut labels = Vec::new();
        for (i, row) in r.records().enumerate() {
            let row = row?;
            let bad = || Error::Format {
                what: "timeline CSV",
                reason: format!("{}: bad row {}", path.display(), i + 1),
            };
            let frame: usize = row.get(0).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let class: i32 = row.get(1).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            if frame != i {
                return Err(bad());
            }
            labels.push(ClassId(class));
        }
        Ok(LabelTimeline { labels })
    }
}

/// Next-action label of a window ending (exclusively) at `end`: the relabelled
/// class of frame `end`, or END when the window reaches the last frame.
pub fn next_label_at(relabeled: &LabelTimeline, end: usize) -> ClassId {
    relabeled.labels().get(end).copied().unwrap_or(ClassId::END)
}

/// Fills `next_label` of every DI from the timeline of its source video.
pub fn next_action_labels(dis: &mut [DynamicImage], timeline: &LabelTimeline) -> Result<()> {
    let relabeled = timeline.relabel_gaps();
    for di in dis.iter_mut() {
        let end = di.source.start_frame + di.source.window;
        if end > timeline.len() {
            return Err(Error::invalid(format!(
                "window [{}, {end}) exceeds the {}-frame timeline",
                di.source.start_frame,
                timeline.len()
            )));
        }
        di.next_label = Some(next_label_at(&relabeled, end));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use crate::rankpool::DiSource;
    use proptest::prelude::*;

    const A: ClassId = ClassId(0);
    const B: ClassId = ClassId(1);
    const GAP: ClassId = ClassId::GAP;
    const END: ClassId = ClassId::END;

    #[test]
    fn gap_takes_next_class() {
        let t = LabelTimeline::from_runs(&[(A, 100), (GAP, 30), (B, 70)]);
        assert_eq!(t.relabel_gaps(), LabelTimeline::from_runs(&[(A, 100), (B, 30), (B, 70)]));
    }

    #[test]
    fn trailing_gap_becomes_end() {
        let t = LabelTimeline::from_runs(&[(A, 10), (GAP, 5)]);
        assert_eq!(t.relabel_gaps(), LabelTimeline::from_runs(&[(A, 10), (END, 5)]));
        let plain = LabelTimeline::from_runs(&[(A, 3), (B, 4)]);
        assert_eq!(plain.relabel_gaps(), plain);
    }

    #[test]
    fn segments_partition_frames() {
        let t = LabelTimeline::from_runs(&[(A, 2), (GAP, 1), (B, 3)]);
        let s = t.segments();
        assert_eq!(
            s,
            vec![
                Segment { class: A, start: 0, end: 2 },
                Segment { class: GAP, start: 2, end: 3 },
                Segment { class: B, start: 3, end: 6 },
            ]
        );
    }

    fn di(start: usize, window: usize) -> DynamicImage {
        DynamicImage::from_raw(
            Tensor::zeros(&[3, 1, 1]),
            DiSource {
                video: "v".into(),
                start_frame: start,
                window,
            },
        )
    }

    #[test]
    fn next_action_examples() {
        let t = LabelTimeline::from_runs(&[(A, 40), (GAP, 10), (B, 50)]);
        let mut dis = vec![di(0, 30), di(10, 30), di(70, 30)];
        next_action_labels(&mut dis, &t).unwrap();
        assert_eq!(dis[0].next_label, Some(A));
        // window ends exactly where the gap starts
        assert_eq!(dis[1].next_label, Some(B));
        assert_eq!(dis[2].next_label, Some(END));
        let mut too_long = vec![di(80, 30)];
        assert!(next_action_labels(&mut too_long, &t).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let t = LabelTimeline::from_runs(&[(A, 3), (GAP, 2), (B, 1)]);
        t.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("frame,class_id\n0,0\n"));
        assert_eq!(LabelTimeline::read_csv(&p).unwrap(), t);
    }

    fn timeline_strategy() -> impl Strategy<Value = LabelTimeline> {
        prop::collection::vec((-1i32..4, 1usize..6), 0..12).prop_map(|runs| {
            LabelTimeline::from_runs(
                &runs.into_iter().map(|(c, n)| (ClassId(c), n)).collect::<Vec<_>>(),
            )
        })
    }

    proptest! {
        #[test]
        fn relabel_is_idempotent_and_keeps_actions(t in timeline_strategy()) {
            let once = t.relabel_gaps();
            prop_assert_eq!(once.relabel_gaps(), once.clone());
            for (a, b) in t.labels().iter().zip(once.labels()) {
                if *a != GAP {
                    prop_assert_eq!(a, b);
                } else {
                    prop_assert!(*b != GAP);
                }
            }
        }

        #[test]
        fn segments_are_a_partition(t in timeline_strategy()) {
            let segs = t.segments();
            let mut pos = 0;
            for (i, s) in segs.iter().enumerate() {
                prop_assert_eq!(s.start, pos);
                prop_assert!(s.end > s.start);
                if i > 0 {
                    prop_assert!(segs[i - 1].class != s.class);
                }
                pos = s.end;
            }
            prop_assert_eq!(pos, t.len());
        }
    }
}
