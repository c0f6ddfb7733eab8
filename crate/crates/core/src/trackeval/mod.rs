//! Online tracking loop, reinitialization protocol, accuracy/robustness
//! scoring, FPS measurement, offline training and result export.

mod export;
mod train;
mod weights;

use std::collections::HashMap;
use std::time::Instant;

pub use export::{export_curves, format_scores, plot_dir, read_curve_csv, render_fps_svg, render_svg, write_curve_csv, write_scores};
pub use train::{train, StepInfo, TrainConfig, TrainReport};
pub use weights::{weight_report, WeightReport, WeightRow};

use crate::data::SequenceRecord;
use crate::error::{Error, Result};
use crate::geometry::{context_window, crop_resize, decode_output, region_overlap, to_frame_coords, SquareBox};
use crate::network::{AttentionWeights, TrackerModel};
use crate::parallel::{map_ordered, map_range, Execution};

/// Real-time reference rate for throughput reports.
pub const REALTIME_FPS: f64 = 25.0;

/// One tracker prediction.
#[derive(Debug, Clone)]
pub struct Step {
    pub bbox: SquareBox,
    pub attention: Option<AttentionWeights>,
}

/// Anything that predicts frame `t`'s box given the box of frame `t - 1`.
pub trait Tracker: Sync {
    fn name(&self) -> &str;
    fn predict(&self, seq: &SequenceRecord, t: usize, prev_box: &SquareBox) -> Result<Step>;
}

/// The network run in eval mode on crops around the previous box.
pub struct ModelTracker<'a> {
    model: &'a TrackerModel,
}

impl<'a> ModelTracker<'a> {
    pub fn new(model: &'a TrackerModel) -> Self {
        Self { model }
    }
}

impl Tracker for ModelTracker<'_> {
    fn name(&self) -> &str {
        self.model.variant().name()
    }

    fn predict(&self, seq: &SequenceRecord, t: usize, prev_box: &SquareBox) -> Result<Step> {
        let (w, h) = seq.frame_size();
        let size = self.model.input_size();
        let mean = self.model.mean_rgb();
        let window = context_window(prev_box, w, h);
        let curr = crop_resize(&seq.frames[t], &window, mean, size)?;
        let prev = if self.model.variant().streams() == 2 {
            Some(crop_resize(&seq.frames[t - 1], &window, mean, size)?)
        } else {
            None
        };
        let pred = self.model.predict(prev.as_ref().map(|p| &p.pixels), &curr.pixels)?;
        let bbox = to_frame_coords(&decode_output(pred.output, size), &window, size)?;
        Ok(Step {
            bbox,
            attention: pred.attention,
        })
    }
}

/// Outputs the ground truth.
pub struct GroundTruthTracker;

impl Tracker for GroundTruthTracker {
    fn name(&self) -> &str {
        "ground-truth"
    }

    fn predict(&self, seq: &SequenceRecord, t: usize, _prev: &SquareBox) -> Result<Step> {
        Ok(Step {
            bbox: seq.annotations[t],
            attention: None,
        })
    }
}

/// Outputs a box two sides to the right of the ground truth, never overlapping it.
pub struct DisjointTracker;

impl Tracker for DisjointTracker {
    fn name(&self) -> &str {
        "disjoint"
    }

    fn predict(&self, seq: &SequenceRecord, t: usize, _prev: &SquareBox) -> Result<Step> {
        let g = seq.annotations[t];
        Ok(Step {
            bbox: SquareBox::frame(g.cx + 2.0 * g.side, g.cy, g.side),
            attention: None,
        })
    }
}

/// Repeats the previous box.
pub struct StayPutTracker;

impl Tracker for StayPutTracker {
    fn name(&self) -> &str {
        "stay-put"
    }

    fn predict(&self, _seq: &SequenceRecord, _t: usize, prev: &SquareBox) -> Result<Step> {
        Ok(Step {
            bbox: *prev,
            attention: None,
        })
    }
}

/// Produces a prescribed overlap with the ground truth at every frame,
/// independent of its input, by shifting the ground-truth box horizontally.
pub struct ScriptedTracker {
    /// `overlaps[t]` for `t >= 1`; entry 0 is unused.
    pub overlaps: Vec<f64>,
}

impl ScriptedTracker {
    /// Horizontal shift giving overlap `q` between two equal squares of side `s`.
    pub fn shift_for(q: f64, s: f64) -> f64 {
        s * (1.0 - q) / (1.0 + q)
    }
}

impl Tracker for ScriptedTracker {
    fn name(&self) -> &str {
        "scripted"
    }

    fn predict(&self, seq: &SequenceRecord, t: usize, _prev: &SquareBox) -> Result<Step> {
        let q = *self
            .overlaps
            .get(t)
            .ok_or_else(|| Error::Config(format!("no scripted overlap for frame {t}")))?;
        let g = seq.annotations[t];
        Ok(Step {
            bbox: SquareBox::frame(g.cx + Self::shift_for(q, g.side), g.cy, g.side),
            attention: None,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrackRun {
    pub threshold: f64,
    /// Predicted box per frame; frame 0 holds the initialization.
    pub boxes: Vec<SquareBox>,
    /// Overlap with ground truth for frames `1..n`.
    pub overlaps: Vec<f64>,
    pub failures: Vec<usize>,
    /// Attention recorded at each scored frame, when the tracker reports it.
    pub attention: Vec<AttentionWeights>,
}

impl TrackRun {
    pub fn scored_frames(&self) -> usize {
        self.overlaps.len()
    }
}

/// Predictions keyed by frame and the exact bits of the previous box. Reruns at
/// other thresholds reuse any prediction whose input already occurred.
pub type PredictionCache = HashMap<(usize, [u64; 3]), Step>;

fn is_failure(overlap: f64, r: f64) -> bool {
    if r == 0.0 {
        overlap == 0.0
    } else {
        overlap < r
    }
}

/// Track `seq` from its frame-0 ground truth. A failure reinitializes the
/// previous box to the ground truth of the failed frame.
pub fn track_sequence(tracker: &dyn Tracker, seq: &SequenceRecord, r: f64) -> Result<TrackRun> {
    track_inner(tracker, seq, r, None)
}

pub fn track_sequence_cached(
    tracker: &dyn Tracker,
    seq: &SequenceRecord,
    r: f64,
    cache: &mut PredictionCache,
) -> Result<TrackRun> {
    track_inner(tracker, seq, r, Some(cache))
}

fn track_inner(
    tracker: &dyn Tracker,
    seq: &SequenceRecord,
    r: f64,
    mut cache: Option<&mut PredictionCache>,
) -> Result<TrackRun> {
    if seq.len() < 2 || seq.annotations.len() != seq.len() {
        return Err(Error::Config(format!("{}: tracking needs at least two annotated frames", seq.id)));
    }
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Config(format!("reinitialization threshold {r} outside [0, 1]")));
    }
    let n = seq.len();
    let mut run = TrackRun {
        threshold: r,
        boxes: Vec::with_capacity(n),
        overlaps: Vec::with_capacity(n - 1),
        failures: Vec::new(),
        attention: Vec::new(),
    };
    let mut prev = seq.annotations[0];
    run.boxes.push(prev);
    for t in 1..n {
        let step = match cache.as_deref_mut() {
            Some(c) => {
                let key = (t, [prev.cx.to_bits(), prev.cy.to_bits(), prev.side.to_bits()]);
                match c.get(&key) {
                    Some(s) => s.clone(),
                    None => {
                        let s = tracker.predict(seq, t, &prev)?;
                        c.insert(key, s.clone());
                        s
                    }
                }
            }
            None => tracker.predict(seq, t, &prev)?,
        };
        let overlap = region_overlap(&step.bbox, &seq.annotations[t])?;
        run.overlaps.push(overlap);
        run.boxes.push(step.bbox);
        if let Some(a) = step.attention {
            run.attention.push(a);
        }
        if is_failure(overlap, r) {
            run.failures.push(t);
            prev = seq.annotations[t];
        } else {
            prev = step.bbox;
        }
    }
    Ok(run)
}

/// Track from the frame-0 ground truth without ever reinitializing; the
/// ground truth of later frames is never read by the loop.
pub fn track_free(tracker: &dyn Tracker, seq: &SequenceRecord) -> Result<Vec<SquareBox>> {
    if seq.is_empty() || seq.annotations.is_empty() {
        return Err(Error::Config(format!("{}: tracking needs an initial box", seq.id)));
    }
    let mut boxes = Vec::with_capacity(seq.len());
    boxes.push(seq.annotations[0]);
    for t in 1..seq.len() {
        let step = tracker.predict(seq, t, &boxes[t - 1])?;
        boxes.push(step.bbox);
    }
    Ok(boxes)
}

/// A metric sampled on a threshold grid over `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub thresholds: Vec<f64>,
    pub values: Vec<f64>,
}

/// `0, step, 2·step, ..., 1`; `1 / step` must be an integer.
pub fn threshold_grid(step: f64) -> Result<Vec<f64>> {
    let n = (1.0 / step).round();
    if !(step > 0.0) || !(n >= 1.0) || (n * step - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("threshold step {step} does not divide [0, 1]")));
    }
    let n = n as usize;
    Ok((0..=n).map(|i| i as f64 / n as f64).collect())
}

/// Exact area under `τ ↦ fraction of overlaps > τ` over `[0, 1]`, integrated
/// piecewise between sorted overlaps.
pub fn accuracy_score(overlaps: &[f64]) -> Result<f64> {
    if overlaps.is_empty() {
        return Err(Error::Config("accuracy of an empty run".into()));
    }
    let mut sorted: Vec<f64> = overlaps.iter().map(|o| o.clamp(0.0, 1.0)).collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut area = 0.0;
    let mut lo = 0.0;
    for (i, &o) in sorted.iter().enumerate() {
        // on (lo, o] exactly n - i overlaps still exceed τ
        area += (o - lo) * (sorted.len() - i) as f64 / n;
        lo = o;
    }
    Ok(area)
}

/// True-positive fraction (overlap strictly above τ) on the grid.
pub fn tp_rot_curve(overlaps: &[f64], grid: &[f64]) -> Result<Curve> {
    if overlaps.is_empty() {
        return Err(Error::Config("TP curve of an empty run".into()));
    }
    let n = overlaps.len() as f64;
    let values = grid
        .iter()
        .map(|&tau| overlaps.iter().filter(|&&o| o > tau).count() as f64 / n)
        .collect();
    Ok(Curve {
        thresholds: grid.to_vec(),
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub accuracy: f64,
    pub robustness: f64,
    pub overall: f64,
    pub fps: f64,
}

impl Scores {
    pub fn new(accuracy: f64, robustness: f64, fps: f64) -> Self {
        Self {
            accuracy,
            robustness,
            overall: (accuracy + robustness) / 2.0,
            fps,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub scores: Scores,
    pub tp_rot: Curve,
    pub fr_rt: Curve,
    /// The `r = 0` run of every sequence, in input order.
    pub runs: Vec<TrackRun>,
}

/// Accuracy from pooled `r = 0` overlaps, robustness as one minus the grid
/// mean of pooled failure rates, FPS over the `r = 0` passes only.
pub fn evaluate(tracker: &dyn Tracker, seqs: &[SequenceRecord], grid_step: f64, exec: Execution) -> Result<Evaluation> {
    if seqs.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let grid = threshold_grid(grid_step)?;

    let start = Instant::now();
    let first: Vec<Result<(TrackRun, PredictionCache)>> = map_ordered(exec, seqs, |seq| {
        let mut cache = PredictionCache::new();
        let run = track_sequence_cached(tracker, seq, 0.0, &mut cache)?;
        Ok((run, cache))
    });
    let elapsed = start.elapsed().as_secs_f64();
    let first = first.into_iter().collect::<Result<Vec<_>>>()?;

    let scored: usize = first.iter().map(|(r, _)| r.scored_frames()).sum();
    let fps = scored as f64 / elapsed.max(1e-9);
    let all_overlaps: Vec<f64> = first.iter().flat_map(|(r, _)| r.overlaps.iter().copied()).collect();
    let accuracy = accuracy_score(&all_overlaps)?;
    let tp_rot = tp_rot_curve(&all_overlaps, &grid)?;

    // failure counts per threshold, per sequence
    let counts: Vec<Result<Vec<usize>>> = map_range(exec, seqs.len(), |i| {
        let (run0, cache) = &first[i];
        let seq = &seqs[i];
        let mut cache = cache.clone();
        grid.iter()
            .map(|&r| {
                if r == 0.0 {
                    Ok(run0.failures.len())
                } else {
                    Ok(track_sequence_cached(tracker, seq, r, &mut cache)?.failures.len())
                }
            })
            .collect()
    });
    let counts = counts.into_iter().collect::<Result<Vec<_>>>()?;
    let fr_values: Vec<f64> = (0..grid.len())
        .map(|i| counts.iter().map(|c| c[i]).sum::<usize>() as f64 / scored as f64)
        .collect();
    let robustness = 1.0 - fr_values.iter().sum::<f64>() / fr_values.len() as f64;

    Ok(Evaluation {
        scores: Scores::new(accuracy, robustness, fps),
        tp_rot,
        fr_rt: Curve {
            thresholds: grid,
            values: fr_values,
        },
        runs: first.into_iter().map(|(r, _)| r).collect(),
    })
}

/// Frames per second of `tracker` over `r = 0` passes of every sequence.
pub fn measure_fps(tracker: &dyn Tracker, seqs: &[SequenceRecord], exec: Execution) -> Result<(f64, usize)> {
    if seqs.is_empty() {
        return Err(Error::Config("benchmark set is empty".into()));
    }
    let start = Instant::now();
    let runs = map_ordered(exec, seqs, |s| track_sequence(tracker, s, 0.0));
    let elapsed = start.elapsed().as_secs_f64();
    let frames = runs.into_iter().map(|r| r.map(|r| r.scored_frames())).sum::<Result<usize>>()?;
    Ok((frames as f64 / elapsed.max(1e-9), frames))
}

/// Human-readable throughput report with the real-time reference line.
pub fn fps_report(fps: f64) -> String {
    let verdict = if fps >= REALTIME_FPS { "meets" } else { "below" };
    format!("fps={fps:.3}\nreference: {REALTIME_FPS} FPS real-time threshold ({verdict})\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::FrameImage;
    use proptest::prelude::*;

    pub(crate) fn moving_sequence(n: usize) -> SequenceRecord {
        SequenceRecord {
            id: "s".into(),
            frames: (0..n).map(|_| FrameImage::filled(8, 8, [0, 0, 0])).collect(),
            annotations: (0..n).map(|t| SquareBox::frame(40.0 + 3.0 * t as f64, 50.0, 20.0)).collect(),
            fps: 30.0,
        }
    }

    #[test]
    fn step_integral_matches_worked_example() {
        assert!((accuracy_score(&[0.8, 0.6, 0.4]).unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(accuracy_score(&[1.0; 4]).unwrap(), 1.0);
        assert!(accuracy_score(&[]).is_err());
    }

    #[test]
    fn ground_truth_and_disjoint_runs() {
        let seq = moving_sequence(6);
        for r in [0.0, 0.3, 1.0] {
            let run = track_sequence(&GroundTruthTracker, &seq, r).unwrap();
            assert!(run.failures.is_empty());
            assert!(run.overlaps.iter().all(|&o| o == 1.0));
            let run = track_sequence(&DisjointTracker, &seq, r).unwrap();
            assert_eq!(run.failures, vec![1, 2, 3, 4, 5]);
            assert_eq!(run.scored_frames(), 5);
        }
    }

    #[test]
    fn failure_reinitializes_on_same_frame_ground_truth() {
        let seq = moving_sequence(4);
        let run = track_sequence(&StayPutTracker, &seq, 0.9).unwrap();
        // a 3px shift of a 20px box gives overlap 17/23 < 0.9 at every frame,
        // and each prediction is the previous frame's ground truth
        assert_eq!(run.failures, vec![1, 2, 3]);
        for t in 1..4 {
            assert_eq!(run.boxes[t], seq.annotations[t - 1]);
        }
    }

    #[test]
    fn boundary_overlap_is_not_a_failure() {
        let seq = moving_sequence(3);
        let q = region_overlap(&seq.annotations[0], &seq.annotations[1]).unwrap();
        let run = track_sequence(&StayPutTracker, &seq, q).unwrap();
        assert!(!run.failures.contains(&1));
    }

    #[test]
    fn scripted_overlaps_are_reproduced() {
        let seq = moving_sequence(5);
        let s = ScriptedTracker {
            overlaps: vec![0.0, 0.9, 0.37, 0.0, 0.61],
        };
        let run = track_sequence(&s, &seq, 0.0).unwrap();
        for (got, want) in run.overlaps.iter().zip(&s.overlaps[1..]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert_eq!(run.failures, vec![3]);
    }

    #[test]
    fn free_running_never_reinitializes() {
        let seq = moving_sequence(5);
        let boxes = track_free(&StayPutTracker, &seq).unwrap();
        assert!(boxes.iter().all(|b| *b == seq.annotations[0]));
    }

    #[test]
    fn cached_reruns_match_uncached() {
        let seq = moving_sequence(8);
        let mut cache = PredictionCache::new();
        for r in [0.0, 0.5, 0.8, 0.5] {
            let a = track_sequence_cached(&StayPutTracker, &seq, r, &mut cache).unwrap();
            let b = track_sequence(&StayPutTracker, &seq, r).unwrap();
            assert_eq!(a.overlaps, b.overlaps);
            assert_eq!(a.failures, b.failures);
        }
    }

    #[test]
    fn evaluation_of_stubs() {
        let seqs = vec![moving_sequence(5), moving_sequence(7)];
        let e = evaluate(&GroundTruthTracker, &seqs, 0.01, Execution::Sequential).unwrap();
        assert_eq!((e.scores.accuracy, e.scores.robustness, e.scores.overall), (1.0, 1.0, 1.0));
        assert!(e.scores.fps > 0.0);
        assert_eq!(e.tp_rot.values.len(), 101);
        let e = evaluate(&DisjointTracker, &seqs, 0.01, Execution::Parallel).unwrap();
        assert_eq!((e.scores.accuracy, e.scores.robustness, e.scores.overall), (0.0, 0.0, 0.0));
        assert!(evaluate(&GroundTruthTracker, &[], 0.01, Execution::Sequential).is_err());
    }

    #[test]
    fn grid_and_overall() {
        let g = threshold_grid(0.01).unwrap();
        assert_eq!((g.len(), g[0], g[100]), (101, 0.0, 1.0));
        assert!(threshold_grid(0.3).is_err());
        let s = Scores::new(0.789, 0.824, 1.0);
        assert!((s.overall - 0.8065).abs() < 1e-12);
        assert_eq!(Scores::new(0.4, 0.4, 1.0).overall, 0.4);
        assert!(fps_report(30.0).contains("25"));
    }

    proptest! {
        #[test]
        fn accuracy_is_mean_overlap(v in proptest::collection::vec(0.0f64..=1.0, 1..60)) {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            prop_assert!((accuracy_score(&v).unwrap() - mean).abs() < 1e-12);
        }

        #[test]
        fn tp_curve_is_non_increasing(v in proptest::collection::vec(0.0f64..=1.0, 1..60)) {
            let c = tp_rot_curve(&v, &threshold_grid(0.01).unwrap()).unwrap();
            prop_assert!(c.values.windows(2).all(|w| w[1] <= w[0]));
            prop_assert_eq!(c.values[100], 0.0);
        }
    }
}
