//! Two-level micro-expression features: clips, per-expression detectors and
//! per-video pooling.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::classifiers::{self, ClassifierKind, ClassifierSpec, FeatureMatrix, TrainedModel};
use crate::data::DescriptorBag;
use crate::provenance::Provenance;
use crate::{Error, Result};

pub const EXPRESSION_COUNT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Expression {
    Frown,
    EyebrowsRaise,
    LipsUp,
    LipsProtruded,
    HeadSideTurn,
}

impl Expression {
    pub const ALL: [Expression; EXPRESSION_COUNT] = [
        Expression::Frown,
        Expression::EyebrowsRaise,
        Expression::LipsUp,
        Expression::LipsProtruded,
        Expression::HeadSideTurn,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn slug(self) -> &'static str {
        match self {
            Expression::Frown => "frown",
            Expression::EyebrowsRaise => "eyebrows-raise",
            Expression::LipsUp => "lips-up",
            Expression::LipsProtruded => "lips-protruded",
            Expression::HeadSideTurn => "head-side-turn",
        }
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for Expression {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Expression::ALL
            .into_iter()
            .find(|e| e.slug() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown expression {s:?}")))
    }
}

/// Presence of each expression in one clip, in [`Expression::ALL`] order.
/// Serialized as an array of five 0/1 integers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ExpressionBits(pub [bool; EXPRESSION_COUNT]);

impl ExpressionBits {
    pub fn get(&self, e: Expression) -> bool {
        self.0[e.index()]
    }
}

impl Serialize for ExpressionBits {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.map(u8::from).serialize(s)
    }
}

impl<'de> Deserialize<'de> for ExpressionBits {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = <[i64; EXPRESSION_COUNT]>::deserialize(d)?;
        let mut bits = [false; EXPRESSION_COUNT];
        for (b, v) in bits.iter_mut().zip(raw) {
            *b = match v {
                0 => false,
                1 => true,
                other => {
                    return Err(serde::de::Error::custom(format!(
                        "expression bit {other} is outside {{0, 1}}"
                    )))
                }
            };
        }
        Ok(ExpressionBits(bits))
    }
}

/// Per-expression scores, in [`Expression::ALL`] order.
pub type ExpressionScores = [f64; EXPRESSION_COUNT];

/// One fixed-duration window `[start_frame, end_frame)`. Windows with no
/// descriptor rows keep a `None` bag so clip indices stay aligned with
/// annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub start_frame: u32,
    pub end_frame: u32,
    pub bag: Option<DescriptorBag>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipSet {
    pub video_id: String,
    pub clips: Vec<Clip>,
}

impl ClipSet {
    pub fn clip_count(&self) -> usize {
        self.clips.len()
    }

    pub fn total_rows(&self) -> usize {
        self.clips.iter().filter_map(|c| c.bag.as_ref()).map(DescriptorBag::len).sum()
    }
}

/// Frame windows for a video lasting `duration` frames. A trailing
/// remainder of at least half a window becomes its own clip, a shorter one
/// extends the last full window, and a video shorter than one window is a
/// single clip.
pub fn clip_windows(duration: u32, window: u32) -> Vec<(u32, u32)> {
    let full = duration / window;
    if full == 0 {
        return vec![(0, duration)];
    }
    let mut windows: Vec<(u32, u32)> = (0..full).map(|i| (i * window, (i + 1) * window)).collect();
    let remainder = duration - full * window;
    if remainder > 0 {
        if 2 * remainder >= window {
            windows.push((full * window, duration));
        } else {
            windows.last_mut().expect("at least one window").1 = duration;
        }
    }
    windows
}

/// Window length in frames for `clip_seconds` at `fps`.
pub fn window_frames(fps: f64, clip_seconds: f64) -> Result<u32> {
    let w = (fps * clip_seconds).round();
    if !(fps > 0.0 && clip_seconds > 0.0) || w < 1.0 || !w.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "clip window of {clip_seconds} s at {fps} fps has no frames"
        )));
    }
    Ok(w as u32)
}

/// Partitions a timestamped bag into clips. The video is taken to start at
/// frame 0 and end after its last timestamp.
pub fn segment_clips(video_id: &str, bag: &DescriptorBag, fps: f64, clip_seconds: f64) -> Result<ClipSet> {
    let window = window_frames(fps, clip_seconds)?;
    let ts = bag
        .timestamps()
        .ok_or_else(|| Error::Format(format!("video {video_id}: descriptors have no frame indices")))?;
    if ts.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Format(format!(
            "video {video_id}: frame indices are not nondecreasing"
        )));
    }
    let duration = ts.last().copied().unwrap_or(0) + 1;
    let mut clips = Vec::new();
    let mut row = 0usize;
    for (start, end) in clip_windows(duration, window) {
        let begin = row;
        while row < ts.len() && ts[row] < end {
            row += 1;
        }
        let indices: Vec<usize> = (begin..row).collect();
        clips.push(Clip {
            start_frame: start,
            end_frame: end,
            bag: if indices.is_empty() {
                None
            } else {
                Some(bag.select(&indices)?)
            },
        });
    }
    Ok(ClipSet {
        video_id: video_id.to_string(),
        clips,
    })
}

/// Expands manifest annotations to one bit vector per clip. With
/// `broadcast`, a single video-level vector is copied to every clip.
pub fn clip_labels_for(
    video_id: &str,
    labels: Option<&[ExpressionBits]>,
    clip_count: usize,
    broadcast: bool,
) -> Result<Vec<ExpressionBits>> {
    let labels = labels.ok_or_else(|| {
        Error::Format(format!("video {video_id}: no micro-expression annotations"))
    })?;
    match labels.len() {
        n if n == clip_count => Ok(labels.to_vec()),
        1 if broadcast => Ok(vec![labels[0]; clip_count]),
        n => Err(Error::Format(format!(
            "video {video_id}: {n} clip annotations for {clip_count} clips"
        ))),
    }
}

/// Per-video ground-truth feature: the fraction of clips showing each
/// expression.
pub fn ground_truth_features(labels: &[ExpressionBits]) -> ExpressionScores {
    let mut out = [0.0; EXPRESSION_COUNT];
    for bits in labels {
        for (o, &b) in out.iter_mut().zip(&bits.0) {
            *o += f64::from(u8::from(b));
        }
    }
    let n = labels.len().max(1) as f64;
    out.map(|v| v / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorOutput {
    /// Raw SVM margin.
    #[default]
    Margin,
    /// Margin mapped through a sigmoid fit on the training clips.
    Probability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorOptions {
    pub c: f64,
    pub output: DetectorOutput,
    pub seed: u64,
}

impl Default for DetectorOptions {
    fn default() -> Self {
        DetectorOptions {
            c: 1.0,
            output: DetectorOutput::Margin,
            seed: 0,
        }
    }
}

/// Sigmoid `1 / (1 + exp(a m + b))` over margins `m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlattScaling {
    pub a: f64,
    pub b: f64,
}

impl PlattScaling {
    /// Fits with the usual smoothed targets by minimizing cross-entropy.
    pub fn fit(margins: &[f64], labels: &[bool]) -> Self {
        let pos = labels.iter().filter(|&&l| l).count() as f64;
        let neg = labels.len() as f64 - pos;
        let hi = (pos + 1.0) / (pos + 2.0);
        let lo = 1.0 / (neg + 2.0);
        let targets: Vec<f64> = labels.iter().map(|&l| if l { hi } else { lo }).collect();
        let theta = crate::classifiers::lbfgs(
            |t, g| {
                g[0] = 0.0;
                g[1] = 0.0;
                let mut value = 0.0;
                for (&m, &y) in margins.iter().zip(&targets) {
                    let z = t[0] * m + t[1];
                    // p = sigmoid(-z); loss = -y ln p - (1 - y) ln(1 - p)
                    let log_p = -softplus(z);
                    let log_q = -softplus(-z);
                    value -= y * log_p + (1.0 - y) * log_q;
                    let p = log_p.exp();
                    let d = y - p;
                    g[0] += d * m;
                    g[1] += d;
                }
                value
            },
            vec![0.0, ((neg + 1.0) / (pos + 1.0)).ln()],
            1e-8,
            200,
        );
        PlattScaling { a: theta[0], b: theta[1] }
    }

    pub fn apply(&self, margin: f64) -> f64 {
        let z = self.a * margin + self.b;
        (-softplus(z)).exp()
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpressionDetector {
    pub expression: Expression,
    /// `None` when the training clips were all one class; the detector
    /// then scores every clip 0.
    pub model: Option<TrainedModel>,
    pub calibration: Option<PlattScaling>,
}

impl ExpressionDetector {
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        let Some(model) = &self.model else {
            return Ok(0.0);
        };
        let m = classifiers::predict_score(model, x)?;
        Ok(match &self.calibration {
            Some(p) => p.apply(m),
            None => m,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSet {
    pub detectors: Vec<ExpressionDetector>,
    pub warnings: Vec<String>,
    /// Videos whose clips were used for training.
    pub provenance: Provenance,
}

/// Trains one linear SVM per expression on clip Fisher Vectors.
/// `clip_sources[i]` names the (video, identity) that clip `i` came from.
pub fn train_expression_detectors(
    clip_fvs: &FeatureMatrix,
    clip_labels: &[ExpressionBits],
    clip_sources: &[(&str, &str)],
    options: &DetectorOptions,
) -> Result<DetectorSet> {
    if clip_fvs.rows() != clip_labels.len() || clip_labels.len() != clip_sources.len() {
        return Err(Error::DimensionMismatch {
            expected: clip_fvs.rows(),
            found: clip_labels.len(),
        });
    }
    if clip_fvs.rows() == 0 {
        return Err(Error::Empty("training clips".into()));
    }
    let mut spec = ClassifierSpec::new(ClassifierKind::LinearSvm);
    spec.c = options.c;
    spec.c_grid.clear();
    spec.seed = options.seed;

    let mut detectors = Vec::with_capacity(EXPRESSION_COUNT);
    let mut warnings = Vec::new();
    for e in Expression::ALL {
        let y: Vec<bool> = clip_labels.iter().map(|b| b.get(e)).collect();
        let positives = y.iter().filter(|&&v| v).count();
        if positives == 0 || positives == y.len() {
            let msg = format!(
                "{e} detector untrainable: all {} training clips are {}",
                y.len(),
                if positives == 0 { "negative" } else { "positive" }
            );
            log::warn!("{msg}");
            warnings.push(msg);
            detectors.push(ExpressionDetector {
                expression: e,
                model: None,
                calibration: None,
            });
            continue;
        }
        let model = classifiers::train(&spec, clip_fvs, &y)?;
        let calibration = match options.output {
            DetectorOutput::Margin => None,
            DetectorOutput::Probability => {
                let margins = classifiers::predict_scores(&model, clip_fvs)?;
                Some(PlattScaling::fit(&margins, &y))
            }
        };
        detectors.push(ExpressionDetector {
            expression: e,
            model: Some(model),
            calibration,
        });
    }
    let provenance = Provenance::from_pairs(clip_sources.iter().copied());
    Ok(DetectorSet {
        detectors,
        warnings,
        provenance,
    })
}

impl DetectorSet {
    pub fn score_clip(&self, x: &[f64]) -> Result<ExpressionScores> {
        let mut out = [0.0; EXPRESSION_COUNT];
        for (o, d) in out.iter_mut().zip(&self.detectors) {
            *o = d.score(x)?;
        }
        Ok(out)
    }
}

/// Mean of per-clip detector scores.
pub fn score_video<'a, I>(detectors: &DetectorSet, clip_fvs: I) -> Result<ExpressionScores>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut sum = [0.0; EXPRESSION_COUNT];
    let mut n = 0usize;
    for x in clip_fvs {
        let s = detectors.score_clip(x)?;
        for (a, b) in sum.iter_mut().zip(s) {
            *a += b;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Empty("video has no scorable clips".into()));
    }
    Ok(sum.map(|v| v / n as f64))
}

/// Keeps the columns of the chosen expressions, in [`Expression::ALL`]
/// order.
pub fn select_expressions(scores: &ExpressionScores, subset: &BTreeSet<Expression>) -> Vec<f64> {
    Expression::ALL
        .iter()
        .filter(|e| subset.contains(e))
        .map(|e| scores[e.index()])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::auc_pr;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn timed_bag(seconds: f64, fps: f64) -> DescriptorBag {
        let frames = (seconds * fps).round() as u32;
        let data: Vec<f64> = (0..frames).map(f64::from).collect();
        DescriptorBag::new(1, data, Some((0..frames).collect())).unwrap()
    }

    #[test]
    fn clip_counts() {
        let count = |s: f64| segment_clips("v", &timed_bag(s, 15.0), 15.0, 4.0).unwrap().clip_count();
        assert_eq!(count(12.0), 3);
        assert_eq!(count(10.0), 3);
        assert_eq!(count(3.0), 1);
        assert_eq!(count(9.0), 2);
        let set = segment_clips("v", &timed_bag(10.0, 15.0), 15.0, 4.0).unwrap();
        assert_eq!(set.clips[2].start_frame, 120);
        assert_eq!(set.clips[2].bag.as_ref().unwrap().len(), 30);
    }

    #[test]
    fn empty_windows_keep_placeholders() {
        let bag = DescriptorBag::new(1, vec![1.0, 2.0], Some(vec![0, 130])).unwrap();
        let set = segment_clips("v", &bag, 15.0, 4.0).unwrap();
        assert_eq!(set.clip_count(), 2);
        assert!(set.clips[1].bag.is_some());
        let bag = DescriptorBag::new(1, vec![1.0, 2.0], Some(vec![0, 200])).unwrap();
        let set = segment_clips("v", &bag, 15.0, 4.0).unwrap();
        assert_eq!(set.clip_count(), 3);
        assert!(set.clips[1].bag.is_none());
    }

    #[test]
    fn segmentation_requires_ordered_frames() {
        let bag = DescriptorBag::new(1, vec![1.0, 2.0], Some(vec![5, 3])).unwrap();
        assert!(segment_clips("v", &bag, 15.0, 4.0).is_err());
        let bag = DescriptorBag::new(1, vec![1.0], None).unwrap();
        assert!(segment_clips("v", &bag, 15.0, 4.0).is_err());
    }

    #[test]
    fn bits_serde() {
        let b: ExpressionBits = serde_json::from_str("[1,0,0,1,0]").unwrap();
        assert_eq!(b, ExpressionBits([true, false, false, true, false]));
        assert_eq!(serde_json::to_string(&b).unwrap(), "[1,0,0,1,0]");
        assert!(serde_json::from_str::<ExpressionBits>("[2,0,0,1,0]").is_err());
        assert!(serde_json::from_str::<ExpressionBits>("[1,0,0,1]").is_err());
    }

    #[test]
    fn label_expansion() {
        let one = [ExpressionBits([true; 5])];
        assert_eq!(clip_labels_for("v", Some(&one), 3, true).unwrap().len(), 3);
        assert!(clip_labels_for("v", Some(&one), 3, false).is_err());
        assert!(clip_labels_for("v", None, 3, true).is_err());
        let gt = ground_truth_features(&[
            ExpressionBits([true, false, false, false, false]),
            ExpressionBits([false, false, false, false, true]),
        ]);
        assert_eq!(gt, [0.5, 0.0, 0.0, 0.0, 0.5]);
    }

    fn separable_clips(n: usize, seed: u64) -> (FeatureMatrix, Vec<ExpressionBits>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let bits: [bool; 5] = std::array::from_fn(|_| rng.random::<bool>());
            let row: Vec<f64> = bits
                .iter()
                .map(|&b| if b { 2.0 } else { -2.0 } + rng.random::<f64>() - 0.5)
                .collect();
            rows.push(row);
            labels.push(ExpressionBits(bits));
        }
        (FeatureMatrix::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn separable_detectors_rank_held_out_clips() {
        let (x, labels) = separable_clips(80, 1);
        let sources = vec![("v", "p"); 80];
        let set = train_expression_detectors(&x, &labels, &sources, &DetectorOptions::default()).unwrap();
        assert!(set.warnings.is_empty());
        let (tx, tl) = separable_clips(60, 2);
        for e in Expression::ALL {
            let scores: Vec<f64> = tx.iter_rows().map(|r| set.detectors[e.index()].score(r).unwrap()).collect();
            let y: Vec<bool> = tl.iter().map(|b| b.get(e)).collect();
            assert!(auc_pr(&scores, &y).unwrap() >= 0.99);
        }
    }

    #[test]
    fn single_class_expression_is_untrainable() {
        let (x, mut labels) = separable_clips(40, 3);
        labels.iter_mut().for_each(|b| b.0[0] = false);
        let sources = vec![("v", "p"); 40];
        let set = train_expression_detectors(&x, &labels, &sources, &DetectorOptions::default()).unwrap();
        assert!(set.detectors[0].model.is_none());
        assert_eq!(set.warnings.len(), 1);
        assert_eq!(set.detectors[0].score(x.row(0)).unwrap(), 0.0);
    }

    #[test]
    fn pooling_is_a_mean() {
        let (x, labels) = separable_clips(40, 4);
        let sources = vec![("v", "p"); 40];
        let options = DetectorOptions {
            output: DetectorOutput::Probability,
            ..DetectorOptions::default()
        };
        let set = train_expression_detectors(&x, &labels, &sources, &options).unwrap();
        let a = set.score_clip(x.row(0)).unwrap();
        let b = set.score_clip(x.row(1)).unwrap();
        assert!(a.iter().all(|p| (0.0..=1.0).contains(p)));
        let pooled = score_video(&set, [x.row(0), x.row(1)]).unwrap();
        let swapped = score_video(&set, [x.row(1), x.row(0)]).unwrap();
        for i in 0..EXPRESSION_COUNT {
            assert!((pooled[i] - (a[i] + b[i]) / 2.0).abs() < 1e-15);
            assert!((pooled[i] - swapped[i]).abs() < 1e-15);
        }
        let same = score_video(&set, [x.row(0), x.row(0), x.row(0)]).unwrap();
        for i in 0..EXPRESSION_COUNT {
            assert!((same[i] - a[i]).abs() < 1e-12);
        }
        assert!(score_video(&set, std::iter::empty()).is_err());
    }
}
