//! Trajectory-prediction evaluation: displacement metrics, dataset
//! splitting with 2 Hz subsampling, a kinematic baseline predictor, and
//! word-level error attribution over caption mismatches.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::FrameRecord;
use crate::error::{Error, Result};
use crate::trajectory::SUBSAMPLE_INDICES;
use crate::{FRAME_HZ, TRAJECTORY_LEN};

/// A prediction/ground-truth pair with the captions that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPair {
    pub predicted: Vec<[f64; 3]>,
    pub ground_truth: Vec<[f64; 3]>,
    pub gt_caption: String,
    pub predicted_caption: String,
}

/// Aggregate displacement metrics. Per-pair ADE is averaged over pairs
/// (macro averaging), same for FDE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub ade: f64,
    pub fde: f64,
    pub count: usize,
}

fn check_lengths(predicted: &[[f64; 3]], truth: &[[f64; 3]]) -> Result<()> {
    if predicted.len() != truth.len() {
        return Err(Error::WrongLength { expected: truth.len(), got: predicted.len() });
    }
    if predicted.is_empty() {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    Ok(())
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Mean Euclidean distance over corresponding points.
pub fn ade(predicted: &[[f64; 3]], truth: &[[f64; 3]]) -> Result<f64> {
    check_lengths(predicted, truth)?;
    let sum: f64 = predicted.iter().zip(truth).map(|(p, t)| dist(p, t)).sum();
    Ok(sum / predicted.len() as f64)
}

/// Euclidean distance between the final points.
pub fn fde(predicted: &[[f64; 3]], truth: &[[f64; 3]]) -> Result<f64> {
    check_lengths(predicted, truth)?;
    Ok(dist(predicted.last().unwrap(), truth.last().unwrap()))
}

/// Macro-averaged metrics over a pair set.
pub fn evaluate(pairs: &[TrajectoryPair]) -> Result<EvalResult> {
    let mut ade_sum = 0.0;
    let mut fde_sum = 0.0;
    for pair in pairs {
        ade_sum += ade(&pair.predicted, &pair.ground_truth)?;
        fde_sum += fde(&pair.predicted, &pair.ground_truth)?;
    }
    let n = pairs.len().max(1) as f64;
    Ok(EvalResult { ade: ade_sum / n, fde: fde_sum / n, count: pairs.len() })
}

/// Scene-level split fractions, shuffle seed, and eval frame rate.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
    pub frame_rate_hz: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train_frac: 0.70, val_frac: 0.15, test_frac: 0.15, seed: 0, frame_rate_hz: 2.0 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let sum = self.train_frac + self.val_frac + self.test_frac;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions sum to {sum}, expected 1")));
        }
        if self.frame_rate_hz <= 0.0 || FRAME_HZ % self.frame_rate_hz != 0.0 {
            return Err(Error::Config(format!(
                "frame rate {} Hz must divide {FRAME_HZ} Hz",
                self.frame_rate_hz
            )));
        }
        Ok(())
    }
}

/// One evaluation-ready frame: the ground-truth future subsampled to 10
/// points plus the state the baseline predictor needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalFrame {
    pub scene_id: String,
    pub frame_id: u64,
    pub points: Vec<[f64; 3]>,
    pub v_ego: f64,
    pub steering_angle_deg: f64,
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<EvalFrame>,
    pub val: Vec<EvalFrame>,
    pub test: Vec<EvalFrame>,
    /// Scene ids per split, in shuffled order.
    pub scenes: (Vec<String>, Vec<String>, Vec<String>),
}

fn eval_frames(scene_id: &str, records: &[FrameRecord], stride: usize) -> Vec<EvalFrame> {
    records
        .iter()
        .step_by(stride)
        .filter(|r| r.trajectory_count == TRAJECTORY_LEN)
        .map(|r| EvalFrame {
            scene_id: scene_id.to_string(),
            frame_id: r.frame_id,
            points: SUBSAMPLE_INDICES.iter().map(|&i| r.trajectory[i]).collect(),
            v_ego: r.v_ego,
            steering_angle_deg: r.steering_angle_deg,
            caption: r.caption.clone(),
        })
        .collect()
}

/// Split scenes 70/15/15 by seeded shuffle (train and val sizes floor; test
/// takes the remainder), then keep every 10th frame (2 Hz) whose trajectory
/// is complete and subsample it to 10 points.
pub fn split_and_subsample(scenes: &[(String, Vec<FrameRecord>)], spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let stride = (FRAME_HZ / spec.frame_rate_hz) as usize;

    let mut order: Vec<usize> = (0..scenes.len()).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);

    let n = scenes.len();
    let n_train = (spec.train_frac * n as f64).floor() as usize;
    let n_val = (spec.val_frac * n as f64).floor() as usize;

    let mut split = Split {
        train: vec![],
        val: vec![],
        test: vec![],
        scenes: (vec![], vec![], vec![]),
    };
    for (rank, &i) in order.iter().enumerate() {
        let (id, records) = &scenes[i];
        let frames = eval_frames(id, records, stride);
        if rank < n_train {
            split.scenes.0.push(id.clone());
            split.train.extend(frames);
        } else if rank < n_train + n_val {
            split.scenes.1.push(id.clone());
            split.val.extend(frames);
        } else {
            split.scenes.2.push(id.clone());
            split.test.extend(frames);
        }
    }
    Ok(split)
}

/// Horizon of the baseline prediction: the 10 subsample instants, ending at
/// 3 s.
const BASELINE_TIMES: [f64; 10] = [0.3, 0.6, 0.9, 1.2, 1.5, 1.8, 2.1, 2.4, 2.7, 3.0];

/// Wheelbase of the kinematic bicycle model, meters.
pub const BASELINE_WHEELBASE_M: f64 = 2.7;

/// Constant-speed, constant-steering bicycle-model rollout: yaw rate
/// v·tan(δ)/L, sampled at the ten subsample instants.
pub fn baseline_predict(record: &FrameRecord) -> Vec<[f64; 3]> {
    baseline_rollout(record.v_ego, record.steering_angle_deg)
}

/// [`baseline_predict`] from the bare state.
pub fn baseline_rollout(v_ego: f64, steering_angle_deg: f64) -> Vec<[f64; 3]> {
    let v = v_ego;
    if v == 0.0 {
        return vec![[0.0; 3]; SUBSAMPLE_INDICES.len()];
    }
    let delta = steering_angle_deg.to_radians();
    let yaw_rate = v * delta.tan() / BASELINE_WHEELBASE_M;
    BASELINE_TIMES
        .iter()
        .map(|&t| {
            if yaw_rate.abs() < 1e-12 {
                [v * t, 0.0, 0.0]
            } else {
                let r = v / yaw_rate;
                let theta = yaw_rate * t;
                [r * theta.sin(), r * (1.0 - theta.cos()), 0.0]
            }
        })
        .collect()
}

/// Small English stopword list for attribution; overridable via config.
pub const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "for", "from", "has", "have", "he",
    "her", "his", "i", "in", "is", "it", "its", "no", "not", "of", "on", "or", "she", "that",
    "the", "their", "there", "they", "this", "to", "was", "were", "will", "with", "you",
];

/// Mean error over the pairs where a word appears on exactly one side of
/// the caption pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordAttribution {
    pub word: String,
    pub mean_ade: f64,
    pub mean_fde: f64,
    pub frequency: usize,
}

fn tokens(text: &str) -> std::collections::BTreeSet<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Attribute displacement error to caption-word mismatches: a word counts
/// for a pair when it occurs in exactly one of the ground-truth and
/// predicted captions. Words appearing in at most `min_freq` mismatching
/// pairs are dropped, as are stopwords. Returns the ranking by mean ADE
/// and by mean FDE (they legitimately differ).
pub fn word_attribution(
    pairs: &[TrajectoryPair],
    stopwords: &[&str],
    min_freq: usize,
) -> Result<(Vec<WordAttribution>, Vec<WordAttribution>)> {
    use std::collections::BTreeMap;
    let stop: std::collections::BTreeSet<&str> = stopwords.iter().copied().collect();
    let mut sums: BTreeMap<String, (f64, f64, usize)> = BTreeMap::new();
    for pair in pairs {
        let pair_ade = ade(&pair.predicted, &pair.ground_truth)?;
        let pair_fde = fde(&pair.predicted, &pair.ground_truth)?;
        let gt = tokens(&pair.gt_caption);
        let pred = tokens(&pair.predicted_caption);
        for word in gt.symmetric_difference(&pred) {
            if stop.contains(word.as_str()) {
                continue;
            }
            let entry = sums.entry(word.clone()).or_insert((0.0, 0.0, 0));
            entry.0 += pair_ade;
            entry.1 += pair_fde;
            entry.2 += 1;
        }
    }
    let mut rows: Vec<WordAttribution> = sums
        .into_iter()
        .filter(|(_, (_, _, freq))| *freq > min_freq)
        .map(|(word, (ade_sum, fde_sum, freq))| WordAttribution {
            word,
            mean_ade: ade_sum / freq as f64,
            mean_fde: fde_sum / freq as f64,
            frequency: freq,
        })
        .collect();

    let mut by_ade = rows.clone();
    by_ade.sort_by(|a, b| b.mean_ade.total_cmp(&a.mean_ade).then(a.word.cmp(&b.word)));
    rows.sort_by(|a, b| b.mean_fde.total_cmp(&a.mean_fde).then(a.word.cmp(&b.word)));
    Ok((by_ade, rows))
}
