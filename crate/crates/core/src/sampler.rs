//! Scene eligibility and diversity-weighted scene selection.
//!
//! Candidate 30-second scenes are binned by three driving features
//! (steering extreme, acceleration extreme, turn-signal use) and drawn
//! without replacement with probability inversely proportional to the
//! smoothed occupancy of their bin, flattening the feature distribution of
//! the selected set.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{AlignedFrame, Gear};
use crate::SCENE_FRAMES;

/// Fastest eligible scene: 100 km/h.
pub const MAX_SPEED_MPS: f64 = 100.0 / 3.6;

/// Additive smoothing applied to cell counts before inversion.
pub const DEFAULT_DELTA: f64 = 50.0;

/// Per-scene driving summary used for diversity binning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFeatures {
    /// Largest |steering angle| over the scene, degrees.
    pub max_abs_steering: f64,
    /// Largest |longitudinal acceleration| over the scene, m/s².
    pub max_abs_accel: f64,
    /// Either blinker active on any frame.
    pub turn_signal_used: bool,
}

/// Bin edges for the two continuous feature axes. Values below the first
/// edge fall in bin 0; each edge starts the next bin (left-closed).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BinningConfig {
    pub steering_edges: Vec<f64>,
    pub accel_edges: Vec<f64>,
}

impl Default for BinningConfig {
    fn default() -> Self {
        BinningConfig {
            steering_edges: vec![5.0, 15.0, 45.0, 90.0, 180.0, 360.0, 540.0],
            accel_edges: vec![0.5, 1.0, 2.0, 3.0],
        }
    }
}

impl BinningConfig {
    pub fn validate(&self) -> Result<()> {
        for edges in [&self.steering_edges, &self.accel_edges] {
            if edges.is_empty() || edges.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config("bin edges must be strictly ascending".into()));
            }
        }
        Ok(())
    }
}

fn bin_index(x: f64, edges: &[f64]) -> usize {
    edges.partition_point(|e| *e <= x)
}

/// One cell of the joint feature distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub steering_bin: usize,
    pub accel_bin: usize,
    pub turn_signal: bool,
}

pub fn cell_of(f: &SceneFeatures, bins: &BinningConfig) -> Cell {
    Cell {
        steering_bin: bin_index(f.max_abs_steering, &bins.steering_edges),
        accel_bin: bin_index(f.max_abs_accel, &bins.accel_edges),
        turn_signal: f.turn_signal_used,
    }
}

/// Empirical joint distribution over feature cells.
#[derive(Debug, Clone)]
pub struct JointDistribution {
    pub counts: BTreeMap<Cell, u64>,
    pub delta: f64,
}

impl JointDistribution {
    pub fn from_features(features: &[SceneFeatures], bins: &BinningConfig, delta: f64) -> Self {
        let mut counts = BTreeMap::new();
        for f in features {
            *counts.entry(cell_of(f, bins)).or_insert(0) += 1;
        }
        JointDistribution { counts, delta }
    }

    pub fn count(&self, cell: &Cell) -> u64 {
        self.counts.get(cell).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }
}

/// A 30-second (600-frame) scene proposal within one recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneCandidate {
    pub recording_id: String,
    pub start_frame: usize,
    pub frame_count: usize,
    pub features: SceneFeatures,
    pub eligible: bool,
    pub weight: f64,
    /// Mean ego speed over the scene; kept for the distribution report.
    pub mean_speed_mps: f64,
}

impl SceneCandidate {
    pub fn scene_id(&self) -> String {
        format!("{}--{}", self.recording_id, self.start_frame)
    }

    fn overlaps(&self, other: &SceneCandidate) -> bool {
        self.recording_id == other.recording_id
            && self.start_frame < other.start_frame + other.frame_count
            && other.start_frame < self.start_frame + self.frame_count
    }
}

/// A scene qualifies when it stays in drive, never exceeds 100 km/h, and
/// has GNSS available on every frame.
pub fn eligibility(frames: &[AlignedFrame]) -> Result<bool> {
    if frames.len() != SCENE_FRAMES {
        return Err(Error::WrongLength { expected: SCENE_FRAMES, got: frames.len() });
    }
    Ok(frames.iter().all(|f| {
        f.gnss_available
            && f.can
                .as_ref()
                .is_some_and(|c| c.gear == Gear::Drive && c.v_ego <= MAX_SPEED_MPS)
    }))
}

/// Feature maxima over a scene's frames.
pub fn extract_features(frames: &[AlignedFrame]) -> SceneFeatures {
    let mut f = SceneFeatures { max_abs_steering: 0.0, max_abs_accel: 0.0, turn_signal_used: false };
    for frame in frames {
        if let Some(can) = &frame.can {
            f.max_abs_steering = f.max_abs_steering.max(can.steering_angle.abs());
            f.max_abs_accel = f.max_abs_accel.max(can.a_ego.abs());
            f.turn_signal_used |= can.left_blinker || can.right_blinker;
        }
    }
    f
}

/// Cut a recording into non-overlapping 600-frame candidates (a trailing
/// partial scene is dropped) and score their eligibility and features.
pub fn enumerate_candidates(recording_id: &str, frames: &[AlignedFrame]) -> Vec<SceneCandidate> {
    frames
        .chunks_exact(SCENE_FRAMES)
        .enumerate()
        .map(|(k, chunk)| {
            let speeds: Vec<f64> = chunk.iter().filter_map(|f| f.can.as_ref()).map(|c| c.v_ego).collect();
            let mean_speed_mps = if speeds.is_empty() {
                0.0
            } else {
                speeds.iter().sum::<f64>() / speeds.len() as f64
            };
            SceneCandidate {
                recording_id: recording_id.to_string(),
                start_frame: k * SCENE_FRAMES,
                frame_count: SCENE_FRAMES,
                features: extract_features(chunk),
                eligible: eligibility(chunk).expect("chunks_exact yields full scenes"),
                weight: 0.0,
                mean_speed_mps,
            }
        })
        .collect()
}

/// Normalized inverse-occupancy weights: w ∝ 1/(cell count + δ).
pub fn weights(features: &[SceneFeatures], bins: &BinningConfig, delta: f64) -> Vec<f64> {
    let dist = JointDistribution::from_features(features, bins, delta);
    let raw: Vec<f64> = features
        .iter()
        .map(|f| 1.0 / (dist.count(&cell_of(f, bins)) as f64 + delta))
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Write normalized weights onto the eligible candidates (ineligible ones
/// get weight 0 and are never drawn).
pub fn assign_weights(candidates: &mut [SceneCandidate], bins: &BinningConfig, delta: f64) {
    let eligible: Vec<SceneFeatures> =
        candidates.iter().filter(|c| c.eligible).map(|c| c.features.clone()).collect();
    if eligible.is_empty() {
        return;
    }
    let w = weights(&eligible, bins, delta);
    let mut it = w.into_iter();
    for c in candidates.iter_mut() {
        c.weight = if c.eligible { it.next().expect("one weight per eligible") } else { 0.0 };
    }
}

/// Weighted sampling without replacement via exponential keys: each
/// eligible candidate draws u from a seeded generator (in list order) and
/// is ranked by u^(1/w); the top `n` non-overlapping candidates win.
/// `n = None` keeps every eligible candidate that fits without overlap.
/// Output preserves input order.
pub fn sample_scenes(
    candidates: &[SceneCandidate],
    n: Option<usize>,
    seed: u64,
) -> Result<Vec<SceneCandidate>> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut keyed: Vec<(f64, usize)> = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        if !c.eligible {
            continue;
        }
        let u: f64 = rng.random();
        keyed.push((u.powf(1.0 / c.weight), i));
    }
    // Highest key first; ties (and NaN from w=0) lose to list order.
    keyed.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Greater).then(a.1.cmp(&b.1)));

    let mut chosen: Vec<usize> = Vec::new();
    for (_, i) in keyed {
        if n.is_some_and(|n| chosen.len() >= n) {
            break;
        }
        if chosen.iter().all(|&j| !candidates[i].overlaps(&candidates[j])) {
            chosen.push(i);
        }
    }
    if let Some(n) = n {
        if chosen.len() < n {
            return Err(Error::NotEnoughScenes { wanted: n, available: chosen.len() });
        }
    }
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| candidates[i].clone()).collect())
}

/// Marginal histograms (speed in 10 km/h bins, steering by the sampling
/// edges) with Shannon entropies, before and after selection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistributionReport {
    pub speed_hist_before: Vec<u64>,
    pub speed_hist_after: Vec<u64>,
    pub steering_hist_before: Vec<u64>,
    pub steering_hist_after: Vec<u64>,
    pub speed_entropy_before: f64,
    pub speed_entropy_after: f64,
    pub steering_entropy_before: f64,
    pub steering_entropy_after: f64,
    /// Set when the after-set is empty; its histograms are all zero.
    pub empty_selection: bool,
}

/// Shannon entropy of a count histogram, in bits.
pub fn entropy_bits(hist: &[u64]) -> f64 {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let h: f64 = hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.log2()
        })
        .sum();
    // A single occupied bin sums to -0.0; normalize the sign.
    h + 0.0
}

const SPEED_BIN_KMH: f64 = 10.0;
const SPEED_BINS: usize = 11; // 0..110 km/h covers the eligibility range

fn speed_hist(scenes: &[SceneCandidate]) -> Vec<u64> {
    let mut hist = vec![0u64; SPEED_BINS];
    for s in scenes {
        let idx = ((s.mean_speed_mps * 3.6 / SPEED_BIN_KMH) as usize).min(SPEED_BINS - 1);
        hist[idx] += 1;
    }
    hist
}

fn steering_hist(scenes: &[SceneCandidate], bins: &BinningConfig) -> Vec<u64> {
    let mut hist = vec![0u64; bins.steering_edges.len() + 1];
    for s in scenes {
        hist[bin_index(s.features.max_abs_steering, &bins.steering_edges)] += 1;
    }
    hist
}

pub fn distribution_report(
    before: &[SceneCandidate],
    after: &[SceneCandidate],
    bins: &BinningConfig,
) -> DistributionReport {
    let sb = speed_hist(before);
    let sa = speed_hist(after);
    let tb = steering_hist(before, bins);
    let ta = steering_hist(after, bins);
    DistributionReport {
        speed_entropy_before: entropy_bits(&sb),
        speed_entropy_after: entropy_bits(&sa),
        steering_entropy_before: entropy_bits(&tb),
        steering_entropy_after: entropy_bits(&ta),
        speed_hist_before: sb,
        speed_hist_after: sa,
        steering_hist_before: tb,
        steering_hist_after: ta,
        empty_selection: after.is_empty(),
    }
}
