//! Frame captioning: deterministic rule-based sentences from vehicle state,
//! plus optional free-form augmentation from a vision-language model reached
//! over HTTP, constrained by the rule text.

pub mod client;
pub mod mock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ArrowDirection, LeadVehicleObs, LightState};
use crate::trajectory::EgoTrajectory;
use crate::{SCENE_FRAMES, TRAJECTORY_LEN};

pub use client::{HttpVlmClient, VlmClient};

/// Everything the rule templates look at for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameContext {
    /// m/s.
    pub speed: f64,
    /// m/s², positive forward.
    pub accel: f64,
    /// 1/m, positive turning left.
    pub curvature: f64,
    pub lead: Option<LeadVehicleObs>,
    pub traffic_light: Option<LightState>,
    pub blinker: Blinker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Blinker {
    None,
    Left,
    Right,
}

/// Band edges for the rule templates.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CaptionThresholds {
    /// Below this speed the vehicle counts as stopped, m/s.
    pub stopped_speed: f64,
    /// |a_ego| above this is accelerating / decelerating, m/s².
    pub accel_band: f64,
    /// |curvature| below this is straight, 1/m.
    pub curvature_gentle: f64,
    /// |curvature| above this is a turn (between: a gentle curve), 1/m.
    pub curvature_turn: f64,
    /// Speed bands for slow / moderate / fast, km/h.
    pub speed_slow_kmh: f64,
    pub speed_fast_kmh: f64,
}

impl Default for CaptionThresholds {
    fn default() -> Self {
        CaptionThresholds {
            stopped_speed: 0.5,
            accel_band: 0.5,
            curvature_gentle: 0.002,
            curvature_turn: 0.01,
            speed_slow_kmh: 30.0,
            speed_fast_kmh: 60.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClauseTag {
    Motion,
    Steering,
    Lead,
    Light,
    Signal,
}

/// Deterministic caption with its constituent clauses in a fixed order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleCaption {
    pub text: String,
    pub clauses: Vec<(ClauseTag, String)>,
}

/// Signed curvature of a complete trajectory: total heading change over
/// arc length in the ground plane. Positive is a left turn; trajectories
/// shorter than 1 m of arc report zero.
pub fn curvature(traj: &EgoTrajectory) -> Result<f64> {
    if !traj.complete {
        return Err(Error::IncompleteTrajectory);
    }
    let mut arc = 0.0;
    let mut total_turn = 0.0;
    let mut prev_heading: Option<f64> = None;
    for w in traj.points.windows(2) {
        let (dx, dy) = (w[1][0] - w[0][0], w[1][1] - w[0][1]);
        let step = (dx * dx + dy * dy).sqrt();
        if step < 1e-6 {
            continue;
        }
        arc += step;
        let heading = dy.atan2(dx);
        if let Some(prev) = prev_heading {
            let mut delta = heading - prev;
            while delta > std::f64::consts::PI {
                delta -= std::f64::consts::TAU;
            }
            while delta < -std::f64::consts::PI {
                delta += std::f64::consts::TAU;
            }
            total_turn += delta;
        }
        prev_heading = Some(heading);
    }
    if arc < 1.0 {
        return Ok(0.0);
    }
    Ok(total_turn / arc)
}

/// Render the fixed clause templates for one frame. Pure: equal contexts
/// yield byte-equal text.
pub fn rule_caption(ctx: &FrameContext, t: &CaptionThresholds) -> RuleCaption {
    let mut clauses: Vec<(ClauseTag, String)> = Vec::new();

    if ctx.speed < t.stopped_speed {
        clauses.push((ClauseTag::Motion, "The vehicle is stopped.".to_string()));
    } else {
        let motion = if ctx.accel > t.accel_band {
            "accelerating"
        } else if ctx.accel < -t.accel_band {
            "decelerating"
        } else {
            "maintaining speed"
        };
        let kmh = ctx.speed * 3.6;
        let band = if kmh < t.speed_slow_kmh {
            "slowly"
        } else if kmh < t.speed_fast_kmh {
            "at moderate speed"
        } else {
            "fast"
        };
        clauses.push((ClauseTag::Motion, format!("The vehicle is {motion}, driving {band}.")));

        let k = ctx.curvature;
        let steering = if k.abs() < t.curvature_gentle {
            "The road ahead is straight.".to_string()
        } else {
            let side = if k > 0.0 { "left" } else { "right" };
            if k.abs() <= t.curvature_turn {
                format!("The vehicle is following a gentle curve to the {side}.")
            } else {
                format!("The vehicle is turning {side}.")
            }
        };
        clauses.push((ClauseTag::Steering, steering));
    }

    if let Some(lead) = &ctx.lead {
        clauses.push((
            ClauseTag::Lead,
            format!("A leading vehicle is present {:.0} meters ahead.", lead.rel_position.0),
        ));
    }

    if let Some(light) = &ctx.traffic_light {
        let sentence = match light {
            LightState::Red => "A red traffic light is visible.".to_string(),
            LightState::Yellow => "A yellow traffic light is visible.".to_string(),
            LightState::Green => "A green traffic light is visible.".to_string(),
            LightState::RedWithArrow(dir) => {
                let d = match dir {
                    ArrowDirection::Left => "left",
                    ArrowDirection::Right => "right",
                    ArrowDirection::Straight => "straight",
                };
                format!("A red traffic light with a {d} arrow is visible.")
            }
            LightState::Unknown => "A traffic light is visible.".to_string(),
        };
        clauses.push((ClauseTag::Light, sentence));
    }

    match ctx.blinker {
        Blinker::Left => {
            clauses.push((ClauseTag::Signal, "The left turn signal is active.".to_string()));
        }
        Blinker::Right => {
            clauses.push((ClauseTag::Signal, "The right turn signal is active.".to_string()));
        }
        Blinker::None => {}
    }

    let text = clauses.iter().map(|(_, s)| s.as_str()).collect::<Vec<_>>().join(" ");
    RuleCaption { text, clauses }
}

/// Number of caption windows per scene.
pub const WINDOWS_PER_SCENE: usize = SCENE_FRAMES / TRAJECTORY_LEN;

/// In-window offsets of the representative frames: uniform across the
/// 60-frame span, endpoints included.
pub const REPRESENTATIVE_OFFSETS: [usize; 8] = [0, 8, 17, 25, 34, 42, 51, 59];

/// One 3-second captioning window of a scene. Frame indices are
/// scene-relative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionWindow {
    pub window_index: usize,
    pub start_frame: usize,
    pub frame_count: usize,
    pub representatives: Vec<usize>,
}

/// Tile a 600-frame scene into ten 60-frame windows.
pub fn make_windows(scene_len: usize) -> Result<Vec<CaptionWindow>> {
    if scene_len != SCENE_FRAMES {
        return Err(Error::WrongLength { expected: SCENE_FRAMES, got: scene_len });
    }
    Ok((0..WINDOWS_PER_SCENE)
        .map(|w| {
            let start = w * TRAJECTORY_LEN;
            CaptionWindow {
                window_index: w,
                start_frame: start,
                frame_count: TRAJECTORY_LEN,
                representatives: REPRESENTATIVE_OFFSETS.iter().map(|o| start + o).collect(),
            }
        })
        .collect())
}

/// Concatenated rule captions of a window's representative frames; the
/// factual constraint handed to the language model.
pub fn rule_digest(representative_rules: &[RuleCaption]) -> String {
    representative_rules.iter().map(|r| r.text.as_str()).collect::<Vec<_>>().join(" ")
}

/// One fixed attribute probe: the question and its candidate answers, in
/// tie-break order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributeQuery {
    pub query: String,
    pub candidates: Vec<String>,
}

fn q(query: &str, candidates: &[&str]) -> AttributeQuery {
    AttributeQuery {
        query: query.to_string(),
        candidates: candidates.iter().map(|s| s.to_string()).collect(),
    }
}

/// The five scene-attribute probes. Configuration data, not code: override
/// any of them in the pipeline config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AttributeQueries {
    pub road_width: AttributeQuery,
    pub highway: AttributeQuery,
    pub tunnel: AttributeQuery,
    pub weather: AttributeQuery,
    pub pedestrian_risk: AttributeQuery,
}

impl Default for AttributeQueries {
    fn default() -> Self {
        AttributeQueries {
            road_width: q("Is the road narrow or wide?", &["narrow", "wide"]),
            highway: q("Is the vehicle driving on a highway?", &["highway", "non-highway"]),
            tunnel: q("Is the vehicle driving through a tunnel?", &["tunnel", "non-tunnel"]),
            weather: q("What is the weather in this video?", &["sunny", "cloudy", "rainy"]),
            pedestrian_risk: q("Is there a risk of pedestrians entering the roadway?", &["yes", "no"]),
        }
    }
}

/// A winning candidate token and its raw probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeValue {
    pub token: String,
    pub probability: f64,
}

/// Scene attributes read off the model's token probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSet {
    pub road_width: AttributeValue,
    pub highway: AttributeValue,
    pub tunnel: bool,
    pub tunnel_probability: f64,
    pub weather: AttributeValue,
    pub pedestrian_risk: bool,
    pub pedestrian_risk_probability: f64,
}

/// Pick the winning candidate: highest probability, ties to the earlier
/// candidate. Every candidate must be present with a probability in (0, 1].
fn argmax_candidate(
    probabilities: &std::collections::BTreeMap<String, f64>,
    candidates: &[String],
) -> Result<AttributeValue> {
    let mut best: Option<(usize, f64)> = None;
    for (i, cand) in candidates.iter().enumerate() {
        let p = *probabilities
            .get(cand)
            .ok_or_else(|| Error::VlmResponse(format!("missing probability for candidate '{cand}'")))?;
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::VlmResponse(format!("probability {p} for '{cand}' outside (0, 1]")));
        }
        if best.is_none_or(|(_, bp)| p > bp) {
            best = Some((i, p));
        }
    }
    let (i, probability) = best.ok_or_else(|| Error::VlmResponse("empty candidate set".into()))?;
    Ok(AttributeValue { token: candidates[i].clone(), probability })
}

/// Run all five attribute probes for one window's representative frames.
pub fn extract_attributes(
    frames: &[String],
    queries: &AttributeQueries,
    client: &dyn VlmClient,
) -> Result<AttributeSet> {
    let ask = |aq: &AttributeQuery| -> Result<AttributeValue> {
        let probs = client.attributes(frames, &aq.query, &aq.candidates)?;
        argmax_candidate(&probs, &aq.candidates)
    };
    let road_width = ask(&queries.road_width)?;
    let highway = ask(&queries.highway)?;
    let tunnel = ask(&queries.tunnel)?;
    let weather = ask(&queries.weather)?;
    let pedestrian = ask(&queries.pedestrian_risk)?;
    Ok(AttributeSet {
        road_width,
        highway,
        tunnel: tunnel.token == "tunnel",
        tunnel_probability: tunnel.probability,
        weather,
        pedestrian_risk: pedestrian.token == "yes",
        pedestrian_risk_probability: pedestrian.probability,
    })
}

/// Render the attribute findings as fixed sentences.
pub fn attribute_sentence(attrs: &AttributeSet) -> String {
    let mut parts: Vec<String> = Vec::new();
    parts.push(format!("The road is {}.", attrs.road_width.token));
    parts.push(if attrs.highway.token == "highway" {
        "The vehicle is driving on a highway.".to_string()
    } else {
        "The vehicle is not on a highway.".to_string()
    });
    if attrs.tunnel {
        parts.push("The vehicle is passing through a tunnel.".to_string());
    }
    parts.push(format!("The weather is {}.", attrs.weather.token));
    if attrs.pedestrian_risk {
        parts.push("There is a risk of pedestrians entering the roadway.".to_string());
    }
    parts.join(" ")
}

/// Free text for one window, tied to its attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VlmCaption {
    pub window_index: usize,
    pub free_text: String,
    pub attributes: AttributeSet,
}

/// Ask the model to extend the rule captions. The prompt quotes the digest
/// verbatim so the reply stays anchored to observed facts.
pub fn augment_caption(
    window: &CaptionWindow,
    frames: &[String],
    digest: &str,
    attrs: AttributeSet,
    client: &dyn VlmClient,
) -> Result<VlmCaption> {
    let prompt = format!(
        "The following captions describe a driving scene: {digest} Known attributes: {} \
         Please supplement the captions with any additional information, \
         focusing on identifying potential risks.",
        attribute_sentence(&attrs)
    );
    let free_text = client.caption(frames, &prompt)?;
    if free_text.is_empty() {
        return Err(Error::VlmResponse("empty completion".into()));
    }
    Ok(VlmCaption { window_index: window.window_index, free_text, attributes: attrs })
}

/// Per-frame combined caption: the frame's own rule text, the window's
/// attribute sentence, then the window's free text, single-spaced. An empty
/// free text (rules-only runs) leaves rule + attributes.
pub fn compose_frame_caption(
    frame_in_scene: usize,
    rule: &RuleCaption,
    window_caption: &VlmCaption,
) -> Result<String> {
    let expected = frame_in_scene / TRAJECTORY_LEN;
    if expected != window_caption.window_index {
        return Err(Error::WindowMismatch { expected, got: window_caption.window_index });
    }
    let mut parts: Vec<&str> = vec![rule.text.as_str()];
    let attr = attribute_sentence(&window_caption.attributes);
    if !attr.is_empty() {
        parts.push(&attr);
    }
    if !window_caption.free_text.is_empty() {
        parts.push(&window_caption.free_text);
    }
    Ok(parts.join(" "))
}
