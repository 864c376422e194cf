//! Synthetic visitor approaches with wait / speak / listen labels.
//!
//! A visitor walks toward the camera (wait), then stands in front of it.
//! Visitors who will not open the conversation idle there (speak). Greeters
//! show friendlier cues, start moving their mouth a few frames before they
//! talk (listen from that point on), and then talk.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{
    write_dataset, ActionLabel, Frame, Landmark, Manifest, Recording, BLENDSHAPES, BODY_LANDMARKS,
    FACE_LANDMARKS, HAND_LANDMARKS,
};

pub const GENERATOR_VERSION: &str = "1";

/// Blendshape slots (slot 0 is the neutral score).
pub mod slots {
    pub const BROW_INNER_UP: usize = 4;
    pub const EYE_BLINK_LEFT: usize = 10;
    pub const EYE_BLINK_RIGHT: usize = 11;
    pub const EYE_LOOK_IN_LEFT: usize = 14;
    pub const EYE_LOOK_IN_RIGHT: usize = 15;
    pub const EYE_LOOK_OUT_LEFT: usize = 16;
    pub const EYE_LOOK_OUT_RIGHT: usize = 17;
    pub const JAW_OPEN: usize = 26;
    pub const MOUTH_CLOSE: usize = 27;
    pub const MOUTH_LOWER_DOWN_LEFT: usize = 35;
    pub const MOUTH_LOWER_DOWN_RIGHT: usize = 36;
    pub const MOUTH_SMILE_LEFT: usize = 45;
    pub const MOUTH_SMILE_RIGHT: usize = 46;
    pub const MOUTH_STRETCH_LEFT: usize = 47;
    pub const MOUTH_STRETCH_RIGHT: usize = 48;
}

/// Inclusive integer range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Span(pub usize, pub usize);

impl Span {
    fn sample(self, rng: &mut impl Rng) -> usize {
        rng.random_range(self.0..=self.1)
    }
}

/// Half-open real range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range(pub f64, pub f64);

impl Range {
    fn sample(self, rng: &mut impl Rng) -> f64 {
        if self.1 > self.0 {
            rng.random_range(self.0..self.1)
        } else {
            self.0
        }
    }
}

/// Distributions the visitor profiles are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub greeter_probability: f64,
    pub approach_frames: Span,
    /// Idle frames after arrival for visitors who do not greet.
    pub pause_frames: Span,
    /// Frames from arrival to the greeter's first word.
    pub utterance_offset: Span,
    /// Frames of mouth pre-activity before the first word.
    pub mouth_lead: Span,
    /// Frames recorded after the first word.
    pub talk_frames: Span,
    pub gait_noise: Range,
    pub start_scale: Range,
    pub end_scale: Range,
    pub start_x: Range,
    /// Per-frame landmark jitter (standard deviation).
    pub body_jitter: f64,
    pub face_jitter: f64,
    pub hand_jitter: f64,
    pub blendshape_jitter: f64,
    /// Chance that a body landmark drops below 0.5 visibility while far away.
    pub visibility_dip: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            greeter_probability: 0.59,
            approach_frames: Span(17, 27),
            pause_frames: Span(28, 44),
            utterance_offset: Span(8, 16),
            mouth_lead: Span(4, 8),
            talk_frames: Span(12, 20),
            gait_noise: Range(0.002, 0.006),
            start_scale: Range(0.30, 0.40),
            end_scale: Range(0.78, 0.88),
            start_x: Range(0.30, 0.70),
            body_jitter: 0.004,
            face_jitter: 0.002,
            hand_jitter: 0.004,
            blendshape_jitter: 0.03,
            visibility_dip: 0.1,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let spans = [
            self.approach_frames,
            self.pause_frames,
            self.utterance_offset,
            self.mouth_lead,
            self.talk_frames,
        ];
        if spans.iter().any(|s| s.0 == 0 || s.0 > s.1) {
            return Err(Error::Config(
                "frame spans must satisfy 1 <= lo <= hi".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.greeter_probability)
            || !(0.0..=1.0).contains(&self.visibility_dip)
        {
            return Err(Error::Config("probabilities must lie in [0,1]".into()));
        }
        let jitter = [
            self.body_jitter,
            self.face_jitter,
            self.hand_jitter,
            self.blendshape_jitter,
        ];
        if jitter.iter().any(|&j| !(0.0..=0.02).contains(&j))
            || self.gait_noise.0 < 0.0
            || self.gait_noise.1 > 0.02
        {
            return Err(Error::Config(
                "noise amplitudes must lie in [0, 0.02]".into(),
            ));
        }
        if !(self.start_scale.0 > 0.1
            && self.start_scale.1 < self.end_scale.0
            && self.end_scale.1 <= 0.9)
        {
            return Err(Error::Config(
                "scales must satisfy 0.1 < start < end <= 0.9".into(),
            ));
        }
        if !(self.start_x.0 >= 0.3 && self.start_x.1 <= 0.7) {
            return Err(Error::Config("start_x must lie in [0.3, 0.7]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
}

/// One visitor's behaviour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitorProfile {
    pub greeter: bool,
    /// Frames until the visitor stands in front of the camera.
    pub approach: usize,
    /// Non-greeters: idle frames after arrival. Greeters: frames from
    /// arrival to the first word.
    pub pause: usize,
    /// Greeters only: frames of mouth pre-activity before the first word.
    pub mouth_lead: usize,
    /// Greeters only: frames recorded from the first word on.
    pub talk: usize,
    pub gait_noise: f64,
    pub start_x: f64,
    pub start_scale: f64,
    pub end_scale: f64,
    pub gender: Gender,
}

impl VisitorProfile {
    pub fn sample(config: &GeneratorConfig, rng: &mut impl Rng) -> Self {
        let greeter = rng.random_bool(config.greeter_probability);
        VisitorProfile {
            greeter,
            approach: config.approach_frames.sample(rng),
            pause: if greeter {
                config.utterance_offset.sample(rng)
            } else {
                config.pause_frames.sample(rng)
            },
            mouth_lead: config.mouth_lead.sample(rng),
            talk: config.talk_frames.sample(rng),
            gait_noise: config.gait_noise.sample(rng),
            start_x: config.start_x.sample(rng),
            start_scale: config.start_scale.sample(rng),
            end_scale: config.end_scale.sample(rng),
            gender: if rng.random_bool(0.5) {
                Gender::Female
            } else {
                Gender::Male
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.approach == 0 || self.pause == 0 || (self.greeter && self.talk == 0) {
            return Err(Error::Config("profile durations must be >= 1".into()));
        }
        if !(self.gait_noise >= 0.0 && self.gait_noise <= 0.02) {
            return Err(Error::Config(format!(
                "gait noise {} outside [0, 0.02]",
                self.gait_noise
            )));
        }
        if !(0.1 < self.start_scale && self.start_scale < self.end_scale && self.end_scale <= 0.9) {
            return Err(Error::Config(
                "profile scales must satisfy 0.1 < start < end <= 0.9".into(),
            ));
        }
        if !(0.3..=0.7).contains(&self.start_x) {
            return Err(Error::Config(format!(
                "start_x {} outside [0.3, 0.7]",
                self.start_x
            )));
        }
        Ok(())
    }

    /// Frame index of the first word (greeters).
    pub fn utterance(&self) -> usize {
        self.approach + self.pause
    }

    /// First listen frame (greeters).
    pub fn listen_onset(&self) -> usize {
        self.approach
            .max(self.utterance().saturating_sub(self.mouth_lead))
    }

    pub fn len(&self) -> usize {
        if self.greeter {
            self.utterance() + self.talk
        } else {
            self.approach + self.pause
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Labels follow from the profile alone.
    pub fn labels(&self) -> Vec<ActionLabel> {
        (0..self.len())
            .map(|t| {
                if t < self.approach {
                    ActionLabel::Wait
                } else if !self.greeter {
                    ActionLabel::Speak
                } else if t < self.listen_onset() {
                    ActionLabel::Wait
                } else {
                    ActionLabel::Listen
                }
            })
            .collect()
    }

    /// Nominal body scale at frame `t`: strictly increasing during the approach.
    pub fn scale_at(&self, t: usize) -> f64 {
        let progress = ((t + 1) as f64 / self.approach as f64).min(1.0);
        // ease-out: fast far away, slowing on arrival
        let eased = 1.0 - (1.0 - progress).powi(2);
        self.start_scale + (self.end_scale - self.start_scale) * eased
    }
}

/// Body landmark offsets at unit scale, relative to the body centre.
const BODY_TEMPLATE: [(f64, f64, f64); BODY_LANDMARKS] = [
    (0.0, -0.40, -0.06),
    (0.010, -0.41, -0.05),
    (0.020, -0.41, -0.05),
    (0.030, -0.41, -0.05),
    (-0.010, -0.41, -0.05),
    (-0.020, -0.41, -0.05),
    (-0.030, -0.41, -0.05),
    (0.045, -0.40, -0.02),
    (-0.045, -0.40, -0.02),
    (0.015, -0.38, -0.05),
    (-0.015, -0.38, -0.05),
    (0.110, -0.28, 0.0),
    (-0.110, -0.28, 0.0),
    (0.140, -0.12, -0.01),
    (-0.140, -0.12, -0.01),
    (0.150, 0.02, -0.02),
    (-0.150, 0.02, -0.02),
    (0.155, 0.05, -0.03),
    (-0.155, 0.05, -0.03),
    (0.150, 0.06, -0.03),
    (-0.150, 0.06, -0.03),
    (0.140, 0.045, -0.03),
    (-0.140, 0.045, -0.03),
    (0.070, 0.02, 0.0),
    (-0.070, 0.02, 0.0),
    (0.075, 0.22, 0.01),
    (-0.075, 0.22, 0.01),
    (0.075, 0.42, 0.03),
    (-0.075, 0.42, 0.03),
    (0.070, 0.44, 0.04),
    (-0.070, 0.44, 0.04),
    (0.090, 0.45, 0.0),
    (-0.090, 0.45, 0.0),
];
const NOSE: usize = 0;
const LEFT_WRIST: usize = 15;
const RIGHT_WRIST: usize = 16;
const BODY_CENTER_Y: f64 = 0.5;

const FACE_SEED: u64 = 0x000f_ace5;
const MOUTH_POINTS: usize = 40;
const BROW_POINTS: usize = 30;

/// Fixed face and hand point clouds shared by every visitor.
struct Templates {
    /// Offsets from the nose at unit scale.
    face: Vec<(f64, f64, f64)>,
    /// Offsets from the wrist at unit scale.
    hand: Vec<(f64, f64, f64)>,
}

impl Templates {
    fn new() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(FACE_SEED);
        let mut face = Vec::with_capacity(FACE_LANDMARKS);
        let ellipse = |cx: f64, cy: f64, rx: f64, ry: f64, rng: &mut ChaCha8Rng| {
            let a = rng.random_range(0.0..2.0 * PI);
            let r = rng.random::<f64>().sqrt();
            (cx + rx * r * a.cos(), cy + ry * r * a.sin())
        };
        // mouth, lower half first
        for k in 0..MOUTH_POINTS {
            let (x, mut y) = ellipse(0.0, 0.035, 0.02, 0.006, &mut rng);
            y = if k < MOUTH_POINTS / 2 {
                y.max(0.035)
            } else {
                y.min(0.035)
            };
            face.push((x, y, -0.012));
        }
        for _ in 0..BROW_POINTS {
            let (x, y) = ellipse(0.0, -0.03, 0.04, 0.004, &mut rng);
            face.push((x, y, -0.01));
        }
        while face.len() < FACE_LANDMARKS {
            let (x, y) = ellipse(0.0, 0.0, 0.055, 0.07, &mut rng);
            let r2 = (x / 0.055).powi(2) + (y / 0.07).powi(2);
            face.push((x, y, -0.03 * (1.0 - r2)));
        }
        let hand = (0..HAND_LANDMARKS)
            .map(|k| {
                if k == 0 {
                    (0.0, 0.0, 0.0)
                } else {
                    let finger = (k - 1) / 4;
                    let joint = ((k - 1) % 4 + 1) as f64;
                    let angle = PI / 2.0 + (finger as f64 - 2.0) * 0.25;
                    (
                        0.008 * joint * angle.cos(),
                        0.008 * joint * angle.sin(),
                        -0.002 * joint,
                    )
                }
            })
            .collect();
        Templates { face, hand }
    }
}

fn quantize(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

fn unit(v: f64) -> f64 {
    quantize(v.clamp(0.0, 1.0))
}

/// Gaussian noise truncated at three standard deviations.
struct Jitter(Normal<f64>);

impl Jitter {
    fn new(sd: f64) -> Self {
        Jitter(Normal::new(0.0, sd.max(0.0)).expect("finite sd"))
    }

    fn draw(&self, rng: &mut impl Rng) -> f64 {
        let sd = self.0.std_dev();
        self.0.sample(rng).clamp(-3.0 * sd, 3.0 * sd)
    }
}

/// Mean distance of the body landmarks from their centroid.
pub fn body_spread(frame: &Frame) -> f64 {
    let n = frame.body.len() as f64;
    let cx = frame.body.iter().map(|l| l.x).sum::<f64>() / n;
    let cy = frame.body.iter().map(|l| l.y).sum::<f64>() / n;
    frame
        .body
        .iter()
        .map(|l| ((l.x - cx).powi(2) + (l.y - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n
}

fn template_spread() -> f64 {
    let n = BODY_LANDMARKS as f64;
    let cx = BODY_TEMPLATE.iter().map(|p| p.0).sum::<f64>() / n;
    let cy = BODY_TEMPLATE.iter().map(|p| p.1).sum::<f64>() / n;
    BODY_TEMPLATE
        .iter()
        .map(|p| ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n
}

/// Visitor-level traits that stay fixed within a recording.
struct Traits {
    /// Head yaw after arrival, radians.
    yaw: f64,
    smile: f64,
    brow: f64,
    /// Baseline jaw opening.
    jaw_rest: f64,
    /// Talking rhythm, frames per syllable cycle.
    talk_period: f64,
    /// Idle mouth movements of non-greeters.
    fidget: f64,
    /// Resting value of every other blendshape slot.
    rest: Vec<f64>,
}

impl Traits {
    fn sample(profile: &VisitorProfile, rng: &mut impl Rng) -> Self {
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let (yaw, smile, brow) = if profile.greeter {
            (
                Normal::new(0.0, 0.12).expect("sd").sample(rng),
                rng.random_range(0.2..0.6),
                rng.random_range(0.15..0.45),
            )
        } else {
            (
                side * rng.random_range(0.05..0.45),
                rng.random_range(0.0..0.35),
                rng.random_range(0.0..0.3),
            )
        };
        let fidget = if !profile.greeter && rng.random_bool(0.25) {
            rng.random_range(0.05..0.15)
        } else {
            0.0
        };
        Traits {
            yaw,
            smile,
            brow,
            jaw_rest: rng.random_range(0.0..0.06),
            talk_period: rng.random_range(3.0..6.0),
            fidget,
            rest: (0..BLENDSHAPES)
                .map(|_| rng.random_range(0.0..0.15))
                .collect(),
        }
    }
}

/// Builds a labeled recording for `profile`, drawing all noise from `rng`.
fn render(
    session_id: &str,
    profile: &VisitorProfile,
    config: &GeneratorConfig,
    rng: &mut ChaCha8Rng,
) -> Recording {
    let templates = Templates::new();
    let traits = Traits::sample(profile, rng);
    let body_j = Jitter::new(config.body_jitter);
    let face_j = Jitter::new(config.face_jitter);
    let hand_j = Jitter::new(config.hand_jitter);
    let bs_j = Jitter::new(config.blendshape_jitter);
    let t_spread = template_spread();
    let gait_phase = rng.random_range(0.0..2.0 * PI);
    let sway_phase = rng.random_range(0.0..2.0 * PI);
    let wander_yaw = rng.random_range(-0.5..0.5);
    let n = profile.len();
    let labels = profile.labels();
    let far = (profile.approach as f64 * 0.4).ceil() as usize;

    let mut frames = Vec::with_capacity(n);
    for t in 0..n {
        let arrived = t >= profile.approach;
        let s = profile.scale_at(t);
        let progress = ((t + 1) as f64 / profile.approach as f64).min(1.0);
        let cx_nominal = profile.start_x + (0.5 - profile.start_x) * progress;
        let (bob, swing) = if arrived {
            (0.0, 0.0)
        } else {
            let phase = gait_phase + t as f64 * PI / 2.5;
            (profile.gait_noise * phase.sin(), 0.03 * phase.sin())
        };
        let sway = if arrived {
            0.002 * (sway_phase + t as f64 * 0.4).sin()
        } else {
            0.0
        };
        let cx = cx_nominal + sway;
        let cy = BODY_CENTER_Y + bob;

        // head orientation: wandering during approach, settling on arrival
        let yaw = if arrived {
            traits.yaw
        } else {
            let settle = progress.powi(2);
            wander_yaw * (1.0 - settle) + traits.yaw * settle
        };

        // body: jittered shape, spread pinned to the nominal scale
        let mut body: Vec<(f64, f64, f64)> = BODY_TEMPLATE
            .iter()
            .enumerate()
            .map(|(k, &(x, y, z))| {
                let arm = match k {
                    13 | 15 | 17 | 19 | 21 => swing,
                    14 | 16 | 18 | 20 | 22 => -swing,
                    _ => 0.0,
                };
                (
                    x + body_j.draw(rng) / s,
                    y + arm + body_j.draw(rng) / s,
                    z + body_j.draw(rng) / s,
                )
            })
            .collect();
        let bn = BODY_LANDMARKS as f64;
        let mx = body.iter().map(|p| p.0).sum::<f64>() / bn;
        let my = body.iter().map(|p| p.1).sum::<f64>() / bn;
        let spread = body
            .iter()
            .map(|p| ((p.0 - mx).powi(2) + (p.1 - my).powi(2)).sqrt())
            .sum::<f64>()
            / bn;
        let k = t_spread / spread;
        for p in &mut body {
            p.0 = mx + (p.0 - mx) * k;
            p.1 = my + (p.1 - my) * k;
        }
        let body: Vec<Landmark> = body
            .iter()
            .map(|&(x, y, z)| {
                let dip = t < far && rng.random_bool(config.visibility_dip);
                let vis = if dip {
                    rng.random_range(0.1..0.49)
                } else {
                    rng.random_range(0.8..1.0)
                };
                Landmark::new(
                    unit(cx + s * x),
                    unit(cy + s * y),
                    quantize(s * z),
                    quantize(vis),
                )
            })
            .collect();

        // mouth activity
        let jaw = if profile.greeter && t >= profile.listen_onset() {
            let u = profile.utterance();
            if t < u {
                let ramp = (t + 1 - profile.listen_onset()) as f64
                    / (u + 1 - profile.listen_onset()) as f64;
                traits.jaw_rest + 0.1 * ramp
            } else {
                let syl = (PI * (t - u) as f64 / traits.talk_period).sin().abs();
                traits.jaw_rest + 0.15 + 0.3 * syl
            }
        } else if arrived && traits.fidget > 0.0 {
            traits.jaw_rest + traits.fidget * (0.5 + 0.5 * (t as f64 * 0.7).sin())
        } else {
            traits.jaw_rest
        };
        let cues = if arrived { 1.0 } else { progress.powi(3) };

        let mut bs: Vec<f64> = traits.rest.iter().map(|&r| r + bs_j.draw(rng)).collect();
        bs[0] = 0.0;
        let mut set = |slot: usize, v: f64| bs[slot] = v;
        set(slots::JAW_OPEN, jaw + bs_j.draw(rng));
        set(slots::MOUTH_CLOSE, 0.3 - 0.5 * jaw + bs_j.draw(rng));
        set(slots::MOUTH_LOWER_DOWN_LEFT, 0.6 * jaw + bs_j.draw(rng));
        set(slots::MOUTH_LOWER_DOWN_RIGHT, 0.6 * jaw + bs_j.draw(rng));
        set(slots::MOUTH_STRETCH_LEFT, 0.3 * jaw + bs_j.draw(rng));
        set(slots::MOUTH_STRETCH_RIGHT, 0.3 * jaw + bs_j.draw(rng));
        set(
            slots::MOUTH_SMILE_LEFT,
            cues * traits.smile + bs_j.draw(rng),
        );
        set(
            slots::MOUTH_SMILE_RIGHT,
            cues * traits.smile + bs_j.draw(rng),
        );
        set(slots::BROW_INNER_UP, cues * traits.brow + bs_j.draw(rng));
        let look_out = (yaw.max(0.0) * 0.8).min(1.0);
        let look_in = ((-yaw).max(0.0) * 0.8).min(1.0);
        set(slots::EYE_LOOK_OUT_LEFT, look_out + bs_j.draw(rng));
        set(slots::EYE_LOOK_IN_RIGHT, look_out + bs_j.draw(rng));
        set(slots::EYE_LOOK_IN_LEFT, look_in + bs_j.draw(rng));
        set(slots::EYE_LOOK_OUT_RIGHT, look_in + bs_j.draw(rng));
        if rng.random_bool(0.05) {
            set(slots::EYE_BLINK_LEFT, 0.9);
            set(slots::EYE_BLINK_RIGHT, 0.9);
        }
        let blendshapes: Vec<f64> = bs.into_iter().map(unit).collect();

        // face: follows the nose, turned by yaw, mouth opens with the jaw
        let nose = body[NOSE];
        let (hx, hy) = (nose.x, nose.y);
        let (cos_y, sin_y) = (yaw.cos(), yaw.sin());
        let face = templates
            .face
            .iter()
            .enumerate()
            .map(|(k, &(x, y, z))| {
                let mut y = y;
                if k < MOUTH_POINTS / 2 {
                    y += 0.015 * jaw;
                } else if (MOUTH_POINTS..MOUTH_POINTS + BROW_POINTS).contains(&k) {
                    y -= 0.006 * cues * traits.brow;
                }
                let xr = x * cos_y + z * sin_y;
                let zr = -x * sin_y + z * cos_y;
                Landmark::point(
                    unit(hx + s * xr + face_j.draw(rng)),
                    unit(hy + s * (y + 0.02) + face_j.draw(rng)),
                    quantize(s * zr + face_j.draw(rng)),
                )
            })
            .collect();

        let mut hands = Vec::with_capacity(2 * HAND_LANDMARKS);
        for (wrist, mirror) in [(LEFT_WRIST, 1.0), (RIGHT_WRIST, -1.0)] {
            let w = body[wrist];
            for &(x, y, z) in &templates.hand {
                hands.push(Landmark::point(
                    unit(w.x + s * mirror * x + hand_j.draw(rng)),
                    unit(w.y + s * y + hand_j.draw(rng)),
                    quantize(w.z + s * z + hand_j.draw(rng)),
                ));
            }
        }

        let mut frame = Frame::zeroed(session_id, t as u64);
        frame.body = body;
        frame.face = face;
        frame.hands = hands;
        frame.blendshapes = blendshapes;
        frames.push(frame);
    }

    let mut recording = Recording::new(session_id, frames, Some(labels));
    let meta = &mut recording.metadata;
    meta.insert("greeter".into(), profile.greeter.to_string());
    meta.insert(
        "gender".into(),
        match profile.gender {
            Gender::Female => "female",
            Gender::Male => "male",
        }
        .into(),
    );
    meta.insert("approach".into(), profile.approach.to_string());
    if profile.greeter {
        meta.insert("utterance".into(), profile.utterance().to_string());
    }
    recording
}

/// Deterministic generator for recordings and datasets.
#[derive(Debug, Clone, Default)]
pub struct Generator {
    pub config: GeneratorConfig,
}

impl Generator {
    pub fn new(config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Generator { config })
    }

    fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        rng
    }

    /// One recording; the profile is sampled from `seed` when not given.
    pub fn recording(
        &self,
        session_id: &str,
        seed: u64,
        profile: Option<&VisitorProfile>,
    ) -> Result<Recording> {
        let mut rng = Self::rng(seed, 0);
        let profile = match profile {
            Some(p) => p.clone(),
            None => VisitorProfile::sample(&self.config, &mut rng),
        };
        profile.validate()?;
        Ok(render(session_id, &profile, &self.config, &mut rng))
    }

    /// Session id of recording `index` of a dataset generated with `seed`.
    pub fn session_id(seed: u64, index: usize) -> String {
        format!("sim-{seed}-{index:04}")
    }

    /// `n` recordings, each from its own stream of `seed`.
    pub fn recordings(&self, n: usize, seed: u64) -> Vec<Recording> {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = Self::rng(seed, i as u64 + 1);
                let profile = VisitorProfile::sample(&self.config, &mut rng);
                render(&Self::session_id(seed, i), &profile, &self.config, &mut rng)
            })
            .collect()
    }

    /// Manifest block describing how a dataset was generated.
    pub fn manifest_block(&self, n: usize, seed: u64) -> serde_json::Value {
        serde_json::json!({
            "name": "synthgen",
            "version": GENERATOR_VERSION,
            "seed": seed,
            "recordings": n,
            "config": self.config,
        })
    }

    /// Writes `n` recordings plus a manifest to `dir`.
    pub fn dataset(&self, dir: impl AsRef<Path>, n: usize, seed: u64) -> Result<Manifest> {
        if n < 10 {
            return Err(Error::Config(format!(
                "need at least 10 recordings, got {n}"
            )));
        }
        let recordings = self.recordings(n, seed);
        write_dataset(dir, &recordings, Some(self.manifest_block(n, seed)))
    }
}

/// One recording with the default configuration.
pub fn generate_recording(seed: u64, profile: Option<&VisitorProfile>) -> Result<Recording> {
    Generator::default().recording(&format!("sim-{seed}"), seed, profile)
}

/// A dataset with the default configuration.
pub fn generate_dataset(dir: impl AsRef<Path>, n: usize, seed: u64) -> Result<Manifest> {
    Generator::default().dataset(dir, n, seed)
}

/// Per-label frame counts over recordings.
pub fn class_mix(recordings: &[Recording]) -> BTreeMap<ActionLabel, usize> {
    let mut mix = BTreeMap::new();
    for r in recordings {
        for (k, &c) in r.label_counts().iter().enumerate() {
            *mix.entry(ActionLabel::ALL[k]).or_default() += c;
        }
    }
    mix
}
