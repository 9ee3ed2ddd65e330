//! Deterministic toy environments: a 2D point-mass reach task and a planar
//! 2-link arm touch task, with scripted controllers good enough to generate
//! demonstrations and ground closed-loop evaluation.
//!
//! Everything is seeded and pure-deterministic: `(seed, action sequence)`
//! fully determines a trajectory, so paired comparisons across policy
//! configurations are exact.

use std::io::{BufRead, Write};
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mix_seed;

/// Episode step limit shared by both environments.
pub const STEP_LIMIT: u32 = 200;

/// Point mass: per-component action clamp and success radius.
pub const POINT_MASS_MAX_STEP: f64 = 0.05;
pub const POINT_MASS_SUCCESS_RADIUS: f64 = 0.02;
/// Goals are sampled this far from the arena walls so that approach paths
/// stay clear of the position clip.
pub const POINT_MASS_GOAL_MARGIN: f64 = 0.1;

/// Arm: per-joint action clamp (radians) and end-effector success radius.
pub const ARM_MAX_JOINT_STEP: f64 = 0.1;
pub const ARM_SUCCESS_RADIUS: f64 = 0.03;
pub const ARM_LINK_LENGTHS: [f64; 2] = [0.5, 0.5];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("action contains a non-finite value")]
    NonFiniteAction,
    #[error("expected {expected}-dimensional action, got {got}")]
    WrongActionDim { expected: usize, got: usize },
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("demo generation exceeded the retry cap ({attempts} attempts for {requested} episodes)")]
    RetryCapExceeded { requested: usize, attempts: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed episode file: {0}")]
    Malformed(String),
    #[error("render: {0}")]
    Render(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOutcome {
    pub done: bool,
    pub success: bool,
}

/// Which toy environment to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    PointMass,
    Arm,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::PointMass => "pointmass",
            EnvKind::Arm => "arm",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "pointmass" => Some(EnvKind::PointMass),
            "arm" => Some(EnvKind::Arm),
            _ => None,
        }
    }

    /// Action dimensionality D.
    pub fn action_dims(self) -> usize {
        match self {
            EnvKind::PointMass => 2,
            EnvKind::Arm => 3,
        }
    }

    /// Length of the observation vector.
    pub fn state_dims(self) -> usize {
        match self {
            EnvKind::PointMass => 4,
            EnvKind::Arm => 5,
        }
    }

    /// Task instruction used in prompts and exported samples.
    pub fn instruction(self) -> &'static str {
        match self {
            EnvKind::PointMass => "move to the goal marker",
            EnvKind::Arm => "touch the target and close the gripper",
        }
    }

    /// Natural action-space bounds: the per-step clamps the environment
    /// enforces, so a scripted controller never produces an out-of-bounds
    /// value.
    pub fn default_bounds(self) -> Vec<(f64, f64)> {
        match self {
            EnvKind::PointMass => vec![(-POINT_MASS_MAX_STEP, POINT_MASS_MAX_STEP); 2],
            EnvKind::Arm => vec![
                (-ARM_MAX_JOINT_STEP, ARM_MAX_JOINT_STEP),
                (-ARM_MAX_JOINT_STEP, ARM_MAX_JOINT_STEP),
                (0.0, 1.0),
            ],
        }
    }
}

// ---------------------------------------------------------------------------
// Point mass
// ---------------------------------------------------------------------------

/// Position and goal inside the unit square.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMassState {
    pub position: [f64; 2],
    pub goal: [f64; 2],
    pub steps_elapsed: u32,
}

impl PointMassState {
    fn sample(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let goal_range = POINT_MASS_GOAL_MARGIN..1.0 - POINT_MASS_GOAL_MARGIN;
        Self {
            position: [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)],
            goal: [
                rng.random_range(goal_range.clone()),
                rng.random_range(goal_range),
            ],
            steps_elapsed: 0,
        }
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.position[0], self.position[1], self.goal[0], self.goal[1]]
    }

    fn from_observation(obs: &[f64]) -> Self {
        Self {
            position: [obs[0], obs[1]],
            goal: [obs[2], obs[3]],
            steps_elapsed: 0,
        }
    }

    fn distance_to_goal(&self) -> f64 {
        let dx = self.position[0] - self.goal[0];
        let dy = self.position[1] - self.goal[1];
        (dx * dx + dy * dy).sqrt()
    }

    /// Apply one action: per-component clamp, move, clip to the arena.
    fn advance(&mut self, action: &[f64]) -> StepOutcome {
        let dx = action[0].clamp(-POINT_MASS_MAX_STEP, POINT_MASS_MAX_STEP);
        let dy = action[1].clamp(-POINT_MASS_MAX_STEP, POINT_MASS_MAX_STEP);
        self.position[0] = (self.position[0] + dx).clamp(0.0, 1.0);
        self.position[1] = (self.position[1] + dy).clamp(0.0, 1.0);
        self.steps_elapsed += 1;
        let success = self.distance_to_goal() < POINT_MASS_SUCCESS_RADIUS;
        StepOutcome {
            done: success || self.steps_elapsed >= STEP_LIMIT,
            success,
        }
    }

    /// Step toward the goal at max speed; land exactly when close.
    fn controller(&self) -> Vec<f64> {
        let dx = self.goal[0] - self.position[0];
        let dy = self.goal[1] - self.position[1];
        let dist = (dx * dx + dy * dy).sqrt();
        if dist <= POINT_MASS_MAX_STEP {
            vec![dx, dy]
        } else {
            let scale = POINT_MASS_MAX_STEP / dist;
            vec![dx * scale, dy * scale]
        }
    }
}

// ---------------------------------------------------------------------------
// Planar 2-link arm
// ---------------------------------------------------------------------------

/// Joint angles, fixed link lengths, target point, gripper opening.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmState {
    pub joint_angles: [f64; 2],
    pub link_lengths: [f64; 2],
    pub target: [f64; 2],
    pub gripper: f64,
    pub steps_elapsed: u32,
}

fn wrap_angle(theta: f64) -> f64 {
    theta.sin().atan2(theta.cos())
}

impl ArmState {
    fn sample(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Elbow kept bent at reset and targets kept strictly inside the
        // reachable annulus, away from the straight/folded singularities.
        let joint_angles = [
            rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            rng.random_range(0.35..2.6),
        ];
        let radius = rng.random_range(0.32..0.88);
        let angle = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        Self {
            joint_angles,
            link_lengths: ARM_LINK_LENGTHS,
            target: [radius * angle.cos(), radius * angle.sin()],
            gripper: 0.0,
            steps_elapsed: 0,
        }
    }

    fn observe(&self) -> Vec<f64> {
        vec![
            self.joint_angles[0],
            self.joint_angles[1],
            self.target[0],
            self.target[1],
            self.gripper,
        ]
    }

    fn from_observation(obs: &[f64]) -> Self {
        Self {
            joint_angles: [obs[0], obs[1]],
            link_lengths: ARM_LINK_LENGTHS,
            target: [obs[2], obs[3]],
            gripper: obs[4],
            steps_elapsed: 0,
        }
    }

    /// Forward kinematics of the end effector.
    pub fn end_effector(&self) -> [f64; 2] {
        let [l1, l2] = self.link_lengths;
        let [t1, t2] = self.joint_angles;
        [
            l1 * t1.cos() + l2 * (t1 + t2).cos(),
            l1 * t1.sin() + l2 * (t1 + t2).sin(),
        ]
    }

    fn distance_to_target(&self) -> f64 {
        let ee = self.end_effector();
        let dx = ee[0] - self.target[0];
        let dy = ee[1] - self.target[1];
        (dx * dx + dy * dy).sqrt()
    }

    fn advance(&mut self, action: &[f64]) -> StepOutcome {
        let d1 = action[0].clamp(-ARM_MAX_JOINT_STEP, ARM_MAX_JOINT_STEP);
        let d2 = action[1].clamp(-ARM_MAX_JOINT_STEP, ARM_MAX_JOINT_STEP);
        self.joint_angles[0] = wrap_angle(self.joint_angles[0] + d1);
        self.joint_angles[1] = wrap_angle(self.joint_angles[1] + d2);
        self.gripper = action[2].clamp(0.0, 1.0);
        self.steps_elapsed += 1;
        let success = self.distance_to_target() < ARM_SUCCESS_RADIUS && self.gripper > 0.5;
        StepOutcome {
            done: success || self.steps_elapsed >= STEP_LIMIT,
            success,
        }
    }

    /// Jacobian-transpose step toward the target; gripper closes near it.
    fn controller(&self) -> Vec<f64> {
        let [l1, l2] = self.link_lengths;
        let [t1, t2] = self.joint_angles;
        let ee = self.end_effector();
        let ex = self.target[0] - ee[0];
        let ey = self.target[1] - ee[1];
        let s1 = t1.sin();
        let c1 = t1.cos();
        let s12 = (t1 + t2).sin();
        let c12 = (t1 + t2).cos();
        let d1 = (-l1 * s1 - l2 * s12) * ex + (l1 * c1 + l2 * c12) * ey;
        let d2 = (-l2 * s12) * ex + (l2 * c12) * ey;
        let near = (ex * ex + ey * ey).sqrt() < 2.0 * ARM_SUCCESS_RADIUS;
        vec![
            d1.clamp(-ARM_MAX_JOINT_STEP, ARM_MAX_JOINT_STEP),
            d2.clamp(-ARM_MAX_JOINT_STEP, ARM_MAX_JOINT_STEP),
            if near { 1.0 } else { 0.0 },
        ]
    }
}

// ---------------------------------------------------------------------------
// Unified environment
// ---------------------------------------------------------------------------

/// A single-owner toy environment instance.
#[derive(Debug, Clone)]
pub enum SimEnv {
    PointMass(PointMassState),
    Arm(ArmState),
}

impl SimEnv {
    /// Fresh environment seeded for its first episode.
    pub fn new(kind: EnvKind, seed: u64) -> Self {
        match kind {
            EnvKind::PointMass => SimEnv::PointMass(PointMassState::sample(seed)),
            EnvKind::Arm => SimEnv::Arm(ArmState::sample(seed)),
        }
    }

    pub fn kind(&self) -> EnvKind {
        match self {
            SimEnv::PointMass(_) => EnvKind::PointMass,
            SimEnv::Arm(_) => EnvKind::Arm,
        }
    }

    /// Deterministic re-initialization: same seed, same state and goal.
    pub fn reset(&mut self, seed: u64) -> Vec<f64> {
        *self = Self::new(self.kind(), seed);
        self.observe()
    }

    pub fn observe(&self) -> Vec<f64> {
        match self {
            SimEnv::PointMass(s) => s.observe(),
            SimEnv::Arm(s) => s.observe(),
        }
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome, EnvError> {
        let expected = self.kind().action_dims();
        if action.len() != expected {
            return Err(EnvError::WrongActionDim {
                expected,
                got: action.len(),
            });
        }
        if action.iter().any(|x| !x.is_finite()) {
            return Err(EnvError::NonFiniteAction);
        }
        Ok(match self {
            SimEnv::PointMass(s) => s.advance(action),
            SimEnv::Arm(s) => s.advance(action),
        })
    }

    /// The scripted controller's action for the current state.
    pub fn scripted_action(&self) -> Vec<f64> {
        match self {
            SimEnv::PointMass(s) => s.controller(),
            SimEnv::Arm(s) => s.controller(),
        }
    }

    /// Simulate the scripted controller `horizon` steps ahead from an
    /// observation, ignoring termination. This is the oracle policy's plan.
    pub fn plan_from_observation(kind: EnvKind, obs: &[f64], horizon: usize) -> Vec<Vec<f64>> {
        let mut env = Self::from_observation(kind, obs);
        let mut plan = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let action = env.scripted_action();
            // finite by construction; ignore done so the plan always has H rows
            let _ = env.step(&action);
            plan.push(action);
        }
        plan
    }

    /// Rebuild an environment from an observation vector, as produced by
    /// [`SimEnv::observe`]. The step counter starts at zero.
    pub fn from_observation(kind: EnvKind, obs: &[f64]) -> Self {
        match kind {
            EnvKind::PointMass => SimEnv::PointMass(PointMassState::from_observation(obs)),
            EnvKind::Arm => SimEnv::Arm(ArmState::from_observation(obs)),
        }
    }

    /// Render the current state and write it as a PNG.
    pub fn save_render_png(&self, path: &Path) -> Result<(), SimError> {
        self.render()
            .save(path)
            .map_err(|e| SimError::Render(e.to_string()))
    }

    /// Flat 64x64 rasterization of the current state: goal/target in green,
    /// agent/end-effector in white, arm links in gray.
    pub fn render(&self) -> RgbImage {
        const SIZE: u32 = 64;
        let mut img = RgbImage::new(SIZE, SIZE);
        let dot = |img: &mut RgbImage, cx: i64, cy: i64, color: Rgb<u8>| {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let x = cx + dx;
                    let y = cy + dy;
                    if (0..SIZE as i64).contains(&x) && (0..SIZE as i64).contains(&y) {
                        img.put_pixel(x as u32, y as u32, color);
                    }
                }
            }
        };
        match self {
            SimEnv::PointMass(s) => {
                let to_px = |v: f64| (v.clamp(0.0, 1.0) * f64::from(SIZE - 1)).round() as i64;
                dot(&mut img, to_px(s.goal[0]), to_px(s.goal[1]), Rgb([0, 255, 0]));
                dot(
                    &mut img,
                    to_px(s.position[0]),
                    to_px(s.position[1]),
                    Rgb([255, 255, 255]),
                );
            }
            SimEnv::Arm(s) => {
                // workspace is the radius-1 disc around the base
                let to_px = |v: f64| (((v + 1.0) / 2.0).clamp(0.0, 1.0) * f64::from(SIZE - 1)).round() as i64;
                let [l1, _] = s.link_lengths;
                let t1 = s.joint_angles[0];
                let elbow = [l1 * t1.cos(), l1 * t1.sin()];
                let ee = s.end_effector();
                let mut line = |a: [f64; 2], b: [f64; 2]| {
                    for k in 0..=32 {
                        let f = f64::from(k) / 32.0;
                        let x = to_px(a[0] + (b[0] - a[0]) * f);
                        let y = to_px(a[1] + (b[1] - a[1]) * f);
                        if (0..SIZE as i64).contains(&x) && (0..SIZE as i64).contains(&y) {
                            img.put_pixel(x as u32, y as u32, Rgb([128, 128, 128]));
                        }
                    }
                };
                line([0.0, 0.0], elbow);
                line(elbow, ee);
                dot(&mut img, to_px(s.target[0]), to_px(s.target[1]), Rgb([0, 255, 0]));
                let ee_color = if s.gripper > 0.5 {
                    Rgb([255, 255, 0])
                } else {
                    Rgb([255, 255, 255])
                };
                dot(&mut img, to_px(ee[0]), to_px(ee[1]), ee_color);
            }
        }
        img
    }
}

// ---------------------------------------------------------------------------
// Demonstrations
// ---------------------------------------------------------------------------

/// One recorded step: the observation before acting, and the action taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoStep {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
}

/// A complete demonstration or rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub env: String,
    pub dims: usize,
    pub seed: u64,
    pub instruction: String,
    pub steps: Vec<DemoStep>,
}

/// Steps recorded beyond success when generating demonstrations. Holding
/// the goal pose briefly means sliding imitation windows cover the final
/// approach; without it no window starts within a horizon of the goal.
pub const DEMO_GOAL_PAD: u32 = 8;

/// Roll out the scripted controller from `seed`; records every step and, on
/// success, up to [`DEMO_GOAL_PAD`] further steps holding the goal.
pub fn rollout_scripted(kind: EnvKind, seed: u64) -> (Episode, bool) {
    let mut env = SimEnv::new(kind, seed);
    let mut steps = Vec::new();
    let mut pad_left = DEMO_GOAL_PAD;
    let success = loop {
        let state = env.observe();
        let action = env.scripted_action();
        let outcome = env.step(&action).expect("scripted actions are valid");
        steps.push(DemoStep { state, action });
        if outcome.done {
            if !outcome.success || pad_left == 0 || steps.len() >= STEP_LIMIT as usize {
                break outcome.success;
            }
            pad_left -= 1;
        }
    };
    (
        Episode {
            env: kind.name().to_string(),
            dims: kind.action_dims(),
            seed,
            instruction: kind.instruction().to_string(),
            steps,
        },
        success,
    )
}

/// Generate exactly `count` successful scripted episodes.
///
/// Attempt seeds are derived from the master seed; failed rollouts are
/// discarded and the next derived seed is tried, up to a retry cap.
pub fn generate_demos(kind: EnvKind, count: usize, seed: u64) -> Result<Vec<Episode>, SimError> {
    let cap = count * 10 + 100;
    let mut episodes = Vec::with_capacity(count);
    let mut attempt = 0usize;
    while episodes.len() < count {
        if attempt >= cap {
            return Err(SimError::RetryCapExceeded {
                requested: count,
                attempts: attempt,
            });
        }
        let (episode, success) = rollout_scripted(kind, mix_seed(seed, attempt as u64));
        if success {
            episodes.push(episode);
        }
        attempt += 1;
    }
    Ok(episodes)
}

// ---------------------------------------------------------------------------
// Episode persistence (JSONL)
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    env: String,
    dims: usize,
    seed: u64,
    instruction: String,
}

#[derive(Serialize, Deserialize)]
struct StepLine {
    state: Vec<f64>,
    action: Vec<f64>,
    t: usize,
}

/// Write episodes as JSONL: one header line per episode, then its steps.
pub fn write_episodes<W: Write>(mut w: W, episodes: &[Episode]) -> Result<(), SimError> {
    for ep in episodes {
        let header = HeaderLine {
            env: ep.env.clone(),
            dims: ep.dims,
            seed: ep.seed,
            instruction: ep.instruction.clone(),
        };
        serde_json::to_writer(&mut w, &header).map_err(|e| SimError::Malformed(e.to_string()))?;
        w.write_all(b"\n")?;
        for (t, step) in ep.steps.iter().enumerate() {
            let line = StepLine {
                state: step.state.clone(),
                action: step.action.clone(),
                t,
            };
            serde_json::to_writer(&mut w, &line).map_err(|e| SimError::Malformed(e.to_string()))?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn write_episodes_file(path: &Path, episodes: &[Episode]) -> Result<(), SimError> {
    let file = std::fs::File::create(path)?;
    write_episodes(std::io::BufWriter::new(file), episodes)
}

/// Read episodes back from JSONL produced by [`write_episodes`].
pub fn read_episodes<R: BufRead>(r: R) -> Result<Vec<Episode>, SimError> {
    let mut episodes: Vec<Episode> = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| SimError::Malformed(format!("line {}: {e}", lineno + 1)))?;
        if value.get("env").is_some() {
            let header: HeaderLine = serde_json::from_value(value)
                .map_err(|e| SimError::Malformed(format!("line {}: {e}", lineno + 1)))?;
            episodes.push(Episode {
                env: header.env,
                dims: header.dims,
                seed: header.seed,
                instruction: header.instruction,
                steps: Vec::new(),
            });
        } else {
            let step: StepLine = serde_json::from_value(value)
                .map_err(|e| SimError::Malformed(format!("line {}: {e}", lineno + 1)))?;
            let episode = episodes
                .last_mut()
                .ok_or_else(|| SimError::Malformed(format!("line {}: step before header", lineno + 1)))?;
            episode.steps.push(DemoStep {
                state: step.state,
                action: step.action,
            });
        }
    }
    Ok(episodes)
}

pub fn read_episodes_file(path: &Path) -> Result<Vec<Episode>, SimError> {
    let file = std::fs::File::open(path)?;
    read_episodes(std::io::BufReader::new(file))
}
