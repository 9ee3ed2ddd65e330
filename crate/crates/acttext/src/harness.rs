//! Closed-loop evaluation and the desk-scale ablation grid.
//!
//! One episode runs the full text pipeline every step: observe, ask the
//! policy for action text, parse it, dequantize, push into the ensemble
//! buffer, execute the buffer's mean for the current timestep. A step whose
//! text fails to parse (or whose backend call fails) never aborts the
//! episode: it is counted and the previous executed action is held.
//!
//! A suite evaluates a grid of configurations with per-episode seeds shared
//! across rows that use the same base seed, so comparisons are paired.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{dequantize, parse_text, CodecConfig, CodecError};
use crate::ensemble::{EnsembleBuffer, EnsembleError};
use crate::mix_seed;
use crate::policy::{
    nn_fit, CorruptionConfig, FittedNeighbors, NearestNeighborPolicy, Observation, OraclePolicy,
    Policy, PolicyError, RemoteEndpointConfig, RemotePolicy,
};
use crate::prompt::ImageLayout;
use crate::sim::{generate_demos, EnvError, EnvKind, SimEnv, SimError};
use std::sync::Arc;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("suite grid is empty")]
    EmptyGrid,
    #[error("config {config_id}: episodes must be >= 1")]
    NoEpisodes { config_id: String },
    #[error("config {config_id}: mask probability {p} outside [0, 1]")]
    BadMaskProbability { config_id: String, p: f64 },
    #[error("jitter needs at least 2 executed actions")]
    JitterNeedsTwo,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Which policy a run drives, in config-file form.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PolicySpec {
    /// Scripted controller through the text pipeline.
    Oracle,
    /// Nearest-neighbor stand-in fitted on freshly generated demos.
    NearestNeighbor {
        demo_count: usize,
        demo_seed: u64,
        corruption: CorruptionConfig,
    },
    /// Hosted model over the chat-completion wire format.
    Remote { endpoint: RemoteEndpointConfig },
}

/// One cell of the evaluation grid.
///
/// On a parse failure the fallback is fixed: hold (repeat) the previous
/// executed action, starting from the zero action.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub config_id: String,
    pub env: EnvKind,
    pub policy: PolicySpec,
    pub codec: CodecConfig,
    /// Ensemble window; 1 disables ensembling.
    pub ensemble_n: usize,
    /// Mask probability used when building training data for this cell.
    /// Echoed in reports; closed-loop behavior of the desk-scale policies
    /// does not depend on it.
    pub mask_p: f64,
    /// Whether multiple camera views would be tiled into one composite.
    /// Echoed in reports; only the remote policy consumes images.
    pub tiled_images: bool,
    pub episodes: usize,
    pub seed: u64,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.episodes < 1 {
            return Err(HarnessError::NoEpisodes {
                config_id: self.config_id.clone(),
            });
        }
        if !(0.0..=1.0).contains(&self.mask_p) {
            return Err(HarnessError::BadMaskProbability {
                config_id: self.config_id.clone(),
                p: self.mask_p,
            });
        }
        self.codec.validate()?;
        // constructing a buffer validates 1 <= n <= horizon
        EnsembleBuffer::new(self.ensemble_n, self.codec.horizon, self.codec.dims)?;
        Ok(())
    }

    pub fn layout(&self) -> ImageLayout {
        if self.tiled_images {
            ImageLayout::Tiled
        } else {
            ImageLayout::Separate
        }
    }
}

/// One executed step of a rollout.
#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub t: u64,
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub raw_text: String,
    pub parse_ok: bool,
    pub clamped: bool,
    pub latency_ms: f64,
}

/// Outcome and metrics of one closed-loop episode.
#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub success: bool,
    pub steps: u32,
    pub parse_failures: u32,
    pub clamp_events: u32,
    /// Mean squared successive difference of executed actions; `None` for
    /// episodes with fewer than two steps.
    pub jitter: Option<f64>,
    pub trajectory: Vec<StepRecord>,
}

/// Mean over consecutive pairs of the squared Euclidean distance between
/// executed actions.
pub fn compute_jitter(actions: &[Vec<f64>]) -> Result<f64, HarnessError> {
    if actions.len() < 2 {
        return Err(HarnessError::JitterNeedsTwo);
    }
    let total: f64 = actions
        .windows(2)
        .map(|pair| {
            pair[0]
                .iter()
                .zip(&pair[1])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum();
    Ok(total / (actions.len() - 1) as f64)
}

/// A transient policy failure is handled like a parse failure (hold); a
/// structural one (wrong dims, bad config) aborts the run.
fn is_transient(e: &PolicyError) -> bool {
    matches!(
        e,
        PolicyError::Timeout
            | PolicyError::BackendUnavailable(_)
            | PolicyError::Transport(_)
            | PolicyError::MalformedResponse(_)
            | PolicyError::HttpStatus(_)
    )
}

/// Run one episode of the full pipeline with a policy instance.
pub fn run_episode(
    env_kind: EnvKind,
    codec: &CodecConfig,
    ensemble_n: usize,
    policy: &mut dyn Policy,
    episode_seed: u64,
    render_images: bool,
) -> Result<EpisodeResult, HarnessError> {
    let mut env = SimEnv::new(env_kind, episode_seed);
    let instruction = env_kind.instruction();
    let mut buffer = EnsembleBuffer::new(ensemble_n, codec.horizon, codec.dims)?;
    let mut held_action = vec![0.0; codec.dims];
    let mut parse_failures = 0u32;
    let mut clamp_events = 0u32;
    let mut trajectory = Vec::new();
    let mut executed_actions = Vec::new();
    let mut t = 0u64;

    loop {
        let state = env.observe();
        let mut obs = Observation::new(state.clone(), t);
        if render_images {
            obs = obs.with_images(vec![env.render()]);
        }

        let (raw_text, latency_ms, parsed) = match policy.act(&obs, instruction) {
            Ok(output) => {
                let parsed = parse_text(&output.raw_text, codec);
                (output.raw_text, output.latency_ms, Some(parsed))
            }
            Err(e) if is_transient(&e) => (format!("<{e}>"), 0.0, None),
            Err(e) => return Err(e.into()),
        };

        let mut parse_ok = false;
        let mut clamped = false;
        let action = match parsed {
            Some(Ok(q)) => {
                parse_ok = true;
                clamped = q.clamped();
                if clamped {
                    clamp_events += 1;
                }
                let chunk = dequantize(&q, codec)?;
                buffer.push(chunk, t)?;
                buffer
                    .current_action(t)
                    .expect("the chunk just pushed covers its own timestep")
            }
            // hold fallback: repeat the previous executed action
            _ => {
                parse_failures += 1;
                held_action.clone()
            }
        };
        let outcome = env.step(&action)?;
        trajectory.push(StepRecord {
            t,
            state,
            action: action.clone(),
            raw_text,
            parse_ok,
            clamped,
            latency_ms,
        });
        executed_actions.push(action.clone());
        held_action = action;
        t += 1;

        if outcome.done {
            return Ok(EpisodeResult {
                success: outcome.success,
                steps: t as u32,
                parse_failures,
                clamp_events,
                jitter: compute_jitter(&executed_actions).ok(),
                trajectory,
            });
        }
    }
}

// ---------------------------------------------------------------------------
// Suite
// ---------------------------------------------------------------------------

/// Per-config aggregate metrics.
#[derive(Debug, Clone, Serialize)]
pub struct ConfigMetrics {
    pub config_id: String,
    pub success_rate: f64,
    pub jitter: f64,
    pub parse_fail_rate: f64,
    pub clamp_rate: f64,
    pub latency_ms: f64,
}

/// One evaluated grid row: config echo, metrics, delta vs the baseline row.
#[derive(Debug, Clone, Serialize)]
pub struct SuiteRow {
    pub config: RunConfig,
    pub metrics: ConfigMetrics,
    /// `success_rate - baseline success_rate`; 0.0 for the baseline itself.
    pub delta_success: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub baseline: String,
    pub rows: Vec<SuiteRow>,
}

/// Policy state reusable across the episodes of one grid cell.
enum PreparedPolicy {
    Oracle,
    Nn {
        fitted: Arc<FittedNeighbors>,
        corruption: CorruptionConfig,
    },
    Remote {
        endpoint: RemoteEndpointConfig,
    },
}

impl PreparedPolicy {
    fn prepare(cfg: &RunConfig) -> Result<Self, HarnessError> {
        match &cfg.policy {
            PolicySpec::Oracle => Ok(PreparedPolicy::Oracle),
            PolicySpec::NearestNeighbor {
                demo_count,
                demo_seed,
                corruption,
            } => {
                corruption.validate()?;
                let demos = generate_demos(cfg.env, *demo_count, *demo_seed)?;
                let fitted = Arc::new(nn_fit(&demos, &cfg.codec)?);
                Ok(PreparedPolicy::Nn {
                    fitted,
                    corruption: *corruption,
                })
            }
            PolicySpec::Remote { endpoint } => Ok(PreparedPolicy::Remote {
                endpoint: endpoint.clone(),
            }),
        }
    }

    /// Fresh policy instance for one episode. The corruption stream is
    /// derived per episode index, so identical indices corrupt identically
    /// across grid cells.
    fn instance(&self, cfg: &RunConfig, episode_index: u64) -> Result<Box<dyn Policy>, HarnessError> {
        Ok(match self {
            PreparedPolicy::Oracle => Box::new(OraclePolicy::new(cfg.env, cfg.codec.clone())),
            PreparedPolicy::Nn { fitted, corruption } => {
                let per_episode = CorruptionConfig {
                    seed: mix_seed(corruption.seed, episode_index),
                    ..*corruption
                };
                Box::new(NearestNeighborPolicy::new(fitted.clone(), per_episode)?)
            }
            PreparedPolicy::Remote { endpoint } => Box::new(RemotePolicy::new(
                endpoint.clone(),
                cfg.codec.clone(),
                cfg.layout(),
            )?),
        })
    }

    fn wants_images(&self) -> bool {
        matches!(self, PreparedPolicy::Remote { .. })
    }
}

/// The standard noisy nearest-neighbor cell used for ensembling
/// comparisons: a dense demo set so the lookup is accurate, and a digit
/// perturbation strong enough that de-ensembled execution is visibly
/// jittery. Calibrated so the ensembling direction (success no worse,
/// jitter strictly lower at n=8 vs n=1) holds over paired 200-episode runs.
pub fn standard_noisy_nn_config(
    config_id: &str,
    ensemble_n: usize,
    episodes: usize,
    seed: u64,
) -> RunConfig {
    RunConfig {
        config_id: config_id.to_string(),
        env: EnvKind::PointMass,
        policy: PolicySpec::NearestNeighbor {
            demo_count: 20_000,
            demo_seed: 7,
            corruption: CorruptionConfig {
                drop_token_prob: 0.0,
                perturb_digit_prob: 0.3,
                garbage_prob: 0.0,
                seed: 1234,
            },
        },
        codec: CodecConfig {
            horizon: 8,
            dims: 2,
            resolution: 1000,
            bounds: EnvKind::PointMass.default_bounds(),
        },
        ensemble_n,
        mask_p: 0.3,
        tiled_images: true,
        episodes,
        seed,
    }
}

/// Evaluate one grid cell over its episode count.
pub fn run_config(cfg: &RunConfig) -> Result<(ConfigMetrics, Vec<EpisodeResult>), HarnessError> {
    cfg.validate()?;
    let prepared = PreparedPolicy::prepare(cfg)?;
    let mut results = Vec::with_capacity(cfg.episodes);
    for index in 0..cfg.episodes {
        let episode_seed = mix_seed(cfg.seed, index as u64);
        let mut policy = prepared.instance(cfg, index as u64)?;
        results.push(run_episode(
            cfg.env,
            &cfg.codec,
            cfg.ensemble_n,
            policy.as_mut(),
            episode_seed,
            prepared.wants_images(),
        )?);
    }
    Ok((aggregate(&cfg.config_id, &results), results))
}

fn aggregate(config_id: &str, results: &[EpisodeResult]) -> ConfigMetrics {
    let episodes = results.len().max(1) as f64;
    let total_steps: u32 = results.iter().map(|r| r.steps).sum();
    let steps = f64::from(total_steps.max(1));
    let successes = results.iter().filter(|r| r.success).count() as f64;
    let jitters: Vec<f64> = results.iter().filter_map(|r| r.jitter).collect();
    let jitter = if jitters.is_empty() {
        0.0
    } else {
        jitters.iter().sum::<f64>() / jitters.len() as f64
    };
    let latency: f64 = results
        .iter()
        .flat_map(|r| r.trajectory.iter().map(|s| s.latency_ms))
        .sum();
    ConfigMetrics {
        config_id: config_id.to_string(),
        success_rate: successes / episodes,
        jitter,
        parse_fail_rate: results.iter().map(|r| f64::from(r.parse_failures)).sum::<f64>() / steps,
        clamp_rate: results.iter().map(|r| f64::from(r.clamp_events)).sum::<f64>() / steps,
        latency_ms: latency / steps,
    }
}

/// Evaluate every grid cell; the first row is the baseline for deltas.
pub fn run_suite(grid: &[RunConfig]) -> Result<SuiteReport, HarnessError> {
    if grid.is_empty() {
        return Err(HarnessError::EmptyGrid);
    }
    let mut rows = Vec::with_capacity(grid.len());
    for cfg in grid {
        let (metrics, _) = run_config(cfg)?;
        rows.push(SuiteRow {
            config: cfg.clone(),
            metrics,
            delta_success: 0.0,
        });
    }
    let baseline_rate = rows[0].metrics.success_rate;
    for row in &mut rows {
        row.delta_success = row.metrics.success_rate - baseline_rate;
    }
    Ok(SuiteReport {
        baseline: grid[0].config_id.clone(),
        rows,
    })
}

impl SuiteReport {
    /// CSV with exactly the columns
    /// `config_id,success_rate,jitter,parse_fail_rate,clamp_rate,latency_ms`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), HarnessError> {
        let mut writer = csv::Writer::from_writer(w);
        writer.write_record([
            "config_id",
            "success_rate",
            "jitter",
            "parse_fail_rate",
            "clamp_rate",
            "latency_ms",
        ])?;
        for row in &self.rows {
            let m = &row.metrics;
            writer.write_record([
                m.config_id.clone(),
                m.success_rate.to_string(),
                m.jitter.to_string(),
                m.parse_fail_rate.to_string(),
                m.clamp_rate.to_string(),
                m.latency_ms.to_string(),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }

    /// JSON report with the full config echo and per-row deltas.
    pub fn write_json<W: Write>(&self, mut w: W) -> Result<(), HarnessError> {
        serde_json::to_writer_pretty(&mut w, self).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oracle_config(env: EnvKind, config_id: &str) -> RunConfig {
        let dims = env.action_dims();
        RunConfig {
            config_id: config_id.to_string(),
            env,
            policy: PolicySpec::Oracle,
            codec: CodecConfig::new(8, dims, 1000, env.default_bounds()).unwrap(),
            ensemble_n: 8,
            mask_p: 0.3,
            tiled_images: true,
            episodes: 5,
            seed: 17,
        }
    }

    fn nn_config(config_id: &str, ensemble_n: usize, corruption: CorruptionConfig) -> RunConfig {
        RunConfig {
            config_id: config_id.to_string(),
            env: EnvKind::PointMass,
            policy: PolicySpec::NearestNeighbor {
                demo_count: 600,
                demo_seed: 7,
                corruption,
            },
            codec: CodecConfig::new(8, 2, 1000, EnvKind::PointMass.default_bounds()).unwrap(),
            ensemble_n,
            mask_p: 0.3,
            tiled_images: true,
            episodes: 40,
            seed: 99,
        }
    }

    #[test]
    fn oracle_episode_succeeds_without_parse_failures() {
        for env in [EnvKind::PointMass, EnvKind::Arm] {
            let cfg = oracle_config(env, "oracle");
            let mut policy = OraclePolicy::new(env, cfg.codec.clone());
            for seed in [0u64, 1, 2] {
                let result =
                    run_episode(env, &cfg.codec, cfg.ensemble_n, &mut policy, seed, false).unwrap();
                assert!(result.success, "{} seed {seed}", env.name());
                assert_eq!(result.parse_failures, 0);
                assert!(result.trajectory.iter().all(|s| s.parse_ok));
            }
        }
    }

    #[test]
    fn garbage_policy_fails_every_parse_and_never_aborts() {
        let corruption = CorruptionConfig {
            garbage_prob: 1.0,
            ..CorruptionConfig::none(0)
        };
        let cfg = nn_config("garbage", 1, corruption);
        let (metrics, results) = run_config(&cfg).unwrap();
        assert_eq!(metrics.success_rate, 0.0);
        assert!((metrics.parse_fail_rate - 1.0).abs() < 1e-12);
        for r in &results {
            assert_eq!(r.parse_failures, r.steps);
            // hold fallback from the zero action: the agent never moves
            assert!(r.trajectory.iter().all(|s| s.action == vec![0.0, 0.0]));
        }
    }

    #[test]
    fn jitter_of_constant_actions_is_zero() {
        let actions = vec![vec![0.3, -0.2]; 10];
        assert_eq!(compute_jitter(&actions).unwrap(), 0.0);
    }

    #[test]
    fn jitter_of_alternating_actions() {
        let u = [0.02, -0.01];
        let actions: Vec<Vec<f64>> = (0..9)
            .map(|i| {
                if i % 2 == 0 {
                    vec![u[0], u[1]]
                } else {
                    vec![-u[0], -u[1]]
                }
            })
            .collect();
        let expected = 4.0 * (u[0] * u[0] + u[1] * u[1]);
        assert!((compute_jitter(&actions).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn jitter_matches_direct_recomputation() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut actions = vec![vec![0.0, 0.0]];
        for _ in 0..50 {
            let last = actions.last().unwrap().clone();
            actions.push(vec![
                last[0] + rng.random_range(-0.01..0.01),
                last[1] + rng.random_range(-0.01..0.01),
            ]);
        }
        let mut expected = 0.0;
        for i in 1..actions.len() {
            let dx = actions[i][0] - actions[i - 1][0];
            let dy = actions[i][1] - actions[i - 1][1];
            expected += dx * dx + dy * dy;
        }
        expected /= (actions.len() - 1) as f64;
        assert!((compute_jitter(&actions).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn jitter_requires_two_actions() {
        assert!(matches!(
            compute_jitter(&[vec![0.0]]),
            Err(HarnessError::JitterNeedsTwo)
        ));
    }

    #[test]
    fn suite_of_one_has_zero_delta() {
        let mut cfg = oracle_config(EnvKind::PointMass, "solo");
        cfg.episodes = 3;
        let report = run_suite(std::slice::from_ref(&cfg)).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.rows[0].delta_success, 0.0);
        assert_eq!(report.rows[0].metrics.success_rate, 1.0);
    }

    #[test]
    fn identical_configs_produce_identical_metrics() {
        let corruption = CorruptionConfig {
            perturb_digit_prob: 0.05,
            ..CorruptionConfig::none(3)
        };
        let mut a = nn_config("a", 4, corruption);
        let mut b = nn_config("b", 4, corruption);
        a.episodes = 10;
        b.episodes = 10;
        let report = run_suite(&[a, b]).unwrap();
        let (ma, mb) = (&report.rows[0].metrics, &report.rows[1].metrics);
        assert_eq!(ma.success_rate, mb.success_rate);
        assert_eq!(ma.jitter, mb.jitter);
        assert_eq!(ma.parse_fail_rate, mb.parse_fail_rate);
        assert_eq!(report.rows[1].delta_success, 0.0);
    }

    #[test]
    fn ensembling_reduces_jitter_of_digit_perturbed_policy() {
        // 40-episode smoke version of the 200-episode paired comparison in
        // the acceptance suite.
        let report = run_suite(&[
            standard_noisy_nn_config("n8", 8, 40, 350),
            standard_noisy_nn_config("n1", 1, 40, 350),
        ])
        .unwrap();
        let (n8, n1) = (&report.rows[0].metrics, &report.rows[1].metrics);
        assert!(
            n8.jitter < n1.jitter,
            "jitter n=8 ({}) should be below n=1 ({})",
            n8.jitter,
            n1.jitter
        );
        assert!(
            n8.success_rate >= n1.success_rate,
            "success n=8 ({}) should not trail n=1 ({})",
            n8.success_rate,
            n1.success_rate
        );
    }

    #[test]
    fn coarse_resolution_degrades_a_quantization_limited_oracle() {
        // Bounds two orders of magnitude wider than the controller's output
        // make the grid step at B=250 comparable to the success radius, so
        // resolution — and nothing else — limits these runs.
        let wide = vec![(-5.0, 5.0); 2];
        let mk = |config_id: &str, resolution: u32| RunConfig {
            config_id: config_id.to_string(),
            env: EnvKind::PointMass,
            policy: PolicySpec::Oracle,
            codec: CodecConfig::new(8, 2, resolution, wide.clone()).unwrap(),
            ensemble_n: 1,
            mask_p: 0.0,
            tiled_images: false,
            episodes: 60,
            seed: 5,
        };
        let report =
            run_suite(&[mk("res1000", 1000), mk("res250", 250), mk("res4000", 4000)]).unwrap();
        let s1000 = report.rows[0].metrics.success_rate;
        let s250 = report.rows[1].metrics.success_rate;
        let s4000 = report.rows[2].metrics.success_rate;
        assert!(s250 <= s1000, "s250={s250} s1000={s1000}");
        assert!((s1000 - s4000).abs() <= 0.05, "s1000={s1000} s4000={s4000}");
        assert!(s250 < 1.0, "coarse grid should visibly fail sometimes");
        assert_eq!(s1000, 1.0);
    }

    #[test]
    fn report_csv_has_exact_columns() {
        let mut cfg = oracle_config(EnvKind::PointMass, "row");
        cfg.episodes = 2;
        let report = run_suite(std::slice::from_ref(&cfg)).unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "config_id,success_rate,jitter,parse_fail_rate,clamp_rate,latency_ms"
        );
        assert!(lines.next().unwrap().starts_with("row,1,"));
    }

    #[test]
    fn report_json_echoes_configs() {
        let mut cfg = oracle_config(EnvKind::PointMass, "echo");
        cfg.episodes = 2;
        let report = run_suite(std::slice::from_ref(&cfg)).unwrap();
        let mut buf = Vec::new();
        report.write_json(&mut buf).unwrap();
        let value: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(value["baseline"], "echo");
        assert_eq!(value["rows"][0]["config"]["config_id"], "echo");
        assert_eq!(value["rows"][0]["config"]["codec"]["resolution"], 1000);
        assert_eq!(value["rows"][0]["delta_success"], 0.0);
    }

    #[test]
    fn suite_requires_a_grid() {
        assert!(matches!(run_suite(&[]), Err(HarnessError::EmptyGrid)));
    }

    #[test]
    fn suite_reruns_identically_apart_from_wall_clock_latency() {
        let grid = [
            standard_noisy_nn_config("a", 4, 6, 41),
            standard_noisy_nn_config("b", 1, 6, 41),
        ];
        let csv_without_latency = || {
            let report = run_suite(&grid).unwrap();
            let mut buf = Vec::new();
            report.write_csv(&mut buf).unwrap();
            String::from_utf8(buf)
                .unwrap()
                .lines()
                .map(|line| line.rsplit_once(',').unwrap().0.to_string())
                .collect::<Vec<_>>()
        };
        assert_eq!(csv_without_latency(), csv_without_latency());
    }
}
