//! Config-file parsing and the file/flag/default resolution into run
//! configurations, plus the ablation grid builder.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use acttext::codec::CodecConfig;
use acttext::harness::{PolicySpec, RunConfig};
use acttext::policy::CorruptionConfig;
use acttext::sim::EnvKind;

use crate::RunOverrides;

/// Everything an eval/ablate config file may specify. Flags override file
/// values; anything still missing falls back to defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub config_id: Option<String>,
    pub env: Option<EnvKind>,
    pub episodes: Option<usize>,
    pub seed: Option<u64>,
    pub ensemble_n: Option<usize>,
    pub mask_p: Option<f64>,
    pub tiled_images: Option<bool>,
    pub codec: Option<FileCodec>,
    pub policy: Option<PolicySpec>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileCodec {
    pub horizon: Option<usize>,
    pub dims: Option<usize>,
    pub resolution: Option<u32>,
    pub bounds: Option<Vec<(f64, f64)>>,
    pub bounds_file: Option<PathBuf>,
}

pub fn load_file_config(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let is_json = path.extension().is_some_and(|e| e == "json");
    let config: FileConfig = if is_json {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    } else {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    };
    Ok(config)
}

pub fn parse_env(name: &str) -> Result<EnvKind> {
    EnvKind::from_name(name)
        .ok_or_else(|| anyhow::anyhow!("unknown environment {name:?} (expected pointmass or arm)"))
}

pub fn load_bounds_document(path: &Path) -> Result<CodecConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading bounds {}", path.display()))?;
    let config = CodecConfig::from_json_str(&text)
        .with_context(|| format!("parsing bounds {}", path.display()))?;
    Ok(config)
}

/// Merge defaults <- config file <- flags into one runnable configuration.
pub fn resolve_run_config(overrides: &RunOverrides) -> Result<RunConfig> {
    let file = match &overrides.config {
        Some(path) => load_file_config(path)?,
        None => FileConfig::default(),
    };

    let env = match &overrides.env {
        Some(name) => parse_env(name)?,
        None => file.env.unwrap_or(EnvKind::PointMass),
    };

    // bounds document, when given, seeds the codec fields
    let bounds_doc = match overrides
        .bounds_file
        .as_ref()
        .or(file.codec.as_ref().and_then(|c| c.bounds_file.as_ref()))
    {
        Some(path) => Some(load_bounds_document(path)?),
        None => None,
    };

    let file_codec = file.codec.unwrap_or_default();
    let horizon = overrides
        .horizon
        .or(file_codec.horizon)
        .or(bounds_doc.as_ref().map(|c| c.horizon))
        .unwrap_or(8);
    let resolution = overrides
        .resolution
        .or(file_codec.resolution)
        .or(bounds_doc.as_ref().map(|c| c.resolution))
        .unwrap_or(1000);
    let bounds = file_codec
        .bounds
        .or(bounds_doc.as_ref().map(|c| c.bounds.clone()))
        .unwrap_or_else(|| env.default_bounds());
    let dims = file_codec.dims.unwrap_or(bounds.len());
    let codec = CodecConfig::new(horizon, dims, resolution, bounds)
        .context("assembling codec config")?;

    let policy = match overrides.policy.as_deref() {
        Some("oracle") => PolicySpec::Oracle,
        Some("nn") | Some("nearest-neighbor") | Some("nearest_neighbor") => {
            let base = match file.policy {
                Some(PolicySpec::NearestNeighbor {
                    demo_count,
                    demo_seed,
                    corruption,
                }) => (demo_count, demo_seed, corruption),
                _ => (20_000, 7, standard_corruption()),
            };
            PolicySpec::NearestNeighbor {
                demo_count: base.0,
                demo_seed: base.1,
                corruption: base.2,
            }
        }
        Some(other) => bail!("unknown policy {other:?} (expected oracle or nn)"),
        None => file.policy.unwrap_or(PolicySpec::Oracle),
    };
    let policy = apply_demo_overrides(policy, overrides);

    let config = RunConfig {
        config_id: file.config_id.unwrap_or_else(|| "eval".to_string()),
        env,
        policy,
        codec,
        ensemble_n: overrides.ensemble_n.or(file.ensemble_n).unwrap_or(8),
        mask_p: overrides.mask_p.or(file.mask_p).unwrap_or(0.3),
        tiled_images: file.tiled_images.unwrap_or(true),
        episodes: overrides
            .episodes
            .map(|e| e as usize)
            .or(file.episodes)
            .unwrap_or(50),
        seed: overrides.seed.or(file.seed).unwrap_or(0),
    };
    Ok(config)
}

fn apply_demo_overrides(policy: PolicySpec, overrides: &RunOverrides) -> PolicySpec {
    match policy {
        PolicySpec::NearestNeighbor {
            demo_count,
            demo_seed,
            corruption,
        } => PolicySpec::NearestNeighbor {
            demo_count: overrides.demo_count.unwrap_or(demo_count),
            demo_seed: overrides.demo_seed.unwrap_or(demo_seed),
            corruption,
        },
        other => other,
    }
}

pub fn standard_corruption() -> CorruptionConfig {
    CorruptionConfig {
        drop_token_prob: 0.0,
        perturb_digit_prob: 0.3,
        garbage_prob: 0.0,
        seed: 1234,
    }
}

/// The six-row grid: baseline, no ensembling, no masking, high resolution,
/// low resolution, separate images. All rows share the baseline's episode
/// seeds, so comparisons are paired.
pub fn ablation_grid(baseline: &RunConfig, resolutions: &[u32]) -> Result<Vec<RunConfig>> {
    if resolutions.len() != 3 {
        bail!("resolution axis needs exactly 3 values (baseline,high,low)");
    }
    let with_resolution = |cfg: &RunConfig, id: &str, resolution: u32| -> RunConfig {
        let mut row = cfg.clone();
        row.config_id = id.to_string();
        row.codec.resolution = resolution;
        row
    };

    let mut baseline_row = baseline.clone();
    baseline_row.config_id = "row0_baseline".to_string();
    baseline_row.codec.resolution = resolutions[0];

    let mut no_ensemble = baseline_row.clone();
    no_ensemble.config_id = "row1_no_ensemble".to_string();
    no_ensemble.ensemble_n = 1;

    let mut no_mask = baseline_row.clone();
    no_mask.config_id = "row2_no_mask".to_string();
    no_mask.mask_p = 0.0;

    let high = with_resolution(&baseline_row, &format!("row3_res{}", resolutions[1]), resolutions[1]);
    let low = with_resolution(&baseline_row, &format!("row4_res{}", resolutions[2]), resolutions[2]);

    let mut separate = baseline_row.clone();
    separate.config_id = "row5_separate_imgs".to_string();
    separate.tiled_images = false;

    Ok(vec![baseline_row, no_ensemble, no_mask, high, low, separate])
}
