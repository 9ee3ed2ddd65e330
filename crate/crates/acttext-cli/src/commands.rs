//! Implementations of the `acttext` subcommands.

use std::io::Write;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use acttext::augment::{make_training_samples, mask_action_text, write_samples, MaskConfig};
use acttext::codec::{dequantize, fit_bounds as fit_codec_bounds, quantize, ActionChunk, CodecConfig};
use acttext::harness::{run_suite, PolicySpec, SuiteReport};
use acttext::mix_seed;
use acttext::policy::RemoteEndpointConfig;
use acttext::sim::{generate_demos, read_episodes_file, write_episodes_file, SimEnv};
use acttext_gateway::{serve_gateway, serve_stub, GatewayConfig, StubConfig};

use crate::config::{ablation_grid, parse_env, resolve_run_config, standard_corruption};
use crate::{
    AblateArgs, CodecCheckArgs, EvalArgs, ExportSamplesArgs, FitBoundsArgs, GenDemosArgs,
    MaskPreviewArgs, ServeArgs, StubVlmArgs,
};

pub fn gen_demos(args: GenDemosArgs) -> Result<ExitCode> {
    let kind = parse_env(&args.env)?;
    let episodes = generate_demos(kind, args.count as usize, args.seed)?;
    write_episodes_file(&args.out, &episodes)?;
    let steps: usize = episodes.iter().map(|e| e.steps.len()).sum();
    println!(
        "wrote {} episodes ({} steps, env={}, seed={}) -> {}",
        episodes.len(),
        steps,
        kind.name(),
        args.seed,
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn fit_bounds(args: FitBoundsArgs) -> Result<ExitCode> {
    let episodes = read_episodes_file(&args.demos)?;
    if episodes.is_empty() {
        bail!("no episodes in {}", args.demos.display());
    }
    let chunks: Vec<ActionChunk> = episodes
        .iter()
        .filter(|e| !e.steps.is_empty())
        .map(|e| {
            let rows: Vec<Vec<f64>> = e.steps.iter().map(|s| s.action.clone()).collect();
            ActionChunk::from_rows(&rows)
        })
        .collect::<Result<_, _>>()?;
    let bounds = fit_codec_bounds(&chunks, args.padding)?;
    let config = CodecConfig::new(args.horizon, bounds.len(), args.resolution, bounds)?;
    std::fs::write(&args.out, config.to_json_string())
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "fitted {} dims over {} episodes -> {}",
        config.dims,
        episodes.len(),
        args.out.display()
    );
    for (d, (lo, hi)) in config.bounds.iter().enumerate() {
        println!("  dim {d}: [{lo}, {hi}]");
    }
    Ok(ExitCode::SUCCESS)
}

pub fn export_samples(args: ExportSamplesArgs) -> Result<ExitCode> {
    let episodes = read_episodes_file(&args.demos)?;
    let codec = crate::config::load_bounds_document(&args.bounds)?;
    if let Some(dir) = &args.render_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut samples = Vec::new();
    let mut skipped = 0usize;
    for (i, episode) in episodes.iter().enumerate() {
        if episode.steps.len() < codec.horizon {
            skipped += 1;
            continue;
        }
        let mask = MaskConfig::with_probability(args.mask_p, mix_seed(args.seed, i as u64))?;
        let mut episode_samples = make_training_samples(episode, &codec, &mask)?;
        if let Some(dir) = &args.render_dir {
            let kind = parse_env(&episode.env)?;
            for (k, sample) in episode_samples.iter_mut().enumerate() {
                let env = SimEnv::from_observation(kind, &episode.steps[k].state);
                let path = dir.join(format!("ep{i:04}_w{k:04}.png"));
                env.save_render_png(&path)?;
                sample.image_paths = vec![path.display().to_string()];
            }
        }
        samples.extend(episode_samples);
    }
    let file = std::fs::File::create(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    write_samples(std::io::BufWriter::new(file), &samples)?;
    println!(
        "wrote {} samples from {} episodes ({} too short) -> {}",
        samples.len(),
        episodes.len(),
        skipped,
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn write_reports(report: &SuiteReport, out_dir: &std::path::Path, stem: &str) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join(format!("{stem}.csv"));
    let json_path = out_dir.join(format!("{stem}.json"));
    report.write_csv(std::fs::File::create(&csv_path)?)?;
    report.write_json(std::io::BufWriter::new(std::fs::File::create(&json_path)?))?;
    println!("reports -> {} and {}", csv_path.display(), json_path.display());
    Ok(())
}

fn print_rows(report: &SuiteReport) {
    for row in &report.rows {
        let m = &row.metrics;
        println!(
            "{:<20} success={:.3} delta={:+.3} jitter={:.3e} parse_fail={:.3} clamp={:.3} latency_ms={:.2}",
            m.config_id, m.success_rate, row.delta_success, m.jitter, m.parse_fail_rate,
            m.clamp_rate, m.latency_ms
        );
    }
}

pub fn eval(args: EvalArgs) -> Result<ExitCode> {
    let config = resolve_run_config(&args.overrides)?;
    let report = run_suite(std::slice::from_ref(&config))?;
    print_rows(&report);
    write_reports(&report, &args.out_dir, "eval_report")?;
    Ok(ExitCode::SUCCESS)
}

pub fn ablate(args: AblateArgs) -> Result<ExitCode> {
    let mut baseline = resolve_run_config(&args.overrides)?;
    // the grid is only informative with a noisy policy; default to the
    // standard nearest-neighbor cell when no policy was named
    if args.overrides.policy.is_none() && matches!(baseline.policy, PolicySpec::Oracle) {
        baseline.policy = PolicySpec::NearestNeighbor {
            demo_count: args.overrides.demo_count.unwrap_or(20_000),
            demo_seed: args.overrides.demo_seed.unwrap_or(7),
            corruption: standard_corruption(),
        };
    }
    let resolutions = args.resolutions.unwrap_or_else(|| vec![1000, 4000, 250]);
    let grid = ablation_grid(&baseline, &resolutions)?;
    let report = run_suite(&grid)?;
    print_rows(&report);
    write_reports(&report, &args.out_dir, "ablation_report")?;

    if matches!(baseline.policy, PolicySpec::NearestNeighbor { .. }) {
        let (ens, no_ens) = (&report.rows[0].metrics, &report.rows[1].metrics);
        let success_ok = ens.success_rate >= no_ens.success_rate;
        let jitter_ok = ens.jitter < no_ens.jitter;
        println!(
            "ensembling direction: success {:+.3} (want >= 0) jitter ratio {:.3} (want < 1)",
            ens.success_rate - no_ens.success_rate,
            ens.jitter / no_ens.jitter
        );
        if !(success_ok && jitter_ok) {
            eprintln!("assertion failed: ensembling direction does not hold on this grid");
            return Ok(ExitCode::FAILURE);
        }
    }
    Ok(ExitCode::SUCCESS)
}

pub fn serve(args: ServeArgs) -> Result<ExitCode> {
    let bounds_doc = match &args.bounds_file {
        Some(path) => Some(crate::config::load_bounds_document(path)?),
        None => None,
    };
    let horizon = args.horizon.or(bounds_doc.as_ref().map(|c| c.horizon)).unwrap_or(8);
    let resolution = args
        .resolution
        .or(bounds_doc.as_ref().map(|c| c.resolution))
        .unwrap_or(1000);
    let bounds = match &bounds_doc {
        Some(doc) => doc.bounds.clone(),
        None => {
            let dims = args.dims.unwrap_or(2);
            vec![(-1.0, 1.0); dims]
        }
    };
    let dims = args.dims.or(bounds_doc.as_ref().map(|c| c.dims)).unwrap_or(bounds.len());
    let codec = CodecConfig::new(horizon, dims, resolution, bounds)?;

    let mut backend = RemoteEndpointConfig::new(args.backend_url, args.model, args.timeout_ms);
    backend.max_tokens = args.max_tokens;
    backend.temperature = args.temperature;
    backend.api_key = args.api_key;

    let config = GatewayConfig {
        codec,
        ensemble_n: args.ensemble_n,
        backend,
    };
    let server = serve_gateway(config, &args.bind)?;
    println!("gateway listening on {}", server.addr());
    std::io::stdout().flush()?;
    server.wait();
    Ok(ExitCode::SUCCESS)
}

pub fn stub_vlm(args: StubVlmArgs) -> Result<ExitCode> {
    let script: Vec<String> = match &args.script_file {
        Some(path) => std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?
            .lines()
            .map(str::to_string)
            .collect(),
        None => args.reply.clone(),
    };
    let (server, _handle) = serve_stub(StubConfig::new(script, args.delay_ms), &args.bind)?;
    println!("stub backend listening on {}", server.addr());
    std::io::stdout().flush()?;
    server.wait();
    Ok(ExitCode::SUCCESS)
}

pub fn codec_check(args: CodecCheckArgs) -> Result<ExitCode> {
    let mut codec = crate::config::load_bounds_document(&args.bounds)?;
    if let Some(resolution) = args.resolution {
        codec.resolution = resolution;
        codec.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut max_err = vec![0.0f64; codec.dims];
    for _ in 0..args.trials {
        let rows: Vec<Vec<f64>> = (0..codec.horizon)
            .map(|_| {
                codec
                    .bounds
                    .iter()
                    .map(|&(lo, hi)| rng.random_range(lo..=hi))
                    .collect()
            })
            .collect();
        let chunk = ActionChunk::from_rows(&rows)?;
        let q = quantize(&chunk, &codec)?;
        if q.clamped() {
            bail!("in-bounds input was clamped; bounds document is inconsistent");
        }
        let back = dequantize(&q, &codec)?;
        for (t, row) in back.rows().enumerate() {
            for (d, (&got, &want)) in row.iter().zip(chunk.row(t)).enumerate() {
                max_err[d] = max_err[d].max((got - want).abs());
            }
        }
    }

    let mut pass = true;
    for (d, &(lo, hi)) in codec.bounds.iter().enumerate() {
        let bound = (hi - lo) / (2.0 * f64::from(codec.resolution));
        let ok = max_err[d] <= bound;
        pass &= ok;
        println!(
            "dim {d}: max round-trip error {:.3e} vs bound {:.3e} -> {}",
            max_err[d],
            bound,
            if ok { "PASS" } else { "FAIL" }
        );
    }

    // monotonicity sweep per dimension
    for (d, &(lo, hi)) in codec.bounds.iter().enumerate() {
        let mut xs: Vec<f64> = (0..256).map(|_| rng.random_range(lo..=hi)).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut previous = None;
        let mut ok = true;
        for x in xs {
            let mut row = vec![0.0; codec.dims];
            for (j, &(l, h)) in codec.bounds.iter().enumerate() {
                row[j] = (l + h) / 2.0;
            }
            row[d] = x;
            let chunk = ActionChunk::from_rows(&vec![row; codec.horizon])?;
            let v = quantize(&chunk, &codec)?.row(0)[d];
            if let Some(prev) = previous {
                ok &= v >= prev;
            }
            previous = Some(v);
        }
        pass &= ok;
        println!("dim {d}: quantization monotone -> {}", if ok { "PASS" } else { "FAIL" });
    }

    println!("codec-check: {}", if pass { "PASS" } else { "FAIL" });
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

pub fn mask_preview(args: MaskPreviewArgs) -> Result<ExitCode> {
    let config = MaskConfig::new(args.p, args.mask_char, args.seed)?;
    let masked = mask_action_text(&args.text, &config);
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "target: {}", args.text)?;
    writeln!(stdout, "masked: {masked}")?;
    Ok(ExitCode::SUCCESS)
}
