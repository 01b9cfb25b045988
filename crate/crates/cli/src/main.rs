//! Command-line front end: simulate a victim's shared gradient, attack it,
//! sweep loss coefficients, generate synthetic datasets, and self-test.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use gradinvert::attack::{attack_with_priors, AttackConfig, PriorSet, ReconstructionResult};
use gradinvert::config;
use gradinvert::flsim;
use gradinvert::fsutil::write_atomic;
use gradinvert::losses::{GradientCapture, LossWeights};
use gradinvert::manifest;
use gradinvert::metrics::{self, paired_report, PairedCase};
use gradinvert::model::{param_gradient, Model, ModelSpec, ParamStore};
use gradinvert::netpbm;
use gradinvert::selftest;
use gradinvert::synth::{generate_synthetic, Split, SyntheticSpec};
use gradinvert::Tensor;

#[derive(Parser)]
#[command(name = "gradinvert", version, about = "Gradient-inversion attack workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the victim's round and write the shared gradient as a GINV1 file.
    Simulate {
        /// Model config file.
        #[arg(long)]
        model: PathBuf,
        /// Seed for deterministic parameter initialization.
        #[arg(long)]
        params_seed: u64,
        /// The victim's secret training image (P5/P6).
        #[arg(long)]
        image: PathBuf,
        /// Ground-truth class of the image.
        #[arg(long)]
        label: usize,
        /// SGD steps (lr 0.1) on held-out data before the gradient is taken.
        #[arg(long, default_value_t = 0)]
        train_steps: u32,
        /// Output capture path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct the image behind a captured gradient.
    Attack {
        /// GINV1 capture file.
        #[arg(long)]
        capture: PathBuf,
        /// Model config file (must match the capture's fingerprint).
        #[arg(long)]
        model: PathBuf,
        /// Seed the victim's parameters were initialized from.
        #[arg(long)]
        params_seed: u64,
        /// Dataset manifest supplying attacker-held prior images.
        #[arg(long)]
        priors: Option<PathBuf>,
        /// Attack config file.
        #[arg(long)]
        config: PathBuf,
        /// Victim's true image, for metric reporting only.
        #[arg(long)]
        ground_truth: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Attack a victim set under a grid of loss coefficients and rank cells
    /// against the gradient-only baseline.
    Sweep {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        params_seed: u64,
        /// Dataset manifest; victims come from its victim split, priors from
        /// its prior split.
        #[arg(long)]
        dataset: PathBuf,
        /// Attack config file (defaults apply when omitted).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Grid config file (the standard coefficient grid when omitted).
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Victim-side training steps before each capture.
        #[arg(long, default_value_t = 0)]
        train_steps: u32,
        /// Cap on victims attacked (0 = all in the manifest).
        #[arg(long, default_value_t = 0)]
        max_victims: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic dataset: images plus a manifest.
    Dataset {
        /// Dataset config file (defaults apply when omitted).
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in verification suites.
    Selftest,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Simulate { model, params_seed, image, label, train_steps, out } => {
            cmd_simulate(&model, params_seed, &image, label, train_steps, &out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Attack { capture, model, params_seed, priors, config, ground_truth, out } => {
            cmd_attack(
                &capture,
                &model,
                params_seed,
                priors.as_deref(),
                &config,
                ground_truth.as_deref(),
                &out,
            )?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { model, params_seed, dataset, config, grid, train_steps, max_victims, out } => {
            cmd_sweep(
                &model,
                params_seed,
                &dataset,
                config.as_deref(),
                grid.as_deref(),
                train_steps,
                max_victims,
                &out,
            )?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Dataset { spec, out } => {
            cmd_dataset(spec.as_deref(), &out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Selftest => cmd_selftest(),
    }
}

fn load_model(path: &Path) -> Result<ModelSpec> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading model config {}", path.display()))?;
    let spec = config::parse_model_config(&text)
        .with_context(|| format!("parsing model config {}", path.display()))?;
    Ok(spec)
}

fn load_attack_config(path: Option<&Path>) -> Result<AttackConfig> {
    match path {
        None => Ok(AttackConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading attack config {}", p.display()))?;
            let cfg = config::parse_attack_config(&text)
                .with_context(|| format!("parsing attack config {}", p.display()))?;
            Ok(cfg)
        }
    }
}

fn gradient_norm(capture: &GradientCapture) -> f64 {
    capture.flat.data().iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn cmd_simulate(
    model: &Path,
    params_seed: u64,
    image: &Path,
    label: usize,
    train_steps: u32,
    out: &Path,
) -> Result<()> {
    let spec = load_model(model)?;
    let img = netpbm::read_image(image).with_context(|| format!("reading image {}", image.display()))?;
    let store = ParamStore::init(&spec, params_seed)?;
    let train_data = if train_steps > 0 {
        flsim::derived_train_data(&spec, params_seed)?
    } else {
        Vec::new()
    };
    let (capture, _) = flsim::victim_round(&spec, &store, &img, label, train_steps, &train_data)?;
    flsim::write_capture(&capture, out)?;
    println!("fingerprint {:016x}", capture.fingerprint);
    println!("label {label}");
    println!("trainsteps {train_steps}");
    println!("gradient_norm {}", gradient_norm(&capture));
    println!("wrote {}", out.display());
    Ok(())
}

fn result_csv(results: &[ReconstructionResult], metrics_vs: Option<&Tensor>) -> Result<String> {
    let mut out = String::from(
        "prior_id,restart_id,final_loss,best_iter,l_g,tv,l_a,l_s,zero_grad_flag,mse,psnr,ssim\n",
    );
    for r in results {
        let (m, p, s) = match metrics_vs {
            Some(gt) => {
                let m = metrics::mse(&r.image, gt)?;
                let p = metrics::psnr(&r.image, gt, 1.0)?;
                let s = metrics::ssim(&r.image, gt)?;
                (m.to_string(), p.to_string(), s.to_string())
            }
            None => (String::new(), String::new(), String::new()),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.prior_id.map(|v| v.to_string()).unwrap_or_default(),
            r.restart,
            r.l_r,
            r.best_iter,
            r.components.l_g,
            r.components.tv,
            r.components.l_a,
            r.components.l_s,
            r.zero_grad_flagged as u8,
            m,
            p,
            s
        ));
    }
    Ok(out)
}

fn trace_csv(result: &ReconstructionResult) -> String {
    let mut out = String::from("iter,l_r,l_g,tv,l_a,l_s\n");
    for p in &result.trace {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.iter, p.l_r, p.components.l_g, p.components.tv, p.components.l_a, p.components.l_s
        ));
    }
    out
}

fn trace_file_name(r: &ReconstructionResult) -> String {
    let prior = r.prior_id.map(|v| v.to_string()).unwrap_or_else(|| "none".into());
    format!("trace_p{prior}_r{}.csv", r.restart)
}

fn cmd_attack(
    capture_path: &Path,
    model: &Path,
    params_seed: u64,
    priors_path: Option<&Path>,
    config_path: &Path,
    ground_truth: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let spec = load_model(model)?;
    let capture = flsim::read_capture(capture_path)
        .with_context(|| format!("reading capture {}", capture_path.display()))?;
    let attack_config = load_attack_config(Some(config_path))?;
    let priors = match priors_path {
        Some(p) => {
            let entries = manifest::read_manifest(p)
                .with_context(|| format!("reading prior manifest {}", p.display()))?;
            manifest::load_priors(&entries)?
        }
        None => PriorSet::default(),
    };
    let gt = ground_truth
        .map(|p| netpbm::read_image(p).with_context(|| format!("reading ground truth {}", p.display())))
        .transpose()?;

    let store = flsim::realize_params(&spec, params_seed, capture.train_steps)?;
    let outcome = attack_with_priors(&capture, &spec, &store, &priors, &attack_config)?;

    std::fs::create_dir_all(out)?;
    let best = outcome.best_result();
    netpbm::write_image(&best.image, &out.join("best.pgm"))?;
    write_atomic(&out.join("results.csv"), result_csv(&outcome.results, gt.as_ref())?.as_bytes())?;
    for r in &outcome.results {
        write_atomic(&out.join(trace_file_name(r)), trace_csv(r).as_bytes())?;
    }

    println!("restored_label {}", outcome.label);
    if outcome.fallback {
        println!("fallback gradient-only (no prior matched the restored class)");
    }
    println!(
        "best prior={} restart={} loss={}",
        best.prior_id.map(|v| v.to_string()).unwrap_or_else(|| "none".into()),
        best.restart,
        best.l_r
    );
    if let Some(gt) = &gt {
        println!(
            "metrics mse={} psnr={} ssim={}",
            metrics::mse(&best.image, gt)?,
            metrics::psnr(&best.image, gt, 1.0)?,
            metrics::ssim(&best.image, gt)?
        );
    }
    let total_wall: f64 = outcome.results.iter().map(|r| r.wall_time.as_secs_f64()).sum();
    println!("wall_time_s {total_wall:.3}");
    println!("wrote {}", out.display());
    Ok(())
}

fn cell_dir_name(s_a: f64, s_g: f64, s_s: f64) -> String {
    let fmt = |v: f64| v.to_string().replace('.', "p");
    format!("cell_sa{}_sg{}_ss{}", fmt(s_a), fmt(s_g), fmt(s_s))
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    model: &Path,
    params_seed: u64,
    dataset: &Path,
    config_path: Option<&Path>,
    grid_path: Option<&Path>,
    train_steps: u32,
    max_victims: usize,
    out: &Path,
) -> Result<()> {
    let spec = load_model(model)?;
    let base_config = load_attack_config(config_path)?;
    let grid = match grid_path {
        None => config::SweepGrid::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading grid config {}", p.display()))?;
            config::parse_grid_config(&text)?
        }
    };
    let entries = manifest::read_manifest(dataset)?;
    let mut victims = manifest::load_image_entries(&entries, Split::Victim)?;
    if max_victims > 0 {
        victims.truncate(max_victims);
    }
    if victims.is_empty() {
        bail!("dataset has no victim entries");
    }
    let priors = manifest::load_priors(&entries)?;

    let store = flsim::realize_params(&spec, params_seed, train_steps)?;
    let built = Model::build(&spec)?;
    let captures: Vec<GradientCapture> = victims
        .iter()
        .map(|(_, class, image)| {
            Ok(GradientCapture {
                flat: param_gradient(&built, &store, image, *class)?,
                fingerprint: spec.fingerprint(),
                label: Some(*class),
                train_steps,
            })
        })
        .collect::<gradinvert::Result<_>>()?;

    std::fs::create_dir_all(out)?;

    // Gradient-only baseline, shared across every cell.
    let baseline_config = AttackConfig {
        weights: LossWeights { alpha_tv: base_config.weights.alpha_tv, ..LossWeights::gradient_only() },
        ..base_config.clone()
    };
    let mut baselines = Vec::with_capacity(victims.len());
    for capture in &captures {
        let outcome = attack_with_priors(capture, &spec, &store, &PriorSet::default(), &baseline_config)?;
        baselines.push(outcome.results[outcome.best].clone());
    }
    eprintln!("baseline done ({} victims)", victims.len());

    let mut summary_rows: Vec<(f64, f64, f64, f64, f64, f64)> = Vec::new();
    for (s_a, s_g, s_s) in grid.cells() {
        let cell_config = AttackConfig {
            weights: LossWeights { s_a, s_g, s_s, ..base_config.weights.clone() },
            ..base_config.clone()
        };
        let mut ours = Vec::with_capacity(victims.len());
        for capture in &captures {
            let outcome = attack_with_priors(capture, &spec, &store, &priors, &cell_config)?;
            ours.push(outcome.results[outcome.best].clone());
        }
        let cases: Vec<PairedCase<'_>> = victims
            .iter()
            .zip(&ours)
            .zip(&baselines)
            .map(|(((id, _, gt), o), b)| PairedCase {
                victim_id: *id,
                prior_id: o.prior_id,
                restart_id: o.restart,
                ours: &o.image,
                baseline: &b.image,
                ground_truth: gt,
            })
            .collect();
        let report = paired_report(&cases)?;
        let dir = out.join(cell_dir_name(s_a, s_g, s_s));
        std::fs::create_dir_all(&dir)?;
        write_atomic(&dir.join("report.csv"), report.to_csv().as_bytes())?;
        write_atomic(&dir.join("summary.csv"), report.summary_csv().as_bytes())?;
        eprintln!(
            "cell ({s_a}, {s_g}, {s_s}): mean d_psnr {:+.4} dB, mean d_mse {:+.6}",
            report.mean_d_psnr, report.mean_d_mse
        );
        summary_rows.push((s_a, s_g, s_s, report.mean_d_mse, report.mean_d_psnr, report.mean_d_ssim));
    }

    // Rank cells by mean PSNR difference, best first.
    summary_rows.sort_by(|a, b| b.4.total_cmp(&a.4));
    let mut summary = String::from("s_a,s_g,s_s,mean_d_mse,mean_d_psnr,mean_d_ssim\n");
    for (s_a, s_g, s_s, d_mse, d_psnr, d_ssim) in &summary_rows {
        summary.push_str(&format!("{s_a},{s_g},{s_s},{d_mse},{d_psnr},{d_ssim}\n"));
    }
    write_atomic(&out.join("summary.csv"), summary.as_bytes())?;
    println!("cells {}", summary_rows.len());
    if let Some(best) = summary_rows.first() {
        println!("best_cell s_a={} s_g={} s_s={} mean_d_psnr={}", best.0, best.1, best.2, best.4);
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_dataset(spec_path: Option<&Path>, out: &Path) -> Result<()> {
    let spec = match spec_path {
        None => SyntheticSpec::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading dataset config {}", p.display()))?;
            config::parse_synth_config(&text)?
        }
    };
    let dataset = generate_synthetic(&spec)?;
    std::fs::create_dir_all(out)?;
    let manifest_path = manifest::write_dataset(&dataset, out)?;
    let count = |s: Split| dataset.split(s).count();
    println!(
        "classes {} victims {} priors {} train {}",
        dataset.classes,
        count(Split::Victim),
        count(Split::Prior),
        count(Split::Train)
    );
    println!("wrote {}", manifest_path.display());
    Ok(())
}

fn cmd_selftest() -> Result<ExitCode> {
    // Hidden hook: arming a deliberate VJP fault must make this command fail,
    // which the test suite uses to prove the checks have teeth.
    if std::env::var("GRADINVERT_FAULT").as_deref() == Ok("vjp-sign") {
        gradinvert::faults::set_vjp_sign_fault(true);
    }
    let reports = selftest::run_all(0x5e1f);
    let mut all_ok = true;
    for report in &reports {
        println!("{}: {}/{} passed", report.name, report.passed, report.total);
        for failure in &report.failures {
            println!("  FAIL {failure}");
        }
        all_ok &= report.ok();
    }
    if all_ok {
        println!("selftest ok");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("selftest FAILED");
        Ok(ExitCode::FAILURE)
    }
}
