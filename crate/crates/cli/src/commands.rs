//! Subcommands. Each resolves its [`Settings`] as: defaults, then the config
//! stored in a checkpoint (when one is read), then `--config`, then `--set`,
//! then the command's own flags.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use awdual::duality::{analyze, flatness_cached, FlatnessOptions};
use awdual::linalg::sym_eig_with;
use awdual::multilearner::{draw_probe_batches, noise_strength, run_multilearner, Algorithm, TopologyKind, DEFAULT_PROBE_BATCHES};
use awdual::network::{layer_hessian, Checkpoint, LayerCache};
use awdual::report::{write_csv, write_history_csv, write_json, write_noise_csv, write_spectrum_csv};
use awdual::{Error, Mlp, Result};

use crate::experiment::{run_cell, run_experiment, ExperimentSpec, SweepVar, Trainer};
use crate::settings::{prepare_data, resolve_data_dir, Settings};

#[derive(Debug, Parser)]
#[command(name = "awdual", version, about = "Train small MLPs and decompose their generalization gap in the Hessian eigenbasis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Run configuration as `key=value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// MNIST directory (else $AWDUAL_DATA_DIR, else data/mnist).
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AnalysisFlags {
    /// Analyzed weight layer (1-based).
    #[arg(long)]
    pub layer: Option<usize>,
    /// Test samples paired and analyzed.
    #[arg(long = "n-te")]
    pub n_te: Option<usize>,
    /// Scale applied to every dual shift.
    #[arg(long = "s-w")]
    pub s_w: Option<f64>,
    /// Number of sharp directions, or `auto`.
    #[arg(long = "n-s")]
    pub n_s: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one network; writes checkpoint.json and history.csv.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Run the duality analysis on a checkpoint.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// checkpoint.json, or a directory holding one.
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        analysis: AnalysisFlags,
    },
    /// Train and analyze over a grid of values and seeds.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// alpha, B, beta, s, d, N, rho, t_beta, s_w, alpha_over_B or algorithm
        #[arg(long)]
        var: String,
        /// Comma-separated values (`alpha:B` pairs for alpha_over_B).
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Seeds per value, counting up from the configured seed.
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        /// Analyzed layers, comma-separated.
        #[arg(long, value_delimiter = ',')]
        layers: Vec<usize>,
        /// Cells run at once; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Simulate m learners with SSGD or DPSGD, then analyze the mean weight.
    Multilearner {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        algo: Option<Algorithm>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long = "B")]
        batch_size: Option<usize>,
        #[arg(long)]
        topology: Option<TopologyKind>,
        #[arg(long)]
        include_self: Option<bool>,
    },
    /// Minibatch noise per Hessian eigendirection at checkpoints along a
    /// multi-learner run.
    Noise {
        #[command(flatten)]
        common: Common,
        /// Checkpoints as fractions of the full run's rounds.
        #[arg(long, value_delimiter = ',', default_values_t = [0.25, 0.5, 1.0])]
        fractions: Vec<f64>,
        /// Random minibatches drawn per checkpoint.
        #[arg(long, default_value_t = DEFAULT_PROBE_BATCHES)]
        probes: usize,
        /// Weight layer (1-based) probed for noise.
        #[arg(long)]
        layer: Option<usize>,
    },
    /// Loss flatness along each Hessian eigendirection of a checkpoint.
    Flatness {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Weight layer (1-based); defaults to the checkpoint's analysis layer.
        #[arg(long)]
        layer: Option<usize>,
        /// Only the sharpest K directions.
        #[arg(long)]
        directions: Option<usize>,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(io_err(path))
}

fn resolve_settings(common: &Common, base: Option<Settings>) -> Result<Settings> {
    let mut settings = base.unwrap_or_default();
    if let Some(path) = &common.config {
        settings.apply_file(path)?;
    }
    settings.apply_overrides(&common.set)?;
    Ok(settings)
}

fn apply_analysis_flags(settings: &mut Settings, flags: &AnalysisFlags) -> Result<()> {
    if let Some(l) = flags.layer {
        settings.train.analysis_layer = l;
    }
    if let Some(n) = flags.n_te {
        settings.train.n_te = n;
    }
    if let Some(s) = flags.s_w {
        settings.train.s_w = s;
    }
    if let Some(n) = &flags.n_s {
        settings.set("n_s", n)?;
    }
    Ok(())
}

/// Reads `path`, or `path/checkpoint.json` when `path` is a directory.
fn load_checkpoint(path: &Path) -> Result<(PathBuf, Checkpoint, Mlp)> {
    let file = if path.is_dir() { path.join("checkpoint.json") } else { path.to_path_buf() };
    let ckpt = Checkpoint::load(&file)?;
    let model = ckpt.to_model::<f64>()?;
    Ok((file, ckpt, model))
}

fn checkpoint_settings(ckpt: &Checkpoint) -> Settings {
    let mut s = Settings::default();
    if let Some(cfg) = &ckpt.config {
        s.train = cfg.clone();
    }
    s
}

fn save_checkpoint(dir: &Path, settings: &Settings, model: &Mlp, epochs_run: usize, converged: bool) -> Result<()> {
    let mut ckpt = Checkpoint::from_model(model, Some(&settings.train));
    ckpt.epochs_run = epochs_run;
    ckpt.converged = converged;
    ckpt.save(&dir.join("checkpoint.json"))?;
    let cfg = dir.join("config.txt");
    std::fs::write(&cfg, settings.to_text()).map_err(io_err(&cfg))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common } => train_cmd(&common),
        Command::Analyze {
            common,
            checkpoint,
            analysis,
        } => analyze_cmd(&common, &checkpoint, &analysis),
        Command::Sweep {
            common,
            var,
            values,
            repeats,
            layers,
            workers,
        } => sweep_cmd(&common, &var, values, repeats, layers, workers),
        Command::Multilearner {
            common,
            algo,
            m,
            batch_size,
            topology,
            include_self,
        } => {
            let mut settings = resolve_settings(&common, None)?;
            if let Some(a) = algo {
                settings.algorithm = a;
            }
            if let Some(m) = m {
                settings.m = m;
            }
            if let Some(b) = batch_size {
                settings.train.batch_size = b;
            }
            if let Some(t) = topology {
                settings.topology = t;
            }
            if let Some(i) = include_self {
                settings.include_self = i;
            }
            multilearner_cmd(&common, &settings)
        }
        Command::Noise {
            common,
            fractions,
            probes,
            layer,
        } => {
            let mut settings = resolve_settings(&common, None)?;
            if let Some(l) = layer {
                settings.train.analysis_layer = l;
            }
            noise_cmd(&common, &settings, &fractions, probes)
        }
        Command::Flatness {
            common,
            checkpoint,
            layer,
            directions,
        } => flatness_cmd(&common, &checkpoint, layer, directions),
    }
}

fn train_cmd(common: &Common) -> Result<()> {
    let settings = resolve_settings(common, None)?;
    let data_dir = resolve_data_dir(common.data_dir.as_deref());
    let (result, _) = run_cell(&settings, Trainer::Sgd, &data_dir, &[], Some(&common.out))?;
    let last = result.last().expect("at least one epoch");
    println!(
        "epochs={} converged={} train_loss={:.6} test_loss={:.6} test_err={:.4}",
        result.epochs_run, result.converged, last.train_loss, last.test_loss, last.test_error
    );
    Ok(())
}

fn analyze_cmd(common: &Common, checkpoint: &Path, flags: &AnalysisFlags) -> Result<()> {
    let (file, ckpt, model) = load_checkpoint(checkpoint)?;
    let mut settings = resolve_settings(common, Some(checkpoint_settings(&ckpt)))?;
    apply_analysis_flags(&mut settings, flags)?;
    settings.validate()?;
    let data_dir = resolve_data_dir(common.data_dir.as_deref());
    let (train, test) = prepare_data(&settings, &data_dir)?;
    let opts = settings.analysis();
    let report = analyze(&model, &train, &test, &opts)?;

    create_dir(&common.out)?;
    let mut config = settings.to_pairs();
    config.push(("checkpoint".into(), file.display().to_string()));
    config.push(("layer".into(), opts.layer.to_string()));
    write_spectrum_csv(&common.out.join(format!("spectrum_L{}.csv", opts.layer)), &config, &report.spectrum)?;
    write_json(&common.out.join(format!("summary_L{}.json", opts.layer)), &config, "summary", &report.summary)?;
    let s = &report.summary;
    println!(
        "layer={} n_s={} dL={:.6} dL_s={:.6} dL_f={:.6} direct={:.6}",
        s.layer, s.n_s, s.dl_total, s.dl_sharp, s.dl_flat, s.pairwise_gap_direct
    );
    Ok(())
}

fn sweep_cmd(common: &Common, var: &str, values: Vec<String>, repeats: usize, layers: Vec<usize>, workers: usize) -> Result<()> {
    let base = resolve_settings(common, None)?;
    let layers = if layers.is_empty() { vec![base.train.analysis_layer] } else { layers };
    let spec = ExperimentSpec {
        base,
        var: var.parse::<SweepVar>()?,
        values: values.into_iter().map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect(),
        repeats,
        layers,
        workers,
    };
    let data_dir = resolve_data_dir(common.data_dir.as_deref());
    let result = run_experiment(&spec, &data_dir, &common.out)?;
    for row in &result.aggregate {
        println!(
            "{}={} layer={} ok={} failed={} dL={:.6}±{:.6} dL_s={:.6} dL_f={:.6} test_err={:.4}",
            spec.var.name(),
            row.value,
            row.layer,
            row.n_ok,
            row.n_failed,
            row.dl_mean,
            row.dl_std,
            row.dl_sharp_mean,
            row.dl_flat_mean,
            row.test_error_mean
        );
    }
    Ok(())
}

fn multilearner_cmd(common: &Common, settings: &Settings) -> Result<()> {
    settings.validate()?;
    let data_dir = resolve_data_dir(common.data_dir.as_deref());
    let (train, test) = prepare_data(settings, &data_dir)?;
    let r = run_multilearner(&settings.multi(), &train, &test, None)?;

    create_dir(&common.out)?;
    let config = settings.to_pairs();
    save_checkpoint(&common.out, settings, &r.result.solution, r.result.epochs_run, r.result.converged)?;
    write_history_csv(&common.out.join("history.csv"), &config, &r.result.history, Some(&r.epoch_spread))?;
    write_csv(
        &common.out.join("rounds.csv"),
        &config,
        &["round", "spread"],
        r.round_spread.iter().enumerate().map(|(i, s)| vec![(i + 1).to_string(), s.to_string()]),
    )?;
    let opts = settings.analysis();
    let report = analyze(&r.result.solution, &train, &test, &opts)?;
    let mut cfg = config.clone();
    cfg.push(("layer".into(), opts.layer.to_string()));
    write_spectrum_csv(&common.out.join(format!("spectrum_L{}.csv", opts.layer)), &cfg, &report.spectrum)?;
    write_json(&common.out.join(format!("summary_L{}.json", opts.layer)), &cfg, "summary", &report.summary)?;
    let last = r.result.last().expect("at least one epoch");
    println!(
        "algorithm={} epochs={} rounds={} converged={} test_err={:.4} dL={:.6} dL_s={:.6} dL_f={:.6}",
        settings.algorithm,
        r.result.epochs_run,
        r.rounds_run,
        r.result.converged,
        last.test_error,
        report.summary.dl_total,
        report.summary.dl_sharp,
        report.summary.dl_flat
    );
    Ok(())
}

fn noise_cmd(common: &Common, settings: &Settings, fractions: &[f64], probes: usize) -> Result<()> {
    settings.validate()?;
    if fractions.is_empty() || fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
        return Err(Error::Config("fractions must lie in (0, 1]".into()));
    }
    let data_dir = resolve_data_dir(common.data_dir.as_deref());
    let (train, test) = prepare_data(settings, &data_dir)?;
    let multi = settings.multi();
    let full = run_multilearner(&multi, &train, &test, None)?;
    let s = settings.train.analysis_layer;
    let batches = draw_probe_batches(train.len(), settings.train.batch_size.min(train.len()), probes, settings.train.seed)?;

    create_dir(&common.out)?;
    for &f in fractions {
        let stop = ((full.rounds_run as f64 * f).round() as usize).max(1);
        let run = if stop >= full.rounds_run {
            full.clone()
        } else {
            run_multilearner(&multi, &train, &test, Some(stop))?
        };
        let avg = &run.result.solution;
        let hessian = layer_hessian(avg, &train, s, settings.analysis().hessian_cap)?;
        let basis = sym_eig_with(&hessian.matrix, settings.analysis().eigen)?;
        let learners: Vec<&Mlp> = run.learners.iter().map(|l| &l.params).collect();
        let ssgd = noise_strength(&learners, Algorithm::Ssgd, &train, &basis, s, &batches)?;
        let dpsgd = noise_strength(&learners, Algorithm::Dpsgd, &train, &basis, s, &batches)?;
        let mut config = settings.to_pairs();
        config.push(("layer".into(), s.to_string()));
        config.push(("fraction".into(), f.to_string()));
        config.push(("round".into(), run.rounds_run.to_string()));
        config.push(("probes".into(), probes.to_string()));
        write_noise_csv(&common.out.join(format!("noise_f{f}.csv")), &config, basis.values(), &ssgd.delta, &dpsgd.delta)?;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        println!(
            "fraction={f} round={} mean_delta_ssgd={:.6e} mean_delta_dpsgd={:.6e}",
            run.rounds_run,
            mean(&ssgd.delta),
            mean(&dpsgd.delta)
        );
    }
    Ok(())
}

fn flatness_cmd(common: &Common, checkpoint: &Path, layer: Option<usize>, directions: Option<usize>) -> Result<()> {
    let (file, ckpt, model) = load_checkpoint(checkpoint)?;
    let mut settings = resolve_settings(common, Some(checkpoint_settings(&ckpt)))?;
    if let Some(l) = layer {
        settings.train.analysis_layer = l;
    }
    settings.validate()?;
    let s = settings.train.analysis_layer;
    let data_dir = resolve_data_dir(common.data_dir.as_deref());
    let (train, _) = prepare_data(&settings, &data_dir)?;
    let opts = settings.analysis();
    let hessian = layer_hessian(&model, &train, s, opts.hessian_cap)?;
    let basis = sym_eig_with(&hessian.matrix, opts.eigen)?;
    let cache = LayerCache::new(&model, &train, s)?;
    let k = directions.unwrap_or(basis.dim()).min(basis.dim());
    let widths = (0..k)
        .into_par_iter()
        .map(|n| flatness_cached(&model, &cache, basis.vector(n), FlatnessOptions::default()))
        .collect::<Result<Vec<_>>>()?;

    create_dir(&common.out)?;
    let mut config = settings.to_pairs();
    config.push(("checkpoint".into(), file.display().to_string()));
    config.push(("layer".into(), s.to_string()));
    write_csv(
        &common.out.join(format!("flatness_L{s}.csv")),
        &config,
        &["n", "H_n", "width", "theta_plus", "theta_minus", "capped"],
        widths.iter().enumerate().map(|(n, w)| {
            vec![
                (n + 1).to_string(),
                basis.values()[n].to_string(),
                w.width.to_string(),
                w.theta_plus.to_string(),
                w.theta_minus.to_string(),
                w.capped.to_string(),
            ]
        }),
    )?;
    println!("layer={s} directions={k}");
    Ok(())
}
