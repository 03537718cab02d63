//! `sigwatch` — simulate, detect and explain signal-controller tampering.
//!
//! Every command reads and writes artifacts under one output directory and
//! refuses inputs whose content digest disagrees with the manifest that
//! produced them.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sigwatch::pipeline::{
    stage_dataset, stage_eval, stage_explain, stage_pca, stage_simulate, stage_train, stage_triage, ExplainMethod,
    Layout, RunConfig, SampleSelector,
};
use sigwatch::simnet::ScenarioConfig;
use sigwatch::Error;

#[derive(Parser)]
#[command(name = "sigwatch", version, about = "Traffic-signal tampering detection workbench")]
struct Cli {
    /// Run file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every stochastic stage; also overrides the scenario's network seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for all artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the scenario and its attack-free control run.
    Simulate {
        /// Scenario file; defaults to `scenario` from the run file.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Window, split, normalize and rebalance the simulated records.
    Dataset,
    /// Train the detector on the training split.
    Train,
    /// Evaluate on the test split and print the metrics table.
    Eval,
    /// Explain test samples with occlusion, LIME or KernelSHAP.
    Explain {
        #[arg(long)]
        method: String,
        /// Comma-separated test indices, `misclassified` or `all`.
        #[arg(long, default_value = "0")]
        samples: String,
    },
    /// Categorize misclassified test windows.
    Triage,
    /// Export 2-D PCA scatter data of the windows.
    Pca,
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    error: Error,
}

fn usage(error: Error) -> Failure {
    Failure { code: 2, error }
}

fn runtime(error: Error) -> Failure {
    let code = if matches!(error, Error::Config(_)) { 2 } else { 1 };
    Failure { code, error }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(usage)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.out.is_some() {
        cfg.out = cli.out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli)?;
    let layout = Layout::new(cfg.out.clone().unwrap_or_else(|| PathBuf::from("out")));
    match &cli.command {
        Command::Simulate { scenario } => {
            let path = scenario
                .clone()
                .or_else(|| cfg.scenario.clone())
                .ok_or_else(|| usage(Error::Config("no scenario file given (--scenario or `scenario` in the run file)".into())))?;
            let mut sc = ScenarioConfig::load(&path).map_err(usage)?;
            if let Some(seed) = cfg.seed {
                sc.network.seed = seed;
            }
            sc.network.validate().map_err(usage)?;
            let s = stage_simulate(&sc, &layout, sc.network.seed).map_err(runtime)?;
            println!("records           {} ({} detectors, monitored intersection {})", s.records, s.detectors, s.monitored);
            println!("control records   {}", s.control_records);
            if s.attacks.is_empty() {
                println!("attacks           none");
            }
            for a in &s.attacks {
                println!("attack            [{}, {}) s on intersection {} ({:?})", a.start, a.end, a.target, a.mode);
            }
            println!("records digest    {}", s.records_digest);
        }
        Command::Dataset => {
            let b = stage_dataset(&cfg, &layout).map_err(runtime)?;
            println!(
                "train {} windows (normal {}, hacked {}, SMOTE {}); test {} windows (normal {}, hacked {})",
                b.train.counts.normal + b.train.counts.hacked,
                b.train.counts.normal,
                b.train.counts.hacked,
                if b.train.smote_applied { "applied" } else { "not applied" },
                b.test.counts.normal + b.test.counts.hacked,
                b.test.counts.normal,
                b.test.counts.hacked,
            );
            println!("input shape {}x{}x23", b.train.channels, b.train.rows);
        }
        Command::Train => {
            let m = stage_train(&cfg, &layout).map_err(runtime)?;
            for (i, l) in m.report.epoch_loss.iter().enumerate() {
                println!("epoch {:>2}  loss {l:.6}", i + 1);
            }
            println!("model {} ({} parameters)", layout.model().display(), m.parameters);
        }
        Command::Eval => {
            let f = stage_eval(&cfg, &layout).map_err(runtime)?;
            print!("{}", f.metrics.table(&f.configuration));
        }
        Command::Explain { method, samples } => {
            let method: ExplainMethod = method.parse().map_err(usage)?;
            let selector: SampleSelector = samples.parse().map_err(usage)?;
            let files = stage_explain(&cfg, &layout, method, &selector).map_err(runtime)?;
            for f in &files {
                println!("{}", f.display());
            }
            if files.is_empty() {
                println!("no samples selected");
            }
        }
        Command::Triage => {
            let r = stage_triage(&cfg, &layout).map_err(runtime)?;
            print!("{}", r.render_text());
        }
        Command::Pca => {
            let s = stage_pca(&cfg, &layout).map_err(runtime)?;
            let two: f64 = s.explained_variance_ratio.iter().take(2).sum();
            println!(
                "{} windows ({} normal, {} hacked); {} components reach {:.0}% variance; first two explain {:.1}%",
                s.samples,
                s.class_counts.normal,
                s.class_counts.hacked,
                s.k,
                100.0 * s.variance_target,
                100.0 * two
            );
            println!("{}", layout.pca_csv().display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.error);
            ExitCode::from(f.code)
        }
    }
}
