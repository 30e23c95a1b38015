use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use histo3d::error::Error;
use histo3d::phantom::{generate, write_phantom, PhantomSpec};
use histo3d::pipeline::{configure_threads, parse_stages, Pipeline, PipelineConfig, Stage};

mod serve;

#[derive(Parser)]
#[command(name = "histo3d", version, about = "3D reconstruction of serial histological sections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone)]
struct StageList(Vec<Stage>);

#[derive(Subcommand)]
enum Command {
    /// Run pipeline stages from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated subset of register,mesh,features,scene.
        #[arg(long, value_parser = |s: &str| parse_stages(s).map(StageList))]
        stages: Option<StageList>,
        /// Rerun stages even when their outputs are up to date.
        #[arg(long)]
        force: bool,
    },
    /// Generate a synthetic stack with ground truth and a ready-to-run config.
    Phantom {
        /// Phantom spec (JSON); built-in defaults when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a bundle directory over HTTP.
    Serve {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_millis()
        .init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        log::error!("{e}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Run { config, stages, force } => run(&config, stages.map(|s| s.0), force),
        Command::Phantom { spec, seed, out } => phantom(spec.as_deref(), seed, &out),
        Command::Serve { bundle, port, host } => serve::serve(&bundle, &host, port),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            match e {
                Error::Config { .. } | Error::InvalidParameter { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(config: &Path, stages: Option<Vec<Stage>>, force: bool) -> histo3d::error::Result<()> {
    let pipeline = Pipeline::new(config, force)?;
    let stages = stages.unwrap_or_else(|| Stage::ALL.to_vec());
    let outcomes = pipeline.run(&stages)?;
    let total: f64 = outcomes.iter().map(|o| o.seconds).sum();
    let ran = outcomes.iter().filter(|o| o.ran).count();
    log::info!("pipeline done: {ran} of {} stages ran, {total:.3}s", outcomes.len());
    Ok(())
}

fn phantom(spec_path: Option<&Path>, seed: u64, out: &Path) -> histo3d::error::Result<()> {
    let spec = match spec_path {
        Some(p) => PhantomSpec::load(p)?,
        None => PhantomSpec::default(),
    };
    let phantom = generate(&spec, seed)?;
    write_phantom(&out.join("stack"), &phantom)?;
    let config = PipelineConfig {
        sample_id: format!("phantom-{seed}"),
        stack: "stack".into(),
        output: "bundle".into(),
        metadata: None,
        registration: Default::default(),
        mesh: Default::default(),
        features: spec.feature_params(),
    };
    let config_path = out.join("config.json");
    config.save(&config_path)?;
    log::info!(
        "phantom seed {seed}: {} sections written to {}; run with `histo3d run --config {}`",
        phantom.stack.sections.len(),
        out.join("stack").display(),
        config_path.display()
    );
    Ok(())
}
