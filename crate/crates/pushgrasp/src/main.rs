use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use pushgrasp::eval::{evaluate, EvalConfig};
use pushgrasp::files::{load_encoder, load_policy, read_json, save_encoder, write_json};
use pushgrasp::operators::{timing_study, OperatorConfig};
use pushgrasp::server::serve;
use pushgrasp::service::{Service, ServiceConfig};
use pushgrasp::train::{RunManifest, TrainConfig, Trainer, POLICY_FILE, RUN_FILE};
use pushgrasp_core::policy::{pretrain_cae, CaeConfig};
use serde::de::DeserializeOwned;

/// Environment variable naming the episode-log directory of `serve`.
const DATA_DIR_ENV: &str = "PUSHGRASP_DATA_DIR";

#[derive(Parser)]
#[command(name = "pushgrasp", version, about = "Push-to-grasp workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain the depth autoencoder and save its encoder.
    PretrainCae {
        #[arg(long)]
        num_images: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// JSON file overriding the autoencoder defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "runs/cae")]
        out: PathBuf,
    },
    /// Train the trajectory policy with parallel rollout workers.
    Train {
        /// Encoder checkpoint written by pretrain-cae.
        #[arg(long, default_value = "runs/cae/encoder.json")]
        encoder: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        rollouts: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Continue the run found in --out from its last checkpoint.
        #[arg(long)]
        resume: bool,
        #[arg(long, default_value = "runs/train")]
        out: PathBuf,
    },
    /// Evaluate a policy checkpoint on held-out scenes.
    Eval {
        #[arg(long, default_value = "runs/train/policy.json")]
        policy: PathBuf,
        #[arg(long)]
        scenes: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Report path; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare scripted assisted and manual operators on blocked scenes.
    Timing {
        #[arg(long, default_value = "runs/train/policy.json")]
        policy: PathBuf,
        /// Initially blocked scenes per obstacle count.
        #[arg(long, default_value_t = 100)]
        scenes: usize,
        #[arg(long, value_delimiter = ',', default_value = "4,5,6")]
        obstacles: Vec<usize>,
        #[arg(long, default_value_t = 11)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the teleoperation HTTP/WebSocket service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        /// Policy checkpoint; without one, candidate requests are refused.
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Episode log directory (falls back to $PUSHGRASP_DATA_DIR).
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
}

fn config_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => read_json(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(T::default()),
    }
}

fn emit(out: Option<&Path>, value: &impl serde::Serialize) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            write_json(p, value)
        }
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::PretrainCae { num_images, epochs, seed, config, out } => {
            let mut cfg: CaeConfig = config_or_default(config.as_deref())?;
            if let Some(n) = num_images {
                cfg.num_images = n;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let (cae, report) = pretrain_cae(&cfg, seed, |epoch, loss| eprintln!("epoch {epoch} loss {loss:.6}"))?;
            save_encoder(&out.join("encoder.json"), &cae.encoder, &report)?;
            write_json(&out.join("cae_report.json"), &report)?;
            write_json(&out.join("cae_config.json"), &cfg)?;
            eprintln!("final loss {:.6} over {} images", report.final_loss, report.num_images);
        }
        Command::Train { encoder, workers, iterations, rollouts, seed, config, resume, out } => {
            let mut trainer = if resume {
                let mut t = Trainer::resume(&out)?;
                // Only the schedule may change on resume; anything else would
                // break continuity with the checkpoint.
                if let Some(i) = iterations {
                    t.config.iterations = i;
                }
                if let Some(w) = workers {
                    t.config.workers = w;
                }
                t
            } else {
                let mut cfg: TrainConfig = config_or_default(config.as_deref())?;
                if let Some(w) = workers {
                    cfg.workers = w;
                }
                if let Some(i) = iterations {
                    cfg.iterations = i;
                }
                if let Some(r) = rollouts {
                    cfg.rollouts_per_iteration = r;
                }
                if let Some(s) = seed {
                    cfg.seed = s;
                }
                let (net, report) = load_encoder(&encoder)?;
                std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
                let _ = std::fs::remove_file(out.join(pushgrasp::train::METRICS_FILE));
                write_json(
                    &out.join(RUN_FILE),
                    &RunManifest {
                        program: "pushgrasp".into(),
                        version: env!("CARGO_PKG_VERSION").into(),
                        config: cfg.clone(),
                        encoder_path: encoder.clone(),
                        encoder_report: report,
                    },
                )?;
                Trainer::new(cfg, net, Some(out.clone()))?
            };
            trainer.run(|m| {
                eprintln!(
                    "iter {:>4} reward {:>7.2} avg50 {:>7.2} falls {:.2} loss {:.3}",
                    m.iteration, m.mean_reward, m.moving_average, m.fall_rate, m.loss
                )
            })?;
            trainer.checkpoint()?;
            eprintln!("policy written to {}", out.join(POLICY_FILE).display());
        }
        Command::Eval { policy, scenes, k, seed, config, out } => {
            let mut cfg: EvalConfig = config_or_default(config.as_deref())?;
            if let Some(n) = scenes {
                cfg.scenes = n;
            }
            if let Some(k) = k {
                cfg.k = k;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let policy = load_policy(&policy)?;
            let report = evaluate(&policy, &cfg)?;
            eprintln!(
                "improved {:.2}  made feasible {}/{}  fall rate {:.2}  mean time {:.1}s",
                report.improvement_fraction,
                report.made_feasible,
                report.initially_infeasible,
                report.fall_rate,
                report.mean_sim_time
            );
            emit(out.as_deref(), &report)?;
        }
        Command::Timing { policy, scenes, obstacles, seed, config, out } => {
            let cfg: OperatorConfig = config_or_default(config.as_deref())?;
            let service = Service::new(ServiceConfig::default(), Some(load_policy(&policy)?));
            let study = timing_study(&mut &service, &obstacles, scenes, seed, &cfg)?;
            for l in &study.levels {
                eprintln!(
                    "{} obstacles: assisted {:.1}s ({} solved)  manual {:.1}s ({} solved)",
                    l.obstacles, l.assisted_mean, l.assisted_solved, l.manual_mean, l.manual_solved
                );
            }
            emit(out.as_deref(), &study)?;
        }
        Command::Serve { port, host, policy, data_dir } => {
            let policy = policy.map(|p| load_policy(&p)).transpose()?;
            let data_dir = data_dir.or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from));
            if let Some(d) = &data_dir {
                std::fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
            }
            let service = Arc::new(Service::new(ServiceConfig { data_dir, ..ServiceConfig::default() }, policy));
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(service, SocketAddr::new(host, port), |a| eprintln!("listening on http://{a}")))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
