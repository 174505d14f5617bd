//! `adaptcha`: serve the verification API, run simulations, train the
//! classifier and inspect the artifacts they produce.
//!
//! Exit codes: 0 success, 1 operational error, 2 usage error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use adaptcha_core::analysis::{
    builtin_model, evaluate_classifier, SvmModel, UncertainPolicy, VerdictLabel,
};
use adaptcha_core::challenge::{
    generate_audio_challenge, generate_grid_challenge, render_audio, render_tile, write_wav,
    ChallengeMeta, DifficultyLevel, DEFAULT_TILE_SIZE,
};
use adaptcha_core::rl::{load_qtable, save_qtable, RlAction, RlState};
use adaptcha_core::service::{read_journal_file, replay, Service, ServiceConfig, SessionState};
use adaptcha_core::sim::{
    bootstrap_training_set, build_training_set, compute_metrics, run_simulation, train_classifier,
    Population, SimOptions,
};

#[derive(Debug, Parser)]
#[command(
    name = "adaptcha",
    version,
    about = "Adaptive multi-modal CAPTCHA toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the HTTP verification service until interrupted.
    Serve {
        /// Service config (TOML, or JSON by extension). Defaults apply when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the configured listen address.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Drive the service with a synthetic population and report metrics.
    Simulate {
        /// Population file (JSON). The bundled reference population when absent.
        #[arg(long)]
        population: Option<PathBuf>,
        /// Total sessions, warm-up included.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        sessions: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Leading sessions excluded from the metrics.
        #[arg(long, default_value_t = 0)]
        warmup: u64,
        /// Service config for learning parameters and thresholds.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Classifier model. The bundled model when absent.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Metrics report (JSON).
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
        /// Event journal (JSON lines), replaced if present.
        #[arg(long, default_value = "journal.jsonl")]
        journal: PathBuf,
        /// Also write the final Q-table snapshot.
        #[arg(long)]
        qtable: Option<PathBuf>,
    },
    /// Train the SVM on first responses from a journal with ground truth.
    TrainClassifier {
        /// Simulation journal. Without it, the bootstrap run that produced
        /// the bundled model is regenerated.
        #[arg(long)]
        journal: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "model.json")]
        out: PathBuf,
    },
    /// Print the greedy action of every state of a Q-table snapshot.
    QInspect {
        #[arg(long)]
        qtable: PathBuf,
    },
    /// Write the assets and ground truth of one challenge for inspection.
    GenChallenge {
        #[arg(long, value_enum, default_value_t = GenModality::Grid)]
        modality: GenModality,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(i64).range(1..=5))]
        level: i64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Tile edge in pixels.
        #[arg(long, default_value_t = DEFAULT_TILE_SIZE)]
        tile_size: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute the metrics report from a journal.
    Metrics {
        #[arg(long)]
        journal: PathBuf,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
        /// Also write the report (JSON).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reconstruct session states from a journal.
    Replay {
        #[arg(long)]
        journal: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GenModality {
    Grid,
    Audio,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Serve { config, listen } => serve(config.as_deref(), listen),
        Command::Simulate {
            population,
            sessions,
            seed,
            warmup,
            config,
            model,
            out,
            journal,
            qtable,
        } => {
            let population = match population {
                Some(p) => Population::load(&p)?,
                None => Population::reference(),
            };
            let config = load_config(config.as_deref())?;
            let model = load_model(model.as_deref())?;
            if warmup >= sessions {
                bail!("--warmup {warmup} leaves no measured sessions out of {sessions}");
            }
            let mut options = SimOptions::new(sessions, seed).with_warmup(warmup);
            options.journal_path = Some(journal.clone());
            let output = run_simulation(&population, &config, &model, &options)?;
            let report = output.report();
            write_json(&out, &report)?;
            if let Some(path) = qtable {
                fs::write(&path, save_qtable(&output.qtable))
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            print!("{}", report.to_table());
            println!("report: {}\njournal: {}", out.display(), journal.display());
            Ok(())
        }
        Command::TrainClassifier { journal, seed, out } => {
            let set = match journal {
                Some(path) => build_training_set(&read_journal_file(&path)?.records, seed),
                None => bootstrap_training_set(seed)?,
            };
            let trained = train_classifier(&set, seed)?;
            let holdout = set.holdout_samples();
            fs::write(&out, trained.model.to_json())
                .with_context(|| format!("writing {}", out.display()))?;
            println!(
                "trained on {} sessions, holdout {} sessions",
                set.train.len(),
                set.holdout.len()
            );
            let outcomes = holdout.iter().map(|(f, label)| {
                let predicted = if trained.model.decision(f) >= 0.0 {
                    VerdictLabel::Human
                } else {
                    VerdictLabel::Bot
                };
                (*label, predicted)
            });
            match evaluate_classifier(outcomes, UncertainPolicy::Strict) {
                Ok(m) => println!(
                    "holdout f1 {:.4}  precision {:.4}  recall {:.4}  fpr {:.4}",
                    m.f1, m.precision, m.recall, m.fpr
                ),
                Err(e) => println!("holdout metrics unavailable: {e}"),
            }
            println!("model: {}", out.display());
            Ok(())
        }
        Command::QInspect { qtable } => {
            let bytes =
                fs::read(&qtable).with_context(|| format!("reading {}", qtable.display()))?;
            let q = load_qtable(&bytes).with_context(|| format!("loading {}", qtable.display()))?;
            print!("{}", inspect_qtable(&q));
            Ok(())
        }
        Command::GenChallenge {
            modality,
            level,
            seed,
            tile_size,
            out,
        } => gen_challenge(
            modality,
            DifficultyLevel::new(level)?,
            seed,
            tile_size,
            &out,
        ),
        Command::Metrics { journal, json, out } => {
            let loaded = read_journal_file(&journal)
                .with_context(|| format!("reading {}", journal.display()))?;
            let report = compute_metrics(&loaded.records);
            if let Some(path) = out {
                write_json(&path, &report)?;
            }
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", report.to_table());
            }
            Ok(())
        }
        Command::Replay { journal } => {
            let loaded = read_journal_file(&journal)
                .with_context(|| format!("reading {}", journal.display()))?;
            if loaded.torn_lines > 0 {
                eprintln!(
                    "warning: dropped {} torn trailing line(s)",
                    loaded.torn_lines
                );
            }
            let state = replay(&loaded.records)?;
            println!("records: {}", loaded.records.len());
            println!("sessions: {}", state.sessions.len());
            for s in [
                SessionState::Created,
                SessionState::Challenged,
                SessionState::Escalated,
                SessionState::VerifiedHuman,
                SessionState::Blocked,
            ] {
                let n = state.sessions.values().filter(|r| r.state == s).count();
                println!(
                    "  {:<15} {n}",
                    serde_json::to_value(s)?.as_str().unwrap_or_default()
                );
            }
            println!("q-table updates: {}", state.qtable.total_visits());
            Ok(())
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ServiceConfig> {
    Ok(match path {
        Some(p) => ServiceConfig::load(p)?,
        None => ServiceConfig::default(),
    })
}

fn load_model(path: Option<&Path>) -> Result<SvmModel> {
    Ok(match path {
        Some(p) => SvmModel::load(p).with_context(|| format!("loading model {}", p.display()))?,
        None => builtin_model().clone(),
    })
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn serve(config: Option<&Path>, listen: Option<String>) -> Result<()> {
    let mut config = load_config(config)?;
    if let Some(addr) = listen {
        config.listen = addr;
        config.validate()?;
    }
    let addr = config.listen.clone();
    let service = Arc::new(Service::from_config(config)?);
    let runtime = tokio::runtime::Runtime::new().context("starting runtime")?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        adaptcha_server::serve(service, listener, async {
            if let Err(e) = tokio::signal::ctrl_c().await {
                log::error!("waiting for interrupt: {e}");
            }
            log::info!("shutting down");
        })
        .await?;
        Ok(())
    })
}

fn inspect_qtable(q: &adaptcha_core::rl::QTable) -> String {
    let mut out = String::from(
        "state level failures time   suspicious      lower       hold      raise  greedy\n",
    );
    for s in RlState::all() {
        let p = s.decode();
        let row = q.row(s);
        let best = q.greedy_actions(s);
        let greedy = if best.len() == 1 {
            action_name(best[0]).to_owned()
        } else {
            let names: Vec<_> = best.iter().map(|&a| action_name(a)).collect();
            format!("tie {} (broken uniformly at random)", names.join("/"))
        };
        out.push_str(&format!(
            "{:>5} {:>5} {:<8} {:<6} {:<10} {:>10.4} {:>10.4} {:>10.4}  {greedy}\n",
            s.index(),
            p.level.get(),
            format!("{:?}", p.failures).to_lowercase(),
            format!("{:?}", p.time).to_lowercase(),
            p.suspicious,
            row[0],
            row[1],
            row[2],
        ));
    }
    out
}

fn action_name(a: RlAction) -> &'static str {
    match a {
        RlAction::Lower => "lower",
        RlAction::Hold => "hold",
        RlAction::Raise => "raise",
    }
}

fn gen_challenge(
    modality: GenModality,
    level: DifficultyLevel,
    seed: u64,
    tile_size: u32,
    out: &Path,
) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let meta = ChallengeMeta::offline(seed);
    match modality {
        GenModality::Grid => {
            let grid = generate_grid_challenge(seed, level, meta);
            for (i, spec) in grid.tiles.iter().enumerate() {
                let path = out.join(format!("tile_{i}.pgm"));
                fs::write(&path, render_tile(spec, tile_size)?.to_pgm())
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            let answer = serde_json::json!({
                "level": level,
                "seed": seed,
                "target_category": grid.target_category.name(),
                "target_indices": grid.target_indices,
            });
            write_json(&out.join("answer.json"), &answer)?;
            println!(
                "{} tiles + answer.json in {}",
                grid.tiles.len(),
                out.display()
            );
        }
        GenModality::Audio => {
            let clip = generate_audio_challenge(seed, level, None, meta);
            let mut wav = Vec::new();
            write_wav(&render_audio(&clip), &mut wav)?;
            fs::write(out.join("challenge.wav"), wav).context("writing challenge.wav")?;
            fs::write(
                out.join("transcript.txt"),
                format!("{}\n", clip.expected_transcript),
            )
            .context("writing transcript.txt")?;
            println!("challenge.wav + transcript.txt in {}", out.display());
        }
    }
    Ok(())
}
