mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use diffaudit_core::{Error, ErrorClass};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "diffaudit", version, about = "Privacy audits of small denoising diffusion models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic face corpus into the dataset directory.
    Generate(Common),
    /// Train a denoiser on the training split.
    Train(Common),
    /// Membership inference on one or more query images.
    AttackMia(AttackArgs),
    /// Identity inference from a list of photos of one person.
    AttackIia(AttackArgs),
    /// Extract training images by clustering many seeded generations.
    AttackDea(AttackArgs),
    /// Run the membership, identity and extraction experiments.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        profile: Option<Profile>,
    },
    /// Membership experiment repeated at several starting timesteps.
    Sweep(Common),
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Config file, or a JSON report whose embedded config to reuse.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed of the command's own randomness (dataset, training or attack).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra `key=value` override, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Clone, Default)]
struct AttackArgs {
    #[command(flatten)]
    common: Common,
    /// Query image (PGM/PPM) from the dataset; may be repeated. Overrides
    /// the config's `queries`.
    #[arg(long, conflicts_with = "identity")]
    query: Vec<PathBuf>,
    /// Identity to attack. Overrides the config's `identity`.
    #[arg(long)]
    identity: Option<usize>,
    /// Starting timestep for the reverse runs (also used for extraction).
    #[arg(long)]
    t_start: Option<usize>,
    /// Decision threshold: MIA confidence, or S_II for attack-iia.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    /// Full-size query counts.
    Full,
    /// Small query counts for a quick end-to-end check.
    Fast,
}

/// Which seed `--seed` sets.
#[derive(Clone, Copy)]
enum SeedRole {
    Dataset,
    Train,
    Attack,
}

fn load_config(common: &Common, role: SeedRole, profile: Option<Profile>) -> diffaudit_core::Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    if let Some(Profile::Fast) = profile {
        cfg.apply_text(commands::FAST_PROFILE)?;
    }
    for kv in &common.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config {
            key: "--set".into(),
            msg: format!("expected KEY=VALUE, found `{kv}`"),
        })?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(seed) = common.seed {
        match role {
            SeedRole::Dataset => cfg.dataset_seed = seed,
            SeedRole::Train => cfg.train_seed = seed,
            SeedRole::Attack => cfg.attack_seed = seed,
        }
    }
    Ok(cfg)
}

fn apply_attack_flags(cfg: &mut RunConfig, args: &AttackArgs, threshold_key: &str) -> diffaudit_core::Result<()> {
    if let Some(t) = args.t_start {
        cfg.t_start = Some(t);
        cfg.extraction_t_start = Some(t);
    }
    if let Some(th) = args.threshold {
        cfg.set(threshold_key, &th.to_string())?;
    }
    if !args.query.is_empty() {
        cfg.queries = args.query.clone();
        cfg.identity = None;
    }
    if let Some(id) = args.identity {
        cfg.identity = Some(id);
        cfg.queries.clear();
    }
    Ok(())
}

fn run(cli: Cli) -> diffaudit_core::Result<String> {
    let (common, mut cfg) = match &cli.command {
        Command::Generate(c) => (c, load_config(c, SeedRole::Dataset, None)?),
        Command::Train(c) => (c, load_config(c, SeedRole::Train, None)?),
        Command::AttackMia(a) => {
            let mut cfg = load_config(&a.common, SeedRole::Attack, None)?;
            apply_attack_flags(&mut cfg, a, "mia_threshold")?;
            (&a.common, cfg)
        }
        Command::AttackIia(a) => {
            let mut cfg = load_config(&a.common, SeedRole::Attack, None)?;
            apply_attack_flags(&mut cfg, a, "iia_threshold")?;
            (&a.common, cfg)
        }
        Command::AttackDea(a) => {
            let mut cfg = load_config(&a.common, SeedRole::Attack, None)?;
            apply_attack_flags(&mut cfg, a, "mia_threshold")?;
            (&a.common, cfg)
        }
        Command::Evaluate { common, profile } => (common, load_config(common, SeedRole::Attack, *profile)?),
        Command::Sweep(c) => (c, load_config(c, SeedRole::Attack, None)?),
    };
    if let Some(out) = &common.out {
        match cli.command {
            Command::Generate(_) => cfg.dataset_dir = out.clone(),
            Command::Train(_) => {
                cfg.checkpoint = out.join("model.ckpt");
                cfg.report_dir = out.clone();
            }
            _ => cfg.report_dir = out.clone(),
        }
    }
    cfg.validate()?;
    cfg.resolve();
    cfg.validate()?;

    let workers = match common.workers {
        Some(0) => {
            return Err(Error::Config {
                key: "--workers".into(),
                msg: "must be at least 1".into(),
            })
        }
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config {
            key: "--workers".into(),
            msg: e.to_string(),
        })?;

    pool.install(|| match &cli.command {
        Command::Generate(_) => commands::generate(&cfg),
        Command::Train(_) => commands::train(&cfg),
        Command::AttackMia(_) => commands::attack_mia(&cfg),
        Command::AttackIia(_) => commands::attack_iia(&cfg),
        Command::AttackDea(_) => commands::attack_dea(&cfg),
        Command::Evaluate { .. } => commands::evaluate(&cfg),
        Command::Sweep(_) => commands::sweep(&cfg),
    })
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Config => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numeric => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
