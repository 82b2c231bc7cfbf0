use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use memabs::abstraction::{initial_prefixes, invariant_cell_mass};
use memabs::analysis::InvariantSamples;
use memabs::config::CellMu;
use memabs::experiment::{build_abstraction, run_bounds, run_case1, run_case2, run_rotation_demo, tv_curve};
use memabs::report::{emit_plots, fmt_f64, Table};
use memabs::{Abstraction, ConfigFile, ExperimentConfig, GridPartition, JointDistribution, MemoryMarkovModel, Profile};

/// Memory-dependent Markov abstractions of stochastic systems.
#[derive(Parser, Debug)]
#[command(name = "memabs", version, about)]
struct Cli {
    /// TOML experiment file; benchmark defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `output` from the config file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Sample-size profile for settings the config leaves unset.
    #[arg(long, global = true, value_enum, default_value_t = ProfileArg::Paper)]
    profile: ProfileArg,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProfileArg {
    Paper,
    Ci,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Paper => Profile::Paper,
            ProfileArg::Ci => Profile::Ci,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulates one trajectory and writes `trajectory.csv`.
    Simulate {
        /// Number of steps after the initial state (default: the horizon).
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Estimates a memory model and writes `model_l{ℓ}.txt`.
    Abstract {
        #[arg(long)]
        ell: Option<usize>,
    },
    /// Propagates a model and writes the cell marginals to `propagate_l{ℓ}.csv`.
    Propagate {
        /// Model file from `abstract`; estimated from the config when absent.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        ell: Option<usize>,
    },
    /// Monte-Carlo TV curve of one model against the exact law, `tv_l{ℓ}.csv`.
    Tv {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        ell: Option<usize>,
    },
    /// Measured TV next to the a priori bounds, `bounds_l{ℓ}.csv` per memory.
    Bounds,
    /// TV curves for every configured memory on one partition, `case1.csv`.
    Case1,
    /// Fine memoryless against coarse memory abstraction, `case2.csv`.
    Case2,
    /// Quadrant statistics of the noisy rotation, `rotation.txt`.
    RotationDemo,
    /// Writes a gnuplot script next to each CSV.
    Plots {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path).with_context(|| format!("reading {}", path.display()))?,
        None => ConfigFile::default(),
    };
    let mut cfg = file.resolve(cli.profile.into())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output = out.clone();
    }
    Ok(cfg)
}

fn write(cfg: &ExperimentConfig, name: &str, text: &str) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.output).with_context(|| format!("creating {}", cfg.output.display()))?;
    let path = cfg.output.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    info!("wrote {}", path.display());
    Ok(path)
}

fn memory(cfg: &ExperimentConfig, ell: Option<usize>) -> Result<usize> {
    match ell.or_else(|| cfg.memories.first().copied()) {
        Some(0) | None => bail!("memory must be positive"),
        Some(ell) => Ok(ell),
    }
}

/// The abstraction from a model file, or estimated from the config.
fn abstraction(cfg: &ExperimentConfig, model: Option<&Path>, ell: Option<usize>) -> Result<Abstraction> {
    let system = cfg.system.build()?;
    let Some(path) = model else {
        let partition = Arc::new(cfg.partition.build(&system)?);
        return Ok(build_abstraction(cfg, &system, partition, memory(cfg, ell)?)?);
    };
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let (model, stored) = MemoryMarkovModel::read_from(std::io::BufReader::new(file))?;
    if let Some(ell) = ell {
        if ell != model.ell() {
            bail!("{} holds a memory-{} model, not memory {ell}", path.display(), model.ell());
        }
    }
    let partition: Arc<GridPartition> = Arc::new(match stored {
        Some(p) => p,
        None => cfg.partition.build(&system)?,
    });
    let prefixes =
        initial_prefixes(&system, &partition, model.ell(), (cfg.initial_samples / model.ell()).max(1), cfg.seed)?;
    let initial = JointDistribution::from_samples(&prefixes, model.ell(), model.n())?;
    let mut a = Abstraction::from_parts(partition.clone(), model, initial)?.with_leak_policy(cfg.unobserved.into());
    if cfg.cell_mu == CellMu::Analytic {
        a = a.with_cell_mu(invariant_cell_mass(&system, &partition)?)?;
    }
    Ok(a)
}

fn run(cli: &Cli) -> Result<()> {
    if let Command::Plots { csv } = &cli.command {
        for path in csv {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let name = path.file_name().and_then(|n| n.to_str()).context("CSV path needs a UTF-8 file name")?;
            let script = emit_plots(&text, name).with_context(|| format!("rendering {}", path.display()))?;
            let target = path.with_extension("gp");
            fs::write(&target, script).with_context(|| format!("writing {}", target.display()))?;
            println!("{}", target.display());
        }
        return Ok(());
    }
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Simulate { steps } => {
            let system = cfg.system.build()?;
            let partition = cfg.partition.build(&system)?;
            let steps = steps.unwrap_or(cfg.horizon);
            let mut header = vec!["k".to_string()];
            header.extend((1..=system.dim()).map(|i| format!("x{i}")));
            header.push("cell".into());
            let mut t = Table::new(header);
            for (k, x) in system.simulate_trajectory(steps, cfg.seed).iter().enumerate() {
                let mut row = vec![k.to_string()];
                row.extend(x.iter().map(|v| fmt_f64(*v)));
                row.push(partition.classify(x.as_slice())?.to_string());
                t.push(row);
            }
            write(&cfg, "trajectory.csv", &t.to_csv())?;
        }
        Command::Abstract { ell } => {
            let a = abstraction(&cfg, None, *ell)?;
            let m = a.model();
            let mut text = Vec::new();
            m.write_to(&mut text, Some(a.partition()))?;
            let path = write(&cfg, &format!("model_l{}.txt", m.ell()), std::str::from_utf8(&text)?)?;
            println!(
                "n {} ell {} windows {} stored_nonzeros {} unobserved_rows {} -> {}",
                m.n(),
                m.ell(),
                m.size(),
                m.stored_nonzeros(),
                m.unobserved_rows(),
                path.display()
            );
        }
        Command::Propagate { model, ell } => {
            let a = abstraction(&cfg, model.as_deref(), *ell)?;
            let mut t = Table::new(["k", "cell", "probability", "density"]);
            for (k, marginal) in a.marginals(cfg.horizon)?.iter().enumerate() {
                let density = a.density_from(marginal)?;
                for (cell, p) in marginal.iter().enumerate() {
                    t.push(vec![k.to_string(), cell.to_string(), fmt_f64(*p), fmt_f64(density.values()[cell])]);
                }
            }
            write(&cfg, &format!("propagate_l{}.csv", a.model().ell()), &t.to_csv())?;
        }
        Command::Tv { model, ell } => {
            let a = abstraction(&cfg, model.as_deref(), *ell)?;
            let system = cfg.system.build()?;
            let channel = system.gaussian().context("`tv` needs a linear-Gaussian system")?;
            let samples = InvariantSamples::draw(channel, a.partition(), cfg.tv_samples, cfg.seed)?;
            let ell = a.model().ell();
            let mut t = Table::new(["k".to_string(), format!("tv_l{ell}"), format!("stderr_l{ell}")]);
            for (k, e) in tv_curve(&a, &samples, channel, cfg.horizon)?.iter().enumerate() {
                t.push(vec![k.to_string(), fmt_f64(e.value), fmt_f64(e.stderr)]);
            }
            write(&cfg, &format!("tv_l{ell}.csv"), &t.to_csv())?;
        }
        Command::Bounds => {
            for r in run_bounds(&cfg)? {
                let p = &r.params;
                println!(
                    "ell {} e1 {} m {} delta {} r {} tv0 {} v0_norm2 {} ({}) crossover {}",
                    r.ell,
                    fmt_f64(p.e1),
                    p.m,
                    fmt_f64(p.delta),
                    fmt_f64(p.r),
                    fmt_f64(p.tv0),
                    fmt_f64(p.v0_norm2),
                    p.provenance.as_str(),
                    r.crossover.map_or("none".to_string(), |k| k.to_string())
                );
                write(&cfg, &format!("bounds_l{}.csv", r.ell), &r.table().to_csv())?;
            }
        }
        Command::Case1 => {
            let r = run_case1(&cfg)?;
            for c in &r.curves {
                println!("ell {} mean_tv {} leaked {}", c.ell, fmt_f64(c.mean_tv()), fmt_f64(c.leaked));
            }
            write(&cfg, "case1.csv", &r.table().to_csv())?;
        }
        Command::Case2 => {
            let r = run_case2(&cfg)?;
            for c in [&r.fine, &r.coarse] {
                println!(
                    "{} n {} ell {} stored_nonzeros {} mean_tv {} leaked {}",
                    c.label,
                    c.n,
                    c.ell,
                    c.stored_nonzeros,
                    fmt_f64(c.mean_tv()),
                    fmt_f64(c.leaked)
                );
            }
            write(&cfg, "case2.csv", &r.table().to_csv())?;
        }
        Command::RotationDemo => {
            let text = run_rotation_demo(&cfg)?.to_text();
            print!("{text}");
            write(&cfg, "rotation.txt", &text)?;
        }
        Command::Plots { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
