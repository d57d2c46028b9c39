use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rlrollout::engine::{
    run_seed_sweep, run_validation, summarize_sweep, Mode, SimConfig, Simulation, StepMetrics,
};
use rlrollout::harness::{
    self, load_table_rows, prefilter_dataset, read_counts, render_ablation_table,
    render_validation_table, write_ablation_csv, write_iteration_csv, write_step_csv,
    ExperimentSpec, PrefilterConfig, SyntheticTaskSpec,
};
use rlrollout::model::{read_dataset, write_dataset};
use rlrollout::reward::RewardScheme;
use rlrollout::sampler::{EasyPoolMode, RolloutSource};
use rlrollout::{Error, Result};

const OUT_DIR_ENV: &str = "RLROLLOUT_OUT_DIR";

#[derive(Parser)]
#[command(name = "rlrollout", version, about = "GRPO recipe tools and rollout scheduler simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory. Defaults to $RLROLLOUT_OUT_DIR, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic JSONL dataset.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Drop too-easy or unsolvable problems from a dataset.
    Prefilter {
        #[command(flatten)]
        common: Common,
        /// Input JSONL dataset.
        #[arg(long)]
        input: PathBuf,
        /// CSV of observed counts (problem_id,passed,rollouts); simulated
        /// from each problem's prior when absent.
        #[arg(long)]
        counts: Option<PathBuf>,
        #[arg(long)]
        rollouts: Option<usize>,
        /// policy or solver_pool.
        #[arg(long)]
        source: Option<String>,
    },
    /// Simulate training steps of one scheduling mode.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        steps: Option<usize>,
        /// Run the validation comparison instead.
        #[arg(long)]
        validation: bool,
    },
    /// Run every table mode over a range of seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        steps: Option<usize>,
        /// Number of seeds, starting at --seed.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
    /// Train the toy policy end to end.
    TrainToy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        iterations: Option<usize>,
        /// binary, strict or soft.
        #[arg(long)]
        scheme: Option<RewardScheme>,
        /// Delete perfect-pass problems instead of pooling them.
        #[arg(long)]
        delete_easy: bool,
        /// Drive rollouts against the wall clock.
        #[arg(long)]
        live: bool,
    },
    /// Render a table from a metrics CSV.
    Report {
        #[command(flatten)]
        common: Common,
        /// Step-metrics or ablation-row CSV.
        #[arg(long)]
        input: PathBuf,
    },
}

fn out_dir(common: &Common) -> Result<PathBuf> {
    let dir = common
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn sim_config(common: &Common) -> Result<SimConfig> {
    let mut cfg = match &common.config {
        Some(path) => SimConfig::from_file(path)?,
        None => SimConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn experiment(common: &Common) -> Result<ExperimentSpec> {
    let mut spec = match &common.config {
        Some(path) => ExperimentSpec::from_file(path)?,
        None => ExperimentSpec::default(),
    };
    if let Some(seed) = common.seed {
        spec.seeds = vec![seed];
    }
    Ok(spec)
}

fn gen_data(common: &Common) -> Result<()> {
    let (spec, seed) = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            // Either a full experiment file or a bare task spec.
            match ExperimentSpec::from_toml_str(&text) {
                Ok(e) => (e.dataset.synthetic, e.seeds[0]),
                Err(_) => (toml::from_str::<SyntheticTaskSpec>(&text)?, 0),
            }
        }
        None => (SyntheticTaskSpec::default(), 0),
    };
    let seed = common.seed.unwrap_or(seed);
    let problems = harness::generate_dataset(&spec, seed)?;
    let path = out_dir(common)?.join("dataset.jsonl");
    write_dataset(&path, &problems)?;
    println!("wrote {} problems to {}", problems.len(), path.display());
    Ok(())
}

fn prefilter(
    common: &Common,
    input: &Path,
    counts: Option<&Path>,
    rollouts: Option<usize>,
    source: Option<&str>,
) -> Result<()> {
    let mut cfg: PrefilterConfig = match &common.config {
        Some(path) => toml::from_str(&fs::read_to_string(path)?)?,
        None => PrefilterConfig::default(),
    };
    if let Some(n) = rollouts {
        cfg.rollouts = n;
    }
    if let Some(s) = source {
        cfg.source = match s.replace('-', "_").as_str() {
            "policy" => RolloutSource::Policy,
            "solver_pool" => RolloutSource::SolverPool,
            other => return Err(Error::InvalidArgument(format!("unknown rollout source {other}"))),
        };
    }
    let problems = read_dataset(input)?;
    let counts = counts.map(|p| read_counts(File::open(p)?)).transpose()?;
    let outcome = prefilter_dataset(&problems, &cfg, counts.as_ref(), common.seed.unwrap_or(0))?;
    let dir = out_dir(common)?;
    write_dataset(dir.join("filtered.jsonl"), &outcome.kept)?;
    let mut w = csv::Writer::from_writer(create(&dir.join("prefilter_decisions.csv"))?);
    for r in &outcome.records {
        w.serialize(r)?;
    }
    w.flush()?;
    println!("kept {} of {} problems", outcome.kept.len(), problems.len());
    Ok(())
}

fn simulate(common: &Common, mode: Option<Mode>, steps: Option<usize>, validation: bool) -> Result<()> {
    let mut cfg = sim_config(common)?;
    if let Some(m) = mode {
        cfg.mode = m;
    }
    let dir = out_dir(common)?;
    if validation {
        let report = run_validation(&cfg, None)?;
        let table = render_validation_table(&report);
        fs::write(dir.join("validation.txt"), &table)?;
        write_step_csv(create(&dir.join("validation.csv"))?, &[report.naive, report.streamed])?;
        print!("{table}");
        return Ok(());
    }
    let steps = steps.unwrap_or(cfg.steps);
    let reports = Simulation::new(cfg)?.run(steps)?;
    let metrics: Vec<StepMetrics> = reports.into_iter().map(|r| r.metrics).collect();
    write_step_csv(create(&dir.join("steps.csv"))?, &metrics)?;
    for m in &metrics {
        println!(
            "step {} wall {:.1}s idle {:.1}% launched {} waste {:.1}%",
            m.step,
            m.wall_time,
            100.0 * m.gpu_idle_ratio,
            m.launched,
            100.0 * m.sample_waste_ratio
        );
    }
    Ok(())
}

fn ablate(common: &Common, steps: Option<usize>, seeds: u64) -> Result<()> {
    let cfg = sim_config(common)?;
    let steps = steps.unwrap_or(cfg.steps);
    let seed_list: Vec<u64> = (cfg.seed..cfg.seed + seeds).collect();
    let results = run_seed_sweep(&cfg, &Mode::TABLE, steps, &seed_list)?;
    let rows = summarize_sweep(&results, &Mode::TABLE);
    let dir = out_dir(common)?;
    let all_steps: Vec<StepMetrics> = results.iter().flat_map(|r| r.steps.iter().cloned()).collect();
    write_step_csv(create(&dir.join("ablation_steps.csv"))?, &all_steps)?;
    write_ablation_csv(create(&dir.join("ablation.csv"))?, &rows)?;
    let table = render_ablation_table(&rows)?;
    fs::write(dir.join("ablation_table.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn train_toy(
    common: &Common,
    iterations: Option<usize>,
    scheme: Option<RewardScheme>,
    delete_easy: bool,
    live: bool,
) -> Result<()> {
    let mut spec = experiment(common)?;
    if let Some(n) = iterations {
        spec.iterations = n;
    }
    if let Some(s) = scheme {
        spec.reward.scheme = s;
    }
    if delete_easy {
        spec.sim.sampler.easy_pool = EasyPoolMode::Delete;
    }
    spec.toy.live |= live;
    spec.validate()?;
    let mut runs = Vec::new();
    for &seed in &spec.seeds {
        let records = spec.run(seed)?;
        let first = records.first().map_or(0.0, |r| r.eval_reward);
        let last = records.last().map_or(0.0, |r| r.eval_reward);
        let hard: usize = records.iter().map(|r| r.hard_groups).sum();
        let signal: usize = records.iter().map(|r| r.hard_groups_with_reward).sum();
        println!(
            "seed {seed}: expected reward {first:.4} -> {last:.4}, hard groups with reward {signal}/{hard}, pool {}",
            records.last().map_or(0, |r| r.pool_size)
        );
        runs.push((seed, records));
    }
    let dir = out_dir(common)?;
    write_iteration_csv(create(&dir.join(format!("{}_curves.csv", spec.name)))?, &runs)?;
    Ok(())
}

fn report(common: &Common, input: &Path) -> Result<()> {
    let rows = load_table_rows(File::open(input)?)?;
    let table = render_ablation_table(&rows)?;
    let dir = out_dir(common)?;
    fs::write(dir.join("table.txt"), &table)?;
    write_ablation_csv(create(&dir.join("table.csv"))?, &rows)?;
    print!("{table}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::GenData { common } => gen_data(common),
        Command::Prefilter {
            common,
            input,
            counts,
            rollouts,
            source,
        } => prefilter(common, input, counts.as_deref(), *rollouts, source.as_deref()),
        Command::Simulate {
            common,
            mode,
            steps,
            validation,
        } => simulate(common, *mode, *steps, *validation),
        Command::Ablate { common, steps, seeds } => ablate(common, *steps, *seeds),
        Command::TrainToy {
            common,
            iterations,
            scheme,
            delete_easy,
            live,
        } => train_toy(common, *iterations, *scheme, *delete_easy, *live),
        Command::Report { common, input } => report(common, input),
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            eprintln!("{}", one_line(first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e.to_string()));
            ExitCode::FAILURE
        }
    }
}
