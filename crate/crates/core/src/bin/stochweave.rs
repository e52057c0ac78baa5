use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stochweave::agent::Dqn;
use stochweave::cvae::TransitionModel;
use stochweave::envs::{uncorrelated_dataset, write_dataset, GridState};
use stochweave::harness::{
    build_datasets, evaluate_likelihood, probe_metrics, probe_set, record_probe_metrics,
    render_grid_predictions, rollout_in_model, run_experiment, stream_rng, write_rollout,
    EpsilonGreedy, ExperimentConfig, Report, RunReport, Stream, Variant,
};
use stochweave::{Error, Result};

#[derive(Parser)]
#[command(name = "stochweave", version, about = "Multimodal transition models with conditional VAEs")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML or JSON file overlaid on the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// toy, grid or grid-onpolicy.
    #[arg(long, default_value = "toy")]
    preset: String,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the model variant (resets latent and objective defaults).
    #[arg(long)]
    variant: Option<String>,
    /// Override the training step budget.
    #[arg(long)]
    steps: Option<u64>,
}

#[derive(Subcommand)]
enum Verb {
    /// Write the seed's datasets (toy CSV or grid binary records).
    GenData {
        #[command(flatten)]
        common: Common,
        /// Training transitions to write when the preset samples fresh ones.
        #[arg(long, default_value_t = 10_000)]
        count: usize,
    },
    /// Train every seed and write checkpoints, renders and the report.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a saved model on the seed's test set (and probe set).
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Roll a saved policy forward inside a saved model.
    Rollout {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// DQN checkpoint written by `train` on the on-policy preset.
        #[arg(long)]
        policy: PathBuf,
    },
    /// Render predicted next-cell marginals for probe states.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 6)]
        count: usize,
    },
    /// Print the aggregate table of one or more report directories.
    Report {
        #[command(flatten)]
        common: Common,
        dirs: Vec<PathBuf>,
    },
}

fn config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::from_file(p, Some(&c.preset))?,
        None => ExperimentConfig::preset(&c.preset)?,
    };
    if let Some(v) = &c.variant {
        cfg = cfg.with_variant(Variant::parse(v)?);
    }
    if let Some(s) = c.steps {
        cfg = cfg.with_steps(s);
    }
    if let Some(s) = c.seed {
        cfg = cfg.with_seeds([s]);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn first_seed(cfg: &ExperimentConfig) -> u64 {
    cfg.seeds[0]
}

fn gen_data(c: &Common, count: usize) -> Result<()> {
    let cfg = config(c)?;
    let seed = first_seed(&cfg);
    std::fs::create_dir_all(&c.out)?;
    if cfg.domain.is_grid() {
        let n = if cfg.train_size == 0 { count } else { cfg.train_size };
        for (name, size, stream) in [
            ("train", n, Stream::Train),
            ("val", cfg.val_size, Stream::Val),
            ("test", cfg.test_size, Stream::Test),
        ] {
            let records = uncorrelated_dataset(&cfg.layout, size, &mut stream_rng(seed, stream));
            write_dataset(&c.out.join(format!("{name}.bin")), &records, seed, &cfg.layout)?;
        }
    } else {
        let data = build_datasets(&cfg, seed)?;
        let write = |name: &str, pairs: &[(f64, f64)]| -> Result<()> {
            let mut s = String::from("x,y\n");
            for (x, y) in pairs {
                s.push_str(&format!("{x:?},{y:?}\n"));
            }
            Ok(std::fs::write(c.out.join(format!("{name}.csv")), s)?)
        };
        write("train", &data.toy_train)?;
        write("test", &data.toy_test)?;
    }
    println!("wrote datasets for seed {seed} to {}", c.out.display());
    Ok(())
}

fn train(c: &Common) -> Result<bool> {
    let cfg = config(c)?;
    let report = run_experiment(&cfg, Some(&c.out))?;
    print_table(&report);
    Ok(report.runs.iter().all(|r| r.failure.is_none()))
}

fn load_model(path: &Path) -> Result<TransitionModel> {
    Ok(TransitionModel::load(path)?.0)
}

fn eval(c: &Common, checkpoint: &Path) -> Result<()> {
    let cfg = config(c)?;
    let (model, objective) = TransitionModel::load(checkpoint)?;
    let seed = first_seed(&cfg);
    let data = build_datasets(&cfg, seed)?;
    let mut rng = stream_rng(seed, Stream::Eval);
    let mut report = RunReport::new(cfg.domain, cfg.variant, seed);
    evaluate_likelihood(&model, &objective, &data.test, cfg.eval_samples, &mut report, &mut rng)?;
    if cfg.domain.is_grid() {
        let probes = probe_set(&cfg.layout, cfg.probe.states, cfg.probe.seed);
        let results = probe_metrics(&model, &cfg.layout, &probes, cfg.probe.samples, &mut rng)?;
        record_probe_metrics(&mut report, &results, cfg.probe.samples);
    }
    std::fs::create_dir_all(&c.out)?;
    let report = Report::new(cfg, Vec::new(), vec![report]);
    report.write(&c.out)?;
    print_table(&report);
    Ok(())
}

fn rollout(c: &Common, checkpoint: &Path, policy: &Path) -> Result<()> {
    let cfg = config(c)?;
    let model = load_model(checkpoint)?;
    let dqn = Dqn::load(policy, &cfg.dqn.hidden)?;
    let mut rng = stream_rng(first_seed(&cfg), Stream::Rollout);
    let policy = EpsilonGreedy {
        dqn: &dqn,
        epsilon: cfg.rollout.epsilon,
    };
    let start: GridState = cfg.layout.start_state();
    let traj = rollout_in_model(&model, &cfg.layout, &policy, start, cfg.rollout.steps, cfg.rollout.max_retries, &mut rng)?;
    let files = write_rollout(&model, &cfg.layout, &traj, cfg.probe.samples, &c.out, &mut rng)?;
    println!(
        "{} steps, {} renders, wall-violation rate {:.4}{}",
        traj.steps.len(),
        files.len(),
        traj.violation_rate(),
        if traj.aborted { " (aborted)" } else { "" }
    );
    Ok(())
}

fn render(c: &Common, checkpoint: &Path, count: usize) -> Result<()> {
    let cfg = config(c)?;
    let model = load_model(checkpoint)?;
    let pairs = probe_set(&cfg.layout, count, cfg.probe.seed);
    let mut rng = stream_rng(first_seed(&cfg), Stream::Probe);
    let files = render_grid_predictions(&model, &cfg.layout, &pairs, cfg.probe.samples, &c.out, &mut rng)?;
    println!("wrote {} renders to {}", files.len(), c.out.display());
    Ok(())
}

fn print_table(report: &Report) {
    println!(
        "{:<14} {:>5} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
        "variant", "runs", "VLB", "NLL", "KL(p|m)", "Hel", "KL(m|p)", "agent"
    );
    for a in &report.aggregates {
        let m = &a.means;
        println!(
            "{:<14} {:>5} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
            a.variant.name(),
            a.runs - a.failed,
            cell(m.vlb.value),
            cell(m.test_nll.value),
            cell(m.kl_true_model.value),
            cell(m.hellinger.value),
            cell(m.kl_model_true.value),
            cell(m.agent_determinism.value),
        );
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or("NA".into(), |v| format!("{v:.3}"))
}

fn report(dirs: &[PathBuf]) -> Result<()> {
    if dirs.is_empty() {
        return Err(Error::Config("give at least one report directory".into()));
    }
    for d in dirs {
        let r = Report::read(&d.join("report.json"))?;
        println!("{}", d.display());
        print_table(&r);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.verb {
        Verb::GenData { common, count } => gen_data(common, *count).map(|_| true),
        Verb::Train { common } => train(common),
        Verb::Eval { common, checkpoint } => eval(common, checkpoint).map(|_| true),
        Verb::Rollout {
            common,
            checkpoint,
            policy,
        } => rollout(common, checkpoint, policy).map(|_| true),
        Verb::Render {
            common,
            checkpoint,
            count,
        } => render(common, checkpoint, *count).map(|_| true),
        Verb::Report { dirs, .. } => report(dirs).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: at least one run stopped on a numerical failure");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Numerical { .. } => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}
