use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use asc::control::rvi::{DecisionProblem, RviConfig};
use asc::control::{differential_free_energy, mc_path_integral_value, train, Learner, TrainConfig, TrainTargets};
use asc::model::io::ModelFile;
use asc::objectives::Estimator;
use asc::oracle::{exact_path_integral_value, stationary_rate};
use asc::sim::{config_digest, run_episode, thermostat_agent, thermostat_env, Agent, ThermostatConfig};
use asc::validate::run_validation;
use asc::{Bundle, Chain, ConditionalTable, CostKind, Density, EnumerationBudget, Error, Recognition, Result};

#[derive(Parser)]
#[command(name = "asc", version, about = "Average-surprise control for tabular hierarchical active inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Feedforward,
    Feedback,
}

#[derive(Clone, Copy, ValueEnum)]
enum Cost {
    Surprisal,
    Objective,
}

#[derive(Clone, Copy, ValueEnum)]
enum Env {
    Thermostat,
}

#[derive(Clone, Copy, ValueEnum)]
enum Motor {
    Random,
    Uniform,
}

#[derive(Subcommand)]
enum Command {
    /// Run the invariant suite and print a JSON report; exits 0 iff every check passes.
    Validate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Relative value iteration; writes the gain and bias table.
    Solve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 200_000)]
        max_iter: usize,
        #[arg(long, value_enum, default_value_t = Cost::Surprisal)]
        cost: Cost,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one agent-environment episode and write its CSV trace.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value_t = Env::Thermostat)]
        env: Env,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        trace: PathBuf,
    },
    /// Descend the differential free energy and write the trained model.
    Train {
        #[arg(long)]
        model: PathBuf,
        /// Horizon of the objective.
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        iters: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        /// Seeds the recognition model when the file has none, and Monte Carlo gradients.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Re-estimate the rate every K iterations; 0 keeps the initial estimate.
        #[arg(long, default_value_t = 10)]
        rate_every: usize,
        #[arg(long)]
        step_halving: bool,
        #[arg(long)]
        no_retrospective: bool,
        #[arg(long)]
        train_references: bool,
        #[arg(long)]
        train_dynamics: bool,
        /// Use the score-function estimator with this many rollouts per iteration.
        #[arg(long)]
        mc_samples: Option<usize>,
    },
    /// Path-integral value estimate from seeded rollouts.
    PiValue {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        rollouts: usize,
        #[arg(long)]
        horizon: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Rate subtracted from each step cost; defaults to the chain's stationary rate.
        #[arg(long)]
        rate: Option<f64>,
    },
    /// Write a thermostat model file with a seeded random recognition model.
    InitThermostat {
        #[arg(long, default_value_t = 3)]
        levels: usize,
        #[arg(long, value_delimiter = ',', default_values_t = vec![2, 2, 0, 0])]
        schedule: Vec<usize>,
        #[arg(long, default_value_t = 4)]
        tick_period: usize,
        #[arg(long, value_enum, default_value_t = Motor::Random)]
        motor: Motor,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let budget = EnumerationBudget::from_env()?;
    match cli.command {
        Command::Validate { seed, instances, report } => {
            let r = run_validation(seed, instances, &budget);
            let value = serde_json::to_value(&r)?;
            println!("{}", serde_json::to_string_pretty(&value)?);
            if let Some(path) = report {
                write_json(&path, &value)?;
            }
            Ok(r.passed)
        }
        Command::Solve {
            model,
            tol,
            max_iter,
            cost,
            out,
        } => {
            let bundle = Bundle::load(&model)?;
            let cost = match cost {
                Cost::Surprisal => CostKind::Surprisal,
                Cost::Objective => CostKind::Objective,
            };
            let problem = DecisionProblem::build(&bundle.gen, bundle.rec.as_ref(), &bundle.reference, cost, &budget)?;
            let config = RviConfig {
                tol,
                max_iter,
                ..RviConfig::default()
            };
            let value = problem.solve(&config)?;
            value.save(&out)?;
            println!(
                "{}",
                json!({ "gain": value.gain, "residual": problem.residual(&value), "out": out })
            );
            Ok(true)
        }
        Command::Simulate {
            model,
            env: Env::Thermostat,
            steps,
            seed,
            trace,
        } => {
            let bytes = std::fs::read(&model)?;
            let bundle = Bundle::from_json(std::str::from_utf8(&bytes).map_err(|e| Error::InvalidArgument(e.to_string()))?)?;
            let config = bundle
                .thermostat
                .clone()
                .ok_or_else(|| Error::InvalidArgument("model file has no thermostat configuration".into()))?;
            let (env, _) = thermostat_env::<f64>(&config)?;
            let agent = Agent::new(bundle.gen.clone(), bundle.recognition()?.clone(), bundle.reference.clone())?;
            let mut digest_input = bytes;
            digest_input.extend_from_slice(format!("\nenv=thermostat;steps={steps};seed={seed}").as_bytes());
            let mut t = run_episode(&agent, &env, bundle.x0, steps, seed)?;
            t.config_digest = config_digest(&digest_input);
            t.save_csv(&trace)?;
            println!(
                "{}",
                json!({
                    "steps": steps,
                    "seed": seed,
                    "rate": t.rate(),
                    "mean_reference_surprisal": t.mean_reference_surprisal(),
                    "config_digest": t.config_digest,
                    "trace": trace,
                })
            );
            Ok(true)
        }
        Command::Train {
            model,
            steps,
            iters,
            lr,
            seed,
            out,
            report,
            rate_every,
            step_halving,
            no_retrospective,
            train_references,
            train_dynamics,
            mc_samples,
        } => {
            let mut bundle = Bundle::load(&model)?;
            let rec = match bundle.rec.take() {
                Some(r) => r,
                None => Recognition::random(*bundle.spec(), &mut ChaCha8Rng::seed_from_u64(seed), true),
            };
            let targets = TrainTargets {
                recognition: true,
                motor: true,
                references: train_references,
                dynamics: train_dynamics,
            };
            let config = TrainConfig {
                steps,
                iters,
                lr,
                rate_every: (rate_every > 0).then_some(rate_every),
                rate: None,
                step_halving,
                retrospective: !no_retrospective,
                floor: true,
                targets,
                estimator: match mc_samples {
                    Some(samples) => Estimator::MonteCarlo { samples, seed },
                    None => Estimator::Exact,
                },
            };
            let mut learner = Learner::new(
                bundle.gen.clone(),
                rec,
                bundle.reference.clone(),
                bundle.x0,
                steps,
                targets,
                true,
                budget,
            )?;
            let r = train(&mut learner, &config)?;
            let (gen, rec) = learner.into_parts();
            bundle.gen = gen;
            bundle.rec = Some(rec);
            bundle.save(&out)?;
            let value = serde_json::to_value(&r)?;
            if let Some(path) = report {
                write_json(&path, &value)?;
            }
            println!(
                "{}",
                json!({
                    "iterations": r.iterations,
                    "initial_objective": r.objective_trace.first(),
                    "final_objective": r.objective_trace.last(),
                    "final_rate": r.final_rate,
                    "out": out,
                })
            );
            Ok(true)
        }
        Command::PiValue {
            model,
            mode,
            rollouts,
            horizon,
            seed,
            rate,
        } => {
            let bundle = Bundle::load(&model)?;
            let density = match mode {
                Mode::Feedforward => Density::Feedforward,
                Mode::Feedback => Density::Feedback,
            };
            let chain = Chain::build(
                density,
                density.default_cost(),
                &bundle.gen,
                bundle.rec.as_ref(),
                &bundle.reference,
                &budget,
            )?;
            let rate = match rate {
                Some(r) => r,
                None => stationary_rate(&chain, 1e-12, 1_000_000)?.1,
            };
            let mc = mc_path_integral_value(&chain, bundle.x0, horizon, rate, rollouts, seed)?;
            let exact = match exact_path_integral_value(&chain, bundle.x0, horizon, rate, &budget) {
                Ok(v) => Some(v),
                Err(Error::BudgetExceeded { .. }) => None,
                Err(e) => return Err(e),
            };
            let dfe = match density {
                Density::Feedback => Some(differential_free_energy(&chain, bundle.x0, horizon, rate, Estimator::Exact)?.estimate),
                Density::Feedforward => None,
            };
            println!(
                "{}",
                json!({
                    "mode": match mode { Mode::Feedforward => "feedforward", Mode::Feedback => "feedback" },
                    "horizon": horizon,
                    "rollouts": rollouts,
                    "rate": rate,
                    "estimate": mc.estimate,
                    "stderr": mc.stderr,
                    "exact": exact,
                    "differential_free_energy": dfe,
                })
            );
            Ok(true)
        }
        Command::InitThermostat {
            levels,
            schedule,
            tick_period,
            motor,
            seed,
            out,
        } => {
            let mut config = ThermostatConfig::new(levels, schedule)?;
            config.tick_period = tick_period;
            config.validate()?;
            let (env, reference) = thermostat_env::<f64>(&config)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pol0 = match motor {
                Motor::Random => ConditionalTable::random(vec![levels, levels], 3, &mut rng, true),
                Motor::Uniform => ConditionalTable::uniform(vec![levels, levels], 3),
            };
            let gen = thermostat_agent(&config, &env, pol0)?;
            let mut bundle = Bundle::new(gen, reference);
            bundle.rec = Some(Recognition::random(config.spec(), &mut rng, true));
            bundle.x0 = config.initial_state();
            bundle.thermostat = Some(config);
            bundle.save(&out)?;
            let file: ModelFile = bundle.to_file();
            println!("{}", json!({ "spec": file.spec, "states": file.spec.n_states(), "out": out }));
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
