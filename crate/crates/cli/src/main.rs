//! Command-line front end: runs scenario sweeps, writes trial logs and
//! summaries, and exports the canonical-plane landmark template.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use sipservo_core::afm::build_template;
use sipservo_core::harness::{emit_outputs, run_sweep, RigMode, Scenario};
use sipservo_core::PhantomModel;

#[derive(Parser)]
#[command(name = "sipservo", version, about = "Closed-loop ultrasound plane-navigation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario sweep and write trial.csv, summary.json, and optional
    /// frame dumps to a directory.
    Run(RunArgs),
    /// Write the canonical-plane landmark template as JSON.
    Template(TemplateArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario JSON file; built-in defaults when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Base seed, overriding the scenario's.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Number of repeats, overriding the scenario's.
    #[arg(long)]
    repeats: Option<usize>,
    /// Rig, overriding the scenario's.
    #[arg(long, value_enum)]
    rig: Option<RigArg>,
    /// Save every perception frame as a PGM image.
    #[arg(long)]
    dump_frames: bool,
}

#[derive(Copy, Clone, ValueEnum)]
enum RigArg {
    /// Ideal Cartesian stage integrating the commanded twist.
    Direct,
    /// Seven-joint serial arm tracking the twist.
    Arm,
}

#[derive(Args)]
struct TemplateArgs {
    /// Scenario JSON supplying phantom and image geometry; defaults when
    /// omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Output path for the template JSON.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run(args),
        Command::Template(args) => template(args).map(|()| ExitCode::SUCCESS),
    };
    result.unwrap_or_else(|err| {
        eprintln!("error: {err:#}");
        ExitCode::FAILURE
    })
}

fn load_scenario(path: Option<&PathBuf>) -> anyhow::Result<Scenario> {
    let Some(path) = path else { return Ok(Scenario::default()) };
    Scenario::from_path(path).with_context(|| format!("loading scenario {}", path.display()))
}

/// Exit code 0 when every repeat converged, 2 when any aborted, 1 otherwise.
fn run(args: &RunArgs) -> anyhow::Result<ExitCode> {
    let mut scenario = load_scenario(args.scenario.as_ref())?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    if let Some(repeats) = args.repeats {
        scenario.repeats = repeats;
    }
    if let Some(rig) = args.rig {
        scenario.rig = match rig {
            RigArg::Direct => RigMode::Direct,
            RigArg::Arm => RigMode::Arm,
        };
    }
    for warning in scenario.validate()? {
        eprintln!("warning: {warning}");
    }

    let outcome = run_sweep(&scenario, args.dump_frames)?;
    let written = emit_outputs(&outcome.trials, &outcome.summary, &args.out)
        .context("writing outputs")?;

    let summary = &outcome.summary;
    for d in &summary.trials {
        let mut line = format!("seed {}: {}", d.seed, d.status);
        if let Some(t) = d.converged_at_s {
            line.push_str(&format!(" at {t:.3} s"));
        }
        if let (Some(mm), Some(deg)) = (d.final_err_mm, d.final_err_deg) {
            line.push_str(&format!(", final error {mm:.3} mm / {deg:.3} deg"));
        }
        if let Some(rms) = d.force_rms_n {
            line.push_str(&format!(", force RMS {rms:.3} N"));
        }
        println!("{line}");
    }
    println!("{}/{} converged, {} aborted", summary.converged, summary.repeats, summary.aborted);
    if let Some(s) = &summary.final_err_mm {
        println!("final translational error: {:.3} ± {:.3} mm", s.mean, s.std);
    }
    if let Some(s) = &summary.final_err_deg {
        println!("final rotational error: {:.3} ± {:.3} deg", s.mean, s.std);
    }
    if let Some(s) = &summary.force_rms_n {
        println!("steady-state force RMS: {:.3} ± {:.3} N", s.mean, s.std);
    }
    if let Some(s) = &summary.time_to_convergence_s {
        println!("time to convergence: {:.3} ± {:.3} s", s.mean, s.std);
    }
    println!("wrote {} files to {}", written.len(), args.out.display());

    let any_abort = outcome.trials.iter().any(|t| t.status.is_aborted());
    let all_converged = outcome.trials.iter().all(|t| t.status.converged_at().is_some());
    Ok(if any_abort {
        ExitCode::from(2)
    } else if all_converged {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn template(args: &TemplateArgs) -> anyhow::Result<()> {
    let scenario = load_scenario(args.scenario.as_ref())?;
    for warning in scenario.validate()? {
        eprintln!("warning: {warning}");
    }
    let phantom = PhantomModel::new(scenario.phantom.clone())?;
    let truth = phantom.ground_truth_masks(phantom.sip_pose(), &scenario.image, 0.0)?;
    let template = build_template(&truth, &scenario.image, scenario.min_instance_area)?;
    let json = serde_json::to_string_pretty(&template).context("serializing template")? + "\n";
    std::fs::write(&args.out, json).with_context(|| format!("writing {}", args.out.display()))?;
    println!("wrote template to {}", args.out.display());
    Ok(())
}
