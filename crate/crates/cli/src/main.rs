use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use splatgym::harness::{
    cmd_edit_scene, cmd_evaluate, cmd_export_dataset, cmd_perturb, cmd_pgr, cmd_render,
    verify_export, ExperimentSpec, HarnessError, PolicyKind,
};

#[derive(Parser)]
#[command(name = "splatgym", version, about = "Gate-racing simulation and track sampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Experiment spec (JSON); defaults apply to every missing field.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Initial conditions per track.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Worker threads; all cores when absent.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Success rate and gate error of each policy on each track.
    Evaluate(Selection),
    /// Success rate against random gate displacement.
    Perturb(Selection),
    /// Performance-guided refinement against uniform sampling.
    Pgr,
    /// Mask / RGB / control triples for every policy tick.
    ExportDataset {
        #[arg(long)]
        track: Option<String>,
        #[arg(long, value_parser = parse_policy)]
        policy: Option<PolicyKind>,
        /// Re-render every stored mask and compare.
        #[arg(long)]
        verify: bool,
    },
    /// Apply a JSON edit script to a scene.
    EditScene {
        /// Script path or reference track name.
        #[arg(long)]
        script: Option<String>,
        #[arg(long)]
        input: Option<String>,
    },
    /// One RGB frame and gate mask from a fixed pose.
    Render,
}

#[derive(Args)]
struct Selection {
    /// Bundled track name or track JSON path; repeatable.
    #[arg(long = "track")]
    tracks: Vec<String>,
    /// expert, zero or mask_centroid; repeatable.
    #[arg(long = "policy", value_parser = parse_policy)]
    policies: Vec<PolicyKind>,
}

fn parse_policy(s: &str) -> Result<PolicyKind, String> {
    match s {
        "expert" => Ok(PolicyKind::Expert),
        "zero" => Ok(PolicyKind::Zero),
        "mask_centroid" | "mask-centroid" => Ok(PolicyKind::MaskCentroid),
        _ => Err(format!("unknown policy `{s}`")),
    }
}

fn load_spec(common: &Common) -> Result<ExperimentSpec, HarnessError> {
    let mut spec = match &common.config {
        Some(p) => ExperimentSpec::from_file(p)?,
        None => ExperimentSpec::default(),
    };
    if let Some(s) = common.seed {
        spec.seed = s;
    }
    if let Some(t) = common.trials {
        spec.trials = t;
    }
    Ok(spec)
}

fn apply_selection(spec: &mut ExperimentSpec, sel: &Selection, perturb: bool) {
    if !sel.tracks.is_empty() {
        if perturb {
            spec.perturb.track = sel.tracks[0].clone();
        } else {
            spec.tracks = sel.tracks.clone();
        }
    }
    if !sel.policies.is_empty() {
        spec.policies = sel.policies.clone();
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let mut spec = load_spec(&cli.common)?;
    if let Some(j) = cli.common.jobs {
        if j == 0 {
            return Err(HarnessError::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| HarnessError::Runtime(e.to_string()))?;
    }
    let out: &Path = &cli.common.out;
    match cli.command {
        Command::Evaluate(sel) => {
            apply_selection(&mut spec, &sel, false);
            cmd_evaluate(&spec, out)?;
            print_file(&out.join("summary.txt"));
        }
        Command::Perturb(sel) => {
            apply_selection(&mut spec, &sel, true);
            let r = cmd_perturb(&spec, out)?;
            for row in &r.rows {
                println!(
                    "{:<14} {:>6} cm  SR {:>5.1}%",
                    row.policy,
                    row.level_cm,
                    row.metrics.success_rate * 100.0
                );
            }
            for t in &r.trends {
                println!("{}: spearman {:.3}", t.policy, t.spearman);
            }
        }
        Command::Pgr => {
            cmd_pgr(&spec, out)?;
            print_file(&out.join("pgr_report.txt"));
        }
        Command::ExportDataset { track, policy, verify } => {
            if let Some(t) = track {
                spec.export.track = t;
            }
            if let Some(p) = policy {
                spec.export.policy = p;
            }
            if let Some(t) = cli.common.trials {
                spec.export.trials = t;
            }
            let m = cmd_export_dataset(&spec, out)?;
            println!("{}: {} frames", m.track, m.ticks.iter().sum::<usize>());
            if verify {
                let check = verify_export(&out.join(&m.track))?;
                if !check.mismatched.is_empty() {
                    return Err(HarnessError::Runtime(format!(
                        "{} of {} masks differ from a fresh render",
                        check.mismatched.len(),
                        check.triples
                    )));
                }
                println!("verified {} masks", check.triples);
            }
        }
        Command::EditScene { script, input } => {
            if script.is_some() {
                spec.edit.script = script;
            }
            if input.is_some() {
                spec.edit.input = input;
            }
            let s = cmd_edit_scene(&spec, out)?;
            println!("{} gaussians, {} objects", s.gaussians, s.objects.len());
        }
        Command::Render => {
            let r = cmd_render(&spec, out)?;
            for p in r.rgb.iter().chain(&r.mask) {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn print_file(path: &Path) {
    if let Ok(s) = std::fs::read_to_string(path) {
        print!("{s}");
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::debug!("{e:?}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
