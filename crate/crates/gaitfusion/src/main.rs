//! Command-line entry point: dataset synthesis, training, retrieval
//! evaluation, the fusion ablation grid, and the gradient-check gate.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gaitfusion::config::{load_protocol, Ini, Protocol, RunConfig};
use gaitfusion::data::Dataset;
use gaitfusion::error::{Error, Result};
use gaitfusion::evalrun::{evaluate, extract_embeddings};
use gaitfusion::synth::SynthSpec;
use gaitfusion::trainer::train;
use gaitfusion::{checkpoint, synth};

use gaitfusion_core::c2fusion::{FusionLocation, FusionMechanism, FusionSpec};
use gaitfusion_core::model::{build, Model, Variant};
use gaitfusion_core::rng::Rng;

#[derive(Parser)]
#[command(name = "gaitfusion", about = "Multimodal gait recognition workbench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multimodal gait dataset.
    Synth {
        /// INI file with a [data] section describing the dataset.
        #[arg(long)]
        spec: PathBuf,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Generation seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model; writes checkpoint.gfck and train_log.csv.
    Train {
        /// Run configuration ([model], [train], [data], [eval] sections).
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory (with manifest.tsv).
        #[arg(long)]
        data: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint under a gallery/probe protocol.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// INI file with an [eval] section (gallery/probe conditions).
        #[arg(long)]
        protocol: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate the fusion-location x mechanism grid (7 cells).
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full gradient-check suite; exit 0 iff every check passes.
    Gradcheck,
}

/// Worker-parallelism cap; the implementation is single-threaded, so any
/// value other than 1 is accepted and ignored.
fn thread_cap() -> Result<usize> {
    match std::env::var("GAITFUSION_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => v
            .parse()
            .map_err(|_| Error::Config(format!("GAITFUSION_THREADS: cannot parse `{v}`"))),
    }
}

fn load_spec(path: &PathBuf) -> Result<SynthSpec> {
    // A spec file is a run config restricted to its [data] section; extra
    // sections are tolerated so one file can drive synth + train + eval.
    Ok(RunConfig::from_ini(Ini::load(path)?)?.data)
}

fn cmd_train(config: &PathBuf, data: &PathBuf, out: &PathBuf) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    print!("{}", cfg.echo());
    let dataset = Dataset::load(data)?;
    let train_set = dataset.filter_conditions(&cfg.train_conditions);
    let mut model_cfg = cfg.model.clone();
    model_cfg.num_classes = dataset.num_identities;
    let mut model: Model<f32> = build(model_cfg, cfg.train.seed)?;
    fs::create_dir_all(out)?;
    let mut log = fs::File::create(out.join("train_log.csv"))?;
    let rows = train(&mut model, &train_set, &cfg.train, Some(&mut log))?;
    checkpoint::save_model(&out.join("checkpoint.gfck"), &model, cfg.train.steps, &Rng::new(cfg.train.seed))?;
    if let Some(last) = rows.last() {
        println!(
            "done: {} steps, final triplet {:.4}, softmax {:.4}",
            rows.len(),
            last.triplet,
            last.softmax
        );
    }
    Ok(())
}

fn cmd_eval(ckpt: &PathBuf, data: &PathBuf, protocol: &PathBuf, out: &PathBuf) -> Result<()> {
    let protocol: Protocol = load_protocol(protocol)?;
    let (model, _, _) = checkpoint::load_model::<f32>(ckpt)?;
    let dataset = Dataset::load(data)?;
    let table = extract_embeddings(&model, &dataset)?;
    let report = evaluate(&protocol, &table)?;
    print!("{}", report.to_table());
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(out, report.to_csv())?;
    Ok(())
}

/// The Table-2-style ablation grid for a two-modality variant.
pub const ABLATION_GRID: [(FusionLocation, FusionMechanism); 7] = [
    (FusionLocation::Input, FusionMechanism::Concatenation),
    (FusionLocation::Middle, FusionMechanism::Addition),
    (FusionLocation::Middle, FusionMechanism::Concatenation),
    (FusionLocation::Middle, FusionMechanism::CrossAttention),
    (FusionLocation::High, FusionMechanism::Addition),
    (FusionLocation::High, FusionMechanism::Concatenation),
    (FusionLocation::High, FusionMechanism::CrossAttention),
];

fn cmd_ablate(config: &PathBuf, data: &PathBuf, out: &PathBuf) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    if !matches!(cfg.model.variant, Variant::SilPar | Variant::SilFlow) {
        return Err(Error::Config(
            "ablate requires a two-modality variant (s+p or s+f)".into(),
        ));
    }
    print!("{}", cfg.echo());
    let dataset = Dataset::load(data)?;
    let train_set = dataset.filter_conditions(&cfg.train_conditions);
    fs::create_dir_all(out)?;
    let mut csv = String::from("location,mechanism,rank1,rank5,map,minp,skipped\n");
    for (location, mechanism) in ABLATION_GRID {
        let mut model_cfg = cfg.model.clone();
        model_cfg.num_classes = dataset.num_identities;
        model_cfg.fusion = FusionSpec { location, mechanism };
        let mut model: Model<f32> = build(model_cfg, cfg.train.seed)?;
        train(&mut model, &train_set, &cfg.train, None)?;
        let table = extract_embeddings(&model, &dataset)?;
        let report = evaluate(&cfg.eval, &table)?;
        let m = report.overall();
        println!(
            "{location:?}/{mechanism:?}: R-1 {:.4} mAP {:.4}",
            m.rank1, m.map
        );
        csv.push_str(&format!(
            "{location:?},{mechanism:?},{},{},{},{},{}\n",
            m.rank1, m.rank5, m.map, m.minp, m.skipped
        ));
    }
    fs::write(out.join("ablate.csv"), csv)?;
    Ok(())
}

fn cmd_gradcheck() -> Result<bool> {
    let reports = gaitfusion_core::gradsuite::run_all()
        .map_err(|e| Error::Runtime(e.to_string()))?;
    let mut all_pass = true;
    for r in &reports {
        println!(
            "{:<28} {} (max rel err {:.3e}, tol {:.0e}, {} elements)",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.max_rel_err,
            r.tolerance,
            r.elements_checked
        );
        all_pass &= r.passed;
    }
    Ok(all_pass)
}

fn run(cli: Cli) -> Result<()> {
    let _threads = thread_cap()?;
    match &cli.command {
        Command::Synth { spec, out, seed } => {
            let spec = load_spec(spec)?;
            synth::generate(&spec, *seed, out)?;
            println!(
                "wrote {} identities x {} sequences x {} frames to {}",
                spec.num_identities,
                spec.sequences_per_identity,
                spec.frames_per_sequence,
                out.display()
            );
            Ok(())
        }
        Command::Train { config, data, out } => cmd_train(config, data, out),
        Command::Eval {
            checkpoint,
            data,
            protocol,
            out,
        } => cmd_eval(checkpoint, data, protocol, out),
        Command::Ablate { config, data, out } => cmd_ablate(config, data, out),
        Command::Gradcheck => {
            if cmd_gradcheck()? {
                Ok(())
            } else {
                Err(Error::Runtime("gradient checks failed".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
        Err(e @ Error::Runtime(_)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
    }
}
