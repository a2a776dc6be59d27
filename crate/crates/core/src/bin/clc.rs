//! `clc` command-line driver.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use rayon::prelude::*;

use clc_core::checkpoint::{checkpoint_hash, load_checkpoint, save_checkpoint};
use clc_core::cleaner::train;
use clc_core::config::{KvFile, RunConfig, RUN_KEYS};
use clc_core::datasets::{load_features, synth_generate, write_features, SynthConfig, SYNTH_KEYS};
use clc_core::evaluation::{evaluate, EvalReport};
use clc_core::experiment::{ablation_ladder, full_gradient_check, mean_ap, train_and_evaluate, Ablation, GradCheckSizes};
use clc_core::labelgen::{build_training_labels, ShotTable, DEFAULT_THETA};
use clc_core::{ClcError, ClcModel, Result};

#[derive(Parser)]
#[command(name = "clc", version, about = "Noise-tolerant audio-visual highlight detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// key=value config file (`#` starts a comment)
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set tau=0.5`; repeatable, wins over the file
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic train/test pair
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Write one dataset per flip rate in {0, 0.2, 0.4} under rho_<value>/
        #[arg(long)]
        sweep: bool,
    },
    /// Build a label track by locating trailer shots in the movie
    MakeLabels {
        /// CLCF file whose first video holds the trailer shots
        #[arg(long)]
        trailer: PathBuf,
        /// CLCF file whose first video holds the movie shots
        #[arg(long)]
        movie: PathBuf,
        /// Shot table: `shot_id start end scene_id` per line
        #[arg(long)]
        shots: PathBuf,
        #[arg(long, default_value_t = DEFAULT_THETA)]
        theta: f64,
        /// Label track output
        #[arg(long)]
        out: PathBuf,
        /// Also write the movie with the new labels attached
        #[arg(long)]
        attach: Option<PathBuf>,
    },
    /// Train and write a checkpoint plus a training log
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Switch off a component: mmc, cp, cl or pp; repeatable
        #[arg(long)]
        ablate: Vec<String>,
    },
    /// Score a checkpoint on labelled data
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Compare analytic and finite-difference gradients of the training objective
    Gradcheck {
        #[arg(long, default_value_t = 6)]
        shots: usize,
        #[arg(long, default_value_t = 8)]
        d_model: usize,
        #[arg(long, default_value_t = 8)]
        hidden: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Corrupt one analytic gradient entry (self-test of the checker)
        #[arg(long)]
        break_gradient: bool,
    },
    /// Run the cumulative ablation grid and write a summary table
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Seeds per grid row, starting at the configured seed
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// Summary output
        #[arg(long)]
        out: PathBuf,
    },
}

fn key_table(title: &str, keys: impl Iterator<Item = (&'static str, &'static str, &'static str)>) -> String {
    let mut s = format!("{title}:\n");
    for (k, d, h) in keys {
        let d = if d.is_empty() { "<unset>" } else { d };
        s.push_str(&format!("  {k:<22} default {d:<8} {h}\n"));
    }
    s
}

fn run_keys_help() -> String {
    key_table("Config keys", RUN_KEYS.iter().map(|k| (k.key, k.default, k.help)))
        + "\nCLC_SEED, when set, replaces `seed` from the file; --set still wins.\n"
}

fn synth_keys_help() -> String {
    key_table("Config keys", SYNTH_KEYS.iter().map(|&(k, d, h)| (k, d, h)))
}

fn load_kv(args: &ConfigArgs, seed_env: bool) -> Result<KvFile> {
    let mut kv = match &args.config {
        Some(p) => KvFile::load(p)?,
        None => KvFile::default(),
    };
    if seed_env {
        if let Ok(seed) = std::env::var("CLC_SEED") {
            kv.insert("seed", seed.trim(), "CLC_SEED");
        }
    }
    Ok(kv.merge(KvFile::from_overrides(&args.overrides)?))
}

fn require<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| ClcError::Config(format!("`{key}` must be set")))
}

fn cmd_synth(args: &ConfigArgs, out: &Path, sweep: bool) -> Result<()> {
    let kv = load_kv(args, true)?;
    let base = SynthConfig::from_kv(&kv)?;
    let jobs: Vec<(PathBuf, SynthConfig)> = if sweep {
        [0.0, 0.2, 0.4]
            .iter()
            .map(|&rho| {
                let c = SynthConfig { flip_rate: rho, ..base.clone() };
                (out.join(format!("rho_{rho:.1}")), c)
            })
            .collect()
    } else {
        vec![(out.to_path_buf(), base)]
    };
    for (dir, cfg) in jobs {
        fs::create_dir_all(&dir)?;
        let data = synth_generate(&cfg)?;
        write_features(&data.train, dir.join("train.clcf"))?;
        write_features(&data.test, dir.join("test.clcf"))?;
        fs::write(dir.join("synth.cfg"), cfg.to_kv_string())?;
        println!(
            "{}: {} train / {} test videos, flip rate {}",
            dir.display(),
            data.train.len(),
            data.test.len(),
            cfg.flip_rate
        );
    }
    Ok(())
}

fn cmd_make_labels(
    trailer: &Path,
    movie: &Path,
    shots: &Path,
    theta: f64,
    out: &Path,
    attach: Option<&Path>,
) -> Result<()> {
    let first = |p: &Path| -> Result<_> {
        load_features(p)?
            .into_iter()
            .next()
            .ok_or_else(|| ClcError::Contract(format!("{} holds no video", p.display())))
    };
    let trailer = first(trailer)?;
    let mut movie = first(movie)?;
    let table = ShotTable::load(shots)?;
    let (track, stats) = build_training_labels(&trailer.visual, &movie.visual, &table, theta)?;
    fs::write(out, track.to_text())?;
    for w in &stats.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "matches {} scenes {} positives {}/{} proportion {:.6}",
        stats.matches, stats.matched_scenes, stats.positives, stats.shots, stats.positive_proportion
    );
    if let Some(path) = attach {
        movie.labels = Some(track.labels());
        write_features(&[movie], path)?;
    }
    Ok(())
}

fn cmd_train(args: &ConfigArgs, ablate: &[String]) -> Result<()> {
    let mut cfg = RunConfig::from_kv(&load_kv(args, true)?)?;
    for a in ablate {
        a.parse::<Ablation>()?.apply(&mut cfg);
    }
    let train_set = load_features(require(&cfg.train_data, "train_data")?)?;
    let validation = match &cfg.eval_data {
        Some(p) => Some(load_features(p)?),
        None => None,
    };
    let first = train_set
        .first()
        .ok_or_else(|| ClcError::Contract("training set is empty".into()))?;
    let mut model = ClcModel::new(cfg.model_config(first.d_visual(), first.d_audio()), cfg.seed)?;
    let log = train(&mut model, &train_set, &cfg.train_config(), validation.as_deref())?;
    let fingerprint = cfg.fingerprint();
    if let Some(p) = &cfg.train_log {
        log.write(p, &fingerprint)?;
    }
    let ckpt = require(&cfg.checkpoint, "checkpoint")?;
    save_checkpoint(&model, &fingerprint, ckpt)?;
    if let Some(last) = log.epochs.last() {
        println!(
            "epochs {} final mm loss {:.6} mean clean {:.2}{}",
            log.epochs.len(),
            last.losses.mm_total,
            last.mean_clean,
            last.val_map.map_or(String::new(), |m| format!(" val mAP {m:.6}"))
        );
    }
    println!("checkpoint {} fingerprint {fingerprint}", ckpt.display());
    Ok(())
}

fn cmd_eval(args: &ConfigArgs) -> Result<()> {
    let cfg = RunConfig::from_kv(&load_kv(args, true)?)?;
    let ckpt = require(&cfg.checkpoint, "checkpoint")?;
    let (model, _) = load_checkpoint(ckpt)?;
    let data = load_features(require(&cfg.eval_data, "eval_data")?)?;
    let report = EvalReport {
        fingerprint: cfg.fingerprint(),
        filter_k: cfg.filter_k,
        checkpoint_hash: checkpoint_hash(ckpt)?,
        videos: evaluate(&model, &data, cfg.filter_k, cfg.window)?,
    };
    if let Some(p) = &cfg.report {
        report.write(p)?;
    }
    if let Some(dir) = &cfg.curves_dir {
        report.write_curves(dir)?;
    }
    if report.excluded() > 0 {
        eprintln!("warning: {} videos without positives excluded", report.excluded());
    }
    match report.map() {
        Some(m) => println!("mAP {m:.6} over {} videos", report.videos.len() - report.excluded()),
        None => println!("mAP undefined"),
    }
    Ok(())
}

fn cmd_gradcheck(sizes: GradCheckSizes, tolerance: f64) -> Result<bool> {
    let report = full_gradient_check(&sizes)?;
    let (name, entry) = report.worst.clone().unwrap_or_default();
    println!(
        "checked {} entries, max relative error {:.3e}, worst {name}[{entry}]",
        report.entries_checked, report.max_rel_error
    );
    Ok(report.max_rel_error <= tolerance)
}

fn cmd_ablate(args: &ConfigArgs, seeds: u64, out: &Path) -> Result<()> {
    let base = RunConfig::from_kv(&load_kv(args, true)?)?;
    let train_set = load_features(require(&base.train_data, "train_data")?)?;
    let test_set = load_features(require(&base.eval_data, "eval_data")?)?;
    let ladder = ablation_ladder(&base);
    let jobs: Vec<(usize, RunConfig)> = ladder
        .iter()
        .enumerate()
        .flat_map(|(i, (_, c))| {
            (0..seeds).map(move |s| {
                let mut c = c.clone();
                c.seed = c.seed.wrapping_add(s);
                (i, c)
            })
        })
        .collect();
    let maps = jobs
        .par_iter()
        .map(|(_, c)| {
            let run = train_and_evaluate(&train_set, &test_set, c)?;
            mean_ap(&run.results).ok_or(ClcError::Contract("test set has no positives".into()))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut text = format!("# fingerprint {}\n# row fingerprint seeds mean_map\n", base.fingerprint());
    for (i, (name, c)) in ladder.iter().enumerate() {
        let row: Vec<f64> = jobs.iter().zip(&maps).filter(|(j, _)| j.0 == i).map(|(_, m)| *m).collect();
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        text.push_str(&format!("{name} {} {} {mean:.12}\n", c.fingerprint(), row.len()));
    }
    fs::write(out, &text)?;
    print!("{text}");
    Ok(())
}

fn exit_for(err: &ClcError) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(if err.is_usage_error() { 1 } else { 2 })
}

fn main() -> ExitCode {
    let run_help = run_keys_help();
    let command = Cli::command()
        .mut_subcommand("synth", |c| c.after_help(synth_keys_help()))
        .mut_subcommand("train", |c| c.after_help(run_help.clone()))
        .mut_subcommand("eval", |c| c.after_help(run_help.clone()))
        .mut_subcommand("ablate", |c| c.after_help(run_help.clone()));
    let cli = match command.try_get_matches().and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };

    let result = match &cli.command {
        Command::Synth { cfg, out, sweep } => cmd_synth(cfg, out, *sweep),
        Command::MakeLabels { trailer, movie, shots, theta, out, attach } => {
            cmd_make_labels(trailer, movie, shots, *theta, out, attach.as_deref())
        }
        Command::Train { cfg, ablate } => cmd_train(cfg, ablate),
        Command::Eval { cfg } => cmd_eval(cfg),
        Command::Gradcheck { shots, d_model, hidden, seed, tolerance, break_gradient } => {
            let sizes = GradCheckSizes {
                shots: *shots,
                d_model: *d_model,
                hidden: *hidden,
                seed: *seed,
                corrupt: *break_gradient,
                ..GradCheckSizes::default()
            };
            match cmd_gradcheck(sizes, *tolerance) {
                Ok(true) => Ok(()),
                Ok(false) => {
                    eprintln!("error: gradient check exceeded tolerance {tolerance:e}");
                    return ExitCode::from(2);
                }
                Err(e) => Err(e),
            }
        }
        Command::Ablate { cfg, seeds, out } => cmd_ablate(cfg, *seeds, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => exit_for(&e),
    }
}
