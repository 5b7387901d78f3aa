//! Command-line pipeline: synthesize corpora, train the generator and the
//! imputer, sample schedules, fit the Markov baseline and evaluate
//! everything against a reference corpus.
//!
//! Every command writes its outputs plus a `manifest.json` (resolved
//! configuration, config hash, inputs, seeds, wall time) into a run
//! directory, so a run can be reproduced from its manifest alone.

mod manifest;
mod runs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use schedsynth::domain::{build_split, PersonAttributes};
use schedsynth::generator::{evaluate_generator, train_generator};
use schedsynth::imputer::{evaluate_imputer, impute_corpus, train_imputer};
use schedsynth::markov::{fit_markov, sample_markov};
use schedsynth::metrics::{self, MetricsReport};
use schedsynth::synth::{make_synthetic_corpus, SyntheticSpec};
use schedsynth::train::ModelConfig;
use schedsynth::{io, Error};

use manifest::Manifest;

#[derive(Parser)]
#[command(name = "schedsynth", version, about = "Synthesis and evaluation of weekly activity schedules")]
struct Cli {
    /// Worker threads (0 = all cores). Single-threaded runs are
    /// bit-reproducible; parallel runs reduce in a fixed order and match
    /// them exactly.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Root for run directories (overrides SCHEDSYNTH_RUNS, default ./runs).
    #[arg(long, global = true)]
    out_root: Option<PathBuf>,

    /// Exact output directory (bypasses the runs/<timestamp>-<hash> layout).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic habit-structured corpus (weeks + diaries).
    MakeCorpus(MakeCorpusArgs),
    /// Train the autoregressive mobility generator.
    TrainGen(TrainArgs),
    /// Train the at-home activity imputer on diaries.
    TrainImp(TrainArgs),
    /// Sample weekly mobility schedules from a trained generator.
    Generate(GenerateArgs),
    /// Enrich mobility weeks with at-home activities.
    Impute(ImputeArgs),
    /// Fit the first-order time-inhomogeneous Markov baseline.
    FitMarkov(FitMarkovArgs),
    /// Score a model against a reference corpus (all five metrics).
    Evaluate(EvaluateArgs),
    /// Side-by-side metric table: attention generator vs Markov baseline.
    Compare(CompareArgs),
    /// Sweep the hyperparameter grid, training and scoring each cell.
    Grid(GridArgs),
}

#[derive(Args, serde::Serialize)]
struct MakeCorpusArgs {
    /// Persona specification JSON; defaults to the built-in population.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    persons: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-day rigid-shift sigma in 10-minute steps (built-in spec only).
    #[arg(long, default_value_t = 6.0)]
    sigma: f64,
}

#[derive(Args, serde::Serialize)]
struct TrainArgs {
    /// Training corpus (weeks for train-gen, diaries for train-imp).
    #[arg(long)]
    corpus: PathBuf,
    /// Model configuration JSON; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Validation fold (0..8).
    #[arg(long, default_value_t = 0)]
    fold: usize,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, serde::Serialize)]
struct GenerateArgs {
    /// Generator checkpoint.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// Reference corpus to resample person attributes from.
    #[arg(long, conflicts_with_all = ["age", "occupation"])]
    reference: Option<PathBuf>,
    /// Fixed age class (with --occupation) instead of --reference.
    #[arg(long)]
    age: Option<u8>,
    #[arg(long)]
    occupation: Option<u8>,
}

#[derive(Args, serde::Serialize)]
struct ImputeArgs {
    /// Imputer checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Mobility week corpus to enrich.
    #[arg(long)]
    weeks: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
}

#[derive(Args, serde::Serialize)]
struct FitMarkovArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Laplace smoothing; 0 reproduces raw frequencies exactly.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
}

#[derive(Args, serde::Serialize)]
struct EvaluateArgs {
    /// Checkpoint of any model kind (generator, imputer or markov).
    #[arg(long)]
    model: PathBuf,
    /// Reference corpus (weeks, or diaries for an imputer checkpoint).
    #[arg(long)]
    reference: PathBuf,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, serde::Serialize)]
struct CompareArgs {
    #[arg(long)]
    generator: PathBuf,
    #[arg(long)]
    markov: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, serde::Serialize)]
struct GridArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Grid axes as comma-separated lists.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 4, 8])]
    layers: Vec<usize>,
    #[arg(long = "d-models", value_delimiter = ',', default_values_t = [64usize, 128])]
    d_models: Vec<usize>,
    #[arg(long = "learning-rates", value_delimiter = ',', default_values_t = [0.001f64, 0.0005])]
    learning_rates: Vec<f64>,
    #[arg(long = "batch-sizes", value_delimiter = ',', default_values_t = [64usize, 128, 256])]
    batch_sizes: Vec<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Evaluation sample count per cell.
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    fold: usize,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version are not usage errors
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error: failed to configure thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}

/// 2 for data problems, 3 for numeric failures.
fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            if matches!(e, Error::NumericFailure(_) | Error::NonScalarLoss(_)) {
                return 3;
            }
        }
    }
    2
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::MakeCorpus(ref args) => {
            let spec = match &args.spec {
                Some(path) => {
                    let text = std::fs::read_to_string(path)?;
                    serde_json::from_str::<SyntheticSpec>(&text)?
                }
                None => {
                    let mut spec = SyntheticSpec::oracle_default(args.sigma);
                    for cell in &mut spec.cells {
                        cell.day_jitter_steps = args.sigma;
                    }
                    spec
                }
            };
            let mut manifest = Manifest::start("make-corpus", args)?;
            let dir = runs::prepare_dir(&cli, &manifest)?;
            let (weeks, diaries) = make_synthetic_corpus(&spec, args.persons, args.seed)?;
            io::write_week_corpus(&weeks, dir.join("weeks.corpus"))?;
            io::write_diary_corpus(&diaries, dir.join("diaries.corpus"))?;
            std::fs::write(dir.join("spec.json"), serde_json::to_string_pretty(&spec)?)?;
            manifest.outputs(&["weeks.corpus", "diaries.corpus", "spec.json"]);
            manifest.finish(&dir)?;
            println!("wrote {} weeks and {} diaries to {}", weeks.weeks.len(), diaries.samples.len(), dir.display());
            Ok(())
        }
        Command::TrainGen(ref args) => {
            let config = resolve_model_config(args)?;
            let mut manifest = Manifest::start("train-gen", &(args, &config))?;
            let dir = runs::prepare_dir(&cli, &manifest)?;
            let corpus = io::read_week_corpus(&args.corpus)?;
            let split = build_split(&corpus.person_ids(), args.split_seed)?;
            let (model, report) = train_generator(&corpus, &split, args.fold, &config, args.seed)?;
            io::save_generator(&model, dir.join("generator.ckpt"))?;
            write_json(&dir.join("train_report.json"), &report)?;
            write_json(&dir.join("split.json"), &split)?;
            manifest.outputs(&["generator.ckpt", "train_report.json", "split.json"]);
            manifest.finish(&dir)?;
            println!(
                "trained generator: {} epochs, best {} (val loss {:.4}, accuracy {:.2}%)",
                report.epochs_run(),
                report.best_epoch,
                report.val_loss[report.best_epoch],
                100.0 * report.val_accuracy[report.best_epoch]
            );
            println!("checkpoint: {}", dir.join("generator.ckpt").display());
            Ok(())
        }
        Command::TrainImp(ref args) => {
            let config = resolve_model_config(args)?;
            let mut manifest = Manifest::start("train-imp", &(args, &config))?;
            let dir = runs::prepare_dir(&cli, &manifest)?;
            let corpus = io::read_diary_corpus(&args.corpus)?;
            let split = build_split(&corpus.person_ids(), args.split_seed)?;
            let (model, report) = train_imputer(&corpus, &split, args.fold, &config, args.seed)?;
            io::save_imputer(&model, dir.join("imputer.ckpt"))?;
            write_json(&dir.join("train_report.json"), &report)?;
            write_json(&dir.join("split.json"), &split)?;
            manifest.outputs(&["imputer.ckpt", "train_report.json", "split.json"]);
            manifest.finish(&dir)?;
            println!(
                "trained imputer: {} epochs, best {} (val loss {:.4}, accuracy {:.2}%)",
                report.epochs_run(),
                report.best_epoch,
                report.val_loss[report.best_epoch],
                100.0 * report.val_accuracy[report.best_epoch]
            );
            println!("checkpoint: {}", dir.join("imputer.ckpt").display());
            Ok(())
        }
        Command::Generate(ref args) => {
            let mut manifest = Manifest::start("generate", args)?;
            let dir = runs::prepare_dir(&cli, &manifest)?;
            let model = io::load_generator(&args.model)?;
            let attrs: Vec<PersonAttributes> = match (&args.reference, args.age, args.occupation) {
                (Some(path), _, _) => {
                    let reference = io::read_week_corpus(path)?;
                    let pool: Vec<PersonAttributes> =
                        reference.weeks.iter().map(|w| w.attributes.clone()).collect();
                    metrics::resample(&pool, args.n, args.seed)
                }
                (None, Some(age), Some(occ)) => {
                    vec![PersonAttributes::new("query", age, occ)?; args.n]
                }
                _ => anyhow::bail!("pass either --reference or both --age and --occupation"),
            };
            let weeks = model.generate_with_attrs(&attrs, args.seed, args.temperature)?;
            let corpus = schedsynth::domain::WeekCorpus {
                alphabet: model.alphabet.clone(),
                weeks,
            };
            io::write_week_corpus(&corpus, dir.join("generated.corpus"))?;
            manifest.outputs(&["generated.corpus"]);
            manifest.finish(&dir)?;
            println!("wrote {} schedules to {}", corpus.weeks.len(), dir.join("generated.corpus").display());
            Ok(())
        }
        Command::Impute(ref args) => {
            let mut manifest = Manifest::start("impute", args)?;
            let dir = runs::prepare_dir(&cli, &manifest)?;
            let model = io::load_imputer(&args.model)?;
            let weeks = io::read_week_corpus(&args.weeks)?;
            let activities = impute_corpus(&model, &weeks, args.seed, args.temperature)?;
            io::write_week_corpus(&activities, dir.join("activities.corpus"))?;
            manifest.outputs(&["activities.corpus"]);
            manifest.finish(&dir)?;
            println!("imputed {} weeks to {}", activities.weeks.len(), dir.join("activities.corpus").display());
            Ok(())
        }
        Command::FitMarkov(ref args) => {
            let mut manifest = Manifest::start("fit-markov", args)?;
            let dir = runs::prepare_dir(&cli, &manifest)?;
            let corpus = io::read_week_corpus(&args.corpus)?;
            let model = fit_markov(&corpus, args.alpha)?;
            io::save_markov(&model, dir.join("markov.ckpt"))?;
            manifest.outputs(&["markov.ckpt"]);
            manifest.finish(&dir)?;
            println!(
                "fitted markov baseline ({} strata) to {}",
                model.strata.len(),
                dir.join("markov.ckpt").display()
            );
            Ok(())
        }
        Command::Evaluate(ref args) => {
            let mut manifest = Manifest::start("evaluate", args)?;
            let dir = runs::prepare_dir(&cli, &manifest)?;
            let report = evaluate_any(args, &dir)?;
            manifest.outputs(&["report.json"]);
            manifest.finish(&dir)?;
            print_report_row("model", &report);
            println!("report: {}", dir.join("report.json").display());
            Ok(())
        }
        Command::Compare(ref args) => {
            let mut manifest = Manifest::start("compare", args)?;
            let dir = runs::prepare_dir(&cli, &manifest)?;
            let reference = io::read_week_corpus(&args.reference)?;
            let generator = io::load_generator(&args.generator)?;
            let attn = evaluate_generator(&generator, &reference, args.n, args.seed)?;
            let markov = io::load_markov(&args.markov)?;
            let markov_weeks = sample_markov(&markov, args.n, args.seed)?;
            let markov_report =
                schedsynth::generator::compare_to_reference(&markov_weeks, &reference, args.seed)?;

            let table = comparison_table(&[("attention", &attn), ("markov", &markov_report)]);
            print!("{table}");
            std::fs::write(dir.join("comparison.txt"), &table)?;
            write_json(&dir.join("comparison.json"), &vec![
                ("attention", &attn),
                ("markov", &markov_report),
            ])?;
            manifest.outputs(&["comparison.txt", "comparison.json"]);
            manifest.finish(&dir)?;
            Ok(())
        }
        Command::Grid(ref args) => {
            let mut manifest = Manifest::start("grid", args)?;
            let dir = runs::prepare_dir(&cli, &manifest)?;
            let corpus = io::read_week_corpus(&args.corpus)?;
            let split = build_split(&corpus.person_ids(), args.split_seed)?;
            let mut rows = Vec::new();
            let mut outputs = vec![String::from("grid.tsv")];
            for &layers in &args.layers {
                for &d_model in &args.d_models {
                    for &lr in &args.learning_rates {
                        for &batch in &args.batch_sizes {
                            let mut config = ModelConfig::new(layers, d_model, lr, batch);
                            if let Some(cap) = args.max_epochs {
                                config.max_epochs = cap;
                            }
                            let label = format!("{layers}-{d_model}-{lr}-{batch}");
                            println!("grid cell {label}: training...");
                            let (model, report) =
                                train_generator(&corpus, &split, args.fold, &config, args.seed)?;
                            let eval =
                                evaluate_generator(&model, &corpus, args.n, args.seed)?;
                            let ckpt = format!("generator-{label}.ckpt");
                            io::save_generator(&model, dir.join(&ckpt))?;
                            outputs.push(ckpt);
                            rows.push((label, config, report, eval));
                        }
                    }
                }
            }
            let mut tsv = String::from(
                "layers\td_model\tlearning_rate\tbatch_size\tsp_rmse\tsd_rmse\tac_rmse\tna_mae\thd_mae\tloss\taccuracy\tepoch\n",
            );
            for (_, config, report, eval) in &rows {
                tsv.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}\t{:.4}\t{:.4}\t{}\n",
                    config.layers,
                    config.d_model,
                    config.learning_rate,
                    config.batch_size,
                    eval.sp_rmse,
                    eval.sd_rmse,
                    eval.ac_rmse,
                    eval.na_mae,
                    eval.hd_mae.map_or(String::from("-"), |v| format!("{v:.2}")),
                    report.val_loss[report.best_epoch],
                    report.val_accuracy[report.best_epoch],
                    report.best_epoch,
                ));
            }
            std::fs::write(dir.join("grid.tsv"), &tsv)?;
            manifest.outputs(&outputs.iter().map(|s| s.as_str()).collect::<Vec<_>>());
            manifest.finish(&dir)?;
            print!("{tsv}");
            Ok(())
        }
    }
}

/// Model configuration from an optional JSON file with flag overrides.
fn resolve_model_config(args: &TrainArgs) -> anyhow::Result<ModelConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str::<ModelConfig>(&text)?
        }
        None => ModelConfig::new(2, 64, 0.001, 64),
    };
    if let Some(v) = args.layers {
        config.layers = v;
    }
    if let Some(v) = args.d_model {
        config.d_model = v;
    }
    if let Some(v) = args.heads {
        config.heads = v;
    }
    if let Some(v) = args.learning_rate {
        config.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = args.max_epochs {
        config.max_epochs = v;
    }
    if let Some(v) = args.patience {
        config.patience = v;
    }
    config.validate()?;
    Ok(config)
}

fn evaluate_any(args: &EvaluateArgs, dir: &std::path::Path) -> anyhow::Result<MetricsReport> {
    use schedsynth::io::ModelKind;
    let report = match io::checkpoint_kind(&args.model)? {
        ModelKind::Generator => {
            let model = io::load_generator(&args.model)?;
            let reference = io::read_week_corpus(&args.reference)?;
            let report = evaluate_generator(&model, &reference, args.n, args.seed)?;
            export_week_plots(&model, &reference, args, dir)?;
            report
        }
        ModelKind::Markov => {
            let model = io::load_markov(&args.model)?;
            let reference = io::read_week_corpus(&args.reference)?;
            let weeks = sample_markov(&model, args.n, args.seed)?;
            let report =
                schedsynth::generator::compare_to_reference(&weeks, &reference, args.seed)?;
            export_plots_for(&weeks, &reference, dir)?;
            report
        }
        ModelKind::Imputer => {
            let model = io::load_imputer(&args.model)?;
            let reference = io::read_diary_corpus(&args.reference)?;
            evaluate_imputer(&model, &reference, args.n, args.seed)?
        }
    };
    io::write_report_json(&report, dir.join("report.json"))?;
    Ok(report)
}

fn export_week_plots(
    model: &schedsynth::generator::GeneratorModel,
    reference: &schedsynth::domain::WeekCorpus,
    args: &EvaluateArgs,
    dir: &std::path::Path,
) -> anyhow::Result<()> {
    let pool: Vec<PersonAttributes> =
        reference.weeks.iter().map(|w| w.attributes.clone()).collect();
    let attrs = metrics::resample(&pool, args.n, args.seed);
    let weeks = model.generate_with_attrs(&attrs, args.seed, 1.0)?;
    export_plots_for(&weeks, reference, dir)
}

/// Plot-ready exports: state-probability curves, autocorrelation curves with
/// quartiles, and the working-day Hamming histogram.
fn export_plots_for(
    generated: &[schedsynth::domain::WeeklySchedule],
    reference: &schedsynth::domain::WeekCorpus,
    dir: &std::path::Path,
) -> anyhow::Result<()> {
    let gen_refs: Vec<&[u16]> = generated.iter().map(|w| w.states.as_slice()).collect();
    let ref_refs = metrics::week_state_refs(reference);
    let k = reference.alphabet.size();
    let labels: Vec<String> = (0..k as u16)
        .map(|c| reference.alphabet.label(c).unwrap_or("?").to_string())
        .collect();

    let sp_gen = metrics::state_probability_curves(&gen_refs, k)?;
    let sp_ref = metrics::state_probability_curves(&ref_refs, k)?;
    io::write_sp_curves(&sp_gen, &labels, dir.join("sp_generated.tsv"))?;
    io::write_sp_curves(&sp_ref, &labels, dir.join("sp_reference.tsv"))?;

    let mut ac_gen = Vec::new();
    let mut ac_ref = Vec::new();
    for s in 0..k as u16 {
        if let (Ok(g), Ok(r)) = (
            metrics::state_autocorrelation(&gen_refs, s, 432),
            metrics::state_autocorrelation(&ref_refs, s, 432),
        ) {
            ac_gen.push((labels[s as usize].clone(), g));
            ac_ref.push((labels[s as usize].clone(), r));
        }
    }
    io::write_ac_curves(&ac_gen, dir.join("ac_generated.tsv"))?;
    io::write_ac_curves(&ac_ref, dir.join("ac_reference.tsv"))?;

    let hd_gen = metrics::hamming_distribution(&gen_refs)?;
    let ref_resampled = metrics::resample(&reference.weeks, generated.len(), 1);
    let res_refs: Vec<&[u16]> = ref_resampled.iter().map(|w| w.states.as_slice()).collect();
    let hd_ref = metrics::hamming_distribution(&res_refs)?;
    io::write_hd_histogram(&hd_gen, &hd_ref, dir.join("hd_histogram.tsv"))?;
    Ok(())
}

fn comparison_table(rows: &[(&str, &MetricsReport)]) -> String {
    let mut out = String::from(
        "model      sp_rmse[%]  sd_rmse[%]  ac_rmse[-]  na_mae[-]  hd_mae[-]\n",
    );
    for (name, r) in rows {
        out.push_str(&format!(
            "{name:<10} {:>10.3} {:>11.3} {:>11.4} {:>10.3} {:>10}\n",
            r.sp_rmse,
            r.sd_rmse,
            r.ac_rmse,
            r.na_mae,
            r.hd_mae.map_or(String::from("-"), |v| format!("{v:.2}")),
        ));
    }
    out
}

fn print_report_row(name: &str, report: &MetricsReport) {
    print!("{}", comparison_table(&[(name, report)]));
}

fn write_json<T: serde::Serialize>(path: &std::path::Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
