//! `alarm-sentinel`: adjudicate ICU arrhythmia alarms from waveform records.
//!
//! Exit status: 0 false alarm (or success), 1 true alarm, 2 error,
//! 3 not enough clean beats for a self bank.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use sentinel_core::alarm::{classify_alarm, load_config, record_beats, Method, Resources, TestConfig};
use sentinel_core::banks::{self, bank_novelty_stats, extract_self_bank, load_bank_dir, write_bank, BeatBank};
use sentinel_core::beats::load_annotation_dir;
use sentinel_core::dtw::TrainingCorpus;
use sentinel_core::evaluation::{build_corpus, evaluate_entry, evaluation_report, report_csv, train_test_split, EvalContext, EvaluationReport};
use sentinel_core::record::{header_path, load_manifest, load_record, AlarmLabel, Arrhythmia, ManifestEntry};
use sentinel_core::{synth, Error};

const THREADS_ENV: &str = "ALARM_SENTINEL_THREADS";

#[derive(Parser)]
#[command(name = "alarm-sentinel", version, about = "False arrhythmia alarm adjudication")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classify one alarm record and print the verdict as JSON.
    Classify(ClassifyArgs),
    /// Classify every record of a manifest and write a metrics report.
    Evaluate(EvaluateArgs),
    /// Build or inspect beat banks.
    #[command(subcommand)]
    Bank(BankCommand),
    /// Build a full-signal training corpus cache from a manifest.
    Corpus(CorpusArgs),
    /// Write the seeded synthetic record suite.
    Synth(SynthArgs),
}

#[derive(Args)]
struct MethodInputs {
    /// baseline, improved, dtw-full, dtw-vbank, dtw-self-min or dtw-self-kl.
    #[arg(long, default_value = "improved")]
    method: Method,
    /// key = value overrides of the test thresholds.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Beat files; ventricular ones form the ventricular bank.
    #[arg(long)]
    bank_dir: Option<PathBuf>,
    /// Directory of `<record>.beats` or `<record>.<channel>.beats` files.
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Training corpus cache for dtw-full.
    #[arg(long)]
    corpus: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Record header (`.hea`) or record path without extension.
    record: PathBuf,
    #[command(flatten)]
    inputs: MethodInputs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    inputs: MethodInputs,
    /// Train on this many shuffled rows and evaluate on the rest.
    #[arg(long)]
    split: Option<usize>,
    #[arg(long, default_value_t = 2015)]
    seed: u64,
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
    /// Also write the metric table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Fail when any record takes longer than this.
    #[arg(long)]
    assert_latency_ms: Option<f64>,
}

#[derive(Subcommand)]
enum BankCommand {
    /// Extract a self bank of clean non-ventricular beats from one record.
    BuildSelf {
        #[arg(long)]
        record: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// ECG lead; defaults to the configured lead, else the first ECG.
        #[arg(long)]
        lead: Option<String>,
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print bank sizes and novelty statistics.
    Inspect {
        #[arg(long)]
        bank_dir: PathBuf,
    },
}

#[derive(Args)]
struct CorpusArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "II")]
    lead: String,
    /// Use only the training part of a seeded split of this size.
    #[arg(long)]
    split: Option<usize>,
    #[arg(long, default_value_t = 2015)]
    seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 2015)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Failure with the exit status it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if matches!(e, Error::InsufficientCleanBeats { .. }) { 3 } else { 2 };
        Failure { code, message: e.to_string() }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

type Outcome = Result<u8, Failure>;

fn config(path: Option<&Path>) -> Result<TestConfig, Failure> {
    Ok(match path {
        Some(p) => load_config(p)?,
        None => TestConfig::default(),
    })
}

struct Loaded {
    config: TestConfig,
    corpus: Option<TrainingCorpus>,
    ventricular: Option<BeatBank>,
    standard: Option<BeatBank>,
}

fn load_inputs(inputs: &MethodInputs, arrhythmia: Arrhythmia) -> Result<Loaded, Failure> {
    let config = config(inputs.config.as_deref())?;
    let (ventricular, standard) = match &inputs.bank_dir {
        Some(dir) => {
            let (v, s) = load_bank_dir(dir)?;
            (Some(v).filter(|b| !b.is_empty()), Some(s).filter(|b| !b.is_empty()))
        }
        None => (None, None),
    };
    if inputs.method == Method::DtwVbank && ventricular.is_none() {
        return Err(usage("dtw-vbank needs --bank-dir with ventricular beat files"));
    }
    let corpus = match &inputs.corpus {
        Some(p) => Some(TrainingCorpus::load(p, &config.dtw_lead, arrhythmia)?),
        None => None,
    };
    Ok(Loaded {
        config,
        corpus,
        ventricular,
        standard,
    })
}

fn classify(args: &ClassifyArgs) -> Outcome {
    let record = load_record(&header_path(&args.record))?;
    let inputs = &args.inputs;
    if inputs.method == Method::DtwFull && inputs.corpus.is_none() {
        return Err(usage("dtw-full needs --corpus (build one with `alarm-sentinel corpus`)"));
    }
    let loaded = load_inputs(inputs, record.alarm.arrhythmia)?;
    let annotations = match &inputs.annotations {
        Some(dir) => load_annotation_dir(dir, &record)?,
        None => Vec::new(),
    };
    let res = Resources {
        annotations: &annotations,
        corpus: loaded.corpus.as_ref(),
        ventricular_bank: loaded.ventricular.as_ref(),
        standard_bank: loaded.standard.as_ref(),
    };
    let verdict = classify_alarm(&record, inputs.method, &loaded.config, &res)?;
    println!("{}", serde_json::to_string_pretty(&verdict).expect("verdict serializes"));
    Ok(u8::from(verdict.decision == AlarmLabel::TrueAlarm))
}

fn worker_pool() -> Result<rayon::ThreadPool, Failure> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| usage(format!("worker pool: {e}")))
}

fn print_summary(report: &EvaluationReport) {
    println!("{:<26} {:>4} {:>4} {:>4} {:>4} {:>7} {:>7} {:>7}", "arrhythmia", "TP", "TN", "FP", "FN", "sens", "specif", "score");
    let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.3}"));
    let rows = report
        .metrics
        .per_arrhythmia
        .iter()
        .map(|(a, r)| (a.header_name(), r))
        .chain(std::iter::once(("Overall", &report.metrics.overall)));
    for (name, r) in rows {
        let c = r.counts;
        let m = r.metrics;
        println!(
            "{name:<26} {:>4} {:>4} {:>4} {:>4} {:>7} {:>7} {:>7}",
            c.tp,
            c.tn,
            c.fp,
            c.fn_,
            fmt(m.and_then(|m| m.sensitivity)),
            fmt(m.and_then(|m| m.specificity)),
            fmt(m.map(|m| m.challenge_score)),
        );
    }
    println!("latency: max {:.1} ms, mean {:.1} ms", report.max_latency_ms, report.mean_latency_ms);
}

fn evaluate(args: &EvaluateArgs) -> Outcome {
    let manifest = load_manifest(&args.manifest)?;
    if let Some((i, e)) = manifest.entries.iter().enumerate().find(|(_, e)| e.truth.is_none()) {
        return Err(Failure::from(Error::UnknownTruth(i)).with_context(&e.record));
    }
    let method = args.inputs.method;
    let (train, mut test): (Vec<ManifestEntry>, Vec<ManifestEntry>) = match args.split {
        Some(n) => train_test_split(&manifest.entries, n, args.seed),
        None => (Vec::new(), manifest.entries.clone()),
    };
    if method.is_dtw() {
        // the warping methods only adjudicate ventricular tachycardia alarms
        test.retain(|e| e.arrhythmia == Arrhythmia::VTach);
    }
    let mut loaded = load_inputs(&args.inputs, Arrhythmia::VTach)?;
    if method == Method::DtwFull && loaded.corpus.is_none() {
        if args.split.is_none() {
            return Err(usage("dtw-full needs --corpus or --split"));
        }
        loaded.corpus = Some(build_corpus(&manifest, &train, &loaded.config.dtw_lead)?);
    }
    let ctx = EvalContext {
        config: &loaded.config,
        annotation_dir: args.inputs.annotations.as_deref(),
        corpus: loaded.corpus.as_ref(),
        ventricular_bank: loaded.ventricular.as_ref(),
        standard_bank: loaded.standard.as_ref(),
    };
    let pool = worker_pool()?;
    // indexed parallel collect keeps manifest order
    let outcomes = pool.install(|| test.par_iter().map(|e| evaluate_entry(&manifest, e, method, &ctx)).collect());
    let report = evaluation_report(method, outcomes)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(&args.out, json).map_err(|e| usage(format!("writing {}: {e}", args.out.display())))?;
    if let Some(csv) = &args.csv {
        fs::write(csv, report_csv(&report.metrics, method)).map_err(|e| usage(format!("writing {}: {e}", csv.display())))?;
    }
    print_summary(&report);
    for r in report.records.iter().filter(|r| r.error.is_some()) {
        eprintln!("record {} failed: {}", r.record, r.error.as_deref().unwrap_or(""));
    }
    if !report.complete {
        return Err(usage("some records failed; see the report"));
    }
    if let Some(budget) = args.assert_latency_ms {
        if let Some(slow) = report.records.iter().find(|r| r.latency_ms > budget) {
            return Err(usage(format!("record {} took {:.1} ms, over the {budget} ms budget", slow.record, slow.latency_ms)));
        }
    }
    Ok(0)
}

impl Failure {
    fn with_context(mut self, what: &str) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

fn bank(cmd: &BankCommand) -> Outcome {
    match cmd {
        BankCommand::BuildSelf {
            record,
            out,
            lead,
            annotations,
            config: cfg_path,
        } => {
            let cfg = config(cfg_path.as_deref())?;
            let record = load_record(&header_path(record))?;
            let wanted = lead.as_deref().unwrap_or(&cfg.dtw_lead);
            let lead_idx = record
                .channel_index(wanted)
                .or_else(|| lead.is_none().then(|| record.primary_ecg()).flatten())
                .ok_or_else(|| Failure::from(Error::MissingLead(wanted.to_string())))?;
            let ann = match annotations {
                Some(dir) => load_annotation_dir(dir, &record)?,
                None => Vec::new(),
            };
            let beats = record_beats(&record, lead_idx, &ann);
            let bank = extract_self_bank(&record, lead_idx, &beats, &cfg.clean_thresholds())?;
            let written = write_bank(&bank, out, &record.name)?;
            println!("wrote {} beat files to {}", written.len(), out.display());
            Ok(0)
        }
        BankCommand::Inspect { bank_dir } => {
            let (ventricular, standard) = load_bank_dir(bank_dir)?;
            for (name, b) in [("ventricular", &ventricular), ("non-ventricular", &standard)] {
                println!("{name} beats: {}", b.len());
                if b.len() >= 2 {
                    let stats = bank_novelty_stats(b, banks::BEAT_RADIUS)?;
                    println!("  mu_min: {:.6}", stats.mu_min);
                    println!("  sigma_min: {:.6}", stats.sigma_min);
                    println!("  mu_kl: {:.6}", stats.mu_kl);
                    println!("  sigma_kl: {:.6}", stats.sigma_kl);
                }
            }
            Ok(0)
        }
    }
}

fn corpus(args: &CorpusArgs) -> Outcome {
    let manifest = load_manifest(&args.manifest)?;
    let rows = match args.split {
        Some(n) => train_test_split(&manifest.entries, n, args.seed).0,
        None => manifest.entries.clone(),
    };
    let corpus = build_corpus(&manifest, &rows, &args.lead)?;
    corpus.save(&args.out)?;
    println!("wrote {} sequences to {}", corpus.len(), args.out.display());
    Ok(0)
}

fn synth_suite(args: &SynthArgs) -> Outcome {
    let manifest = synth::generate_suite(args.seed, &args.out)?;
    let vbank = synth::ventricular_bank(args.seed);
    let written = write_bank(&vbank, &args.out.join("vbank"), "v")?;
    println!(
        "wrote {} records, manifest.csv and {} ventricular beat files to {}",
        manifest.entries.len(),
        written.len(),
        args.out.display()
    );
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Classify(a) => classify(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Bank(c) => bank(c),
        Command::Corpus(a) => corpus(a),
        Command::Synth(a) => synth_suite(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
