use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use smcrf::corpus::{parse_corpus_with, write_corpus, write_gold, CorpusError, ParseOptions};
use smcrf::decoding::{
    check_monotonicity_assumption, decode_constrained, full_transition_count, viterbi_with_stats,
    DEFAULT_DISPARITY_THRESHOLD,
};
use smcrf::duration::{collect_histogram, fit, DurationError};
use smcrf::evaluation::{evaluate_with, EvalError};
use smcrf::features::FeatureError;
use smcrf::inference::InferenceError;
use smcrf::modelfile::{self, ModelFileError};
use smcrf::synth::{self, SynthConfig};
use smcrf::training::{random_theta, train_from, TrainError};
use smcrf::{
    ConstrainedOptions, DecodePath, DecodeStats, DurationModel, FamilyKind, FeatureConfig, LabelSet, MatchMode,
    Model, Sentence, TemplateSet, TrainConfig,
};

#[derive(Parser)]
#[command(name = "smcrf", version, about = "Duration-modeled semi-Markov CRF keyphrase tagger")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Gaussian,
    Gamma,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum DurationArg {
    Gamma,
    Gaussian,
    None,
}

impl From<DurationArg> for FamilyKind {
    fn from(d: DurationArg) -> Self {
        match d {
            DurationArg::Gamma => FamilyKind::Gamma,
            DurationArg::Gaussian => FamilyKind::Gaussian,
            DurationArg::None => FamilyKind::None,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DecoderArg {
    Viterbi,
    Constrained,
}

#[derive(Clone, Copy, ValueEnum)]
enum MatchArg {
    Span,
    String,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Separable,
    Noisy,
}

#[derive(Subcommand)]
enum Command {
    /// Fit duration distributions to gold keyphrase lengths.
    FitDurations {
        corpus: PathBuf,
        #[arg(long, default_value = "KP")]
        label: String,
        #[arg(long, value_enum, default_value = "both")]
        family: FamilyArg,
    },
    /// Train a model and write it to a model file.
    Train {
        corpus: PathBuf,
        /// Maximum segment length.
        #[arg(long = "l", default_value_t = 2)]
        max_len: usize,
        #[arg(long, value_enum, default_value = "gamma")]
        duration: DurationArg,
        /// Fitted parameters from `fit-durations`; fitted on the corpus if absent.
        #[arg(long)]
        durations: Option<PathBuf>,
        #[arg(long, default_value_t = 10.0)]
        sigma2: f64,
        #[arg(long = "max-iter", default_value_t = 500)]
        max_iter: usize,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        /// One template name per line.
        #[arg(long)]
        templates: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Start from small random weights drawn with this seed instead of zero.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Decode a corpus and print it with predicted span tags.
    Tag {
        corpus: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value = "viterbi")]
        decoder: DecoderArg,
        #[arg(long)]
        no_prune: bool,
        #[arg(long)]
        no_np_constraint: bool,
        /// Print decoding counters to standard error.
        #[arg(long)]
        stats: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare predicted spans against gold spans.
    Eval {
        gold: PathBuf,
        predicted: PathBuf,
        #[arg(long = "match", value_enum, default_value = "span")]
        mode: MatchArg,
    },
    /// Time the decoders on a corpus.
    BenchDecode {
        corpus: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 3)]
        repetitions: usize,
    },
    /// Write a synthetic keyphrase corpus.
    GenSynth {
        #[arg(long, default_value_t = 60)]
        sentences: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, value_enum, default_value = "separable")]
        preset: PresetArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn data(e: impl fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        data(e)
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        data(e)
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        data(e)
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        data(e)
    }
}

impl From<DurationError> for CliError {
    fn from(e: DurationError) -> Self {
        match e {
            DurationError::NoConvergence { .. } => CliError::Numerical(e.to_string()),
            _ => data(e),
        }
    }
}

impl From<InferenceError> for CliError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            _ => data(e),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Inference(e) => e.into(),
            TrainError::Config(m) => CliError::Usage(m),
            e => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<ModelFileError> for CliError {
    fn from(e: ModelFileError) -> Self {
        data(e)
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn read_corpus(path: &Path, labels: &LabelSet, allow_missing_tags: bool) -> Result<Vec<Sentence>> {
    let corpus = parse_corpus_with(open(path)?, labels, ParseOptions { allow_missing_tags })
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(corpus)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn fit_durations(corpus: &Path, label: &str, family: FamilyArg) -> Result<()> {
    let labels = LabelSet::keyphrase();
    let corpus = read_corpus(corpus, &labels, false)?;
    let id = labels
        .id(label)
        .ok_or_else(|| CliError::Usage(format!("unknown label {label:?}")))?;
    let h = collect_histogram(&corpus, id, &labels)?;
    let mut out = output(None)?;
    writeln!(out, "# length\tcount")?;
    for (d, c) in h.counts() {
        writeln!(out, "# {d}\t{c}")?;
    }
    writeln!(out, "# mean {:.6} variance {:.6} n {}", h.mean(), h.variance(), h.total())?;
    let kinds: &[FamilyKind] = match family {
        FamilyArg::Gaussian => &[FamilyKind::Gaussian],
        FamilyArg::Gamma => &[FamilyKind::Gamma],
        FamilyArg::Both => &[FamilyKind::Gaussian, FamilyKind::Gamma],
    };
    for &kind in kinds {
        let f = fit(&h, kind)?;
        writeln!(out, "{label} {f} {:.6}", f.log_likelihood(&h))?;
    }
    out.flush()?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    corpus: &Path,
    max_len: usize,
    duration: DurationArg,
    durations: Option<&Path>,
    cfg: TrainConfig,
    templates: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
) -> Result<()> {
    if max_len == 0 {
        return Err(CliError::Usage("--l must be at least 1".into()));
    }
    let labels = LabelSet::keyphrase();
    let corpus = read_corpus(corpus, &labels, false)?;
    let kind = FamilyKind::from(duration);
    let dur = match durations {
        Some(p) => DurationModel::from_params_text(&fs::read_to_string(p)?, &labels, kind)?,
        None => DurationModel::fit_corpus(&corpus, &labels, kind)?,
    };
    let templates = match templates {
        Some(p) => TemplateSet::parse(&fs::read_to_string(p)?)?,
        None => TemplateSet::default(),
    };
    let config = FeatureConfig {
        templates,
        ..FeatureConfig::default()
    };
    let skeleton = Model::skeleton(&corpus, labels, max_len, config, dur)?;
    let theta0 = match seed {
        Some(s) => random_theta(skeleton.num_features(), s, 0.1),
        None => vec![0.0; skeleton.num_features()],
    };
    let report = train_from(&corpus, &cfg, skeleton, theta0)?;
    if !report.converged {
        log::warn!(
            "stopped after {} iterations without reaching tolerance (|g|inf {:.3e})",
            report.iterations,
            report.gradient_norm
        );
    }
    eprintln!(
        "features {} iterations {} nll {:.6} -> {:.6}",
        report.model.num_features(),
        report.iterations,
        report.initial_nll,
        report.final_nll
    );
    let mut w = BufWriter::new(File::create(out)?);
    modelfile::save(&report.model, &mut w)?;
    w.flush()?;
    Ok(())
}

fn load_model(path: &Path) -> Result<Model> {
    modelfile::load(open(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn decode_all(m: &Model, corpus: &[Sentence], decoder: DecoderArg, options: ConstrainedOptions) -> Result<Vec<(DecodePath, DecodeStats)>> {
    corpus
        .par_iter()
        .map(|s| match decoder {
            DecoderArg::Viterbi => viterbi_with_stats(m, s),
            DecoderArg::Constrained => decode_constrained(m, s, options),
        })
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(CliError::from)
}

fn print_stats(stats: &DecodeStats, sentences: usize) {
    eprintln!("sentences\t{sentences}");
    eprintln!("transitions_evaluated\t{}", stats.transitions_evaluated);
    eprintln!("segments_evaluated\t{}", stats.segments_evaluated);
    eprintln!("segments_pruned_by_np\t{}", stats.segments_pruned_by_np);
    eprintln!("segments_pruned_by_monotonicity\t{}", stats.segments_pruned_by_monotonicity);
    eprintln!("pruning_disabled\t{}", stats.pruning_disabled);
    eprintln!("wall_time_ms\t{:.3}", stats.wall_time.as_secs_f64() * 1e3);
}

fn tag(
    corpus: &Path,
    model: &Path,
    decoder: DecoderArg,
    options: ConstrainedOptions,
    stats: bool,
    out: Option<&Path>,
) -> Result<()> {
    let m = load_model(model)?;
    let corpus = read_corpus(corpus, m.labels(), true)?;
    let decoded = decode_all(&m, &corpus, decoder, options)?;
    let segs: Vec<&[smcrf::Segment]> = decoded.iter().map(|(p, _)| p.segments.as_slice()).collect();
    let mut w = output(out)?;
    write_corpus(&mut w, &corpus, &segs, m.labels())?;
    w.flush()?;
    if stats {
        let mut total = DecodeStats::default();
        for (_, s) in &decoded {
            total.merge(s);
        }
        print_stats(&total, corpus.len());
        if decoder == DecoderArg::Constrained {
            let r = check_monotonicity_assumption(&m, DEFAULT_DISPARITY_THRESHOLD);
            eprintln!("duration_weight_disparity\t{:.6}", r.disparity());
            eprintln!("pruning_safe\t{}", r.safe());
        }
    }
    Ok(())
}

fn eval(gold: &Path, predicted: &Path, mode: MatchArg) -> Result<()> {
    let labels = LabelSet::keyphrase();
    let g = read_corpus(gold, &labels, false)?;
    let p = read_corpus(predicted, &labels, false)?;
    let pred: Vec<Vec<smcrf::Segment>> = p.into_iter().map(|s| s.gold).collect();
    let mode = match mode {
        MatchArg::Span => MatchMode::Span,
        MatchArg::String => MatchMode::String,
    };
    let r = evaluate_with(&g, &pred, &labels, mode)?;
    let mut out = output(None)?;
    writeln!(out, "P\tR\tF1\ttp\tfp\tfn")?;
    writeln!(out, "{r}")?;
    out.flush()?;
    Ok(())
}

fn bench_decode(corpus: &Path, model: &Path, repetitions: usize) -> Result<()> {
    let m = load_model(model)?;
    let corpus = read_corpus(corpus, m.labels(), true)?;
    let mut out = output(None)?;
    writeln!(
        out,
        "config\trepetitions\twall_ms\ttransitions\tfull_transitions\tpruned_np\tpruned_monotonicity\tagreement\ttransition_ratio\tformula_ratio"
    )?;
    if repetitions == 0 {
        out.flush()?;
        return Ok(());
    }
    let configs: [(&str, DecoderArg, ConstrainedOptions); 4] = [
        ("viterbi", DecoderArg::Viterbi, ConstrainedOptions::default()),
        ("constrained", DecoderArg::Constrained, ConstrainedOptions::default()),
        (
            "constrained-no-prune",
            DecoderArg::Constrained,
            ConstrainedOptions {
                prune: false,
                ..Default::default()
            },
        ),
        (
            "constrained-no-np",
            DecoderArg::Constrained,
            ConstrainedOptions {
                np_constraint: false,
                ..Default::default()
            },
        ),
    ];
    let (l, ny) = (m.max_len(), m.labels().len());
    let full: u64 = corpus.iter().map(|s| full_transition_count(s.len(), l, ny)).sum();
    let mut reference: Option<Vec<DecodePath>> = None;
    for (name, decoder, options) in configs {
        let mut elapsed = 0.0;
        let mut decoded = Vec::new();
        for _ in 0..repetitions {
            let start = Instant::now();
            decoded = corpus
                .iter()
                .map(|s| match decoder {
                    DecoderArg::Viterbi => viterbi_with_stats(&m, s),
                    DecoderArg::Constrained => decode_constrained(&m, s, options),
                })
                .collect::<std::result::Result<Vec<_>, _>>()?;
            elapsed += start.elapsed().as_secs_f64();
        }
        let mut stats = DecodeStats::default();
        for (_, s) in &decoded {
            stats.merge(s);
        }
        let paths: Vec<DecodePath> = decoded.into_iter().map(|(p, _)| p).collect();
        let reference = reference.get_or_insert_with(|| paths.clone());
        let agree = paths
            .iter()
            .zip(reference.iter())
            .filter(|(a, b)| a.segments == b.segments)
            .count();
        let agreement = if paths.is_empty() { 1.0 } else { agree as f64 / paths.len() as f64 };
        // average decoded keyphrase length and labels per span
        let kp: Vec<usize> = paths
            .iter()
            .flat_map(|p| p.segments.iter())
            .filter(|s| m.labels().is_durational(s.label))
            .map(|s| s.len())
            .collect();
        let d_star = if kp.is_empty() { 0.0 } else { kp.iter().sum::<usize>() as f64 / kp.len() as f64 };
        let y_star = stats.avg_labels_per_span();
        let lf = l as f64;
        let formula = (y_star * y_star + lf * y_star - (lf - d_star)) / (lf * (ny * ny) as f64);
        writeln!(
            out,
            "{name}\t{repetitions}\t{:.3}\t{}\t{full}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}",
            elapsed * 1e3 / repetitions as f64,
            stats.transitions_evaluated,
            stats.segments_pruned_by_np,
            stats.segments_pruned_by_monotonicity,
            agreement,
            if full == 0 { 0.0 } else { stats.transitions_evaluated as f64 / full as f64 },
            formula
        )?;
    }
    out.flush()?;
    Ok(())
}

fn gen_synth(sentences: usize, seed: u64, preset: PresetArg, out: Option<&Path>) -> Result<()> {
    let cfg = match preset {
        PresetArg::Separable => SynthConfig::separable(sentences, seed),
        PresetArg::Noisy => SynthConfig::noisy(sentences, seed),
    };
    let labels = LabelSet::keyphrase();
    let corpus = synth::generate(&cfg, &labels);
    let mut w = output(out)?;
    write_gold(&mut w, &corpus, &labels)?;
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::FitDurations { corpus, label, family } => fit_durations(&corpus, &label, family),
        Command::Train {
            corpus,
            max_len,
            duration,
            durations,
            sigma2,
            max_iter,
            tol,
            templates,
            out,
            seed,
        } => {
            let cfg = TrainConfig {
                sigma2,
                max_iterations: max_iter,
                tolerance: tol,
                ..TrainConfig::default()
            };
            cmd_train(&corpus, max_len, duration, durations.as_deref(), cfg, templates.as_deref(), &out, seed)
        }
        Command::Tag {
            corpus,
            model,
            decoder,
            no_prune,
            no_np_constraint,
            stats,
            out,
        } => {
            let options = ConstrainedOptions {
                np_constraint: !no_np_constraint,
                prune: !no_prune,
            };
            tag(&corpus, &model, decoder, options, stats, out.as_deref())
        }
        Command::Eval { gold, predicted, mode } => eval(&gold, &predicted, mode),
        Command::BenchDecode {
            corpus,
            model,
            repetitions,
        } => bench_decode(&corpus, &model, repetitions),
        Command::GenSynth {
            sentences,
            seed,
            preset,
            out,
        } => gen_synth(sentences, seed, preset, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
