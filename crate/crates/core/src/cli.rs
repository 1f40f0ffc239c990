//! `layerforge` command line.
//!
//! Exit codes: 0 success, 1 data error, 2 format error, 3 usage error.
//! Every output directory gets a `config.txt` echoing the parsed arguments;
//! identical arguments and inputs produce identical files.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::aggregate::LayerSet;
use crate::corpus::{
    self, load_corpus_with, load_unvalidated, validate_corpus, EmbeddingStore, Granularity, LoadOptions, Split,
};
use crate::cv::make_folds;
use crate::error::{Error, Result};
use crate::report::{kv_block, RankedRow, RankedTable, DEFAULT_SIGNIFICANCE};
use crate::ridge::AlphaGrid;
use crate::select::{self, FinalConfig, SelectionConfig};
use crate::synth::{self, SignalTerm, SynthSpec, TokenDistribution};

#[derive(Debug, Parser)]
#[command(
    name = "layerforge",
    version,
    about = "Layer selection for user-level regression over transformer embeddings"
)]
pub struct Cli {
    /// Worker threads (default: available cores).
    #[arg(long, global = true, env = "LAYERFORGE_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check an embeddings file and its outcomes against every invariant.
    Validate(CorpusArgs),
    /// Cross-validate every single layer (the per-layer MSE curve).
    SweepLayers(SweepArgs),
    /// Greedy forward layer selection.
    Select(SelectArgs),
    /// Fit on train, evaluate a layer set on held-out test users.
    Final(FinalArgs),
    /// Generate a synthetic corpus with planted layer signals.
    Synth(SynthArgs),
    /// Re-serialize an embeddings file and check the bytes are unchanged.
    Roundtrip(RoundtripArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CorpusArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    /// CSV with header `user_id,score`.
    #[arg(long)]
    pub outcomes: PathBuf,
    /// Users with fewer tokens are dropped (inclusive bound).
    #[arg(long, default_value_t = corpus::DEFAULT_MIN_WORDS)]
    pub min_words: u64,
    /// Reject scores outside [1, 5].
    #[arg(long)]
    pub strict_range: bool,
}

impl CorpusArgs {
    fn echo(&self, out: &mut Vec<(String, String)>) {
        push(out, "embeddings", self.embeddings.display());
        push(out, "outcomes", self.outcomes.display());
        push(out, "min_words", self.min_words);
        push(out, "strict_range", self.strict_range);
    }

    fn load(&self, split: Split) -> Result<corpus::Corpus> {
        load_corpus_with(&self.embeddings, &self.outcomes, &self.options(split))
    }

    fn options(&self, split: Split) -> LoadOptions {
        LoadOptions {
            min_words: self.min_words,
            strict_range: self.strict_range,
            split,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Cross-validation folds.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10.0)]
    pub alpha_min: f64,
    #[arg(long, default_value_t = 1e6)]
    pub alpha_max: f64,
    /// Multiplicative grid step.
    #[arg(long, default_value_t = 10.0)]
    pub alpha_step: f64,
    /// Z-score features before ridge (default: centering only).
    #[arg(long)]
    pub standardize: bool,
}

impl ModelArgs {
    fn grid(&self) -> Result<AlphaGrid> {
        AlphaGrid::geometric(self.alpha_min, self.alpha_max, self.alpha_step)
    }

    fn echo(&self, out: &mut Vec<(String, String)>) {
        push(out, "k", self.k);
        push(out, "seed", self.seed);
        push(out, "alpha_min", self.alpha_min);
        push(out, "alpha_max", self.alpha_max);
        push(out, "alpha_step", self.alpha_step);
        push(out, "standardize", self.standardize);
    }
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 8)]
    pub max_layers: usize,
    /// Required decrease in best mean MSE per stage.
    #[arg(long, default_value_t = 0.0)]
    pub epsilon: f64,
    /// Candidates shown per stage in trace.txt.
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    #[arg(long, default_value_t = DEFAULT_SIGNIFICANCE)]
    pub significance: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct FinalArgs {
    #[arg(long)]
    pub train_embeddings: PathBuf,
    #[arg(long)]
    pub train_outcomes: PathBuf,
    #[arg(long)]
    pub test_embeddings: PathBuf,
    #[arg(long)]
    pub test_outcomes: PathBuf,
    #[arg(long, default_value_t = corpus::DEFAULT_MIN_WORDS)]
    pub min_words: u64,
    #[arg(long)]
    pub strict_range: bool,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Layer set, e.g. `19;16;24` or `16,18,19`.
    #[arg(long)]
    pub layers: String,
    #[arg(long, default_value_t = 1.0)]
    pub reliability_x: f64,
    #[arg(long, default_value_t = 1.0)]
    pub reliability_y: f64,
    /// CSV with `user_id` and `yhat` columns to test against.
    #[arg(long)]
    pub baseline_predictions: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GranularityArg {
    User,
    Message,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    pub users: usize,
    #[arg(long, default_value_t = 12)]
    pub layers: usize,
    #[arg(long, default_value_t = 32)]
    pub hidden: usize,
    /// Planted term `LAYER:WEIGHT`; repeatable.
    #[arg(long = "signal")]
    pub signal: Vec<String>,
    #[arg(long, default_value_t = 0.3)]
    pub noise_sigma: f64,
    /// `gaussian_iid` or `layerwise_shift[:rho]`.
    #[arg(long, default_value = "gaussian_iid")]
    pub distribution: String,
    #[arg(long, value_enum, default_value_t = GranularityArg::User)]
    pub granularity: GranularityArg,
    #[arg(long, default_value_t = 25)]
    pub min_messages: u32,
    #[arg(long, default_value_t = 50)]
    pub max_messages: u32,
    #[arg(long, default_value_t = 40)]
    pub min_tokens: u32,
    #[arg(long, default_value_t = 80)]
    pub max_tokens: u32,
    #[arg(long, default_value_t = 10.0)]
    pub feature_scale: f64,
    #[arg(long, default_value_t = 10.0)]
    pub token_sigma: f64,
    /// Robustness option: add STRENGTH·signal² to the outcome.
    #[arg(long)]
    pub nonlinear: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub world_seed: u64,
    #[arg(long, default_value = "u")]
    pub prefix: String,
    #[arg(long, default_value = "synthetic")]
    pub model_name: String,
    /// File stem inside the output directory.
    #[arg(long, default_value = "corpus")]
    pub stem: String,
    #[arg(long)]
    pub out: PathBuf,
}

impl SynthArgs {
    fn spec(&self) -> Result<SynthSpec> {
        let mut spec = SynthSpec::new(self.users, self.layers, self.hidden);
        spec.signal = self
            .signal
            .iter()
            .map(|s| s.parse::<SignalTerm>())
            .collect::<Result<_>>()?;
        spec.noise_sigma = self.noise_sigma;
        spec.distribution = self.distribution.parse::<TokenDistribution>()?;
        spec.granularity = match self.granularity {
            GranularityArg::User => Granularity::User,
            GranularityArg::Message => Granularity::Message,
        };
        spec.messages_per_user = (self.min_messages, self.max_messages);
        spec.tokens_per_message = (self.min_tokens, self.max_tokens);
        spec.feature_scale = self.feature_scale;
        spec.token_sigma = self.token_sigma;
        spec.nonlinear = self.nonlinear;
        spec.seed = self.seed;
        spec.world_seed = self.world_seed;
        spec.id_prefix = self.prefix.clone();
        spec.model_name = self.model_name.clone();
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Args)]
pub struct RoundtripArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Where to write the re-serialized copy.
    #[arg(long)]
    pub out: PathBuf,
}

fn push(out: &mut Vec<(String, String)>, k: &str, v: impl std::fmt::Display) {
    out.push((k.to_string(), v.to_string()));
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn prepare_out(dir: &Path, subcommand: &str, echo: &[(String, String)], threads: Option<usize>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut pairs = vec![("subcommand".to_string(), subcommand.to_string())];
    pairs.extend_from_slice(echo);
    if let Some(t) = threads {
        pairs.push(("threads".into(), t.to_string()));
    }
    write_file(&dir.join("config.txt"), &kv_block(&pairs))
}

/// Parse `args` (including the program name) and run. Returns the exit
/// code; messages go to `stdout` / `stderr`.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let rendered = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(stderr, "{rendered}");
            } else {
                let _ = write!(stdout, "{rendered}");
            }
            return code;
        }
    };
    let mut buf: Vec<u8> = Vec::new();
    let result = match cli.threads {
        Some(0) => Err(Error::Usage("--threads must be >= 1".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(&cli, &mut buf)),
            Err(e) => Err(Error::Usage(format!("cannot build thread pool: {e}"))),
        },
        None => dispatch(&cli, &mut buf),
    };
    let _ = stdout.write_all(&buf);
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli, stdout: &mut Vec<u8>) -> Result<i32> {
    let threads = cli.threads;
    let say = |stdout: &mut Vec<u8>, msg: String| stdout.extend_from_slice(msg.as_bytes());
    match &cli.command {
        Command::Validate(args) => {
            let c = load_unvalidated(&args.embeddings, &args.outcomes, &args.options(Split::Train))?;
            let violations = validate_corpus(&c);
            if violations.is_empty() {
                say(
                    stdout,
                    format!("ok: {} users, L={}, H={}\n", c.len(), c.num_layers(), c.hidden_dim()),
                );
                Ok(0)
            } else {
                let mut s = String::new();
                for v in &violations {
                    writeln!(s, "{v}").unwrap();
                }
                say(stdout, s);
                Ok(1)
            }
        }
        Command::SweepLayers(args) => {
            let mut echo = Vec::new();
            args.corpus.echo(&mut echo);
            args.model.echo(&mut echo);
            let grid = args.model.grid()?;
            let c = args.corpus.load(Split::Train)?;
            prepare_out(&args.out, "sweep-layers", &echo, threads)?;
            let folds = make_folds(&c.user_ids(), args.model.k, args.model.seed)?;
            let reports = select::sweep_layers(&c, &folds, &grid, args.model.standardize)?;
            write_file(&args.out.join("sweep.csv"), &select::sweep_csv(&reports))?;

            let rows = reports
                .iter()
                .map(|r| RankedRow {
                    label: r.layer_set.to_string(),
                    mean_mse: r.mean_mse,
                    p_vs_best: None,
                })
                .collect();
            let table = RankedTable::new("single layers ranked by mean fold MSE", rows, DEFAULT_SIGNIFICANCE);
            let mut text = String::new();
            writeln!(text, "layer  mean_mse  std_err  alpha").unwrap();
            for r in &reports {
                writeln!(
                    text,
                    "{:<5}  {:.4}    {:.4}   {}",
                    r.layer_set, r.mean_mse, r.std_err, r.alpha_star
                )
                .unwrap();
            }
            text.push('\n');
            text.push_str(&table.to_text(c.num_layers()));
            write_file(&args.out.join("sweep.txt"), &text)?;
            let best = &table.rows[0];
            say(
                stdout,
                format!("best single layer: {} (mean_mse {:.4})\n", best.label, best.mean_mse),
            );
            Ok(0)
        }
        Command::Select(args) => {
            let mut echo = Vec::new();
            args.corpus.echo(&mut echo);
            args.model.echo(&mut echo);
            push(&mut echo, "max_layers", args.max_layers);
            push(&mut echo, "epsilon", args.epsilon);
            push(&mut echo, "top_k", args.top_k);
            push(&mut echo, "significance", args.significance);
            let cfg = SelectionConfig {
                max_layers: args.max_layers,
                epsilon: args.epsilon,
                top_k_report: args.top_k,
                k: args.model.k,
                seed: args.model.seed,
                grid: args.model.grid()?,
                standardize: args.model.standardize,
                significance: args.significance,
            };
            let c = args.corpus.load(Split::Train)?;
            prepare_out(&args.out, "select", &echo, threads)?;
            let trace = select::greedy_select(&c, &cfg)?;
            write_file(&args.out.join("trace.csv"), &trace.to_csv())?;
            write_file(&args.out.join("trace.txt"), &trace.to_text())?;
            write_file(&args.out.join("recommendation.txt"), &trace.recommendation_text())?;
            write_file(&args.out.join("summary.txt"), &trace.summary_text())?;
            say(
                stdout,
                format!(
                    "recommended layers: {} (mean_mse {:.4}, alpha {})\n",
                    trace.recommended, trace.recommended_mean_mse, trace.recommended_alpha
                ),
            );
            Ok(0)
        }
        Command::Final(args) => {
            let mut echo = Vec::new();
            push(&mut echo, "train_embeddings", args.train_embeddings.display());
            push(&mut echo, "train_outcomes", args.train_outcomes.display());
            push(&mut echo, "test_embeddings", args.test_embeddings.display());
            push(&mut echo, "test_outcomes", args.test_outcomes.display());
            push(&mut echo, "min_words", args.min_words);
            push(&mut echo, "strict_range", args.strict_range);
            args.model.echo(&mut echo);
            push(&mut echo, "layers", &args.layers);
            push(&mut echo, "reliability_x", args.reliability_x);
            push(&mut echo, "reliability_y", args.reliability_y);
            if let Some(b) = &args.baseline_predictions {
                push(&mut echo, "baseline_predictions", b.display());
            }
            let ls: LayerSet = args.layers.parse()?;
            let cfg = FinalConfig {
                k: args.model.k,
                seed: args.model.seed,
                grid: args.model.grid()?,
                standardize: args.model.standardize,
                rel_x: args.reliability_x,
                rel_y: args.reliability_y,
            };
            let opts = |split| LoadOptions {
                min_words: args.min_words,
                strict_range: args.strict_range,
                split,
            };
            let train = load_corpus_with(&args.train_embeddings, &args.train_outcomes, &opts(Split::Train))?;
            let test = load_corpus_with(&args.test_embeddings, &args.test_outcomes, &opts(Split::Test))?;
            let baseline = args
                .baseline_predictions
                .as_ref()
                .map(select::read_predictions)
                .transpose()?;
            prepare_out(&args.out, "final", &echo, threads)?;
            let report = select::evaluate_final(&train, &test, &ls, &cfg, baseline.as_ref())?;
            write_file(&args.out.join("final.txt"), &report.to_text(&cfg))?;
            write_file(&args.out.join("predictions.csv"), &report.predictions_csv())?;
            say(stdout, format!("{} (n={})\n", report.summary(), report.eval.n));
            for w in &report.eval.warnings {
                say(stdout, format!("warning: {w}\n"));
            }
            Ok(0)
        }
        Command::Synth(args) => {
            let spec = args.spec()?;
            let mut echo = Vec::new();
            push(&mut echo, "users", args.users);
            push(&mut echo, "layers", args.layers);
            push(&mut echo, "hidden", args.hidden);
            push(&mut echo, "signal", args.signal.join(" "));
            push(&mut echo, "noise_sigma", args.noise_sigma);
            push(&mut echo, "distribution", &args.distribution);
            push(&mut echo, "granularity", spec.granularity);
            push(
                &mut echo,
                "messages",
                format!("{}..={}", args.min_messages, args.max_messages),
            );
            push(
                &mut echo,
                "tokens",
                format!("{}..={}", args.min_tokens, args.max_tokens),
            );
            push(&mut echo, "feature_scale", args.feature_scale);
            push(&mut echo, "token_sigma", args.token_sigma);
            push(
                &mut echo,
                "nonlinear",
                args.nonlinear.map(|k| k.to_string()).unwrap_or_else(|| "none".into()),
            );
            push(&mut echo, "seed", args.seed);
            push(&mut echo, "world_seed", args.world_seed);
            push(&mut echo, "prefix", &args.prefix);
            push(&mut echo, "model_name", &args.model_name);
            push(&mut echo, "stem", &args.stem);
            prepare_out(&args.out, "synth", &echo, threads)?;
            let out = synth::generate(&spec)?;
            let paths = synth::write_output(&out, &spec, &args.out, &args.stem)?;
            say(
                stdout,
                format!(
                    "wrote {} users to {} (bayes_mse {})\n",
                    out.corpus.len(),
                    paths.embeddings.display(),
                    out.truth.bayes_mse
                ),
            );
            Ok(0)
        }
        Command::Roundtrip(args) => {
            let original = std::fs::read(&args.embeddings).map_err(|e| Error::io(&args.embeddings, e))?;
            let store = EmbeddingStore::read_from(original.as_slice(), &args.embeddings)?;
            store.write(&args.out)?;
            let reread = EmbeddingStore::read(&args.out)?;
            let written = std::fs::read(&args.out).map_err(|e| Error::io(&args.out, e))?;
            if written == original && reread == store {
                say(
                    stdout,
                    format!("identical: {} bytes, {} records\n", written.len(), store.num_users()),
                );
                Ok(0)
            } else {
                say(stdout, "re-serialized bytes differ from the input\n".to_string());
                Ok(1)
            }
        }
    }
}
