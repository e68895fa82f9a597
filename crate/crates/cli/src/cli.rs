//! Command-line interface.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use biasmeta::measures::pairs::{import_crows_pairs, write_pairs};
use biasmeta::probes::default_occupations;
use biasmeta::synth::{generate, SynthMix};
use clap::{Args, Parser, Subcommand};

use crate::config::{parse_rate, parse_rates, resolve, Backend, Settings};
use crate::manifest::Run;
use crate::stages;

pub const DEMO_CORPUS: &str = include_str!("../data/demo_corpus.txt");
pub const DEMO_CONFIG: &str = include_str!("../data/demo.conf");
pub const DEMO_CORPUS_FILE: &str = "demo_corpus.txt";

/// Invalid invocation or configuration; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn rates_arg(s: &str) -> std::result::Result<String, String> {
    parse_rates(s).map(|_| s.to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "biasmeta",
    version,
    about = "Fine-tune masked LMs at controlled rates of gender bias and check how well intrinsic bias measures track the rate"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true, env = "BIASMETA_CONFIG")]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true, env = "BIASMETA_SEED")]
    pub seed: Option<u64>,
    /// Raw text corpus, one sentence per line.
    #[arg(long, global = true, env = "BIASMETA_CORPUS")]
    pub corpus: Option<PathBuf>,
    /// Rates of bias: a list `0,0.5,1` or a grid `0:0.1:1`.
    #[arg(long, global = true, env = "BIASMETA_RATES", value_parser = rates_arg)]
    pub rates: Option<String>,
    /// Sentences per gender in every training set.
    #[arg(long, global = true, env = "BIASMETA_N")]
    pub n: Option<usize>,
    /// Scoring backend: tinymlm or dump.
    #[arg(long, global = true, env = "BIASMETA_BACKEND")]
    pub backend: Option<Backend>,
    /// Run directory.
    #[arg(long, global = true, env = "BIASMETA_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract female-only and male-only sentences and evaluation pairs.
    Mine,
    /// Draw the training set of every rate; with --r, print one set.
    Sample {
        #[arg(long, value_parser = parse_rate)]
        r: Option<f64>,
    },
    /// Train the base masked LM on the mined sentences.
    Pretrain,
    /// Fine-tune one copy of the base model per rate.
    FinetuneSweep,
    /// Write the scoring requests of every measure and the probe.
    EmitRequests,
    /// Answer the request file with one of the run's models.
    Answer {
        /// Model key, `base` or `r0.300` style.
        #[arg(long)]
        model: String,
        #[arg(long)]
        output: PathBuf,
    },
    /// Validate and store an external backend's responses for one model.
    IngestResponses {
        #[arg(long)]
        model: String,
        #[arg(long)]
        responses: PathBuf,
        /// Rate of bias of the model; read from the key when omitted.
        #[arg(long, value_parser = parse_rate)]
        r: Option<f64>,
    },
    /// Score every model with every configured measure.
    Measure,
    /// Correlate measure scores with the rate of bias.
    Metaeval,
    /// Pronoun probabilities for occupations, and top-k fillers.
    Probe,
    /// Bundle the results and print the report hash.
    Report,
    /// Every stage with the local model.
    Run,
    /// The whole pipeline on the bundled demo corpus.
    Demo,
    /// Write a synthetic corpus.
    GenCorpus {
        #[arg(long, default_value_t = 2000)]
        lines: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Convert a CrowS-Pairs style CSV into an evaluation pairs file.
    ImportPairs {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Print the resolved configuration.
    Config,
}

impl GlobalArgs {
    fn overrides(&self) -> BTreeMap<String, String> {
        let mut o = BTreeMap::new();
        if let Some(v) = self.seed {
            o.insert("seed".into(), v.to_string());
        }
        if let Some(v) = &self.corpus {
            o.insert("corpus".into(), v.display().to_string());
        }
        if let Some(v) = &self.rates {
            o.insert("rates".into(), v.clone());
        }
        if let Some(v) = self.n {
            o.insert("n".into(), v.to_string());
        }
        if let Some(v) = self.backend {
            o.insert("backend".into(), v.to_string());
        }
        o
    }

    fn settings(&self) -> Result<Settings> {
        resolve(self.config.as_deref(), &self.overrides()).map_err(|e| usage(format!("{e:#}")))
    }

    fn out_dir(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| usage("no run directory; pass --out or set BIASMETA_OUT"))
    }

    fn open_run(&self) -> Result<Run> {
        let settings = self.settings()?;
        Run::open(self.out_dir()?, settings)
    }
}

/// Demo settings: the bundled config, then the usual overrides, with the
/// corpus written into the run directory.
fn demo_run(global: &GlobalArgs) -> Result<Run> {
    let out = global.out_dir()?;
    fs::create_dir_all(out)?;
    let corpus = out.join(DEMO_CORPUS_FILE);
    fs::write(&corpus, DEMO_CORPUS)?;
    let mut settings = Settings::from_text(DEMO_CONFIG)?;
    if let Some(path) = &global.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        for (k, v) in crate::config::parse_pairs(&text)? {
            settings.set(&k, &v).map_err(|e| usage(format!("{e:#}")))?;
        }
    }
    let mut overrides = global.overrides();
    overrides.remove("corpus");
    overrides.insert("corpus".into(), corpus.display().to_string());
    for (k, v) in &overrides {
        settings.set(k, v).map_err(|e| usage(format!("{e:#}")))?;
    }
    settings.validate().map_err(|e| usage(format!("{e:#}")))?;
    Run::open(out, settings)
}

pub fn execute(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Mine => stages::mine(&mut g.open_run()?),
        Command::Sample { r: Some(r) } => {
            let ds = stages::sample_one(&g.open_run()?, r)?;
            println!("{}", serde_json::to_string(&ds)?);
            Ok(())
        }
        Command::Sample { r: None } => stages::sample(&mut g.open_run()?),
        Command::Pretrain => stages::pretrain(&mut g.open_run()?),
        Command::FinetuneSweep => stages::finetune_sweep(&mut g.open_run()?),
        Command::EmitRequests => stages::emit_requests(&mut g.open_run()?),
        Command::Answer { model, output } => {
            let n = stages::answer(&g.open_run()?, &model, &output)?;
            eprintln!("answer: {n} responses written to {}", output.display());
            Ok(())
        }
        Command::IngestResponses { model, responses, r } => {
            stages::ingest_responses(&mut g.open_run()?, &model, &responses, r)
        }
        Command::Measure => stages::measure(&mut g.open_run()?),
        Command::Metaeval => {
            let table = stages::metaeval(&mut g.open_run()?)?;
            print!("{table}");
            Ok(())
        }
        Command::Probe => stages::probe(&mut g.open_run()?),
        Command::Report => {
            println!("{}", stages::report(&mut g.open_run()?)?);
            Ok(())
        }
        Command::Run => {
            let hash = stages::run_all(&mut g.open_run()?)?;
            println!("report sha256 {hash}");
            Ok(())
        }
        Command::Demo => {
            let hash = stages::run_all(&mut demo_run(g)?)?;
            println!("report sha256 {hash}");
            Ok(())
        }
        Command::GenCorpus { lines, output } => {
            let seed = g.seed.unwrap_or(Settings::default().seed);
            let occs = default_occupations();
            let refs: Vec<&str> = occs.iter().map(String::as_str).collect();
            let text = generate(SynthMix::for_total(lines), &refs, seed).join("\n") + "\n";
            fs::write(&output, text).with_context(|| format!("writing {}", output.display()))
        }
        Command::ImportPairs { csv, output } => {
            let settings = g.settings()?;
            let lex = stages::load_lexicon(&settings)?;
            let file = fs::File::open(&csv).with_context(|| format!("opening {}", csv.display()))?;
            let (pairs, skipped) = import_crows_pairs(file, &lex)?;
            let mut w = std::io::BufWriter::new(fs::File::create(&output)?);
            write_pairs(&mut w, &pairs)?;
            w.flush()?;
            eprintln!("import-pairs: {} pairs, {skipped} rows skipped", pairs.len());
            Ok(())
        }
        Command::Config => {
            print!("{}", g.settings()?.to_text());
            Ok(())
        }
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                2
            } else {
                1
            }
        }
    }
}
