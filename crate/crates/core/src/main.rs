use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ner_transfer::bilm::{finetune_bilm, train_bilm, BiLmModel, LmTraining};
use ner_transfer::corpus::{
    read_conll, read_plaintext, subsample, write_conll, write_conll_with_predictions, Corpus, LabeledCorpus,
    LabeledSentence, Split, TagScheme, UnlabeledCorpus,
};
use ner_transfer::harness::checkpoint::{load_checkpoint, save_checkpoint};
use ner_transfer::harness::config::{ExperimentConfig, Variant};
use ner_transfer::harness::pipeline::{grid_search_dropout, run_probe_suite, sweep_fractions};
use ner_transfer::harness::synth::{gen_synthetic, SyntheticSpec};
use ner_transfer::multitask::train_multitask;
use ner_transfer::tagger::{finetune_tagger, train_tagger, TaggerConfig, TaggerModel, TaggerTraining};
use ner_transfer::{Error, Result};

#[derive(Parser)]
#[command(name = "ner-transfer", version, about = "Pretrained biLM transfer for low-resource NER")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration; unspecified keys take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Start from the small desk-scale preset instead of the defaults.
    #[arg(long, global = true)]
    desk: bool,
    /// Overrides the seed list and the language-model seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Directory holding the benchmark corpora.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Compute gradients on one thread.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Args)]
struct Labeled {
    /// Training corpus (CoNLL, BIO tags).
    #[arg(long)]
    train: PathBuf,
    /// Development corpus used for early stopping.
    #[arg(long)]
    dev: PathBuf,
    /// Domain name recorded in the model name.
    #[arg(long, default_value = "target")]
    domain: String,
    /// Fraction of the training corpus to keep.
    #[arg(long, default_value_t = 1.0)]
    fraction: f64,
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
    /// Defaults to `--dropout`.
    #[arg(long)]
    elmo_dropout: Option<f64>,
}

#[derive(Args)]
struct Unlabeled {
    /// Training text, one whitespace-tokenised sentence per line.
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    #[arg(long)]
    domain: String,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic two-domain benchmark.
    GenSynth {
        /// TOML file describing the benchmark.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Use the reduced-vocabulary benchmark.
        #[arg(long)]
        small: bool,
    },
    /// Train a bidirectional language model.
    PretrainLm(Unlabeled),
    /// Continue training a language model on new text.
    FinetuneLm {
        #[arg(long)]
        lm: PathBuf,
        #[command(flatten)]
        data: Unlabeled,
    },
    /// Train a tagger, optionally on a frozen language model.
    TrainTagger {
        #[command(flatten)]
        data: Labeled,
        #[arg(long)]
        lm: Option<PathBuf>,
    },
    /// Transfer a tagger to a new label set and train it.
    FinetuneTagger {
        #[command(flatten)]
        data: Labeled,
        #[arg(long)]
        source: PathBuf,
    },
    /// Train a tagger with an auxiliary language-modelling loss.
    TrainMultitask {
        #[command(flatten)]
        data: Labeled,
    },
    /// Tag plain text, or a CoNLL file when `--conll` is given.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        conll: bool,
    },
    /// Span-level precision, recall and F1 on a labeled corpus.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Probe frozen language-model states on part-of-speech data.
    Probe,
    /// Run every configured variant over the configured fractions.
    Sweep,
    /// Dropout grid search for one variant, fraction and seed.
    Grid {
        #[arg(long)]
        variant: Variant,
        #[arg(long)]
        fraction: f64,
    },
}

fn resolve(common: &Common) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None if common.desk => ExperimentConfig::desk(),
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seeds = vec![seed];
        config.lm_seed = seed;
    }
    if let Some(out) = &common.out {
        config.out_dir = out.clone();
    }
    if let Some(data) = &common.data {
        config.data_dir = data.clone();
    }
    if common.sequential {
        config.parallel = false;
    }
    config.validate()?;
    Ok(config)
}

fn domain_of(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn save_model(config: &ExperimentConfig, name: &str, checkpoint: &ner_transfer::harness::checkpoint::Checkpoint) -> Result<()> {
    let stem: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    let path = config.out_dir.join(format!("{stem}.ckpt"));
    save_checkpoint(&path, checkpoint)?;
    println!("saved {name} to {}", path.display());
    Ok(())
}

fn load_tagger(path: &Path) -> Result<TaggerModel> {
    TaggerModel::from_checkpoint(&load_checkpoint(path)?)
}

fn load_lm(path: &Path) -> Result<BiLmModel> {
    BiLmModel::from_checkpoint(&load_checkpoint(path)?)
}

fn unlabeled(args: &Unlabeled) -> Result<(UnlabeledCorpus, UnlabeledCorpus)> {
    Ok((
        read_plaintext(&args.train, Split::Train, &args.domain)?,
        read_plaintext(&args.dev, Split::Dev, &args.domain)?,
    ))
}

fn labeled(config: &ExperimentConfig, args: &Labeled) -> Result<(LabeledCorpus, LabeledCorpus, TaggerConfig)> {
    let seed = config.seeds[0];
    let train = read_conll(&args.train, TagScheme::Bio, Split::Train, &args.domain)?;
    let train = subsample(&train, args.fraction, seed)?;
    let dev = read_conll(&args.dev, TagScheme::Bio, Split::Dev, &args.domain)?;
    let cfg = config.tagger_config(args.dropout, args.elmo_dropout.unwrap_or(args.dropout));
    Ok((train, dev, cfg))
}

fn report_lm(config: &ExperimentConfig, t: LmTraining) -> Result<()> {
    println!("{}: best epoch {}, dev perplexity {:.4}", t.model.name(), t.best_epoch, t.dev.joint);
    save_model(config, t.model.name(), &t.model.to_checkpoint())
}

fn report_tagger(config: &ExperimentConfig, t: TaggerTraining) -> Result<()> {
    println!("{}: best epoch {}, dev F1 {:.4}", t.model.name(), t.best_epoch, t.dev_f1);
    save_model(config, t.model.name(), &t.model.to_checkpoint())
}

fn run(cli: Cli) -> Result<()> {
    let config = resolve(&cli.common)?;
    let par = config.parallelism();
    let seed = config.seeds[0];
    if let Command::GenSynth { spec, small } = &cli.command {
        let spec = match spec {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?
            }
            None if *small => SyntheticSpec::small(),
            None => SyntheticSpec::default(),
        };
        println!("seed = {seed}\n{}", toml::to_string(&spec).expect("spec serializes"));
        let out = cli.common.out.clone().unwrap_or_else(|| config.data_dir.clone());
        gen_synthetic(&spec, seed)?.write(&out)?;
        println!("wrote benchmark to {}", out.display());
        return Ok(());
    }
    println!("{}", config.to_toml());

    match cli.command {
        Command::GenSynth { .. } => unreachable!("handled above"),
        Command::PretrainLm(args) => {
            let (train, dev) = unlabeled(&args)?;
            report_lm(&config, train_bilm(&train, &dev, &config.lm_config(), &config.lm_settings(), par)?)
        }
        Command::FinetuneLm { lm, data } => {
            let base = load_lm(&lm)?;
            let (train, dev) = unlabeled(&data)?;
            report_lm(&config, finetune_bilm(&base, &train, &dev, &config.lm_settings(), par)?)
        }
        Command::TrainTagger { data, lm } => {
            let lm = lm.as_deref().map(load_lm).transpose()?;
            let (train, dev, cfg) = labeled(&config, &data)?;
            let settings = config.train_settings(seed);
            report_tagger(&config, train_tagger(&train, &dev, lm.as_ref(), &cfg, &settings, par)?)
        }
        Command::FinetuneTagger { data, source } => {
            let source = load_tagger(&source)?;
            let (train, dev, cfg) = labeled(&config, &data)?;
            let settings = config.train_settings(seed);
            report_tagger(&config, finetune_tagger(&source, &train, &dev, &cfg, &settings, par)?)
        }
        Command::TrainMultitask { data } => {
            let (train, dev, cfg) = labeled(&config, &data)?;
            let cfg = TaggerConfig {
                lm_gamma: Some(config.gamma),
                ..cfg
            };
            report_tagger(&config, train_multitask(&train, &dev, &cfg, &config.train_settings(seed), par)?)
        }
        Command::Predict {
            model,
            input,
            output,
            conll,
        } => {
            let model = load_tagger(&model)?;
            let domain = domain_of(&input);
            if conll {
                let corpus = read_conll(&input, TagScheme::Opaque, Split::Test, &domain)?;
                let words: Vec<Vec<String>> = corpus.sentences.iter().map(|s| s.words.clone()).collect();
                let predicted = model.predict(&words, par)?;
                write_conll_with_predictions(&output, &corpus, &predicted)?;
            } else {
                let corpus = read_plaintext(&input, Split::Test, &domain)?;
                let predicted = model.predict(&corpus.sentences, par)?;
                let sentences = corpus
                    .sentences
                    .into_iter()
                    .zip(predicted)
                    .map(|(w, t)| LabeledSentence::new(w, t))
                    .collect();
                write_conll(&output, &Corpus::new(sentences, Split::Test, domain))?;
            }
            println!("wrote predictions to {}", output.display());
            Ok(())
        }
        Command::Evaluate { model, input } => {
            let model = load_tagger(&model)?;
            let corpus = read_conll(&input, TagScheme::Bio, Split::Test, &domain_of(&input))?;
            print!("{}", model.evaluate(&corpus, par)?);
            Ok(())
        }
        Command::Probe => {
            print!("{}", run_probe_suite(&config)?.to_text());
            Ok(())
        }
        Command::Sweep => {
            print!("{}", sweep_fractions(&config)?.to_text());
            Ok(())
        }
        Command::Grid { variant, fraction } => {
            let outcome = grid_search_dropout(&config, variant, fraction, seed)?;
            for p in &outcome.points {
                println!("dropout {} elmo {}\tdev F1 {:.4}", p.dropout, p.elmo_dropout, p.dev_f1);
            }
            let b = &outcome.best;
            println!("selected dropout {} elmo {} ({})", b.dropout, b.elmo_dropout, b.checkpoint.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
