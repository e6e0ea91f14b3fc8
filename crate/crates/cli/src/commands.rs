use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;

use dialpunct::align::{align_conversation, AlignConfig, MergeStats};
use dialpunct::dialogue::{class_histogram, read_dialogues, write_dialogues};
use dialpunct::eval::{render_punctuated, score};
use dialpunct::features::{frequency_ranking, load_embeddings, EmbeddingTable};
use dialpunct::ingest::{parse_ctm, parse_punct_transcript};
use dialpunct::kv::KeyValues;
use dialpunct::model::{load_checkpoint, predict_labels, save_checkpoint, Model, ModelConfig};
use dialpunct::synth::{generate, SynthConfig};
use dialpunct::training::{dialogue_windows, fit, select, split_corpus, Split, TrainConfig};
use dialpunct::{Dialogue, Error, PunctuationClass};

use crate::{AlignArgs, EvalArgs, PredictArgs, PrepareArgs, SynthArgs, TrainArgs};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const SPLIT_FILE: &str = "split.tsv";
pub const LOG_FILE: &str = "train_log.tsv";
pub const RUN_CONFIG_FILE: &str = "run.conf";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => e.fmt(f),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(Error::Config(_)) => 1,
            CliError::Core(Error::Divergence { .. }) => 3,
            CliError::Core(_) => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Core(e) => match e {
                Error::Parse { .. } => "parse",
                Error::Format(_) => "format",
                Error::Value(_) => "value",
                Error::MissingLabel { .. } => "missing_label",
                Error::Shape(_) => "shape",
                Error::DegenerateBatch => "degenerate_batch",
                Error::Corpus(_) => "corpus",
                Error::Config(_) => "config",
                Error::AlignmentTooLarge { .. } => "alignment_too_large",
                Error::Divergence { .. } => "divergence",
                Error::Checkpoint(_) => "checkpoint",
                Error::File { .. } | Error::Io(_) => "io",
            },
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::file(path, e).into())
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::file(path, e).into())
}

fn must_exist(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::file(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory")).into())
    }
}

fn write_corpus(path: &Path, dialogues: &[Dialogue]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::file(path, e))?;
    let mut out = BufWriter::new(file);
    write_dialogues(&mut out, dialogues)
        .and_then(|_| out.flush())
        .map_err(|e| Error::file(path, e).into())
}

fn read_corpus(path: &Path) -> Result<Vec<Dialogue>> {
    Ok(read_dialogues(&read(path)?).map_err(|e| with_path(path, e))?)
}

/// Prefixes parse errors with the file they came from.
fn with_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    }
}

fn pool(deterministic: bool) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if deterministic {
        builder = builder.num_threads(1);
    }
    builder.build().map_err(|e| CliError::Usage(format!("thread pool: {e}")))
}

fn align_pair(ctm: &Path, punct: &Path) -> Result<(Dialogue, MergeStats)> {
    let timed = parse_ctm(&read(ctm)?).map_err(|e| with_path(ctm, e))?;
    let punctuated = parse_punct_transcript(&read(punct)?).map_err(|e| with_path(punct, e))?;
    let id = match &timed.conversation {
        Some(id) => id.clone(),
        None => ctm
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| Error::Value(format!("{}: cannot derive a conversation id", ctm.display())))?,
    };
    Ok(align_conversation(&id, &timed.channels, &punctuated, &AlignConfig::default())?)
}

pub fn align(args: AlignArgs) -> Result<()> {
    let (dialogue, stats) = align_pair(&args.ctm, &args.punct)?;
    match &args.out {
        Some(path) => write_corpus(path, std::slice::from_ref(&dialogue))?,
        None => {
            let stdout = std::io::stdout();
            write_dialogues(stdout.lock(), [&dialogue]).map_err(Error::from)?;
        }
    }
    eprintln!("{stats}");
    Ok(())
}

pub fn prepare(args: PrepareArgs) -> Result<()> {
    must_exist(&args.ctm_dir)?;
    must_exist(&args.punct_dir)?;
    let mut pairs: Vec<(PathBuf, PathBuf)> = Vec::new();
    let entries = fs::read_dir(&args.ctm_dir).map_err(|e| Error::file(&args.ctm_dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::file(&args.ctm_dir, e))?.path();
        if path.extension().is_some_and(|e| e == "ctm") {
            let stem = path.file_stem().unwrap_or_default();
            let punct = args.punct_dir.join(stem).with_extension("txo");
            must_exist(&punct)?;
            pairs.push((path, punct));
        }
    }
    pairs.sort();
    if pairs.is_empty() {
        return Err(Error::Corpus(format!("no .ctm files in {}", args.ctm_dir.display())).into());
    }
    let results: Vec<Result<(Dialogue, MergeStats)>> =
        pool(args.deterministic)?.install(|| pairs.par_iter().map(|(c, p)| align_pair(c, p)).collect());
    let mut dialogues = Vec::with_capacity(results.len());
    let mut total = MergeStats::default();
    for r in results {
        let (d, s) = r?;
        total += s;
        dialogues.push(d);
    }
    // Reject duplicate ids early; training splits by id.
    split_corpus(&dialogues, [1.0, 1.0, 0.0], 0)?;
    write_corpus(&args.out, &dialogues)?;
    eprintln!("{total}");
    eprint!("{}", class_histogram(&dialogues)?);

    if let (Some(input), Some(output)) = (&args.embeddings, &args.embeddings_out) {
        let table = load_table(input, &frequency_ranking(&dialogues), args.vocab_size)?;
        let file = fs::File::create(output).map_err(|e| Error::file(output, e))?;
        let mut out = BufWriter::new(file);
        table
            .write(&mut out)
            .and_then(|_| out.flush())
            .map_err(|e| Error::file(output, e))?;
        eprintln!("embeddings: kept {} tokens", table.len());
    }
    Ok(())
}

fn load_table(path: &Path, ranking: &[String], cap: usize) -> Result<EmbeddingTable> {
    let file = fs::File::open(path).map_err(|e| Error::file(path, e))?;
    Ok(load_embeddings(BufReader::new(file), ranking, cap).map_err(|e| with_path(path, e))?)
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let mut kv = match &args.config {
        Some(path) => KeyValues::parse(&read(path)?).map_err(|e| with_path(path, e))?,
        None => KeyValues::default(),
    };
    if let Some(seed) = args.seed {
        kv.set("seed", seed);
    }
    let config = SynthConfig::take_from(&mut kv)?;
    kv.finish()?;
    let corpus = generate(&config, args.conversations, args.words)?;
    write_corpus(&args.out, &corpus.dialogues)?;
    if let Some(trace) = &args.trace {
        write(trace, &corpus.trace_tsv())?;
    }
    Ok(())
}

/// Everything `train` needs, resolved from the config file and flags.
#[derive(Debug)]
pub struct TrainSetup {
    pub corpus: PathBuf,
    pub embeddings: PathBuf,
    pub out_dir: PathBuf,
    pub vocab_size: usize,
    pub deterministic: bool,
    pub train: TrainConfig,
    pub model: ModelConfig,
}

impl TrainSetup {
    pub fn resolve(args: &TrainArgs) -> Result<Self> {
        let mut kv = match &args.config {
            Some(path) => KeyValues::parse(&read(path)?).map_err(|e| with_path(path, e))?,
            None => KeyValues::default(),
        };
        let overrides: [(&str, Option<String>); 10] = [
            ("corpus", args.corpus.as_ref().map(|p| p.display().to_string())),
            ("embeddings", args.embeddings.as_ref().map(|p| p.display().to_string())),
            ("out_dir", args.out_dir.as_ref().map(|p| p.display().to_string())),
            ("arch", args.arch.clone()),
            ("seed", args.seed.map(|s| s.to_string())),
            ("batch_size", args.batch_size.map(|s| s.to_string())),
            ("max_epochs", args.max_epochs.map(|s| s.to_string())),
            ("patience", args.patience.map(|s| s.to_string())),
            ("learning_rate", args.learning_rate.map(|s| s.to_string())),
            ("class_weighting", args.class_weighting.then(|| "true".to_string())),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                kv.set(key, v);
            }
        }
        if args.no_time_features {
            kv.set("use_time", false);
            kv.take_raw("time_features");
        }
        if args.deterministic {
            kv.set("deterministic", true);
        }
        let path = |kv: &mut KeyValues, key: &str| -> Result<PathBuf> {
            kv.take_raw(key)
                .map(PathBuf::from)
                .ok_or_else(|| CliError::Usage(format!("`{key}` is required (config key or --{})", key.replace('_', "-"))))
        };
        let corpus = path(&mut kv, "corpus")?;
        let embeddings = path(&mut kv, "embeddings")?;
        let out_dir = path(&mut kv, "out_dir")?;
        let vocab_size = kv.take_or("vocab_size", 50_000usize)?;
        let deterministic = kv.take_or("deterministic", false)?;
        let train = TrainConfig::take_from(&mut kv)?;
        let explicit_time = kv.contains("time_features");
        let mut model = ModelConfig::take_from(&mut kv)?;
        if explicit_time && model.time_features != train.use_time {
            return Err(Error::Config("time_features and use_time disagree".into()).into());
        }
        model.time_features = train.use_time;
        kv.finish()?;
        Ok(TrainSetup {
            corpus,
            embeddings,
            out_dir,
            vocab_size,
            deterministic,
            train,
            model,
        })
    }

    pub fn to_text(&self) -> String {
        format!(
            "corpus = {}\nembeddings = {}\nout_dir = {}\nvocab_size = {}\ndeterministic = {}\n{}{}",
            self.corpus.display(),
            self.embeddings.display(),
            self.out_dir.display(),
            self.vocab_size,
            self.deterministic,
            self.train.to_text(),
            self.model.to_text()
        )
    }
}

fn split_tsv(split: &Split) -> String {
    let mut out = String::new();
    for (part, ids) in [("train", &split.train), ("validation", &split.validation), ("test", &split.test)] {
        for id in ids {
            out.push_str(&format!("{id}\t{part}\n"));
        }
    }
    out
}

fn read_split(path: &Path, part: &str) -> Result<Vec<String>> {
    if !["train", "validation", "test"].contains(&part) {
        return Err(CliError::Usage(format!("unknown split part {part:?}")));
    }
    let text = read(path)?;
    let mut ids = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let (id, p) = line
            .split_once('\t')
            .ok_or_else(|| with_path(path, Error::Parse { line: i + 1, message: "expected `id<TAB>part`".into() }))?;
        if p == part {
            ids.push(id.to_string());
        }
    }
    Ok(ids)
}

pub fn train(args: TrainArgs) -> Result<()> {
    let setup = TrainSetup::resolve(&args)?;
    must_exist(&setup.corpus)?;
    must_exist(&setup.embeddings)?;
    let run = || -> Result<()> {
        let dialogues = read_corpus(&setup.corpus)?;
        let split = split_corpus(&dialogues, setup.train.ratios, setup.train.seed)?;
        let train_set = select(&dialogues, &split.train);
        let table = load_table(&setup.embeddings, &frequency_ranking(train_set.iter().copied()), setup.vocab_size)?;
        info!("{} embedding rows, {} training conversations", table.len(), train_set.len());
        let features = setup.train.feature_config();
        let (window, stride) = (setup.train.window, setup.train.stride);
        let train_windows = dialogue_windows(train_set, &table, features, window, stride)?;
        let val_windows = dialogue_windows(select(&dialogues, &split.validation), &table, features, window, stride)?;
        let (model, mut report) = fit(&setup.train, setup.model.clone(), &train_windows, &val_windows)?;

        let dir = &setup.out_dir;
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        let checkpoint = dir.join(CHECKPOINT_FILE);
        save_checkpoint(&model, &checkpoint)?;
        report.best_checkpoint = Some(checkpoint);
        write(&dir.join(VOCAB_FILE), &table.tokens().iter().map(|t| format!("{t}\n")).collect::<String>())?;
        write(&dir.join(SPLIT_FILE), &split_tsv(&split))?;
        write(&dir.join(LOG_FILE), &report.to_tsv())?;
        write(&dir.join(RUN_CONFIG_FILE), &setup.to_text())?;
        eprintln!(
            "best epoch {} of {}{}",
            report.best_epoch,
            report.stopping_epoch(),
            if report.stopped_early { " (stopped early)" } else { "" }
        );
        Ok(())
    };
    pool(setup.deterministic)?.install(run)
}

/// Loads the checkpoint and the embedding rows of its training vocabulary.
pub fn load_model_dir(dir: &Path, embeddings: &Path) -> Result<(Model<f32>, EmbeddingTable)> {
    let checkpoint = dir.join(CHECKPOINT_FILE);
    must_exist(&checkpoint)?;
    must_exist(embeddings)?;
    let model = load_checkpoint(&checkpoint)?;
    let vocab: Vec<String> = read(&dir.join(VOCAB_FILE))?.lines().map(str::to_string).collect();
    let table = load_table(embeddings, &vocab, vocab.len())?;
    Ok((model, table))
}

fn predict_all(model: &Model<f32>, table: &EmbeddingTable, dialogues: &[Dialogue], deterministic: bool) -> Result<Vec<Vec<PunctuationClass>>> {
    pool(deterministic)?.install(|| {
        dialogues
            .par_iter()
            .map(|d| predict_labels(model, d, table).map_err(CliError::from))
            .collect()
    })
}

pub fn predict(args: PredictArgs) -> Result<()> {
    must_exist(&args.input)?;
    let (model, table) = load_model_dir(&args.model_dir, &args.embeddings)?;
    let dialogues: Vec<Dialogue> = read_corpus(&args.input)?.iter().map(Dialogue::without_labels).collect();
    let labels = predict_all(&model, &table, &dialogues, args.deterministic)?;
    let labelled = dialogues
        .iter()
        .zip(&labels)
        .map(|(d, l)| d.with_labels(l))
        .collect::<dialpunct::Result<Vec<_>>>()?;
    write_corpus(&args.out, &labelled)?;
    if let Some(path) = &args.render {
        let mut text = String::new();
        for (d, l) in dialogues.iter().zip(&labels) {
            let r = render_punctuated(d, l)?;
            text.push_str(&format!("{}\tA\t{}\n{}\tB\t{}\n", d.id(), r.a, d.id(), r.b));
        }
        write(path, &text)?;
    }
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    must_exist(&args.corpus)?;
    let mut reference = read_corpus(&args.corpus)?;
    if let Some(part) = &args.part {
        let dir = args
            .model_dir
            .as_ref()
            .ok_or_else(|| CliError::Usage("--part needs --model-dir for its split file".into()))?;
        let ids = read_split(&dir.join(SPLIT_FILE), part)?;
        reference.retain(|d| ids.iter().any(|id| id == d.id()));
    }
    let predicted: Vec<Vec<PunctuationClass>> = match (&args.model_dir, &args.predictions) {
        (Some(dir), None) => {
            let embeddings = args
                .embeddings
                .as_ref()
                .ok_or_else(|| CliError::Usage("--model-dir needs --embeddings".into()))?;
            let (model, table) = load_model_dir(dir, embeddings)?;
            predict_all(&model, &table, &reference, args.deterministic)?
        }
        (None, Some(path)) => {
            must_exist(path)?;
            let predictions = read_corpus(path)?;
            reference
                .iter()
                .map(|d| {
                    let p = predictions
                        .iter()
                        .find(|p| p.id() == d.id())
                        .ok_or_else(|| Error::Corpus(format!("no predictions for {}", d.id())))?;
                    if p.len() != d.len() {
                        return Err(Error::Corpus(format!("{}: {} predicted words, {} reference words", d.id(), p.len(), d.len())).into());
                    }
                    Ok(p.labels()?)
                })
                .collect::<Result<_>>()?
        }
        _ => return Err(CliError::Usage("give exactly one of --model-dir and --predictions".into())),
    };
    let mut truth = Vec::new();
    for d in &reference {
        truth.extend(d.labels()?);
    }
    let pred: Vec<PunctuationClass> = predicted.into_iter().flatten().collect();
    let evaluation = score(&truth, &pred)?;
    print!("{}", evaluation.scores);
    match &args.matrix {
        Some(path) => write(path, &evaluation.confusion.to_tsv())?,
        None => print!("\n{}", evaluation.confusion.to_tsv()),
    }
    Ok(())
}
