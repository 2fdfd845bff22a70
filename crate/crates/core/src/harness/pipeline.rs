//! Orchestration of pipeline variants, dropout grid search and
//! data-fraction sweeps.
//!
//! A run proceeds in phases: language models, source-domain taggers,
//! target-domain cells (one per variant, fraction, seed and grid point),
//! and final evaluation. Target test data is only readable in the last
//! phase. Language models and source taggers are cached on disk under a
//! key derived from everything that determines them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bilm::{corpus_fingerprint, finetune_bilm, train_bilm, BiLmModel};
use crate::corpus::conll::write_all;
use crate::corpus::{read_conll, read_plaintext, subsample, LabeledCorpus, Split, TagScheme, UnlabeledCorpus};
use crate::error::{Error, Result};
use crate::harness::checkpoint::{config_hash, load_checkpoint, save_checkpoint, LineageEntry};
use crate::harness::config::{ExperimentConfig, Variant};
use crate::harness::synth::{files, GENERIC, SOURCE, TARGET};
use crate::multitask::train_multitask;
use crate::parallel::Parallelism;
use crate::probe::{most_frequent_tag, probe_corpus, probe_settings, FrozenModel, ProbeReport, RepresentationSource};
use crate::tagger::{finetune_tagger, train_tagger, TaggerConfig, TaggerModel};

/// Who a corpus belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    /// Generic-domain unlabeled text.
    Generic,
    /// Source-domain unlabeled text.
    SourceUnlabeled,
    /// Source-domain labeled data.
    SourceLabeled,
    /// Target-domain labeled data.
    Target,
    /// Part-of-speech data for probing.
    Probe,
}

impl Role {
    fn file(self, split: Split) -> Option<&'static str> {
        Some(match (self, split) {
            (Role::Generic, Split::Train) => files::GENERIC,
            (Role::Generic, Split::Dev) => files::GENERIC_DEV,
            (Role::SourceUnlabeled, Split::Train) => files::SOURCE_UNLABELED,
            (Role::SourceUnlabeled, Split::Dev) => files::SOURCE_UNLABELED_DEV,
            (Role::SourceLabeled, Split::Train) => files::SOURCE_TRAIN,
            (Role::SourceLabeled, Split::Dev) => files::SOURCE_DEV,
            (Role::Target, Split::Train) => files::TARGET_TRAIN,
            (Role::Target, Split::Dev) => files::TARGET_DEV,
            (Role::Target, Split::Test) => files::TARGET_TEST,
            (Role::Probe, Split::Train) => files::PROBE_TRAIN,
            (Role::Probe, Split::Dev) => files::PROBE_DEV,
            _ => return None,
        })
    }

    fn splits(self) -> &'static [Split] {
        match self {
            Role::Target => &[Split::Train, Split::Dev, Split::Test],
            _ => &[Split::Train, Split::Dev],
        }
    }

    fn domain(self) -> &'static str {
        match self {
            Role::Generic => GENERIC,
            Role::SourceUnlabeled | Role::SourceLabeled | Role::Probe => SOURCE,
            Role::Target => TARGET,
        }
    }
}

/// One entry of the access log.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Access {
    Corpus { role: Role, split: Split },
    LanguageModel { name: String },
}

/// Corpus reader that only serves declared roles, refuses target test
/// data before final evaluation, and logs every access.
#[derive(Debug)]
pub struct CorpusStore {
    dir: PathBuf,
    roles: BTreeSet<Role>,
    final_eval: AtomicBool,
    log: Mutex<Vec<Access>>,
}

impl CorpusStore {
    /// Fails with a data error if any file of a declared role is missing.
    pub fn open(dir: &Path, roles: BTreeSet<Role>) -> Result<Self> {
        for &role in &roles {
            for &split in role.splits() {
                let path = dir.join(role.file(split).expect("declared split"));
                if !path.is_file() {
                    return Err(Error::data(path, None, format!("missing {role:?} {split} corpus")));
                }
            }
        }
        Ok(CorpusStore {
            dir: dir.to_path_buf(),
            roles,
            final_eval: AtomicBool::new(false),
            log: Mutex::new(Vec::new()),
        })
    }

    fn path(&self, role: Role, split: Split) -> Result<PathBuf> {
        if !self.roles.contains(&role) {
            return Err(Error::config(format!("{role:?} data is outside this run's scope")));
        }
        if role == Role::Target && split == Split::Test && !self.final_eval.load(Ordering::SeqCst) {
            return Err(Error::config("target test data requested before final evaluation"));
        }
        let file = role
            .file(split)
            .ok_or_else(|| Error::config(format!("{role:?} has no {split} split")))?;
        self.log.lock().expect("log lock").push(Access::Corpus { role, split });
        Ok(self.dir.join(file))
    }

    pub fn labeled(&self, role: Role, split: Split) -> Result<LabeledCorpus> {
        let scheme = if role == Role::Probe { TagScheme::Opaque } else { TagScheme::Bio };
        read_conll(&self.path(role, split)?, scheme, split, role.domain())
    }

    pub fn unlabeled(&self, role: Role, split: Split) -> Result<UnlabeledCorpus> {
        read_plaintext(&self.path(role, split)?, split, role.domain())
    }

    pub fn begin_final_eval(&self) {
        self.final_eval.store(true, Ordering::SeqCst);
    }

    fn note_lm(&self, name: &str) {
        self.log.lock().expect("log lock").push(Access::LanguageModel { name: name.into() });
    }

    pub fn log(&self) -> Vec<Access> {
        self.log.lock().expect("log lock").clone()
    }
}

/// Language models a run can depend on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum LmKind {
    /// `LM[generic]`.
    Generic,
    /// `LM[generic-source]`.
    GenericSource,
    /// `LM[source]`.
    Source,
}

struct Needs {
    lm: Option<LmKind>,
    /// Source tagger, with or without the generic LM.
    source: Option<bool>,
    roles: &'static [Role],
}

fn needs(variant: Variant) -> Needs {
    use Role::*;
    match variant {
        Variant::Baseline | Variant::Multitask => Needs {
            lm: None,
            source: None,
            roles: &[Target],
        },
        Variant::SupervisedFt => Needs {
            lm: Some(LmKind::Generic),
            source: Some(true),
            roles: &[Generic, SourceLabeled, Target],
        },
        Variant::UnsupervisedFt => Needs {
            lm: Some(LmKind::GenericSource),
            source: None,
            roles: &[Generic, SourceUnlabeled, Target],
        },
        Variant::AblationSupSt => Needs {
            lm: None,
            source: Some(false),
            roles: &[SourceLabeled, Target],
        },
        Variant::AblationLmGeneric => Needs {
            lm: Some(LmKind::Generic),
            source: None,
            roles: &[Generic, Target],
        },
        Variant::AblationLmIndomain => Needs {
            lm: Some(LmKind::Source),
            source: None,
            roles: &[SourceUnlabeled, Target],
        },
    }
}

/// One grid point of one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub variant: Variant,
    pub fraction: f64,
    pub seed: u64,
    pub dropout: f64,
    pub elmo_dropout: f64,
    pub dev_f1: f64,
    pub epochs: usize,
    pub model: String,
    pub model_id: String,
    pub checkpoint: PathBuf,
}

/// Index of the best point by dev F1; ties go to the lower dropout pair.
pub fn select_best(points: &[GridPoint]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, p) in points.iter().enumerate() {
        best = match best {
            None => Some(i),
            Some(b) => {
                let q = &points[b];
                let better = p.dev_f1 > q.dev_f1
                    || (p.dev_f1 == q.dev_f1 && (p.dropout, p.elmo_dropout) < (q.dropout, q.elmo_dropout));
                Some(if better { i } else { b })
            }
        };
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub variant: Variant,
    pub model: String,
    pub fraction: f64,
    pub seed: u64,
    pub train_sentences: usize,
    pub dev_f1: f64,
    pub test_f1: f64,
    pub dropout: f64,
    pub elmo_dropout: f64,
}

/// One row per completed (variant, fraction, seed) run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
}

const TSV_HEADER: &str = "variant\tmodel\tfraction\tseed\ttrain_sentences\tdev_f1\ttest_f1\tdropout\telmo_dropout";

impl ResultsTable {
    pub fn mean_test_f1(&self, variant: Variant, fraction: f64) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.variant == variant && r.fraction == fraction)
            .map(|r| r.test_f1)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn variants(&self) -> Vec<Variant> {
        let s: BTreeSet<Variant> = self.rows.iter().map(|r| r.variant).collect();
        s.into_iter().collect()
    }

    pub fn fractions(&self) -> Vec<f64> {
        let mut f: Vec<f64> = self.rows.iter().map(|r| r.fraction).collect();
        f.sort_by(f64::total_cmp);
        f.dedup();
        f
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("{TSV_HEADER}\n");
        for r in &self.rows {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{}\t{}",
                r.variant, r.model, r.fraction, r.seed, r.train_sentences, r.dev_f1, r.test_f1, r.dropout, r.elmo_dropout
            )
            .expect("string write");
        }
        out
    }

    /// Aligned rows followed by the mean test F1 (×100) per variant and
    /// fraction.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let width = self.rows.iter().map(|r| r.model.len()).max().unwrap_or(5).max(5);
        writeln!(
            out,
            "{:<20} {:<width$} {:>8} {:>4} {:>6} {:>7} {:>7} {:>7} {:>7}",
            "variant", "model", "fraction", "seed", "train", "dev_f1", "test_f1", "dropout", "elmo_do"
        )
        .expect("string write");
        for r in &self.rows {
            writeln!(
                out,
                "{:<20} {:<width$} {:>8} {:>4} {:>6} {:>7.2} {:>7.2} {:>7} {:>7}",
                r.variant.as_str(),
                r.model,
                r.fraction,
                r.seed,
                r.train_sentences,
                100.0 * r.dev_f1,
                100.0 * r.test_f1,
                r.dropout,
                r.elmo_dropout
            )
            .expect("string write");
        }
        let fractions = self.fractions();
        write!(out, "\nmean test F1\n{:<20}", "variant").expect("string write");
        for f in &fractions {
            write!(out, " {:>7}", format!("{}%", f * 100.0)).expect("string write");
        }
        out.push('\n');
        for v in self.variants() {
            write!(out, "{:<20}", v.as_str()).expect("string write");
            for &f in &fractions {
                match self.mean_test_f1(v, f) {
                    Some(m) => write!(out, " {:>7.2}", 100.0 * m),
                    None => write!(out, " {:>7}", "-"),
                }
                .expect("string write");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub name: String,
    pub id: String,
    pub path: PathBuf,
}

/// Provenance of one pipeline invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub data: BTreeMap<String, String>,
    /// Upstream checkpoints consumed by the target-domain runs.
    pub lineage: Vec<LineageEntry>,
    pub artifacts: Vec<Artifact>,
    /// Digest of every field above.
    pub hash: String,
    pub wall_clock_seconds: f64,
}

#[derive(Debug)]
pub struct PipelineOutcome {
    pub table: ResultsTable,
    pub grid: Vec<GridPoint>,
    pub manifest: RunManifest,
    pub log: Vec<Access>,
}

/// Mutable state of one pipeline invocation.
struct Run<'a> {
    config: &'a ExperimentConfig,
    store: CorpusStore,
    par: Parallelism,
    lms: BTreeMap<LmKind, BiLmModel>,
    sources: BTreeMap<(bool, u64, u64, u64), TaggerModel>,
    artifacts: Mutex<Vec<Artifact>>,
    data: Mutex<BTreeMap<String, String>>,
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn dropout_tag(d: f64) -> u64 {
    (d * 1000.0).round() as u64
}

impl Run<'_> {
    fn out(&self) -> &Path {
        &self.config.out_dir
    }

    fn record(&self, name: &str, id: &str, path: &Path) {
        self.artifacts.lock().expect("artifact lock").push(Artifact {
            name: name.into(),
            id: id.into(),
            path: path.strip_prefix(self.out()).unwrap_or(path).to_path_buf(),
        });
    }

    fn fingerprint<S: crate::corpus::Words>(&self, key: String, corpus: &crate::corpus::Corpus<S>) -> String {
        let fp = corpus_fingerprint(corpus);
        self.data.lock().expect("data lock").insert(key, fp.clone());
        fp
    }

    fn unlabeled_pair(&self, role: Role) -> Result<(UnlabeledCorpus, UnlabeledCorpus)> {
        let train = self.store.unlabeled(role, Split::Train)?;
        let dev = self.store.unlabeled(role, Split::Dev)?;
        self.fingerprint(format!("{role:?}/train"), &train);
        self.fingerprint(format!("{role:?}/dev"), &dev);
        Ok((train, dev))
    }

    fn labeled_pair(&self, role: Role) -> Result<(LabeledCorpus, LabeledCorpus)> {
        let train = self.store.labeled(role, Split::Train)?;
        let dev = self.store.labeled(role, Split::Dev)?;
        self.fingerprint(format!("{role:?}/train"), &train);
        self.fingerprint(format!("{role:?}/dev"), &dev);
        Ok((train, dev))
    }

    /// Train or load from cache.
    fn language_model(&mut self, kind: LmKind) -> Result<BiLmModel> {
        if let Some(m) = self.lms.get(&kind) {
            return Ok(m.clone());
        }
        let cfg = self.config.lm_config();
        let settings = self.config.lm_settings();
        let parent = match kind {
            LmKind::GenericSource => Some(self.language_model(LmKind::Generic)?),
            _ => None,
        };
        let role = if kind == LmKind::Generic { Role::Generic } else { Role::SourceUnlabeled };
        let (train, dev) = self.unlabeled_pair(role)?;
        let key = config_hash(&(
            "lm",
            &cfg,
            &settings,
            corpus_fingerprint(&train),
            corpus_fingerprint(&dev),
            parent.as_ref().map(|p| p.id().to_string()),
        ));
        let stem = match (&parent, kind) {
            (Some(p), _) => crate::bilm::derived_name(p.name(), &train.domain),
            _ => format!("LM[{}]", train.domain),
        };
        let path = self.out().join("lm").join(format!("{}-{key}.ckpt", file_stem(&stem)));
        let model = if path.is_file() {
            log::info!("loading cached {stem} from {}", path.display());
            BiLmModel::from_checkpoint(&load_checkpoint(&path)?)?
        } else {
            log::info!("training {stem}");
            let trained = match &parent {
                Some(p) => finetune_bilm(p, &train, &dev, &settings, self.par)?,
                None => train_bilm(&train, &dev, &cfg, &settings, self.par)?,
            };
            log::info!("{stem}: dev perplexity {:.3}", trained.dev.joint);
            save_checkpoint(&path, &trained.model.to_checkpoint())?;
            trained.model
        };
        self.store.note_lm(model.name());
        self.record(model.name(), model.id(), &path);
        self.lms.insert(kind, model.clone());
        Ok(model)
    }

    fn source_taggers(&mut self, with_lm: bool) -> Result<()> {
        let lm = if with_lm { Some(self.language_model(LmKind::Generic)?) } else { None };
        let (train, dev) = self.labeled_pair(Role::SourceLabeled)?;
        let jobs: Vec<(u64, (f64, f64))> = self
            .config
            .seeds
            .iter()
            .flat_map(|&s| self.config.dropout_points().into_iter().map(move |d| (s, d)))
            .filter(|(s, (d, e))| !self.sources.contains_key(&(with_lm, *s, dropout_tag(*d), dropout_tag(*e))))
            .collect();
        let run = &*self;
        let trained = self.par.map(&jobs, |&(seed, (d, e))| -> Result<TaggerModel> {
            let cfg = run.config.tagger_config(d, e);
            let settings = run.config.train_settings(seed);
            let key = config_hash(&(
                "source",
                &cfg,
                &settings,
                corpus_fingerprint(&train),
                corpus_fingerprint(&dev),
                lm.as_ref().map(|m| m.id().to_string()),
            ));
            let name = match &lm {
                Some(m) => format!("{}_Sup[{}]", m.name(), train.domain),
                None => format!("Sup[{}]", train.domain),
            };
            let path = run
                .out()
                .join("source")
                .join(format!("{}-s{seed}-d{}-e{}-{key}.ckpt", file_stem(&name), dropout_tag(d), dropout_tag(e)));
            let model = if path.is_file() {
                TaggerModel::from_checkpoint(&load_checkpoint(&path)?)?
            } else {
                let t = train_tagger(&train, &dev, lm.as_ref(), &cfg, &settings, run.par)?;
                log::info!("{name} seed {seed} dropout {d}/{e}: dev F1 {:.4}", t.dev_f1);
                save_checkpoint(&path, &t.model.to_checkpoint())?;
                t.model
            };
            run.record(model.name(), model.id(), &path);
            Ok(model)
        });
        for ((seed, (d, e)), model) in jobs.into_iter().zip(trained) {
            self.sources.insert((with_lm, seed, dropout_tag(d), dropout_tag(e)), model?);
        }
        Ok(())
    }

    fn cell(
        &self,
        variant: Variant,
        fraction: f64,
        seed: u64,
        (d, e): (f64, f64),
        train: &LabeledCorpus,
        dev: &LabeledCorpus,
    ) -> Result<(GridPoint, TaggerModel)> {
        let cfg = self.config.tagger_config(d, e);
        let settings = self.config.train_settings(seed);
        let source = |with_lm: bool| -> &TaggerModel {
            &self.sources[&(with_lm, seed, dropout_tag(d), dropout_tag(e))]
        };
        let trained = match variant {
            Variant::Baseline => train_tagger(train, dev, None, &cfg, &settings, self.par)?,
            Variant::Multitask => {
                let cfg = TaggerConfig {
                    lm_gamma: Some(self.config.gamma),
                    ..cfg
                };
                train_multitask(train, dev, &cfg, &settings, self.par)?
            }
            Variant::SupervisedFt => finetune_tagger(source(true), train, dev, &cfg, &settings, self.par)?,
            Variant::AblationSupSt => finetune_tagger(source(false), train, dev, &cfg, &settings, self.par)?,
            Variant::UnsupervisedFt | Variant::AblationLmGeneric | Variant::AblationLmIndomain => {
                let kind = needs(variant).lm.expect("LM variant");
                train_tagger(train, dev, Some(&self.lms[&kind]), &cfg, &settings, self.par)?
            }
        };
        let model = trained.model;
        let path = self
            .out()
            .join("runs")
            .join(variant.as_str())
            .join(format!("f{}", dropout_tag(fraction)))
            .join(format!("s{seed}-d{}-e{}.ckpt", dropout_tag(d), dropout_tag(e)));
        save_checkpoint(&path, &model.to_checkpoint())?;
        self.record(model.name(), model.id(), &path);
        log::info!(
            "{variant} {fraction} seed {seed} dropout {d}/{e}: dev F1 {:.4} after {} epochs",
            trained.dev_f1,
            trained.history.len()
        );
        Ok((
            GridPoint {
                variant,
                fraction,
                seed,
                dropout: d,
                elmo_dropout: e,
                dev_f1: trained.dev_f1,
                epochs: trained.history.len(),
                model: model.name().to_string(),
                model_id: model.id().to_string(),
                checkpoint: path.strip_prefix(self.out()).unwrap_or(&path).to_path_buf(),
            },
            model,
        ))
    }
}

/// Run every configured variant over every fraction and seed, grid-search
/// the dropout per cell, and write checkpoints, results and a manifest to
/// `config.out_dir`.
pub fn run_pipeline(config: &ExperimentConfig) -> Result<PipelineOutcome> {
    config.validate()?;
    let started = Instant::now();
    let roles: BTreeSet<Role> = config.variants.iter().flat_map(|&v| needs(v).roles.iter().copied()).collect();
    let store = CorpusStore::open(&config.data_dir, roles)?;
    fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
    write_all(&config.out_dir.join("config.toml"), config.to_toml().as_bytes())?;

    let mut run = Run {
        config,
        store,
        par: config.parallelism(),
        lms: BTreeMap::new(),
        sources: BTreeMap::new(),
        artifacts: Mutex::new(Vec::new()),
        data: Mutex::new(BTreeMap::new()),
    };
    let variants: BTreeSet<Variant> = config.variants.iter().copied().collect();

    let lm_kinds: BTreeSet<LmKind> = variants
        .iter()
        .filter_map(|&v| needs(v).lm)
        .chain(variants.contains(&Variant::SupervisedFt).then_some(LmKind::Generic))
        .collect();
    for kind in lm_kinds {
        run.language_model(kind)?;
    }
    let source_kinds: BTreeSet<bool> = variants.iter().filter_map(|&v| needs(v).source).collect();
    for with_lm in source_kinds {
        run.source_taggers(with_lm)?;
    }

    let (full_train, dev) = run.labeled_pair(Role::Target)?;
    let mut subsets = BTreeMap::new();
    for &fraction in &config.fractions {
        for &seed in &config.seeds {
            subsets.insert((dropout_tag(fraction), seed), subsample(&full_train, fraction, seed)?);
        }
    }
    let cells: Vec<(Variant, f64, u64, (f64, f64))> = variants
        .iter()
        .flat_map(|&v| config.fractions.iter().map(move |&f| (v, f)))
        .flat_map(|(v, f)| config.seeds.iter().map(move |&s| (v, f, s)))
        .flat_map(|(v, f, s)| config.dropout_points().into_iter().map(move |d| (v, f, s, d)))
        .collect();
    let runref = &run;
    let results = run.par.map(&cells, |&(v, f, s, d)| {
        runref.cell(v, f, s, d, &subsets[&(dropout_tag(f), s)], &dev)
    });
    let mut grid = Vec::with_capacity(cells.len());
    let mut models = Vec::with_capacity(cells.len());
    for r in results {
        let (p, m) = r?;
        grid.push(p);
        models.push(m);
    }

    run.store.begin_final_eval();
    let test = run.store.labeled(Role::Target, Split::Test)?;
    let mut table = ResultsTable::default();
    let mut lineage: Vec<LineageEntry> = Vec::new();
    let mut start = 0;
    while start < grid.len() {
        let key = (grid[start].variant, grid[start].fraction, grid[start].seed);
        let end = start + grid[start..].iter().take_while(|p| (p.variant, p.fraction, p.seed) == key).count();
        let best = start + select_best(&grid[start..end]).expect("non-empty group");
        let model = &models[best];
        for e in &model.manifest.lineage {
            if !lineage.contains(e) {
                lineage.push(e.clone());
            }
        }
        let p = &grid[best];
        table.rows.push(ResultRow {
            variant: p.variant,
            model: p.model.clone(),
            fraction: p.fraction,
            seed: p.seed,
            train_sentences: subsets[&(dropout_tag(p.fraction), p.seed)].len(),
            dev_f1: p.dev_f1,
            test_f1: model.evaluate(&test, run.par)?.f1(),
            dropout: p.dropout,
            elmo_dropout: p.elmo_dropout,
        });
        start = end;
    }
    run.fingerprint("Target/test".into(), &test);

    write_all(&config.out_dir.join("results.tsv"), table.to_tsv().as_bytes())?;
    write_all(&config.out_dir.join("results.txt"), table.to_text().as_bytes())?;
    let grid_json = serde_json::to_string_pretty(&grid).expect("grid serializes");
    write_all(&config.out_dir.join("grid.json"), grid_json.as_bytes())?;

    let mut artifacts = run.artifacts.into_inner().expect("artifact lock");
    artifacts.sort_by(|a, b| a.path.cmp(&b.path));
    artifacts.dedup();
    let mut manifest = RunManifest {
        config_hash: config.hash(),
        seeds: config.seeds.clone(),
        data: run.data.into_inner().expect("data lock"),
        lineage,
        artifacts,
        hash: String::new(),
        wall_clock_seconds: 0.0,
    };
    manifest.hash = config_hash(&manifest);
    manifest.wall_clock_seconds = started.elapsed().as_secs_f64();
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_all(&config.out_dir.join("manifest.json"), json.as_bytes())?;

    Ok(PipelineOutcome {
        table,
        grid,
        manifest,
        log: run.store.log(),
    })
}

/// The configured fractions must come from the published sweep points.
pub fn sweep_fractions(config: &ExperimentConfig) -> Result<ResultsTable> {
    if let Some(f) = config
        .fractions
        .iter()
        .find(|f| !crate::corpus::batch::SWEEP_FRACTIONS.contains(f))
    {
        return Err(Error::config(format!("fraction {f} is not a sweep point")));
    }
    Ok(run_pipeline(config)?.table)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridOutcome {
    pub points: Vec<GridPoint>,
    pub best: GridPoint,
}

/// Every grid point of one `(variant, fraction, seed)` cell, all trained
/// with the same seed, and the selected one.
pub fn grid_search_dropout(config: &ExperimentConfig, variant: Variant, fraction: f64, seed: u64) -> Result<GridOutcome> {
    let config = ExperimentConfig {
        variants: vec![variant],
        fractions: vec![fraction],
        seeds: vec![seed],
        ..config.clone()
    };
    let points = run_pipeline(&config)?.grid;
    let best = points[select_best(&points).expect("grid is validated non-empty")].clone();
    Ok(GridOutcome { points, best })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeSuite {
    pub pretrained: ProbeReport,
    pub finetuned: ProbeReport,
    pub most_frequent_tag: f64,
}

impl ProbeSuite {
    pub fn to_text(&self) -> String {
        format!(
            "{}\n{}\nmost_frequent_tag\t{:.4}\n",
            self.pretrained, self.finetuned, self.most_frequent_tag
        )
    }
}

/// Probe `LM[generic]` and `LM[generic-source]` on the part-of-speech data
/// and compare with the most-frequent-tag baseline.
pub fn run_probe_suite(config: &ExperimentConfig) -> Result<ProbeSuite> {
    config.validate()?;
    let roles = [Role::Generic, Role::SourceUnlabeled, Role::Probe].into_iter().collect();
    let mut run = Run {
        config,
        store: CorpusStore::open(&config.data_dir, roles)?,
        par: config.parallelism(),
        lms: BTreeMap::new(),
        sources: BTreeMap::new(),
        artifacts: Mutex::new(Vec::new()),
        data: Mutex::new(BTreeMap::new()),
    };
    let generic = run.language_model(LmKind::Generic)?;
    let finetuned = run.language_model(LmKind::GenericSource)?;
    let (train, dev) = run.labeled_pair(Role::Probe)?;
    let settings = probe_settings(config.lm_seed);
    let pretrained = probe_corpus(
        FrozenModel::Lm(&generic),
        RepresentationSource::PretrainedLm,
        &train,
        &dev,
        &settings,
        run.par,
    )?;
    let finetuned = probe_corpus(
        FrozenModel::Lm(&finetuned),
        RepresentationSource::FinetunedLm,
        &train,
        &dev,
        &settings,
        run.par,
    )?;
    let suite = ProbeSuite {
        pretrained,
        finetuned,
        most_frequent_tag: most_frequent_tag(&train, &dev),
    };
    write_all(&config.out_dir.join("probe.txt"), suite.to_text().as_bytes())?;
    Ok(suite)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synth::{gen_synthetic, CorpusSizes, SyntheticSpec};

    fn point(dropout: f64, dev_f1: f64) -> GridPoint {
        GridPoint {
            variant: Variant::Baseline,
            fraction: 1.0,
            seed: 1,
            dropout,
            elmo_dropout: dropout,
            dev_f1,
            epochs: 1,
            model: String::new(),
            model_id: String::new(),
            checkpoint: PathBuf::new(),
        }
    }

    #[test]
    fn ties_go_to_lower_dropout() {
        let pts = vec![point(0.5, 0.8), point(0.25, 0.8), point(0.75, 0.7)];
        assert_eq!(select_best(&pts), Some(1));
        let pts = vec![point(0.25, 0.1), point(0.5, 0.2)];
        assert_eq!(select_best(&pts), Some(1));
        assert_eq!(select_best(&[]), None);
    }

    fn tiny_data(dir: &Path) {
        let spec = SyntheticSpec {
            sizes: CorpusSizes {
                generic: 30,
                generic_dev: 5,
                source_train: 12,
                source_dev: 5,
                source_test: 2,
                source_extra: 6,
                source_unlabeled_dev: 5,
                target_train: 20,
                target_dev: 6,
                target_test: 6,
                probe_train: 8,
                probe_dev: 4,
            },
            ..SyntheticSpec::small()
        };
        gen_synthetic(&spec, 5).unwrap().write(dir).unwrap();
    }

    pub(crate) fn tiny_config(data: &Path, out: &Path, variants: Vec<Variant>) -> ExperimentConfig {
        ExperimentConfig {
            variants,
            data_dir: data.to_path_buf(),
            out_dir: out.to_path_buf(),
            word_dim: 4,
            char_dim: 3,
            char_filters: 4,
            highway_layers: 1,
            hidden: 4,
            layers: 1,
            elmo_dim: 6,
            lm_layers: 1,
            lm_char_filters: 4,
            lm_highway_layers: 1,
            learning_rate: 0.01,
            batch_size: 8,
            epochs: 2,
            patience: 2,
            l2: 0.0,
            lm_epochs: 1,
            lm_batch_size: 8,
            dropout_grid: vec![0.25, 0.5],
            fractions: vec![0.5, 1.0],
            seeds: vec![1, 2],
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn missing_corpus_fails_before_training() {
        let data = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        tiny_data(data.path());
        fs::remove_file(data.path().join(files::SOURCE_DEV)).unwrap();
        let cfg = tiny_config(data.path(), &out.path().join("o"), vec![Variant::SupervisedFt]);
        let err = run_pipeline(&cfg).unwrap_err();
        assert!(matches!(err, Error::Data { .. }), "{err}");
        assert!(!out.path().join("o").exists());
        let cfg = tiny_config(data.path(), &out.path().join("o"), vec![Variant::UnsupervisedFt]);
        let out = run_pipeline(&cfg).unwrap();
        assert_eq!(out.table.rows.len(), 4);
    }

    #[test]
    fn access_rules_hold_per_variant() {
        let data = tempfile::tempdir().unwrap();
        tiny_data(data.path());
        let reads = |log: &[Access], role: Role| {
            log.iter()
                .filter(|a| matches!(a, Access::Corpus { role: r, .. } if *r == role))
                .count()
        };
        for v in Variant::ALL {
            let out = tempfile::tempdir().unwrap();
            let o = run_pipeline(&tiny_config(data.path(), out.path(), vec![v])).unwrap();
            let test_pos = o
                .log
                .iter()
                .position(|a| *a == Access::Corpus { role: Role::Target, split: Split::Test })
                .unwrap();
            assert_eq!(test_pos, o.log.len() - 1, "{v}: test data read before final evaluation");
            let lms = o.log.iter().filter(|a| matches!(a, Access::LanguageModel { .. })).count();
            match v {
                Variant::UnsupervisedFt => assert_eq!(reads(&o.log, Role::SourceLabeled), 0),
                Variant::AblationSupSt | Variant::Baseline | Variant::Multitask => assert_eq!(lms, 0),
                _ => {}
            }
            assert_eq!(o.table.rows.len(), 4);
            assert_eq!(o.grid.len(), 8);
        }
    }

    #[test]
    fn test_split_is_locked_until_final_eval() {
        let data = tempfile::tempdir().unwrap();
        tiny_data(data.path());
        let store = CorpusStore::open(data.path(), [Role::Target].into_iter().collect()).unwrap();
        assert!(matches!(store.labeled(Role::Target, Split::Test), Err(Error::Config(_))));
        assert!(store.labeled(Role::SourceLabeled, Split::Train).is_err());
        store.begin_final_eval();
        assert!(store.labeled(Role::Target, Split::Test).is_ok());
    }

    #[test]
    fn results_render_as_text_and_tsv() {
        let table = ResultsTable {
            rows: vec![ResultRow {
                variant: Variant::Baseline,
                model: "Sup[target]".into(),
                fraction: 0.01,
                seed: 1,
                train_sentences: 10,
                dev_f1: 0.5,
                test_f1: 0.25,
                dropout: 0.25,
                elmo_dropout: 0.25,
            }],
        };
        assert_eq!(table.mean_test_f1(Variant::Baseline, 0.01), Some(0.25));
        assert!(table.to_tsv().starts_with(TSV_HEADER));
        assert!(table.to_text().contains("25.00"));
    }

    #[test]
    fn sweep_rejects_unknown_fractions() {
        let cfg = ExperimentConfig {
            fractions: vec![0.3],
            ..ExperimentConfig::default()
        };
        assert!(matches!(sweep_fractions(&cfg), Err(Error::Config(_))));
    }
}
