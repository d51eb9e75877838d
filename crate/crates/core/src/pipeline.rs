//! End-to-end steps shared by the command line and the experiment suites:
//! loading clips, training on a corpus, scoring and evaluating.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::autodiff::ParamStore;
use crate::checkpoint;
use crate::config::ExperimentConfig;
use crate::data::{ClipRecord, Condition, Corpus, DataSplit, LabelMap, MachineKey};
use crate::dsp::cache::write_cache;
use crate::dsp::estgram::extract_estgram;
use crate::dsp::{read_wav, FeatureConfig, LogMel, Waveform};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport, ScoredClip};
use crate::network::{ClipInput, EstmModel, Paths};
use crate::real::Real;
use crate::train::{init_rng, EpochStats, RunOutputs, TrainSet, Trainer};

/// Reads a clip and crops or pads it to the configured length.
pub fn load_wave(path: &Path, cfg: &FeatureConfig) -> Result<Waveform> {
    read_wav(path)?.canonicalize(cfg.clip_samples, cfg.sample_rate)
}

/// Network inputs for `records`, in order, extracted in parallel.
pub fn load_inputs<T: Real>(records: &[ClipRecord], cfg: &FeatureConfig) -> Result<Vec<ClipInput<T>>> {
    let extractor = LogMel::new(cfg)?;
    records
        .par_iter()
        .map(|r| ClipInput::from_wave(&load_wave(&r.path, cfg)?, cfg, &extractor))
        .collect()
}

/// Registers a freshly initialized model seeded from `cfg.train.seed`.
pub fn build_model<T: Real>(cfg: &ExperimentConfig, classes: usize) -> Result<(EstmModel, ParamStore<T>)> {
    let mut store = ParamStore::new();
    let model = EstmModel::new(&cfg.model, &cfg.features, classes, &mut store, &mut init_rng(cfg.train.seed))?;
    Ok((model, store))
}

pub struct Trained<T> {
    pub model: EstmModel,
    pub store: ParamStore<T>,
    pub labels: LabelMap,
    pub history: Vec<EpochStats>,
}

pub fn train_set<T: Real>(records: &[ClipRecord], labels: &LabelMap, cfg: &FeatureConfig) -> Result<TrainSet<T>> {
    let idx = records.iter().map(|r| labels.index(&r.key())).collect::<Result<Vec<_>>>()?;
    TrainSet::new(load_inputs(records, cfg)?, idx, labels.len())
}

/// Trains on the corpus' training split. Resumes from `resume` when given.
pub fn train_corpus<T: Real>(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    out: &RunOutputs,
    resume: Option<&Path>,
) -> Result<Trained<T>> {
    let records: Vec<ClipRecord> = corpus.split(DataSplit::Train).cloned().collect();
    let labels = corpus.label_map();
    if labels.len() < 2 {
        return Err(Error::Config(format!(
            "training needs at least 2 machine ids, corpus has {}",
            labels.len()
        )));
    }
    let data = train_set(&records, &labels, &cfg.features)?;
    let (model, store) = build_model(cfg, labels.len())?;
    let mut trainer = match resume {
        Some(p) => Trainer::resume(&model, store, cfg.train.clone(), &checkpoint::read(p)?, p)?,
        None => Trainer::new(&model, store, cfg.train.clone())?,
    };
    let history = trainer.fit(&data, out)?;
    let store = trainer.into_store();
    Ok(Trained {
        model,
        store,
        labels,
        history,
    })
}

/// Restores a model from a checkpoint and its label map. The network is
/// rebuilt from the configuration stored in the checkpoint, which is
/// returned alongside.
pub fn load_trained<T: Real>(ckpt: &Path, labels: &Path) -> Result<(Trained<T>, ExperimentConfig)> {
    let ck = checkpoint::read(ckpt)?;
    let cfg: ExperimentConfig = serde_json::from_value(ck.meta.config.clone())
        .map_err(|e| Error::Config(format!("{}: stored configuration unreadable: {e}", ckpt.display())))?;
    let labels = LabelMap::load(labels)?;
    let (model, mut store) = build_model(&cfg, labels.len())?;
    ck.restore(&mut store, ckpt)?;
    let trained = Trained {
        model,
        store,
        labels,
        history: Vec::new(),
    };
    Ok((trained, cfg))
}

/// Anomaly score of every record under its own machine-ID class.
pub fn score_records<T: Real>(
    model: &EstmModel,
    store: &ParamStore<T>,
    labels: &LabelMap,
    records: &[ClipRecord],
) -> Result<Vec<ScoredClip>> {
    let cfg = model.feature_config();
    let extractor = LogMel::new(cfg)?;
    records
        .par_iter()
        .map(|r| {
            let class = labels.index(&r.key())?;
            let input = ClipInput::<T>::from_wave(&load_wave(&r.path, cfg)?, cfg, &extractor)?;
            Ok(ScoredClip {
                machine: r.key(),
                condition: r.condition,
                score: model.score(store, &input, class)?,
            })
        })
        .collect()
}

pub struct ExperimentResult {
    pub history: Vec<EpochStats>,
    pub report: EvalReport,
}

/// Train on the training split, score the test split, evaluate.
pub fn run_experiment<T: Real>(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<ExperimentResult> {
    let trained = train_corpus::<T>(cfg, corpus, &RunOutputs::default(), None)?;
    let test: Vec<ClipRecord> = corpus.split(DataSplit::Test).cloned().collect();
    let scored = score_records(&trained.model, &trained.store, &trained.labels, &test)?;
    Ok(ExperimentResult {
        history: trained.history,
        report: evaluate(&scored, cfg.eval.p)?,
    })
}

/// One cell of the input-feature by backbone ablation matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub tsg: bool,
    pub paths: Paths,
    /// Per-seed average AUC and pAUC.
    pub auc: Vec<f64>,
    pub pauc: Vec<f64>,
}

impl AblationRow {
    pub fn feature_name(&self) -> &'static str {
        if self.tsg { "ESTgram" } else { "STgram" }
    }

    pub fn model_name(&self) -> &'static str {
        match self.paths {
            Paths::S => "SMamba",
            Paths::T => "TMamba",
            Paths::St => "STMamba",
        }
    }

    pub fn mean_auc(&self) -> f64 {
        self.auc.iter().sum::<f64>() / self.auc.len() as f64
    }

    pub fn mean_pauc(&self) -> f64 {
        self.pauc.iter().sum::<f64>() / self.pauc.len() as f64
    }
}

pub const ABLATION_HEADER: &str = "features,model,auc,pauc,seeds";

/// Runs every {STgram, ESTgram} x {S, T, ST} combination for each seed.
pub fn ablate<T: Real>(base: &ExperimentConfig, corpus: &Corpus, seeds: &[u64]) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let mut rows = Vec::new();
    for tsg in [false, true] {
        for paths in [Paths::S, Paths::T, Paths::St] {
            let mut row = AblationRow {
                tsg,
                paths,
                auc: Vec::new(),
                pauc: Vec::new(),
            };
            for &seed in seeds {
                let mut cfg = base.clone();
                cfg.features.tsg = tsg;
                cfg.model.paths = paths;
                cfg.train.seed = seed;
                let r = run_experiment::<T>(&cfg, corpus)?;
                log::info!(
                    "{} {} seed {seed}: auc {:.4} pauc {:.4}",
                    row.feature_name(),
                    row.model_name(),
                    r.report.average_auc,
                    r.report.average_pauc
                );
                row.auc.push(r.report.average_auc);
                row.pauc.push(r.report.average_pauc);
            }
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = format!("{ABLATION_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.feature_name(),
            r.model_name(),
            r.mean_auc(),
            r.mean_pauc(),
            r.auc.len()
        ));
    }
    out
}

pub const CACHE_INDEX: &str = "index.json";

/// Outcome of a feature-cache pass.
#[derive(Debug, Default)]
pub struct FeatureRun {
    pub computed: usize,
    pub skipped: usize,
    pub failed: Vec<(PathBuf, Error)>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest of everything besides the audio that determines a cached block:
/// feature settings and the time-domain front end's weights.
fn settings_digest<T: Real>(features: &FeatureConfig, store: &ParamStore<T>) -> Vec<u8> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(features).expect("config serializes"));
    for id in store.ids().filter(|&id| store.name(id).starts_with("tgram.")) {
        h.update(store.name(id).as_bytes());
        for v in store.value(id).data() {
            h.update(v.as_f64().to_le_bytes());
        }
    }
    h.finalize().to_vec()
}

/// Cache location of a clip: `<type>/<split>/<stem>.estg`.
pub fn cache_path(record: &ClipRecord) -> PathBuf {
    let stem = record.path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    PathBuf::from(&record.machine_type)
        .join(record.split.as_str())
        .join(format!("{stem}.estg"))
}

/// Writes the unstandardized feature block of every clip under `cache_dir`.
/// A clip is skipped when the index already holds the same content hash
/// (audio bytes plus settings) and its cache file exists. Unreadable clips
/// are collected in `failed` and do not stop the pass.
pub fn cache_features<T: Real>(
    corpus: &Corpus,
    model: &EstmModel,
    store: &ParamStore<T>,
    cache_dir: &Path,
) -> Result<FeatureRun> {
    let cfg = model.feature_config();
    let extractor = LogMel::new(cfg)?;
    let settings = settings_digest(cfg, store);
    let index_path = cache_dir.join(CACHE_INDEX);
    let mut index: BTreeMap<String, String> = match fs::read_to_string(&index_path) {
        Ok(text) => serde_json::from_str(&text)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
        Err(e) => return Err(Error::io(&index_path, e)),
    };

    enum Outcome {
        Skipped,
        Computed(String, String),
        Failed(PathBuf, Error),
    }
    let outcomes: Vec<Outcome> = corpus
        .records
        .par_iter()
        .map(|r| {
            let rel = cache_path(r);
            let key = rel.to_string_lossy().into_owned();
            let out = cache_dir.join(&rel);
            let work = || -> Result<Option<String>> {
                let bytes = fs::read(&r.path).map_err(|e| Error::io(&r.path, e))?;
                let mut h = Sha256::new();
                h.update(&bytes);
                h.update(&settings);
                let digest = hex(&h.finalize());
                if index.get(&key) == Some(&digest) && out.is_file() {
                    return Ok(None);
                }
                let wave = load_wave(&r.path, cfg)?;
                let est = extract_estgram(&wave, cfg, &extractor, model.frontend(), store)?;
                if let Some(dir) = out.parent() {
                    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                }
                write_cache(&out, &est)?;
                Ok(Some(digest))
            };
            match work() {
                Ok(None) => Outcome::Skipped,
                Ok(Some(d)) => Outcome::Computed(key, d),
                Err(e) => Outcome::Failed(r.path.clone(), e),
            }
        })
        .collect();

    let mut run = FeatureRun::default();
    for o in outcomes {
        match o {
            Outcome::Skipped => run.skipped += 1,
            Outcome::Computed(k, d) => {
                index.insert(k, d);
                run.computed += 1;
            }
            Outcome::Failed(p, e) => {
                log::error!("{e}");
                run.failed.push((p, e));
            }
        }
    }
    fs::create_dir_all(cache_dir).map_err(|e| Error::io(cache_dir, e))?;
    fs::write(&index_path, serde_json::to_string_pretty(&index)?).map_err(|e| Error::io(&index_path, e))?;
    Ok(run)
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct ScoreRow {
    path: String,
    machine_type: String,
    machine_id: u32,
    condition: Condition,
    score: f64,
}

/// Per-clip scores as CSV: `path,machine_type,machine_id,condition,score`.
/// Scores are written in shortest round-trip form so re-reading is exact.
pub fn scores_csv(records: &[ClipRecord], scored: &[ScoredClip]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (r, s) in records.iter().zip(scored) {
        w.serialize(ScoreRow {
            path: r.path.to_string_lossy().into_owned(),
            machine_type: s.machine.machine_type.clone(),
            machine_id: s.machine.machine_id,
            condition: s.condition,
            score: s.score,
        })
        .map_err(|e| Error::Input(format!("writing scores: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Input(format!("writing scores: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<ScoredClip>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .map(|row| {
            let row: ScoreRow = row.map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
            Ok(ScoredClip {
                machine: MachineKey {
                    machine_type: row.machine_type,
                    machine_id: row.machine_id,
                },
                condition: row.condition,
                score: row.score,
            })
        })
        .collect()
}
