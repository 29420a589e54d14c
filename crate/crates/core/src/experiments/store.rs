use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Level, SweepSpec};
use crate::error::{Error, Result};
use crate::genlevel::Side;
use crate::problem::PoissonProblem;
use crate::sampling::RNG_IDENTITY;
use crate::training::{Ensemble, TrainedModel};

pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

const INDEX: &str = "index.json";
const SPEC: &str = "spec.json";
const SUMMARY: &str = "summary.json";

/// Attached to every stored document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub code_version: String,
    pub rng: String,
    pub grid_resolution: usize,
    pub sides: Vec<Side>,
}

impl Provenance {
    pub fn of(spec: &SweepSpec) -> Self {
        Provenance {
            config_hash: spec.config_hash(),
            code_version: CODE_VERSION.to_string(),
            rng: RNG_IDENTITY.to_string(),
            grid_resolution: spec.n_grid,
            sides: spec.sides.clone(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SpecDoc {
    provenance: Provenance,
    spec: SweepSpec,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct ModelsDoc {
    pub provenance: Provenance,
    pub level_index: usize,
    pub level: Level,
    pub ensemble: Ensemble<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct IndexEntry {
    dir: String,
    config_hash: String,
}

/// Directory of sweep results. Each run lives in a directory named after
/// the sweep and the hash of its spec; documents there are written once and
/// never replaced. `index.json` lists the runs of every sweep, newest last.
#[derive(Debug)]
pub struct ResultsStore {
    root: PathBuf,
    index_lock: Mutex<()>,
}

impl ResultsStore {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(ResultsStore {
            root,
            index_lock: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, spec: &SweepSpec) -> PathBuf {
        self.root
            .join(format!("{}-{}", spec.name.as_str(), &spec.config_hash()[..16]))
    }

    fn models_path(dir: &Path, level_index: usize) -> PathBuf {
        dir.join("models").join(format!("level_{level_index:02}.json"))
    }

    /// A run counts as complete once its summary exists.
    pub fn is_complete(&self, spec: &SweepSpec) -> bool {
        self.run_dir(spec).join(SUMMARY).is_file()
    }

    pub(crate) fn begin_run(&self, spec: &SweepSpec) -> Result<PathBuf> {
        let dir = self.run_dir(spec);
        fs::create_dir_all(dir.join("models")).map_err(|e| Error::io(&dir, e))?;
        write_once(
            &dir.join(SPEC),
            &SpecDoc {
                provenance: Provenance::of(spec),
                spec: spec.clone(),
            },
        )?;
        Ok(dir)
    }

    pub(crate) fn write_models(&self, dir: &Path, doc: &ModelsDoc) -> Result<()> {
        write_once(&Self::models_path(dir, doc.level_index), doc)
    }

    pub(crate) fn finish_run<S: Serialize>(&self, spec: &SweepSpec, summary: &S) -> Result<()> {
        let dir = self.run_dir(spec);
        write_once(&dir.join(SUMMARY), summary)?;
        let _guard = self.index_lock.lock().unwrap_or_else(|p| p.into_inner());
        let path = self.root.join(INDEX);
        let mut index: BTreeMap<String, Vec<IndexEntry>> = if path.is_file() {
            read_json(&path)?
        } else {
            BTreeMap::new()
        };
        let entry = IndexEntry {
            dir: dir.file_name().expect("run dir has a name").to_string_lossy().into_owned(),
            config_hash: spec.config_hash(),
        };
        let runs = index.entry(spec.name.as_str().to_string()).or_default();
        runs.retain(|e| e.dir != entry.dir);
        runs.push(entry);
        // The index is the one mutable document.
        write_atomic(&path, &index)
    }

    /// Directory of the most recent complete run of `sweep`.
    pub fn latest_run(&self, sweep: &str) -> Result<PathBuf> {
        let missing = || Error::MissingSweep {
            sweep: sweep.to_string(),
            root: self.root.clone(),
        };
        let path = self.root.join(INDEX);
        if !path.is_file() {
            return Err(missing());
        }
        let index: BTreeMap<String, Vec<IndexEntry>> = read_json(&path)?;
        let entry = index.get(sweep).and_then(|runs| runs.last()).ok_or_else(missing)?;
        let dir = self.root.join(&entry.dir);
        if !dir.join(SUMMARY).is_file() {
            return Err(missing());
        }
        Ok(dir)
    }

    pub fn load_spec(&self, sweep: &str) -> Result<SweepSpec> {
        let doc: SpecDoc = read_json(&self.latest_run(sweep)?.join(SPEC))?;
        Ok(doc.spec)
    }

    pub fn load_summary<S: DeserializeOwned>(&self, sweep: &str) -> Result<S> {
        read_json(&self.latest_run(sweep)?.join(SUMMARY))
    }

    pub(crate) fn load_summary_for<S: DeserializeOwned>(&self, spec: &SweepSpec) -> Result<S> {
        read_json(&self.run_dir(spec).join(SUMMARY))
    }

    /// Trained ensembles of the latest run of `sweep`, one per level.
    pub fn load_ensembles(&self, sweep: &str) -> Result<Vec<Ensemble<f64>>> {
        self.load_ensembles_for(&self.load_spec(sweep)?)
    }

    /// Trained ensembles of the complete run of exactly `spec`.
    pub fn load_ensembles_for(&self, spec: &SweepSpec) -> Result<Vec<Ensemble<f64>>> {
        if !self.is_complete(spec) {
            return Err(Error::MissingSweep {
                sweep: spec.name.to_string(),
                root: self.root.clone(),
            });
        }
        let dir = self.run_dir(spec);
        (0..spec.levels.len())
            .map(|i| read_json::<ModelsDoc>(&Self::models_path(&dir, i)).map(|d| d.ensemble))
            .collect()
    }

    pub(crate) fn load_level_models(&self, spec: &SweepSpec, level_index: usize) -> Result<Option<Vec<TrainedModel<f64>>>> {
        let path = Self::models_path(&self.run_dir(spec), level_index);
        if !path.is_file() {
            return Ok(None);
        }
        let doc: ModelsDoc = read_json(&path)?;
        Ok(Some(doc.ensemble.models))
    }

    pub(crate) fn problem_of(level: &Level) -> Result<PoissonProblem> {
        PoissonProblem::on(level.train_domain)
    }
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes via a temporary file and rename so readers never see a partial
/// document.
fn write_atomic<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_vec_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let tmp = path.with_extension("json.tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&json).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Like [`write_atomic`] but leaves an existing document untouched.
pub(crate) fn write_once<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if path.exists() {
        return Ok(());
    }
    write_atomic(path, value)
}

pub(crate) fn write_text_once(path: &Path, text: &str) -> Result<()> {
    if path.exists() {
        return Ok(());
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
