//! Datasets registered at startup.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use explore_core::simuser::{generate_target_in, synth_dataset, Placement};
use explore_core::{
    load_dataset, Dataset, DiscoveryMode, Region, Resources, SchemaConfig, SessionConfig, SizeClass, SynthKind,
    TargetQuery,
};
use serde::Deserialize;

use crate::error::{Result, ServiceError};

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default)]
    pub datasets: Vec<DatasetSpec>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub id: String,
    pub source: Source,
    /// Known interest of a scripted user; enables quality metrics.
    #[serde(default)]
    pub truth: Option<TruthSpec>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Source {
    /// Delimited file with a header row; relative paths resolve against the
    /// manifest's directory.
    Csv {
        path: PathBuf,
        #[serde(default)]
        schema: SchemaConfig,
    },
    Synthetic {
        kind: SynthKind,
        size: usize,
        dims: usize,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TruthSpec {
    /// Boxes in raw units, one `[lo, hi]` pair per attribute.
    Regions { regions: Vec<Vec<[f64; 2]>> },
    Generated {
        count: usize,
        size: SizeClass,
        #[serde(default = "anywhere")]
        placement: Placement,
        #[serde(default)]
        seed: u64,
    },
}

fn anywhere() -> Placement {
    Placement::Anywhere
}

impl Manifest {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&text).map_err(|e| ServiceError::Parse(e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| ServiceError::Parse(e.to_string()))
        }
    }
}

/// One registered dataset with its lazily prepared offline structures.
#[derive(Debug)]
pub struct DatasetEntry {
    pub id: String,
    pub dataset: Arc<Dataset>,
    pub truth: Option<TargetQuery>,
    resources: Mutex<HashMap<String, Arc<Resources>>>,
}

impl DatasetEntry {
    pub fn new(id: String, dataset: Dataset, truth: Option<TargetQuery>) -> Self {
        Self {
            id,
            dataset: Arc::new(dataset),
            truth,
            resources: Mutex::new(HashMap::new()),
        }
    }

    /// Shared resources for the grid and cluster layout `config` asks for.
    pub fn resources_for(&self, config: &SessionConfig) -> explore_core::Result<Arc<Resources>> {
        let dims = self.dataset.dims();
        let clustered = matches!(config.discovery, DiscoveryMode::Cluster | DiscoveryMode::Hybrid);
        let key = format!(
            "{:?}|{:?}|{}|{}",
            config.betas_for(dims),
            clustered.then(|| config.cluster_ks_for(dims)),
            config.cluster_subsample,
            config.cluster_seed
        );
        let mut cache = self.resources.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(r) = cache.get(&key) {
            return Ok(r.clone());
        }
        let r = Arc::new(Resources::prepare(self.dataset.clone(), config)?);
        cache.insert(key, r.clone());
        Ok(r)
    }
}

fn build_truth(ds: &Dataset, spec: &TruthSpec) -> Result<TargetQuery> {
    match spec {
        TruthSpec::Regions { regions } => {
            let schema = ds.schema();
            let boxes = regions
                .iter()
                .map(|r| {
                    if r.len() != ds.dims() {
                        return Err(ServiceError::Manifest(format!(
                            "truth region has {} bounds, dataset has {} attributes",
                            r.len(),
                            ds.dims()
                        )));
                    }
                    let bounds: Vec<(f64, f64)> = r
                        .iter()
                        .zip(schema.attributes())
                        .map(|([lo, hi], a)| (a.normalize(*lo), a.normalize(*hi)))
                        .collect();
                    Ok(Region::closed(&bounds))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(TargetQuery {
                regions: boxes,
                size_class: SizeClass::Medium,
            })
        }
        TruthSpec::Generated {
            count,
            size,
            placement,
            seed,
        } => Ok(generate_target_in(ds, *count, *size, *placement, *seed)?),
    }
}

/// Loads every dataset of the manifest.
pub fn register(manifest: &Manifest, base: &Path) -> Result<BTreeMap<String, Arc<DatasetEntry>>> {
    let mut out = BTreeMap::new();
    for spec in &manifest.datasets {
        if out.contains_key(&spec.id) {
            return Err(ServiceError::Manifest(format!("dataset id `{}` registered twice", spec.id)));
        }
        let dataset = match &spec.source {
            Source::Csv { path, schema } => load_dataset(&base.join(path), schema)?,
            Source::Synthetic { kind, size, dims, seed } => synth_dataset(*kind, *size, *dims, *seed)?.dataset,
        };
        let truth = spec.truth.as_ref().map(|t| build_truth(&dataset, t)).transpose()?;
        out.insert(spec.id.clone(), Arc::new(DatasetEntry::new(spec.id.clone(), dataset, truth)));
    }
    Ok(out)
}
