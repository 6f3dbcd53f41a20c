//! Labeled feature-vector manifests and the seeded synthetic generator.
//!
//! A manifest is line-delimited JSON: a header object carrying the format
//! version, feature dimension and label set, then one flat record per line.
//!
//! ```text
//! {"format":"slra-manifest","version":1,"dimension":16,"labels":["Sadness",...]}
//! {"id":"basic-0000","features":[0.12,...],"label":"Sadness","split":"train"}
//! ```

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, ManifestError, Result};
use crate::labels;
use crate::seed::{fisher_yates, sub_seed};

pub const MANIFEST_FORMAT: &str = "slra-manifest";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExampleRecord {
    pub id: String,
    pub features: Vec<f64>,
    pub label: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    dimension: usize,
    labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub dimension: usize,
    pub labels: Vec<String>,
    pub records: Vec<ExampleRecord>,
}

impl Manifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ExampleRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Checks every record against the declared dimension and label set.
    pub fn validate(&self) -> Result<()> {
        let labels: HashSet<&str> = self.labels.iter().map(String::as_str).collect();
        if labels.len() != self.labels.len() {
            return Err(Error::Data("manifest label set has duplicates".into()));
        }
        for r in &self.records {
            validate_record(r, self.dimension, &labels)?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let header = Header {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            dimension: self.dimension,
            labels: self.labels.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, first) = lines.next().ok_or(ManifestError::Parse {
            line: 1,
            message: "missing header".into(),
        })?;
        let header: Header = serde_json::from_str(first).map_err(|e| ManifestError::Parse {
            line: 1,
            message: format!("bad header: {e}"),
        })?;
        if header.format != MANIFEST_FORMAT {
            return Err(ManifestError::Parse {
                line: 1,
                message: format!("unknown format {:?}", header.format),
            }
            .into());
        }
        if header.version != MANIFEST_VERSION {
            return Err(ManifestError::Parse {
                line: 1,
                message: format!("unsupported version {}", header.version),
            }
            .into());
        }
        let label_set: HashSet<&str> = header.labels.iter().map(String::as_str).collect();
        let mut records = Vec::new();
        for (idx, line) in lines {
            let record: ExampleRecord = serde_json::from_str(line).map_err(|e| ManifestError::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
            validate_record(&record, header.dimension, &label_set)?;
            records.push(record);
        }
        Ok(Self {
            dimension: header.dimension,
            labels: header.labels,
            records,
        })
    }
}

fn validate_record(r: &ExampleRecord, dimension: usize, labels: &HashSet<&str>) -> Result<()> {
    if r.features.len() != dimension {
        return Err(ManifestError::Validation {
            id: r.id.clone(),
            message: format!("{} features, expected {dimension}", r.features.len()),
        }
        .into());
    }
    if !labels.contains(r.label.as_str()) {
        return Err(ManifestError::Validation {
            id: r.id.clone(),
            message: format!("label {:?} not in the declared label set", r.label),
        }
        .into());
    }
    if r.features.iter().any(|v| !v.is_finite()) {
        return Err(ManifestError::Validation {
            id: r.id.clone(),
            message: "non-finite feature".into(),
        }
        .into());
    }
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Manifest::parse(&text)
}

pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    crate::io::write_atomic(path, manifest.to_jsonl().as_bytes())
}

/// Parameters of the synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub d_in: usize,
    pub basic_labels: Vec<String>,
    /// `(name, first parent, second parent)`.
    pub compound_labels: Vec<(String, String, String)>,
    pub noise_sigma: f64,
    pub examples_per_class: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            d_in: 16,
            basic_labels: labels::basic_labels(),
            compound_labels: labels::RAFDB_COMPOUND
                .iter()
                .map(|c| (c.name.to_string(), c.parents.0.to_string(), c.parents.1.to_string()))
                .collect(),
            noise_sigma: 0.05,
            examples_per_class: 100,
            seed: 0,
        }
    }
}

/// Basic and compound manifests produced from one [`SynthSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub basic: Manifest,
    pub compound: Manifest,
    /// Unit-norm class prototypes, indexed like `basic_labels`.
    pub prototypes: Vec<Vec<f64>>,
}

/// Draws a unit-norm prototype per basic label, then samples basic examples
/// around each prototype and compound examples around parent midpoints.
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    if spec.examples_per_class == 0 {
        return Err(Error::Contract("examples_per_class must be at least 1".into()));
    }
    if spec.d_in == 0 {
        return Err(Error::Contract("d_in must be positive".into()));
    }
    if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
        return Err(Error::Contract(format!(
            "noise_sigma must be >= 0, got {}",
            spec.noise_sigma
        )));
    }
    crate::model::validate_labels(&spec.basic_labels)?;
    let index_of = |name: &str| spec.basic_labels.iter().position(|b| b == name);
    let mut parents = Vec::with_capacity(spec.compound_labels.len());
    for (name, p, q) in &spec.compound_labels {
        match (index_of(p), index_of(q)) {
            (Some(i), Some(j)) => parents.push((i, j)),
            _ => {
                return Err(Error::Contract(format!(
                    "compound {name:?} has a parent outside the basic set ({p:?}, {q:?})"
                )))
            }
        }
    }
    let compound_names: Vec<String> = spec.compound_labels.iter().map(|c| c.0.clone()).collect();
    if !compound_names.is_empty() {
        crate::model::validate_labels(&compound_names)?;
    }

    let mut proto_rng = ChaCha8Rng::seed_from_u64(sub_seed(spec.seed, "prototypes"));
    let std_normal = Normal::new(0.0, 1.0).expect("valid");
    let prototypes: Vec<Vec<f64>> = spec
        .basic_labels
        .iter()
        .map(|_| {
            let v: Vec<f64> = (0..spec.d_in).map(|_| std_normal.sample(&mut proto_rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();

    let noise = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
    let basic_centers: Vec<(&str, Vec<f64>)> = spec
        .basic_labels
        .iter()
        .zip(&prototypes)
        .map(|(l, p)| (l.as_str(), p.clone()))
        .collect();
    let compound_centers: Vec<(&str, Vec<f64>)> = compound_names
        .iter()
        .zip(&parents)
        .map(|(l, &(i, j))| {
            let mid = prototypes[i]
                .iter()
                .zip(&prototypes[j])
                .map(|(a, b)| 0.5 * a + 0.5 * b)
                .collect();
            (l.as_str(), mid)
        })
        .collect();

    let build = |kind: &str, centers: &[(&str, Vec<f64>)], labels: Vec<String>| {
        let mut noise_rng = ChaCha8Rng::seed_from_u64(sub_seed(spec.seed, &format!("noise/{kind}")));
        let mut records = Vec::with_capacity(centers.len() * spec.examples_per_class);
        for (label, center) in centers {
            let splits = assign_splits(
                spec.examples_per_class,
                sub_seed(spec.seed, &format!("split/{kind}/{label}")),
            );
            for (k, split) in splits.into_iter().enumerate() {
                let features = center
                    .iter()
                    .map(|c| {
                        let n = noise.sample(&mut noise_rng);
                        if spec.noise_sigma == 0.0 {
                            *c
                        } else {
                            c + n
                        }
                    })
                    .collect();
                let mut id = String::new();
                write!(id, "{kind}-{}-{k:04}", slug(label)).expect("string write");
                records.push(ExampleRecord {
                    id,
                    features,
                    label: label.to_string(),
                    split,
                });
            }
        }
        Manifest {
            dimension: spec.d_in,
            labels,
            records,
        }
    };

    Ok(SynthData {
        basic: build("basic", &basic_centers, spec.basic_labels.clone()),
        compound: build("compound", &compound_centers, compound_names.clone()),
        prototypes,
    })
}

/// 80/10/10 split of `n` examples, shuffled by `seed`.
fn assign_splits(n: usize, seed: u64) -> Vec<Split> {
    let n_train = (n as f64 * 0.8).round() as usize;
    let n_val = ((n as f64 * 0.1).round() as usize).min(n - n_train);
    let mut splits: Vec<Split> = (0..n)
        .map(|i| {
            if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            }
        })
        .collect();
    fisher_yates(&mut splits, &mut ChaCha8Rng::seed_from_u64(seed));
    splits
}

fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect()
}
