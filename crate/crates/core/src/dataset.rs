//! Dataset manifests and feature loading.
//!
//! A dataset directory holds `manifest.json` plus one tensor file per entry.
//! Local features are stacked per sample: text `N x L x D`, image `N x HW x D`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Array3, ArrayD, Axis, Ix3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::SyntheticTruth;
use crate::tensor_io::{read_tensor, write_array, DType};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

pub const TEXT_LOCAL: &str = "text_local";
pub const IMAGE_LOCAL: &str = "image_local";
pub const TEXT_GLOBAL: &str = "text_global";
pub const IMAGE_GLOBAL: &str = "image_global";
pub const TRUTH_LABELS: &str = "class_labels";
pub const TRUTH_MASKS: &str = "region_masks";
pub const TRUTH_KEYWORDS: &str = "keyword_indices";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    #[serde(rename = "L")]
    pub words: usize,
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
    #[serde(rename = "D")]
    pub embed: usize,
}

impl Dims {
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn validate(&self) -> Result<()> {
        if self.words < 2 || self.pixels() < 4 || self.embed < 2 {
            return Err(Error::Manifest(format!(
                "dims must satisfy L >= 2, H*W >= 4, D >= 2 (got L={}, H={}, W={}, D={})",
                self.words, self.height, self.width, self.embed
            )));
        }
        Ok(())
    }
}

/// One image/report pair: local features plus their pooled global vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `L x D` word features.
    pub text: Array2<f64>,
    /// `HW x D` pixel features, row-major over the `H x W` grid.
    pub image: Array2<f64>,
    pub text_global: Array1<f64>,
    pub image_global: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub path: PathBuf,
    pub shape: Vec<usize>,
    pub dtype: DType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthEntries {
    pub n_classes: usize,
    pub class_labels: TensorEntry,
    pub region_masks: TensorEntry,
    pub keyword_indices: TensorEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub n_samples: usize,
    pub dims: Dims,
    pub tensors: BTreeMap<String, TensorEntry>,
    #[serde(default)]
    pub truth: Option<TruthEntries>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dims: Dims,
    pub samples: Vec<Sample>,
    pub truth: Option<Vec<SyntheticTruth>>,
    pub n_classes: Option<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Option<Vec<usize>> {
        self.truth
            .as_ref()
            .map(|t| t.iter().map(|s| s.class_label).collect())
    }
}

fn entry(name: &str, shape: Vec<usize>, dtype: DType) -> TensorEntry {
    TensorEntry {
        path: PathBuf::from(format!("{name}.tnsr")),
        shape,
        dtype,
    }
}

/// Writes `dataset` into `dir` (created if needed) and returns the manifest.
pub fn save_dataset(dataset: &Dataset, dir: &Path, dtype: DType) -> Result<DatasetManifest> {
    dataset.dims.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n = dataset.len();
    let d = dataset.dims;
    let mut tensors = BTreeMap::new();
    let mut truth = None;
    if n > 0 {
        let stack3 = |f: &dyn Fn(&Sample) -> &Array2<f64>| -> ArrayD<f64> {
            let views: Vec<_> = dataset.samples.iter().map(|s| f(s).view()).collect();
            ndarray::stack(Axis(0), &views).expect("samples share dims").into_dyn()
        };
        let stack2 = |f: &dyn Fn(&Sample) -> &Array1<f64>| -> ArrayD<f64> {
            let views: Vec<_> = dataset.samples.iter().map(|s| f(s).view()).collect();
            ndarray::stack(Axis(0), &views).expect("samples share dims").into_dyn()
        };
        let arrays = [
            (TEXT_LOCAL, stack3(&|s| &s.text)),
            (IMAGE_LOCAL, stack3(&|s| &s.image)),
            (TEXT_GLOBAL, stack2(&|s| &s.text_global)),
            (IMAGE_GLOBAL, stack2(&|s| &s.image_global)),
        ];
        for (name, array) in arrays {
            let e = entry(name, array.shape().to_vec(), dtype);
            write_array(&array, dtype, &dir.join(&e.path))?;
            tensors.insert(name.to_string(), e);
        }
        if let (Some(t), Some(n_classes)) = (&dataset.truth, dataset.n_classes) {
            let labels =
                Array1::from_iter(t.iter().map(|s| s.class_label as f64)).into_dyn();
            let mut masks = Array3::<f64>::zeros((n, d.height, d.width));
            for (k, s) in t.iter().enumerate() {
                for ((i, j), &m) in s.region_mask.indexed_iter() {
                    masks[(k, i, j)] = if m { 1.0 } else { 0.0 };
                }
            }
            let n_kw = t.first().map_or(0, |s| s.keyword_indices.len());
            let mut kws = Array2::<f64>::zeros((n, n_kw));
            for (k, s) in t.iter().enumerate() {
                for (j, &w) in s.keyword_indices.iter().enumerate() {
                    kws[(k, j)] = w as f64;
                }
            }
            let le = entry(TRUTH_LABELS, vec![n], DType::F64);
            let me = entry(TRUTH_MASKS, vec![n, d.height, d.width], DType::F64);
            let ke = entry(TRUTH_KEYWORDS, vec![n, n_kw], DType::F64);
            write_array(&labels, DType::F64, &dir.join(&le.path))?;
            write_array(&masks.into_dyn(), DType::F64, &dir.join(&me.path))?;
            write_array(&kws.into_dyn(), DType::F64, &dir.join(&ke.path))?;
            truth = Some(TruthEntries {
                n_classes,
                class_labels: le,
                region_masks: me,
                keyword_indices: ke,
            });
        }
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        n_samples: n,
        dims: d,
        tensors,
        truth,
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn load_entry(dir: &Path, name: &str, entry: &TensorEntry, expected: &[usize]) -> Result<ArrayD<f64>> {
    if entry.shape != expected {
        return Err(Error::DimensionMismatch {
            entry: name.to_string(),
            expected: expected.to_vec(),
            found: entry.shape.clone(),
        });
    }
    let path = dir.join(&entry.path);
    if !path.exists() {
        return Err(Error::MissingTensor {
            entry: name.to_string(),
            path,
        });
    }
    let t = read_tensor(&path)?;
    if t.shape != expected {
        return Err(Error::DimensionMismatch {
            entry: name.to_string(),
            expected: expected.to_vec(),
            found: t.shape,
        });
    }
    if t.dtype() != entry.dtype {
        return Err(Error::Manifest(format!(
            "entry `{name}` declares dtype {:?} but file holds {:?}",
            entry.dtype,
            t.dtype()
        )));
    }
    Ok(t.to_array())
}

fn required<'a>(m: &'a DatasetManifest, name: &str) -> Result<&'a TensorEntry> {
    m.tensors
        .get(name)
        .ok_or_else(|| Error::Manifest(format!("missing tensor entry `{name}`")))
}

/// Loads a dataset from a manifest path (or a directory containing `manifest.json`).
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let manifest_path = if manifest_path.is_dir() {
        manifest_path.join(MANIFEST_FILE)
    } else {
        manifest_path.to_path_buf()
    };
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let m: DatasetManifest = serde_json::from_str(&text)?;
    if m.version != MANIFEST_VERSION {
        return Err(Error::Manifest(format!("unsupported version {}", m.version)));
    }
    m.dims.validate()?;
    let d = m.dims;
    let n = m.n_samples;
    if n == 0 {
        return Ok(Dataset {
            dims: d,
            samples: Vec::new(),
            truth: m.truth.as_ref().map(|_| Vec::new()),
            n_classes: m.truth.as_ref().map(|t| t.n_classes),
        });
    }
    let text = load_entry(dir, TEXT_LOCAL, required(&m, TEXT_LOCAL)?, &[n, d.words, d.embed])?
        .into_dimensionality::<Ix3>()
        .expect("rank checked");
    let image = load_entry(dir, IMAGE_LOCAL, required(&m, IMAGE_LOCAL)?, &[n, d.pixels(), d.embed])?
        .into_dimensionality::<Ix3>()
        .expect("rank checked");
    let text_g = load_entry(dir, TEXT_GLOBAL, required(&m, TEXT_GLOBAL)?, &[n, d.embed])?;
    let image_g = load_entry(dir, IMAGE_GLOBAL, required(&m, IMAGE_GLOBAL)?, &[n, d.embed])?;
    let samples = (0..n)
        .map(|k| Sample {
            text: text.index_axis(Axis(0), k).to_owned(),
            image: image.index_axis(Axis(0), k).to_owned(),
            text_global: text_g.index_axis(Axis(0), k).to_owned().into_dimensionality().expect("rank 1"),
            image_global: image_g.index_axis(Axis(0), k).to_owned().into_dimensionality().expect("rank 1"),
        })
        .collect();

    let truth = match &m.truth {
        None => None,
        Some(t) => {
            let labels = load_entry(dir, TRUTH_LABELS, &t.class_labels, &[n])?;
            let masks = load_entry(dir, TRUTH_MASKS, &t.region_masks, &[n, d.height, d.width])?;
            let n_kw = t.keyword_indices.shape.get(1).copied().unwrap_or(0);
            let kws = load_entry(dir, TRUTH_KEYWORDS, &t.keyword_indices, &[n, n_kw])?;
            let mut out = Vec::with_capacity(n);
            for k in 0..n {
                let label = labels[[k]];
                if label < 0.0 || label as usize >= t.n_classes || label.fract() != 0.0 {
                    return Err(Error::Manifest(format!("sample {k}: invalid class label {label}")));
                }
                let mask = Array2::from_shape_fn((d.height, d.width), |(i, j)| masks[[k, i, j]] != 0.0);
                let mut keyword_indices = Vec::with_capacity(n_kw);
                for j in 0..n_kw {
                    let w = kws[[k, j]];
                    if w < 0.0 || w as usize >= d.words || w.fract() != 0.0 {
                        return Err(Error::Manifest(format!("sample {k}: invalid keyword index {w}")));
                    }
                    keyword_indices.push(w as usize);
                }
                out.push(SyntheticTruth {
                    class_label: label as usize,
                    region_mask: mask,
                    keyword_indices,
                });
            }
            Some(out)
        }
    };
    Ok(Dataset {
        dims: d,
        samples,
        truth,
        n_classes: m.truth.as_ref().map(|t| t.n_classes),
    })
}
