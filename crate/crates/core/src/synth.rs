//! Synthetic paired datasets with planted word-region correspondences.
//!
//! Each sample belongs to one class `c`. A class concept vector is added to
//! every pixel of a random rectangle and to `n_keywords` random word slots;
//! the remaining words carry filler vectors drawn from a pool shared by all
//! classes. Everything is perturbed by isotropic Gaussian noise.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Dims, Sample};
use crate::error::{Error, Result};
use crate::rng::{substream, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionRange {
    pub h_min: usize,
    pub h_max: usize,
    pub w_min: usize,
    pub w_max: usize,
}

/// Which vector marks a class inside the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageConcepts {
    /// Pixels carry the same vector as the keywords.
    #[default]
    Shared,
    /// Pixels carry a second orthonormal set, orthogonal to every text
    /// concept, so an untrained projection sees no alignment.
    Distinct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_samples: usize,
    pub n_classes: usize,
    #[serde(rename = "L")]
    pub words: usize,
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
    #[serde(rename = "D")]
    pub embed: usize,
    pub n_keywords: usize,
    pub region: RegionRange,
    pub noise_sigma: f64,
    pub seed: u64,
    #[serde(default)]
    pub image_concepts: ImageConcepts,
    #[serde(default = "default_filler_pool")]
    pub filler_pool: usize,
}

fn default_filler_pool() -> usize {
    4
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_samples: 500,
            n_classes: 5,
            words: 12,
            height: 8,
            width: 8,
            embed: 16,
            n_keywords: 3,
            region: RegionRange { h_min: 2, h_max: 4, w_min: 2, w_max: 4 },
            noise_sigma: 0.3,
            seed: 0,
            image_concepts: ImageConcepts::Shared,
            filler_pool: default_filler_pool(),
        }
    }
}

impl SynthSpec {
    pub fn dims(&self) -> Dims {
        Dims {
            words: self.words,
            height: self.height,
            width: self.width,
            embed: self.embed,
        }
    }

    fn concept_count(&self) -> usize {
        match self.image_concepts {
            ImageConcepts::Shared => self.n_classes,
            ImageConcepts::Distinct => 2 * self.n_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        self.dims().validate().map_err(|e| Error::InvalidSpec(e.to_string()))?;
        if self.n_classes == 0 {
            return bad("n_classes must be >= 1".into());
        }
        if self.n_keywords == 0 || self.n_keywords >= self.words {
            return bad(format!("n_keywords must be in 1..L (got {} with L={})", self.n_keywords, self.words));
        }
        let r = self.region;
        if r.h_min == 0 || r.w_min == 0 || r.h_min > r.h_max || r.w_min > r.w_max {
            return bad(format!("empty or inverted region range {r:?}"));
        }
        if r.h_max > self.height || r.w_max > self.width {
            return bad(format!("region {r:?} does not fit in {}x{}", self.height, self.width));
        }
        if r.h_max * r.w_max >= self.height * self.width {
            return bad("region may cover the whole grid, leaving no background".into());
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!("noise_sigma must be finite and >= 0 (got {})", self.noise_sigma));
        }
        if self.concept_count() > self.embed {
            return bad(format!(
                "{} concept vectors cannot be orthonormal in D={}",
                self.concept_count(),
                self.embed
            ));
        }
        if self.filler_pool == 0 {
            return bad("filler_pool must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    pub class_label: usize,
    /// `H x W`, a single axis-aligned rectangle.
    pub region_mask: Array2<bool>,
    /// Sorted word positions carrying the class concept.
    pub keyword_indices: Vec<usize>,
}

impl SyntheticTruth {
    pub fn flat_mask(&self) -> Vec<bool> {
        self.region_mask.iter().copied().collect()
    }
}

/// Fixed vectors shared by every sample of a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Concepts {
    /// `C x D` unit vectors planted at keyword slots.
    pub text: Array2<f64>,
    /// `C x D` unit vectors planted inside regions.
    pub image: Array2<f64>,
    /// `F x D` unit filler vectors.
    pub fillers: Array2<f64>,
}

fn gaussian_rows(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Classical Gram-Schmidt with one re-orthogonalization pass.
fn gram_schmidt(mut m: Array2<f64>) -> Array2<f64> {
    for i in 0..m.nrows() {
        for _ in 0..2 {
            for j in 0..i {
                let proj = m.row(i).dot(&m.row(j));
                let prev = m.row(j).to_owned();
                m.row_mut(i).scaled_add(-proj, &prev);
            }
        }
        let norm = m.row(i).dot(&m.row(i)).sqrt();
        m.row_mut(i).mapv_inplace(|x| x / norm);
    }
    m
}

pub fn make_concepts(spec: &SynthSpec) -> Concepts {
    let mut rng = substream(spec.seed, Domain::Concepts, 0, 0, 0);
    let n_concepts = spec.concept_count();
    let orthogonal_fillers = n_concepts + spec.filler_pool <= spec.embed;
    let n_orth = if orthogonal_fillers { n_concepts + spec.filler_pool } else { n_concepts };
    let basis = gram_schmidt(gaussian_rows(&mut rng, n_orth, spec.embed));
    let c = spec.n_classes;
    let text = basis.slice(ndarray::s![..c, ..]).to_owned();
    let image = match spec.image_concepts {
        ImageConcepts::Shared => text.clone(),
        ImageConcepts::Distinct => basis.slice(ndarray::s![c..2 * c, ..]).to_owned(),
    };
    let fillers = if orthogonal_fillers {
        basis.slice(ndarray::s![n_concepts.., ..]).to_owned()
    } else {
        let mut f = gaussian_rows(&mut rng, spec.filler_pool, spec.embed);
        for mut row in f.rows_mut() {
            let n = row.dot(&row).sqrt();
            row.mapv_inplace(|x| x / n);
        }
        f
    };
    Concepts { text, image, fillers }
}

fn stratified_labels(spec: &SynthSpec) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..spec.n_samples).map(|i| i % spec.n_classes).collect();
    let mut rng = substream(spec.seed, Domain::Concepts, 1, 0, 0);
    labels.shuffle(&mut rng);
    labels
}

fn generate_sample(spec: &SynthSpec, concepts: &Concepts, index: usize, class: usize) -> (Sample, SyntheticTruth) {
    let mut rng = substream(spec.seed, Domain::Sample, index as u64, 0, 0);
    let (h, w) = (spec.height, spec.width);
    let r = spec.region;
    let rh = rng.random_range(r.h_min..=r.h_max);
    let rw = rng.random_range(r.w_min..=r.w_max);
    let top = rng.random_range(0..=h - rh);
    let left = rng.random_range(0..=w - rw);
    let mask = Array2::from_shape_fn((h, w), |(i, j)| i >= top && i < top + rh && j >= left && j < left + rw);

    let mut keywords = index::sample(&mut rng, spec.words, spec.n_keywords).into_vec();
    keywords.sort_unstable();

    let sigma = spec.noise_sigma;
    let mut image = gaussian_rows(&mut rng, h * w, spec.embed).mapv(|x| sigma * x);
    for (p, &inside) in mask.iter().enumerate() {
        if inside {
            image.row_mut(p).scaled_add(1.0, &concepts.image.row(class));
        }
    }
    let mut text = gaussian_rows(&mut rng, spec.words, spec.embed).mapv(|x| sigma * x);
    for word in 0..spec.words {
        if keywords.binary_search(&word).is_ok() {
            text.row_mut(word).scaled_add(1.0, &concepts.text.row(class));
        } else {
            let f = rng.random_range(0..concepts.fillers.nrows());
            text.row_mut(word).scaled_add(1.0, &concepts.fillers.row(f));
        }
    }
    let sample = Sample {
        text_global: pool_global(text.view()),
        image_global: pool_global(image.view()),
        text,
        image,
    };
    let truth = SyntheticTruth {
        class_label: class,
        region_mask: mask,
        keyword_indices: keywords,
    };
    (sample, truth)
}

/// Generates the dataset described by `spec`. The result is a pure function
/// of the spec, seed included.
pub fn generate_dataset(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let concepts = make_concepts(spec);
    let labels = stratified_labels(spec);
    let (samples, truth): (Vec<_>, Vec<_>) = labels
        .iter()
        .enumerate()
        .map(|(i, &c)| generate_sample(spec, &concepts, i, c))
        .unzip();
    Ok(Dataset {
        dims: spec.dims(),
        samples,
        truth: Some(truth),
        n_classes: Some(spec.n_classes),
    })
}

/// Row mean followed by L2 normalization; a zero mean maps to zero.
pub fn pool_global(local: ArrayView2<f64>) -> Array1<f64> {
    let mean = local.mean_axis(Axis(0)).expect("at least one row");
    let norm = mean.dot(&mean).sqrt();
    if norm > 0.0 {
        mean / norm
    } else {
        mean
    }
}

/// Vector-Jacobian product of [`pool_global`]: returns `d local` (`M x D`).
pub fn pool_global_backward(local: ArrayView2<f64>, d_out: &Array1<f64>) -> Array2<f64> {
    let m = local.nrows();
    let mean = local.mean_axis(Axis(0)).expect("at least one row");
    let norm = mean.dot(&mean).sqrt();
    let mut d_mean = Array1::zeros(mean.len());
    if norm > 0.0 {
        let u = &mean / norm;
        d_mean = (d_out - &(&u * u.dot(d_out))) / norm;
    }
    let row = d_mean / m as f64;
    Array2::from_shape_fn((m, row.len()), |(_, j)| row[j])
}
