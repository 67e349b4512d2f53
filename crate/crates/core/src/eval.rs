//! Grounding, retrieval and probing metrics plus heatmap export.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::align::{project_image, AlignConfig, AlignParams};
use crate::dataset::{Dataset, Dims, Sample};
use crate::error::{Error, Result};
use crate::progressive::{run_progressive, ProgressiveState};
use crate::synth::pool_global;

/// Value reported when both variances vanish but the means differ.
pub const CNR_CAP: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Heatmap {
    pub values: Array2<f64>,
    pub word_indices: Vec<usize>,
    pub sample: usize,
}

/// Selection at evaluation is deterministic.
pub fn eval_config(align: &AlignConfig) -> AlignConfig {
    AlignConfig { gumbel_temperature: 0.0, ..align.clone() }
}

/// Runs the progressive refinement on one sample with deterministic selection.
pub fn refine_sample(params: &AlignParams, align: &AlignConfig, sample: &Sample) -> Result<ProgressiveState> {
    let config = eval_config(align);
    let (state, _) = run_progressive(sample.text.view(), sample.image.view(), params, &config, |_| {
        ChaCha8Rng::seed_from_u64(0)
    })?;
    Ok(state)
}

/// Mean of the words' last refined rows, reshaped to `H x W`. Words pruned
/// before the final iteration contribute the row they had when last kept.
pub fn heatmap_from_state(state: &ProgressiveState, dims: Dims, words: &[usize], sample: usize) -> Result<Heatmap> {
    if words.is_empty() {
        return Err(Error::Shape("heatmap needs at least one word".into()));
    }
    if let Some(&w) = words.iter().find(|&&w| w >= dims.words) {
        return Err(Error::Shape(format!("word index {w} out of range for L={}", dims.words)));
    }
    let rows: Vec<ArrayView1<'_, f64>> = words.iter().filter_map(|&w| state.last_row(w)).collect();
    if rows.is_empty() {
        return Err(Error::NoSignal);
    }
    let mut sum = Array1::<f64>::zeros(dims.pixels());
    for r in &rows {
        sum += r;
    }
    sum /= rows.len() as f64;
    let values = sum.into_shape_with_order((dims.height, dims.width)).map_err(|e| Error::Shape(e.to_string()))?;
    Ok(Heatmap { values, word_indices: words.to_vec(), sample })
}

pub fn similarity_heatmap(
    params: &AlignParams,
    align: &AlignConfig,
    dataset: &Dataset,
    sample: usize,
    words: &[usize],
) -> Result<Heatmap> {
    let s = dataset
        .samples
        .get(sample)
        .ok_or_else(|| Error::Shape(format!("sample {sample} out of range for {} samples", dataset.len())))?;
    let state = refine_sample(params, align, s)?;
    heatmap_from_state(&state, dataset.dims, words, sample)
}

fn mean_var<'a>(values: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    let v: Vec<f64> = values.copied().collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

/// `|mu_in - mu_out| / sqrt(var_in + var_out)` with population variances.
pub fn cnr(values: ArrayView2<f64>, mask: ArrayView2<bool>) -> Result<f64> {
    if values.dim() != mask.dim() {
        return Err(Error::Shape(format!("heatmap {:?} vs mask {:?}", values.dim(), mask.dim())));
    }
    let inside: Vec<&f64> = values.iter().zip(mask.iter()).filter(|(_, &m)| m).map(|(v, _)| v).collect();
    let outside: Vec<&f64> = values.iter().zip(mask.iter()).filter(|(_, &m)| !m).map(|(v, _)| v).collect();
    if inside.is_empty() || outside.is_empty() {
        return Err(Error::DegenerateMask);
    }
    let (mi, vi) = mean_var(inside.into_iter());
    let (mo, vo) = mean_var(outside.into_iter());
    let diff = (mi - mo).abs();
    if diff == 0.0 {
        return Ok(0.0);
    }
    let denom = (vi + vo).sqrt();
    Ok(if denom == 0.0 { CNR_CAP } else { (diff / denom).min(CNR_CAP) })
}

fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        a.dot(&b) / (na * nb)
    }
}

/// Fraction of each query's top-`k` candidates (by cosine, ties by index)
/// sharing its label, averaged over queries.
pub fn precision_at_k(
    queries: ArrayView2<f64>,
    candidates: ArrayView2<f64>,
    query_labels: &[usize],
    candidate_labels: &[usize],
    k: usize,
) -> Result<f64> {
    if k == 0 || k > candidates.nrows() {
        return Err(Error::InvalidConfig(format!("k={k} must lie in 1..={}", candidates.nrows())));
    }
    if queries.nrows() != query_labels.len() || candidates.nrows() != candidate_labels.len() {
        return Err(Error::Shape("labels must match embedding rows".into()));
    }
    if queries.ncols() != candidates.ncols() {
        return Err(Error::Shape("query and candidate widths differ".into()));
    }
    if queries.nrows() == 0 {
        return Err(Error::Shape("no queries".into()));
    }
    let mut total = 0.0;
    for (q, &label) in queries.rows().into_iter().zip(query_labels) {
        let mut ranked: Vec<(usize, f64)> =
            candidates.rows().into_iter().enumerate().map(|(i, c)| (i, cosine(q, c))).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let hits = ranked[..k].iter().filter(|(i, _)| candidate_labels[*i] == label).count();
        total += hits as f64 / k as f64;
    }
    Ok(total / queries.nrows() as f64)
}

/// Linear-interpolation quantile of `values` at `q`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Cells whose value is at least the `q`-quantile.
pub fn heatmap_to_mask(values: ArrayView2<f64>, q: f64) -> Result<Array2<bool>> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidConfig(format!("quantile must lie in (0, 1), got {q}")));
    }
    let flat: Vec<f64> = values.iter().copied().collect();
    let threshold = quantile(&flat, q);
    Ok(values.mapv(|v| v >= threshold))
}

fn counts(a: ArrayView2<bool>, b: ArrayView2<bool>) -> Result<(usize, usize, usize)> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("masks {:?} vs {:?}", a.dim(), b.dim())));
    }
    let inter = a.iter().zip(b.iter()).filter(|(x, y)| **x && **y).count();
    let na = a.iter().filter(|x| **x).count();
    let nb = b.iter().filter(|x| **x).count();
    Ok((inter, na, nb))
}

/// Intersection over union; two empty masks score 1.
pub fn iou(a: ArrayView2<bool>, b: ArrayView2<bool>) -> Result<f64> {
    let (inter, na, nb) = counts(a, b)?;
    let union = na + nb - inter;
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Dice coefficient; two empty masks score 1.
pub fn dice(a: ArrayView2<bool>, b: ArrayView2<bool>) -> Result<f64> {
    let (inter, na, nb) = counts(a, b)?;
    Ok(if na + nb == 0 { 1.0 } else { 2.0 * inter as f64 / (na + nb) as f64 })
}

pub const PROBE_MAX_ITERS: usize = 10_000;
pub const PROBE_GRAD_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeResult {
    pub accuracy: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

/// Multinomial logistic regression fitted by full-batch gradient descent on
/// the training split, scored on the test split.
pub fn linear_probe(
    train_x: ArrayView2<f64>,
    train_y: &[usize],
    test_x: ArrayView2<f64>,
    test_y: &[usize],
) -> Result<ProbeResult> {
    if train_x.nrows() != train_y.len() || test_x.nrows() != test_y.len() {
        return Err(Error::Shape("labels must match feature rows".into()));
    }
    if train_x.ncols() != test_x.ncols() {
        return Err(Error::Shape("train and test widths differ".into()));
    }
    if test_y.is_empty() {
        return Err(Error::Shape("empty test split".into()));
    }
    let mut present: Vec<usize> = train_y.to_vec();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::SingleClass);
    }
    let classes = train_y.iter().chain(test_y).max().copied().unwrap_or(0) + 1;
    let (n, d) = train_x.dim();
    let x = ndarray::concatenate(Axis(1), &[train_x, Array2::ones((n, 1)).view()]).expect("same rows");
    let mut w = Array2::<f64>::zeros((d + 1, classes));
    // feature rows are bounded, so this step is stable
    let scale = x.rows().into_iter().map(|r| r.dot(&r)).fold(0.0, f64::max);
    let lr = 1.0 / scale.max(1.0);
    let mut onehot = Array2::<f64>::zeros((n, classes));
    for (i, &y) in train_y.iter().enumerate() {
        onehot[(i, y)] = 1.0;
    }
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;
    while iterations < PROBE_MAX_ITERS {
        let mut p = x.dot(&w);
        for mut row in p.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|v| (v - max).exp());
            let s = row.sum();
            row /= s;
        }
        let grad = x.t().dot(&(p - &onehot)) / n as f64;
        grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if grad_norm < PROBE_GRAD_TOL {
            break;
        }
        w.scaled_add(-lr * 2.0, &grad);
        iterations += 1;
    }
    let xt = ndarray::concatenate(Axis(1), &[test_x, Array2::ones((test_x.nrows(), 1)).view()]).expect("same rows");
    let logits = xt.dot(&w);
    let correct = logits
        .rows()
        .into_iter()
        .zip(test_y)
        .filter(|(row, &y)| {
            let best = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap_or(0);
            best == y
        })
        .count();
    Ok(ProbeResult { accuracy: correct as f64 / test_y.len() as f64, iterations, grad_norm })
}

/// Writes a binary PGM scaled min-to-max onto 0..=255; constant maps to 128.
pub fn export_heatmap_pgm(values: ArrayView2<f64>, path: &Path) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let (h, w) = values.dim();
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend(values.iter().map(|&v| {
        if max > min {
            ((v - min) / (max - min) * 255.0).round() as u8
        } else {
            128
        }
    }));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Parses a binary PGM written by [`export_heatmap_pgm`] into `H x W` pixels.
pub fn read_pgm(path: &Path) -> Result<Array2<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Truncated { path: path.into(), expected: pos as u64 + 1, found: bytes.len() as u64 });
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(Error::BadMagic(path.into()));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Shape(format!("bad PGM header field `{s}`")));
    let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval != 255 {
        return Err(Error::Shape(format!("unsupported PGM maxval {maxval}")));
    }
    let data = bytes.get(pos..).unwrap_or(&[]);
    if data.len() != w * h {
        return Err(Error::Truncated { path: path.into(), expected: (pos + w * h) as u64, found: bytes.len() as u64 });
    }
    Ok(Array2::from_shape_vec((h, w), data.to_vec()).expect("sized"))
}

/// Global embeddings under `params`: projected-pixel pools and word pools.
pub fn global_features(params: &AlignParams, dataset: &Dataset) -> (Array2<f64>, Array2<f64>) {
    let d = dataset.dims.embed;
    let n = dataset.len();
    let mut image = Array2::zeros((n, d));
    let mut text = Array2::zeros((n, d));
    for (i, s) in dataset.samples.iter().enumerate() {
        image.row_mut(i).assign(&pool_global(project_image(s.image.view(), &params.g).view()));
        text.row_mut(i).assign(&pool_global(s.text.view()));
    }
    (image, text)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleGrounding {
    pub sample: usize,
    /// `None` when every phrase word was pruned at the first iteration.
    pub cnr: Option<f64>,
    pub iou: Option<f64>,
    pub dice: Option<f64>,
    pub argmax_inside: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundingReport {
    pub quantile: f64,
    pub samples: Vec<SampleGrounding>,
    pub mean_cnr: f64,
    pub mean_iou: f64,
    pub mean_dice: f64,
    pub argmax_inside_rate: f64,
    pub no_signal: usize,
}

fn truth(dataset: &Dataset) -> Result<&[crate::synth::SyntheticTruth]> {
    dataset
        .truth
        .as_deref()
        .ok_or_else(|| Error::Manifest("dataset carries no ground truth".into()))
}

/// Grounds each sample's planted keywords and scores the heatmap against the
/// planted rectangle. Samples without signal are excluded from the means.
pub fn evaluate_grounding(
    params: &AlignParams,
    align: &AlignConfig,
    dataset: &Dataset,
    quantile: f64,
) -> Result<GroundingReport> {
    use rayon::prelude::*;
    let truth = truth(dataset)?;
    let samples = (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let t = &truth[i];
            match similarity_heatmap(params, align, dataset, i, &t.keyword_indices) {
                Ok(hm) => {
                    let c = cnr(hm.values.view(), t.region_mask.view())?;
                    let mask = heatmap_to_mask(hm.values.view(), quantile)?;
                    let argmax = hm
                        .values
                        .indexed_iter()
                        .max_by(|a, b| a.1.total_cmp(b.1))
                        .map(|(ix, _)| t.region_mask[ix])
                        .unwrap_or(false);
                    Ok(SampleGrounding {
                        sample: i,
                        cnr: Some(c),
                        iou: Some(iou(mask.view(), t.region_mask.view())?),
                        dice: Some(dice(mask.view(), t.region_mask.view())?),
                        argmax_inside: Some(argmax),
                    })
                }
                Err(Error::NoSignal) => Ok(SampleGrounding { sample: i, cnr: None, iou: None, dice: None, argmax_inside: None }),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let scored: Vec<&SampleGrounding> = samples.iter().filter(|s| s.cnr.is_some()).collect();
    let mean = |f: &dyn Fn(&SampleGrounding) -> f64| {
        if scored.is_empty() {
            0.0
        } else {
            scored.iter().map(|s| f(s)).sum::<f64>() / scored.len() as f64
        }
    };
    Ok(GroundingReport {
        quantile,
        mean_cnr: mean(&|s| s.cnr.unwrap()),
        mean_iou: mean(&|s| s.iou.unwrap()),
        mean_dice: mean(&|s| s.dice.unwrap()),
        argmax_inside_rate: mean(&|s| if s.argmax_inside.unwrap() { 1.0 } else { 0.0 }),
        no_signal: samples.len() - scored.len(),
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalReport {
    pub queries: usize,
    /// `(k, precision)` for image-to-report retrieval.
    pub image_to_report: Vec<(usize, f64)>,
    pub report_to_image: Vec<(usize, f64)>,
}

pub fn evaluate_retrieval(params: &AlignParams, dataset: &Dataset, ks: &[usize]) -> Result<RetrievalReport> {
    let labels: Vec<usize> = truth(dataset)?.iter().map(|t| t.class_label).collect();
    let (image, text) = global_features(params, dataset);
    let run = |q: &Array2<f64>, c: &Array2<f64>| -> Result<Vec<(usize, f64)>> {
        ks.iter().map(|&k| Ok((k, precision_at_k(q.view(), c.view(), &labels, &labels, k)?))).collect()
    };
    Ok(RetrievalReport {
        queries: labels.len(),
        image_to_report: run(&image, &text)?,
        report_to_image: run(&text, &image)?,
    })
}

/// Probe on global image features with the first `train_fraction` of
/// samples as training split.
pub fn evaluate_probe(params: &AlignParams, dataset: &Dataset, train_fraction: f64) -> Result<ProbeResult> {
    let labels: Vec<usize> = truth(dataset)?.iter().map(|t| t.class_label).collect();
    let (image, _) = global_features(params, dataset);
    let split = ((labels.len() as f64) * train_fraction).round() as usize;
    if split == 0 || split >= labels.len() {
        return Err(Error::InvalidConfig(format!("train fraction {train_fraction} leaves an empty split")));
    }
    linear_probe(
        image.slice(ndarray::s![..split, ..]),
        &labels[..split],
        image.slice(ndarray::s![split.., ..]),
        &labels[split..],
    )
}
