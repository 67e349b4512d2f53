//! Global and local contrastive objectives with exact gradients.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalLoss {
    /// Image anchors against all reports in the batch.
    pub report_from_image: f64,
    /// Report anchors against all images in the batch.
    pub image_from_report: f64,
    pub total: f64,
    pub d_image: Array2<f64>,
    pub d_text: Array2<f64>,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn row_softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let lse = log_sum_exp(row.iter().copied());
        row.mapv_inplace(|v| (v - lse).exp());
    }
    out
}

/// Symmetric batch InfoNCE over global embeddings; row `n` of each input is a pair.
pub fn global_contrastive_loss(image: ArrayView2<f64>, text: ArrayView2<f64>, tau1: f64) -> GlobalLoss {
    let b = image.nrows();
    let logits = image.dot(&text.t()) / tau1;
    let diag: f64 = logits.diag().sum();
    let rows: f64 = logits.rows().into_iter().map(|r| log_sum_exp(r.iter().copied())).sum();
    let cols: f64 = logits.columns().into_iter().map(|c| log_sum_exp(c.iter().copied())).sum();
    let report_from_image = (rows - diag) / b as f64;
    let image_from_report = (cols - diag) / b as f64;

    let eye = Array2::<f64>::eye(b);
    let p_rows = row_softmax(&logits);
    let p_cols = row_softmax(&logits.t().to_owned()).reversed_axes();
    let d_logits = (&p_rows - &eye + &p_cols - &eye) / b as f64;
    let d_image = d_logits.dot(&text) / tau1;
    let d_text = d_logits.t().dot(&image) / tau1;
    GlobalLoss {
        report_from_image,
        image_from_report,
        total: report_from_image + image_from_report,
        d_image,
        d_text,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalLoss {
    /// Region anchors: positive `pooled_i . word_i` against all region-word pairs.
    pub image_from_report: f64,
    /// Word anchors: positive `word_i . pooled_i` against all word-region pairs.
    pub report_from_image: f64,
    pub total: f64,
    pub d_pooled: Array2<f64>,
    pub d_words: Array2<f64>,
}

/// One direction: mean over keywords of `lse(all pairs) - logits(i, i)`.
/// Returns the loss and `d logits`.
fn all_pairs_direction(logits: &Array2<f64>, keywords: &[usize]) -> (f64, Array2<f64>) {
    let lse = log_sum_exp(logits.iter().copied());
    let k = keywords.len() as f64;
    let loss = keywords.iter().map(|&i| lse - logits[(i, i)]).sum::<f64>() / k;
    let mut d = logits.mapv(|v| (v - lse).exp());
    for &i in keywords {
        d[(i, i)] -= 1.0 / k;
    }
    (loss, d)
}

/// Local contrastive loss for one sample. The normalization set is every one
/// of the `L_t x L_t` region-word pairs.
pub fn local_contrastive_loss(
    pooled: ArrayView2<f64>,
    words: ArrayView2<f64>,
    keywords: &[usize],
    tau2: f64,
) -> Result<LocalLoss> {
    if keywords.is_empty() {
        return Err(Error::Shape("local loss needs at least one keyword".into()));
    }
    if pooled.dim() != words.dim() {
        return Err(Error::Shape(format!("pooled {:?} vs words {:?}", pooled.dim(), words.dim())));
    }
    if let Some(&bad) = keywords.iter().find(|&&i| i >= words.nrows()) {
        return Err(Error::Shape(format!("keyword index {bad} out of range")));
    }
    // region a, word b
    let region_word = pooled.dot(&words.t()) / tau2;
    let (image_from_report, d_rw) = all_pairs_direction(&region_word, keywords);
    // word b, region a
    let word_region = words.dot(&pooled.t()) / tau2;
    let (report_from_image, d_wr) = all_pairs_direction(&word_region, keywords);

    let d_pooled = (d_rw.dot(&words) + d_wr.t().dot(&words)) / tau2;
    let d_words = (d_rw.t().dot(&pooled) + d_wr.dot(&pooled)) / tau2;
    Ok(LocalLoss {
        image_from_report,
        report_from_image,
        total: image_from_report + report_from_image,
        d_pooled,
        d_words,
    })
}

/// Batch average of the per-sample local losses; gradients are scaled by `1/B`.
pub fn batch_local_loss(items: &[(ArrayView2<f64>, ArrayView2<f64>, &[usize])], tau2: f64) -> Result<(f64, Vec<LocalLoss>)> {
    let b = items.len() as f64;
    let mut total = 0.0;
    let mut out = Vec::with_capacity(items.len());
    for (pooled, words, kws) in items {
        let mut l = local_contrastive_loss(pooled.view(), words.view(), kws, tau2)?;
        total += l.total;
        l.d_pooled /= b;
        l.d_words /= b;
        out.push(l);
    }
    Ok((total / b, out))
}

/// `(1/T) sum_t (L_g^t + L_l^t)`.
pub fn total_objective(per_iteration: &[(f64, f64)], iterations: usize) -> Result<f64> {
    if iterations == 0 || per_iteration.len() != iterations {
        return Err(Error::InvalidConfig(format!(
            "expected {iterations} iteration losses, got {}",
            per_iteration.len()
        )));
    }
    Ok(per_iteration.iter().map(|(g, l)| g + l).sum::<f64>() / iterations as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Axis};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((r, c), || rng.sample(StandardNormal))
    }

    #[test]
    fn global_single_pair_is_zero() {
        let l = global_contrastive_loss(array![[0.3, 0.4]].view(), array![[-1.0, 2.0]].view(), 0.07);
        assert_eq!(l.total, 0.0);
    }

    #[test]
    fn global_identical_embeddings() {
        let e = Array2::from_elem((4, 3), 0.5);
        let l = global_contrastive_loss(e.view(), e.view(), 0.2);
        assert!((l.total - 2.0 * 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn local_single_word_is_zero() {
        let l = local_contrastive_loss(array![[0.3, 0.4]].view(), array![[1.0, 2.0]].view(), &[0], 0.5).unwrap();
        assert_eq!(l.image_from_report, 0.0);
        assert_eq!(l.report_from_image, 0.0);
    }

    #[test]
    fn local_identical_embeddings() {
        let e = Array2::from_elem((3, 2), 0.1);
        let l = local_contrastive_loss(e.view(), e.view(), &[0, 2], 1.0).unwrap();
        assert!((l.image_from_report - 9f64.ln()).abs() < 1e-12);
        assert!((l.total - 2.0 * 9f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn local_loss_errors() {
        let e = Array2::from_elem((3, 2), 0.1);
        assert!(local_contrastive_loss(e.view(), e.view(), &[], 1.0).is_err());
        assert!(local_contrastive_loss(e.view(), e.view(), &[3], 1.0).is_err());
    }

    #[test]
    fn total_objective_cases() {
        assert_eq!(total_objective(&[(1.5, 2.0)], 1).unwrap(), 3.5);
        assert_eq!(total_objective(&[(1.0, 2.0); 4], 4).unwrap(), 3.0);
        assert_eq!(total_objective(&[(1.0, 2.0), (3.0, 4.0), (5.0, 6.0)], 3).unwrap(), 7.0);
        assert!(total_objective(&[(1.0, 2.0)], 2).is_err());
    }

    #[test]
    fn losses_are_shift_invariant_in_logits() {
        // Adding a constant to every logit: append a coordinate c*tau to all
        // image rows and 1 to all text rows.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = randn(&mut rng, 3, 2);
        let txt = randn(&mut rng, 3, 2);
        let tau = 0.5;
        let base = global_contrastive_loss(img.view(), txt.view(), tau).total;
        let shift = 40.0;
        let img2 = ndarray::concatenate(Axis(1), &[img.view(), Array2::from_elem((3, 1), shift * tau).view()]).unwrap();
        let txt2 = ndarray::concatenate(Axis(1), &[txt.view(), Array2::from_elem((3, 1), 1.0).view()]).unwrap();
        let shifted = global_contrastive_loss(img2.view(), txt2.view(), tau).total;
        assert!((base - shifted).abs() < 1e-10);

        let p = randn(&mut rng, 4, 3);
        let w = randn(&mut rng, 4, 3);
        let base = local_contrastive_loss(p.view(), w.view(), &[1, 3], tau).unwrap().total;
        let p2 = ndarray::concatenate(Axis(1), &[p.view(), Array2::from_elem((4, 1), shift * tau).view()]).unwrap();
        let w2 = ndarray::concatenate(Axis(1), &[w.view(), Array2::from_elem((4, 1), 1.0).view()]).unwrap();
        let shifted = local_contrastive_loss(p2.view(), w2.view(), &[1, 3], tau).unwrap().total;
        assert!((base - shifted).abs() < 1e-10);
    }

    proptest::proptest! {
        #[test]
        fn losses_are_nonnegative(seed in 0u64..500, b in 1usize..6, tau in 0.05f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = randn(&mut rng, b, 3);
            let txt = randn(&mut rng, b, 3);
            let g = global_contrastive_loss(img.view(), txt.view(), tau);
            proptest::prop_assert!(g.total >= 0.0 && g.total.is_finite());
            let l = local_contrastive_loss(img.view(), txt.view(), &[0], tau).unwrap();
            proptest::prop_assert!(l.total >= 0.0 && l.total.is_finite());
        }
    }
}
