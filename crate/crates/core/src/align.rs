//! Word-pixel local alignment for a single sample.
//!
//! The forward chain is: similarity `S = R g(I)^T`, initial word/pixel
//! importances (mean + scaled population std), joint-softmax co-importance
//! `Phi`, refined importances, balanced refined co-importance `Phi_ref`,
//! reweighted similarity `S_phi = Phi_ref * S`, per-word pooled region
//! features, and hard Gumbel top-k keyword selection.
//!
//! Each differentiable step has a matching vector-Jacobian product so the
//! trainer can backpropagate without an autodiff graph.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::Gumbel;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Affine map `x -> W x + b`, applied row-wise as `X W^T + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionParams {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl ProjectionParams {
    pub fn identity(dim: usize) -> Self {
        Self {
            weight: Array2::eye(dim),
            bias: Array1::zeros(dim),
        }
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }
}

/// Hyperparameters of one local-alignment pass and of the progressive loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignConfig {
    pub tau1: f64,
    pub tau2: f64,
    /// Initial value of the learnable word-std weight.
    pub alpha: f64,
    /// Initial value of the learnable pixel-std weight.
    pub beta: f64,
    pub keep_ratio: f64,
    pub gumbel_temperature: f64,
    pub delta: f64,
    pub iterations: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            tau1: 0.1,
            tau2: 0.1,
            alpha: 0.1,
            beta: 0.1,
            keep_ratio: 0.7,
            gumbel_temperature: 0.0,
            delta: 0.5,
            iterations: 3,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.tau1 > 0.0 && self.tau2 > 0.0) {
            return bad("tau1 and tau2 must be positive");
        }
        if !(self.keep_ratio > 0.0 && self.keep_ratio <= 1.0) {
            return bad("keep_ratio must lie in (0, 1]");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta must lie in (0, 1)");
        }
        if !(self.gumbel_temperature >= 0.0 && self.gumbel_temperature.is_finite()) {
            return bad("gumbel_temperature must be finite and >= 0");
        }
        if self.iterations == 0 {
            return bad("iterations must be >= 1");
        }
        if !(self.alpha.is_finite() && self.beta.is_finite()) {
            return bad("alpha and beta must be finite");
        }
        Ok(())
    }
}

/// Which co-importance reweights the similarity before pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Reweighting {
    /// Only the initial co-importance `Phi`; selection uses initial word importance.
    Initial,
    /// Full refinement through `Phi_ref`.
    #[default]
    Refined,
}

pub fn project_image(local_image: ArrayView2<f64>, params: &ProjectionParams) -> Array2<f64> {
    params.apply(local_image)
}

pub fn word_pixel_similarity(local_text: ArrayView2<f64>, projected_image: ArrayView2<f64>) -> Array2<f64> {
    local_text.dot(&projected_image.t())
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialImportance {
    pub word: Array1<f64>,
    pub pix: Array1<f64>,
    pub word_std: Array1<f64>,
    pub pix_std: Array1<f64>,
}

fn mean_and_pop_std(s: ArrayView2<f64>, axis: Axis) -> (Array1<f64>, Array1<f64>) {
    let mean = s.mean_axis(axis).expect("non-empty");
    let std = s.std_axis(axis, 0.0);
    (mean, std)
}

/// `gamma_word(i) = mean_j S(i,j) + alpha std_j S(i,j)`,
/// `gamma_pix(j) = mean_i S(i,j) + beta std_i S(i,j)` (population std).
pub fn initial_importance(s: ArrayView2<f64>, alpha: f64, beta: f64) -> InitialImportance {
    let (row_mean, word_std) = mean_and_pop_std(s, Axis(1));
    let (col_mean, pix_std) = mean_and_pop_std(s, Axis(0));
    InitialImportance {
        word: &row_mean + &(&word_std * alpha),
        pix: &col_mean + &(&pix_std * beta),
        word_std,
        pix_std,
    }
}

/// Softmax over every entry of `a[i] + b[j]` jointly.
pub fn joint_softmax(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let max = a.fold(f64::NEG_INFINITY, |m, &x| m.max(x)) + b.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let mut out = Array2::from_shape_fn((a.len(), b.len()), |(i, j)| (a[i] + b[j] - max).exp());
    let total = out.sum();
    out /= total;
    out
}

pub fn co_importance(gamma_word: ArrayView1<f64>, gamma_pix: ArrayView1<f64>) -> Array2<f64> {
    joint_softmax(gamma_word, gamma_pix)
}

/// `(sum_j Phi(i,j) S(i,j), sum_i Phi(i,j) S(i,j))`.
pub fn refined_importance(phi: ArrayView2<f64>, s: ArrayView2<f64>) -> (Array1<f64>, Array1<f64>) {
    let prod = &phi * &s;
    (prod.sum_axis(Axis(1)), prod.sum_axis(Axis(0)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinedCoImportance {
    pub phi_ref: Array2<f64>,
    pub w_word: f64,
    pub w_pix: f64,
    pub z: f64,
}

fn balance_weights(gamma_word_ref: ArrayView1<f64>, gamma_pix_ref: ArrayView1<f64>) -> Result<(f64, f64, f64)> {
    let sw = gamma_word_ref.sum();
    let sp = gamma_pix_ref.sum();
    let z = sw + sp;
    if z == 0.0 || !z.is_finite() {
        return Err(Error::DegenerateNormalization);
    }
    Ok((sw / z, sp / z, z))
}

/// Balanced refined co-importance. Fails when the normalizer `Z` is zero.
pub fn refined_co_importance(gamma_word_ref: ArrayView1<f64>, gamma_pix_ref: ArrayView1<f64>) -> Result<RefinedCoImportance> {
    let (w_word, w_pix, z) = balance_weights(gamma_word_ref, gamma_pix_ref)?;
    Ok(refined_with_weights(gamma_word_ref, gamma_pix_ref, w_word, w_pix, z))
}

fn refined_with_weights(gw: ArrayView1<f64>, gp: ArrayView1<f64>, w_word: f64, w_pix: f64, z: f64) -> RefinedCoImportance {
    let a = gw.mapv(|x| w_word * x);
    let b = gp.mapv(|x| w_pix * x);
    RefinedCoImportance {
        phi_ref: joint_softmax(a.view(), b.view()),
        w_word,
        w_pix,
        z,
    }
}

/// Same as [`refined_co_importance`], but a zero normalizer falls back to
/// equal weights. Returns whether the fallback was taken.
pub fn refined_co_importance_or_balanced(gw: ArrayView1<f64>, gp: ArrayView1<f64>) -> (RefinedCoImportance, bool) {
    match refined_co_importance(gw, gp) {
        Ok(r) => (r, false),
        Err(_) => (refined_with_weights(gw, gp, 0.5, 0.5, 0.0), true),
    }
}

pub fn reweight_similarity(phi_ref: ArrayView2<f64>, s: ArrayView2<f64>) -> Array2<f64> {
    &phi_ref * &s
}

/// Spatially averaged, reweighted image features per word before projection:
/// `z_i = (1/HW) sum_j S_phi(i,j) I_j`.
pub fn pooled_before_projection(s_phi: ArrayView2<f64>, local_image: ArrayView2<f64>) -> Array2<f64> {
    s_phi.dot(&local_image) / local_image.nrows() as f64
}

/// `pooled(i) = pool_params(z_i)`, one `D`-vector per word.
pub fn region_features(s_phi: ArrayView2<f64>, local_image: ArrayView2<f64>, pool: &ProjectionParams) -> Array2<f64> {
    pool.apply(pooled_before_projection(s_phi, local_image).view())
}

/// Number of keywords kept out of `rows`: `round(keep_ratio * rows)` clamped to `[1, rows]`.
pub fn keep_count(rows: usize, keep_ratio: f64) -> usize {
    ((keep_ratio * rows as f64).round() as usize).clamp(1, rows.max(1))
}

/// Hard Gumbel top-k. With temperature 0 this is deterministic top-k with
/// ties going to the lower index. The result is sorted ascending.
pub fn select_keywords(scores: ArrayView1<f64>, keep_ratio: f64, temperature: f64, rng: &mut impl Rng) -> Vec<usize> {
    let n = scores.len();
    let k = keep_count(n, keep_ratio);
    let perturbed: Vec<f64> = if temperature > 0.0 {
        let gumbel = Gumbel::new(0.0, 1.0).expect("valid gumbel");
        scores.iter().map(|&s| s + temperature * rng.sample(gumbel)).collect()
    } else {
        scores.to_vec()
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| perturbed[b].total_cmp(&perturbed[a]).then(a.cmp(&b)));
    let mut kept = order[..k].to_vec();
    kept.sort_unstable();
    kept
}

/// All intermediate tensors of one alignment pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignState {
    /// The similarity fed to the refinement (raw `S`, or the progressive blend).
    pub s: Array2<f64>,
    pub initial: InitialImportance,
    pub phi: Array2<f64>,
    pub gamma_word_ref: Array1<f64>,
    pub gamma_pix_ref: Array1<f64>,
    pub refined: RefinedCoImportance,
    pub balanced_fallback: bool,
    pub s_phi: Array2<f64>,
    /// `L_t x D` pooled region features before projection.
    pub pooled_raw: Array2<f64>,
    pub pooled_regions: Array2<f64>,
    /// Scores used for selection: `sum_j Phi_ref(i,j) S(i,j)` (or the initial
    /// word importance under [`Reweighting::Initial`]).
    pub keyword_scores: Array1<f64>,
    pub keyword_indices: Vec<usize>,
    pub reweighting: Reweighting,
}

impl AlignState {
    /// Rows of `S` at the selected keywords.
    pub fn selected_similarity(&self) -> Array2<f64> {
        self.s.select(Axis(0), &self.keyword_indices)
    }
}

#[derive(Debug, Clone)]
pub struct AlignInputs<'a> {
    pub image: ArrayView2<'a, f64>,
    pub pool: &'a ProjectionParams,
    pub alpha: f64,
    pub beta: f64,
}

/// Runs the refinement chain on an already computed similarity matrix `s`.
/// When `frozen` is given it replaces keyword selection.
pub fn align_from_similarity(
    s: Array2<f64>,
    inputs: &AlignInputs<'_>,
    config: &AlignConfig,
    reweighting: Reweighting,
    frozen: Option<&[usize]>,
    rng: &mut impl Rng,
) -> AlignState {
    let initial = initial_importance(s.view(), inputs.alpha, inputs.beta);
    let phi = co_importance(initial.word.view(), initial.pix.view());
    let (gamma_word_ref, gamma_pix_ref) = refined_importance(phi.view(), s.view());
    let (refined, balanced_fallback) = refined_co_importance_or_balanced(gamma_word_ref.view(), gamma_pix_ref.view());
    let (s_phi, keyword_scores) = match reweighting {
        Reweighting::Refined => {
            let s_phi = reweight_similarity(refined.phi_ref.view(), s.view());
            let scores = s_phi.sum_axis(Axis(1));
            (s_phi, scores)
        }
        Reweighting::Initial => (reweight_similarity(phi.view(), s.view()), initial.word.clone()),
    };
    let pooled_raw = pooled_before_projection(s_phi.view(), inputs.image);
    let pooled_regions = inputs.pool.apply(pooled_raw.view());
    let keyword_indices = match frozen {
        Some(k) => k.to_vec(),
        None => select_keywords(keyword_scores.view(), config.keep_ratio, config.gumbel_temperature, rng),
    };
    AlignState {
        s,
        initial,
        phi,
        gamma_word_ref,
        gamma_pix_ref,
        refined,
        balanced_fallback,
        s_phi,
        pooled_raw,
        pooled_regions,
        keyword_scores,
        keyword_indices,
        reweighting,
    }
}

/// Trainable parameters of the alignment head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignParams {
    /// `g`, mapping pixel features into the word space.
    pub g: ProjectionParams,
    /// Projection applied after spatial pooling of region features.
    pub pool: ProjectionParams,
    pub alpha: f64,
    pub beta: f64,
}

impl AlignParams {
    pub fn identity(dim: usize, alpha: f64, beta: f64) -> Self {
        Self {
            g: ProjectionParams::identity(dim),
            pool: ProjectionParams::identity(dim),
            alpha,
            beta,
        }
    }

    pub fn inputs<'a>(&'a self, image: ArrayView2<'a, f64>) -> AlignInputs<'a> {
        AlignInputs {
            image,
            pool: &self.pool,
            alpha: self.alpha,
            beta: self.beta,
        }
    }
}

/// Full single-pass local alignment from raw local features.
pub fn run_local_alignment(
    local_text: ArrayView2<f64>,
    local_image: ArrayView2<f64>,
    params: &AlignParams,
    config: &AlignConfig,
    rng: &mut impl Rng,
) -> Result<AlignState> {
    if local_text.ncols() != local_image.ncols() {
        return Err(Error::Shape(format!(
            "text D={} differs from image D={}",
            local_text.ncols(),
            local_image.ncols()
        )));
    }
    if local_text.nrows() == 0 || local_image.nrows() == 0 {
        return Err(Error::Shape("alignment needs at least one word and one pixel".into()));
    }
    let projected = project_image(local_image, &params.g);
    let s = word_pixel_similarity(local_text, projected.view());
    Ok(align_from_similarity(s, &params.inputs(local_image), config, Reweighting::Refined, None, rng))
}

/// Gradients produced by [`align_backward`].
#[derive(Debug, Clone)]
pub struct AlignGrads {
    pub d_s: Array2<f64>,
    pub d_image: Array2<f64>,
    pub d_pool_weight: Array2<f64>,
    pub d_pool_bias: Array1<f64>,
    pub d_alpha: f64,
    pub d_beta: f64,
}

fn joint_softmax_backward(p: &Array2<f64>, d_p: &Array2<f64>) -> Array2<f64> {
    let inner = (p * d_p).sum();
    p * &(d_p - inner)
}

fn std_backward(x: ArrayView1<f64>, std: f64) -> Array1<f64> {
    let n = x.len() as f64;
    if std > 0.0 {
        let mean = x.mean().expect("non-empty");
        x.mapv(|v| (v - mean) / (n * std))
    } else {
        Array1::zeros(x.len())
    }
}

/// Backpropagates `d_pooled` (gradient w.r.t. `pooled_regions`) through the
/// alignment chain. Selection is treated as constant.
pub fn align_backward(
    state: &AlignState,
    inputs: &AlignInputs<'_>,
    d_pooled: &Array2<f64>,
) -> AlignGrads {
    let s = &state.s;
    let hw = inputs.image.nrows() as f64;
    let (rows, cols) = s.dim();

    // pooled = z W^T + b, z = S_phi I / HW
    let d_pool_bias = d_pooled.sum_axis(Axis(0));
    let d_pool_weight = d_pooled.t().dot(&state.pooled_raw);
    let d_z = d_pooled.dot(&inputs.pool.weight);
    let d_s_phi = d_z.dot(&inputs.image.t()) / hw;
    let d_image = state.s_phi.t().dot(&d_z) / hw;

    let mut d_s = Array2::<f64>::zeros((rows, cols));
    let d_phi = match state.reweighting {
        Reweighting::Initial => {
            d_s += &(&d_s_phi * &state.phi);
            &d_s_phi * s
        }
        Reweighting::Refined => {
            let phi_ref = &state.refined.phi_ref;
            d_s += &(&d_s_phi * phi_ref);
            let d_phi_ref = &d_s_phi * s;
            let d_logits = joint_softmax_backward(phi_ref, &d_phi_ref);
            let (w_word, w_pix) = (state.refined.w_word, state.refined.w_pix);
            let row = d_logits.sum_axis(Axis(1));
            let col = d_logits.sum_axis(Axis(0));
            let mut d_gw = &row * w_word;
            let mut d_gp = &col * w_pix;
            if !state.balanced_fallback {
                let d_ww = state.gamma_word_ref.dot(&row);
                let d_wp = state.gamma_pix_ref.dot(&col);
                let z = state.refined.z;
                let sw = state.gamma_word_ref.sum();
                let sp = state.gamma_pix_ref.sum();
                let d_sw = sp * (d_ww - d_wp) / (z * z);
                let d_sp = sw * (d_wp - d_ww) / (z * z);
                d_gw += d_sw;
                d_gp += d_sp;
            }
            // gamma_word_ref(i) = sum_j Phi S, gamma_pix_ref(j) = sum_i Phi S
            let spread = Array2::from_shape_fn((rows, cols), |(i, j)| d_gw[i] + d_gp[j]);
            d_s += &(&spread * &state.phi);
            &spread * s
        }
    };

    let d_logits0 = joint_softmax_backward(&state.phi, &d_phi);
    let d_word = d_logits0.sum_axis(Axis(1));
    let d_pix = d_logits0.sum_axis(Axis(0));
    let d_alpha = d_word.dot(&state.initial.word_std);
    let d_beta = d_pix.dot(&state.initial.pix_std);
    for i in 0..rows {
        let g = std_backward(s.row(i), state.initial.word_std[i]);
        let mut r = d_s.row_mut(i);
        r += d_word[i] / cols as f64;
        r.scaled_add(inputs.alpha * d_word[i], &g);
    }
    for j in 0..cols {
        let g = std_backward(s.column(j), state.initial.pix_std[j]);
        let mut c = d_s.column_mut(j);
        c += d_pix[j] / rows as f64;
        c.scaled_add(inputs.beta * d_pix[j], &g);
    }

    AlignGrads {
        d_s,
        d_image,
        d_pool_weight,
        d_pool_bias,
        d_alpha,
        d_beta,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((r, c), || rng.sample(StandardNormal))
    }

    fn close(a: &Array2<f64>, b: &Array2<f64>, tol: f64) -> bool {
        a.shape() == b.shape() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn projection_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = randn(&mut rng, 3, 2);
        assert_eq!(project_image(x.view(), &ProjectionParams::identity(2)), x);
        let constant = ProjectionParams { weight: Array2::zeros((2, 2)), bias: array![1.5, -2.0] };
        let out = project_image(x.view(), &constant);
        for row in out.rows() {
            assert_eq!(row, array![1.5, -2.0]);
        }
    }

    #[test]
    fn similarity_cases() {
        let eye = Array2::<f64>::eye(3);
        let s = word_pixel_similarity(eye.view(), eye.view());
        assert_eq!(s, eye);
        let text = array![[1.0, 2.0], [3.0, 4.0]];
        let zero = Array2::<f64>::zeros((5, 2));
        assert_eq!(word_pixel_similarity(text.view(), zero.view()), Array2::<f64>::zeros((2, 5)));
    }

    #[test]
    fn initial_importance_cases() {
        let c = Array2::from_elem((3, 4), 2.5);
        let imp = initial_importance(c.view(), 0.7, -0.3);
        assert!(imp.word.iter().chain(imp.pix.iter()).all(|&x| x == 2.5));

        let s = array![[1.0, 3.0], [2.0, 2.0]];
        let imp = initial_importance(s.view(), 1.0, 1.0);
        assert_eq!(imp.word, array![3.0, 2.0]);
        assert_eq!(imp.pix, array![2.0, 3.0]);

        let imp = initial_importance(s.view(), 0.0, 0.0);
        assert_eq!(imp.word, array![2.0, 2.0]);
        assert_eq!(imp.pix, array![1.5, 2.5]);
    }

    #[test]
    fn co_importance_cases() {
        let phi = co_importance(array![1.0, 1.0, 1.0].view(), array![4.0, 4.0].view());
        assert!(phi.iter().all(|&p| (p - 1.0 / 6.0).abs() < 1e-15));

        let phi = co_importance(array![3.0, 2.0].view(), array![2.0, 3.0].view());
        let expected = array![[0.1966, 0.5344], [0.0723, 0.1966]];
        assert!(close(&phi, &expected, 1e-3), "{phi}");

        let a = array![0.3, -1.0, 2.0];
        let b = array![0.5, 0.1];
        let shifted = co_importance((&a + 7.0).view(), (&b + 7.0).view());
        assert!(close(&co_importance(a.view(), b.view()), &shifted, 1e-12));
    }

    #[test]
    fn refined_importance_cases() {
        let phi = Array2::from_elem((2, 3), 1.0 / 6.0);
        let s = Array2::from_elem((2, 3), 1.2);
        let (w, p) = refined_importance(phi.view(), s.view());
        assert!(w.iter().all(|&x| (x - 1.2 / 2.0).abs() < 1e-15));
        assert!((w.sum() - p.sum()).abs() < 1e-15);
    }

    #[test]
    fn refined_co_importance_cases() {
        let sym = refined_co_importance(array![1.0, 2.0].view(), array![1.5, 1.5].view()).unwrap();
        assert_eq!((sym.w_word, sym.w_pix), (0.5, 0.5));
        let constant = refined_co_importance(array![0.2, 0.2].view(), array![0.1, 0.1, 0.1].view()).unwrap();
        assert!(constant.phi_ref.iter().all(|&p| (p - 1.0 / 6.0).abs() < 1e-15));
        assert!(matches!(
            refined_co_importance(array![1.0, -1.0].view(), array![0.0].view()),
            Err(Error::DegenerateNormalization)
        ));
        let (fallback, used) = refined_co_importance_or_balanced(array![1.0, -1.0].view(), array![0.0].view());
        assert!(used);
        assert_eq!((fallback.w_word, fallback.w_pix), (0.5, 0.5));
    }

    #[test]
    fn reweight_and_region_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = randn(&mut rng, 2, 3);
        let uniform = Array2::from_elem((2, 3), 1.0 / 6.0);
        assert!(close(&reweight_similarity(uniform.view(), s.view()), &(&s / 6.0), 1e-15));
        assert_eq!(reweight_similarity(uniform.view(), Array2::zeros((2, 3)).view()), Array2::<f64>::zeros((2, 3)));

        let image = randn(&mut rng, 4, 2);
        let mut one_hot = Array2::zeros((2, 4));
        one_hot[(0, 2)] = 1.0;
        one_hot[(1, 0)] = 1.0;
        let pooled = region_features(one_hot.view(), image.view(), &ProjectionParams::identity(2));
        assert!(close(&pooled.row(0).to_owned().insert_axis(Axis(0)), &(image.row(2).to_owned().insert_axis(Axis(0)) / 4.0), 1e-15));
        assert!(close(&pooled.row(1).to_owned().insert_axis(Axis(0)), &(image.row(0).to_owned().insert_axis(Axis(0)) / 4.0), 1e-15));

        let pool = ProjectionParams { weight: randn(&mut rng, 2, 2), bias: array![0.25, -4.0] };
        let zero = region_features(Array2::zeros((3, 4)).view(), image.view(), &pool);
        for row in zero.rows() {
            assert_eq!(row, array![0.25, -4.0]);
        }
    }

    #[test]
    fn keyword_selection_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gamma = array![0.1, 0.9, 0.5];
        assert_eq!(select_keywords(gamma.view(), 0.67, 0.0, &mut rng), vec![1, 2]);
        assert_eq!(select_keywords(gamma.view(), 1.0, 0.0, &mut rng), vec![0, 1, 2]);
        assert_eq!(select_keywords(gamma.view(), 1.0, 2.0, &mut rng), vec![0, 1, 2]);
        // ties go to lower index
        assert_eq!(select_keywords(array![1.0, 1.0, 1.0, 0.0].view(), 0.5, 0.0, &mut rng), vec![0, 1]);
        assert_eq!(keep_count(1, 0.1), 1);
        assert_eq!(keep_count(5, 0.6), 3);
        assert_eq!(keep_count(3, 0.6), 2);
    }

    #[test]
    fn gumbel_selection_is_reproducible_and_exchangeable() {
        let gamma = Array1::from_elem(5, 0.3);
        let a = select_keywords(gamma.view(), 0.4, 1.0, &mut ChaCha8Rng::seed_from_u64(9));
        let b = select_keywords(gamma.view(), 0.4, 1.0, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);

        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let trials = 10_000;
        let mut counts = [0usize; 5];
        for _ in 0..trials {
            for i in select_keywords(gamma.view(), 0.4, 1.0, &mut rng) {
                counts[i] += 1;
            }
        }
        let p = 2.0 / 5.0;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - trials as f64 * p).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }
}
