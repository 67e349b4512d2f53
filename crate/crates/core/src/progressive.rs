//! Progressive refinement: each iteration blends the current similarity of
//! the surviving words with the previous refined matrix, reruns the local
//! alignment on the blend and keeps the selected rows.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use crate::align::{
    align_from_similarity, project_image, word_pixel_similarity, AlignConfig, AlignParams, AlignState, Reweighting,
};
use crate::error::{Error, Result};
use crate::losses::{local_contrastive_loss, LocalLoss};

/// One entry of the progressive trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub t: usize,
    /// `K_t` as original word positions, ascending.
    pub surviving: Vec<usize>,
    /// `S~_t`, one row per entry of `surviving`.
    pub s_tilde: Array2<f64>,
    /// `(image_from_report, report_from_image)` of this iteration's local loss.
    pub local_loss: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProgressiveState {
    pub t: usize,
    pub surviving: Vec<usize>,
    pub s_tilde: Array2<f64>,
    /// Starts with the bootstrap record `t = 0` (`S~_0 := S_1`, all words).
    pub history: Vec<IterationRecord>,
}

impl ProgressiveState {
    /// `K_0` is every word and `S~_0` is the first raw similarity.
    pub fn initial(local_text: ArrayView2<f64>, local_image: ArrayView2<f64>, params: &AlignParams) -> Self {
        let projected = project_image(local_image, &params.g);
        let s = word_pixel_similarity(local_text, projected.view());
        let surviving: Vec<usize> = (0..local_text.nrows()).collect();
        Self {
            t: 0,
            history: vec![IterationRecord {
                t: 0,
                surviving: surviving.clone(),
                s_tilde: s.clone(),
                local_loss: None,
            }],
            surviving,
            s_tilde: s,
        }
    }

    /// The most recent refined row (`t >= 1`) for original word `word`, if any.
    pub fn last_row(&self, word: usize) -> Option<ndarray::ArrayView1<'_, f64>> {
        self.history.iter().skip(1).rev().find_map(|rec| {
            rec.surviving
                .iter()
                .position(|&w| w == word)
                .map(|r| rec.s_tilde.row(r))
        })
    }

    pub fn keyword_counts(&self) -> Vec<usize> {
        self.history.iter().skip(1).map(|r| r.surviving.len()).collect()
    }
}

/// Everything one iteration computed, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub t: usize,
    /// `K_{t-1}`: rows of the full text used at this iteration.
    pub rows: Vec<usize>,
    /// Whether the blend was skipped (first iteration).
    pub first: bool,
    pub align: AlignState,
    pub local: LocalLoss,
}

/// Blend of the current similarity with the previous refined rows.
pub fn blend(current: ArrayView2<f64>, previous: ArrayView2<f64>, delta: f64) -> Array2<f64> {
    &current * delta + &previous * (1.0 - delta)
}

/// Advances `state` from `t - 1` to `t`. `frozen` replaces keyword selection
/// (indices local to the surviving rows).
#[allow(clippy::too_many_arguments)]
pub fn progressive_step_traced(
    state: &ProgressiveState,
    local_text: ArrayView2<f64>,
    local_image: ArrayView2<f64>,
    projected: ArrayView2<f64>,
    params: &AlignParams,
    config: &AlignConfig,
    reweighting: Reweighting,
    frozen: Option<&[usize]>,
    rng: &mut impl Rng,
) -> Result<(ProgressiveState, StepTrace)> {
    if state.surviving.is_empty() {
        return Err(Error::Shape("progressive step needs at least one surviving word".into()));
    }
    let rows = state.surviving.clone();
    let words = local_text.select(Axis(0), &rows);
    let s_t = word_pixel_similarity(words.view(), projected);
    let first = state.t == 0;
    let m = if first {
        s_t
    } else {
        blend(s_t.view(), state.s_tilde.view(), config.delta)
    };
    let mut align = align_from_similarity(m, &params.inputs(local_image), config, reweighting, frozen, rng);
    if align.keyword_indices.is_empty() {
        // forced retention of the single top-importance row
        let top = align
            .keyword_scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap_or(0);
        align.keyword_indices = vec![top];
    }
    let local = local_contrastive_loss(align.pooled_regions.view(), words.view(), &align.keyword_indices, config.tau2)?;
    let surviving: Vec<usize> = align.keyword_indices.iter().map(|&i| rows[i]).collect();
    let s_tilde = align.s.select(Axis(0), &align.keyword_indices);
    let t = state.t + 1;
    let mut history = state.history.clone();
    history.push(IterationRecord {
        t,
        surviving: surviving.clone(),
        s_tilde: s_tilde.clone(),
        local_loss: Some((local.image_from_report, local.report_from_image)),
    });
    let next = ProgressiveState {
        t,
        surviving,
        s_tilde,
        history,
    };
    let trace = StepTrace {
        t,
        rows,
        first,
        align,
        local,
    };
    Ok((next, trace))
}

/// Single progressive update with refined reweighting.
pub fn progressive_step(
    state: &ProgressiveState,
    local_text: ArrayView2<f64>,
    local_image: ArrayView2<f64>,
    params: &AlignParams,
    config: &AlignConfig,
    rng: &mut impl Rng,
) -> Result<ProgressiveState> {
    let projected = project_image(local_image, &params.g);
    progressive_step_traced(
        state,
        local_text,
        local_image,
        projected.view(),
        params,
        config,
        Reweighting::Refined,
        None,
        rng,
    )
    .map(|(s, _)| s)
}

/// Per-iteration losses of a single sample's trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationLoss {
    pub t: usize,
    pub local_image_from_report: f64,
    pub local_report_from_image: f64,
    pub keywords: usize,
}

/// Runs `config.iterations` progressive steps from the bootstrap state.
/// `rng_for` supplies the selection stream for iteration `t`.
pub fn run_progressive<R: Rng>(
    local_text: ArrayView2<f64>,
    local_image: ArrayView2<f64>,
    params: &AlignParams,
    config: &AlignConfig,
    mut rng_for: impl FnMut(usize) -> R,
) -> Result<(ProgressiveState, Vec<IterationLoss>)> {
    config.validate()?;
    let projected = project_image(local_image, &params.g);
    let mut state = ProgressiveState::initial(local_text, local_image, params);
    let mut losses = Vec::with_capacity(config.iterations);
    for t in 1..=config.iterations {
        let mut rng = rng_for(t);
        let (next, trace) = progressive_step_traced(
            &state,
            local_text,
            local_image,
            projected.view(),
            params,
            config,
            Reweighting::Refined,
            None,
            &mut rng,
        )?;
        losses.push(IterationLoss {
            t,
            local_image_from_report: trace.local.image_from_report,
            local_report_from_image: trace.local.report_from_image,
            keywords: next.surviving.len(),
        });
        state = next;
    }
    Ok((state, losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::run_local_alignment;
    use crate::synth::{generate_dataset, SynthSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((r, c), || rng.sample(StandardNormal))
    }

    fn rng0(_: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn single_iteration_matches_local_alignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let text = randn(&mut rng, 5, 3);
        let image = randn(&mut rng, 6, 3);
        let params = AlignParams::identity(3, 0.1, 0.1);
        let config = AlignConfig { iterations: 1, ..AlignConfig::default() };
        let (state, _) = run_progressive(text.view(), image.view(), &params, &config, rng0).unwrap();
        let direct = run_local_alignment(text.view(), image.view(), &params, &config, &mut rng0(1)).unwrap();
        assert_eq!(state.surviving, direct.keyword_indices);
        assert_eq!(state.s_tilde, direct.selected_similarity());
    }

    #[test]
    fn near_unit_delta_ignores_history() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let text = randn(&mut rng, 4, 3);
        let image = randn(&mut rng, 5, 3);
        let params = AlignParams::identity(3, 0.1, 0.1);
        let config = AlignConfig { delta: 1.0 - 1e-12, ..AlignConfig::default() };
        let mut state = ProgressiveState::initial(text.view(), image.view(), &params);
        state.t = 1;
        state.s_tilde.mapv_inplace(|v| v + 3.0);
        let next = progressive_step(&state, text.view(), image.view(), &params, &config, &mut rng0(0)).unwrap();
        let direct = {
            let projected = project_image(image.view(), &params.g);
            let s = word_pixel_similarity(text.view(), projected.view());
            align_from_similarity(s, &params.inputs(image.view()), &config, Reweighting::Refined, None, &mut rng0(0))
        };
        assert_eq!(next.surviving, direct.keyword_indices);
        let expected = direct.selected_similarity();
        for (a, b) in next.s_tilde.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn blending_fixed_point_keeps_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let text = randn(&mut rng, 4, 3);
        let image = randn(&mut rng, 5, 3);
        let params = AlignParams::identity(3, 0.1, 0.1);
        let config = AlignConfig { keep_ratio: 1.0, ..AlignConfig::default() };
        let mut state = ProgressiveState::initial(text.view(), image.view(), &params);
        state.t = 1;
        let next = progressive_step(&state, text.view(), image.view(), &params, &config, &mut rng0(0)).unwrap();
        assert_eq!(next.surviving, state.surviving);
        for (a, b) in next.s_tilde.iter().zip(state.s_tilde.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn shrinking_instance_matches_blend_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (l, hw, d) = (5, 6, 3);
        let text = randn(&mut rng, l, d);
        let image = randn(&mut rng, hw, d);
        let params = AlignParams::identity(d, 0.1, 0.1);
        let config = AlignConfig { delta: 0.5, keep_ratio: 0.6, iterations: 2, ..AlignConfig::default() };
        let s1 = init_state(&text, &image, &params);
        let k1 = progressive_step(&s1, text.view(), image.view(), &params, &config, &mut rng0(0)).unwrap();
        // perturb history so the blend is not trivial
        let mut k1_mod = k1.clone();
        k1_mod.s_tilde.mapv_inplace(|v| 2.0 * v - 0.25);
        let k2 = progressive_step(&k1_mod, text.view(), image.view(), &params, &config, &mut rng0(0)).unwrap();
        assert_eq!(k1.surviving.len(), 3);
        assert_eq!(k2.surviving.len(), 2);
        assert!(k2.surviving.iter().all(|w| k1.surviving.contains(w)));
        // direct oracle of the blend at the surviving rows
        for (r, &word) in k2.surviving.iter().enumerate() {
            let prev_row = k1.surviving.iter().position(|&w| w == word).unwrap();
            for j in 0..hw {
                let mut s = 0.0;
                for k in 0..d {
                    s += text[(word, k)] * image[(j, k)];
                }
                let expected = 0.5 * s + 0.5 * k1_mod.s_tilde[(prev_row, j)];
                assert!((k2.s_tilde[(r, j)] - expected).abs() < 1e-12);
            }
        }
    }

    fn init_state(text: &Array2<f64>, image: &Array2<f64>, params: &AlignParams) -> ProgressiveState {
        ProgressiveState::initial(text.view(), image.view(), params)
    }

    #[test]
    fn full_keep_and_constant_similarity_gives_convex_mix() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let text = randn(&mut rng, 4, 3);
        let image = randn(&mut rng, 5, 3);
        let params = AlignParams::identity(3, 0.1, 0.1);
        let config = AlignConfig { keep_ratio: 1.0, delta: 0.5, iterations: 3, ..AlignConfig::default() };
        let (state, losses) = run_progressive(text.view(), image.view(), &params, &config, rng0).unwrap();
        assert_eq!(state.surviving, vec![0, 1, 2, 3]);
        // S_1 = S_2 = S_3 = S, so S~_3 = (0.5 + 0.25 + 0.25) S
        let s = word_pixel_similarity(text.view(), image.view());
        for (a, b) in state.s_tilde.iter().zip(s.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(losses.len(), 3);
    }

    #[test]
    fn noiseless_planted_keywords_survive() {
        let spec = SynthSpec { n_samples: 10, noise_sigma: 0.0, ..SynthSpec::default() };
        let ds = generate_dataset(&spec).unwrap();
        let params = AlignParams::identity(spec.embed, 0.1, 0.1);
        let config = AlignConfig::default();
        for (s, t) in ds.samples.iter().zip(ds.truth.as_ref().unwrap()) {
            let single = run_local_alignment(s.text.view(), s.image.view(), &params, &config, &mut rng0(0)).unwrap();
            assert!(t.keyword_indices.iter().all(|k| single.keyword_indices.contains(k)));
            let (state, _) = run_progressive(s.text.view(), s.image.view(), &params, &config, rng0).unwrap();
            assert!(t.keyword_indices.iter().all(|k| state.surviving.contains(k)), "{:?} vs {:?}", t.keyword_indices, state.surviving);
            let counts = state.keyword_counts();
            assert!(counts.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn single_word_is_always_kept() {
        let text = ndarray::array![[0.2, -0.1]];
        let image = ndarray::array![[1.0, 0.0], [0.0, 1.0], [0.5, 0.5], [0.1, 0.2]];
        let params = AlignParams::identity(2, 0.1, 0.1);
        let config = AlignConfig { keep_ratio: 0.1, ..AlignConfig::default() };
        let (state, _) = run_progressive(text.view(), image.view(), &params, &config, rng0).unwrap();
        assert_eq!(state.surviving, vec![0]);
    }

    #[test]
    fn identical_words_tie_by_index() {
        let text = ndarray::array![[0.5, 0.1], [0.5, 0.1], [-0.3, 0.2]];
        let image = ndarray::array![[1.0, 0.0], [0.0, 1.0], [0.5, 0.5], [0.1, 0.2]];
        let params = AlignParams::identity(2, 0.1, 0.1);
        let config = AlignConfig { keep_ratio: 0.34, ..AlignConfig::default() };
        let st = run_local_alignment(text.view(), image.view(), &params, &config, &mut rng0(0)).unwrap();
        assert_eq!(st.s.row(0), st.s.row(1));
        assert_eq!(st.gamma_word_ref[0], st.gamma_word_ref[1]);
        assert_eq!(st.keyword_indices, vec![0]);
    }
}
