//! Batch objective over progressive trajectories with a hand-written
//! reverse pass.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{align_backward, project_image, AlignConfig, AlignParams, ProjectionParams, Reweighting};
use crate::error::{Error, Result};
use crate::gradcheck::{gradient_check, GradCheckReport, NamedParam};
use crate::losses::global_contrastive_loss;
use crate::progressive::{progressive_step_traced, ProgressiveState, StepTrace};
use crate::synth::{pool_global, pool_global_backward};

/// Which terms enter the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Global contrastive loss only.
    Global,
    /// Global loss plus a local loss on regions pooled with the initial
    /// co-importance and keywords ranked by initial word importance.
    GlobalInitial,
    /// Global loss plus the local loss with full co-importance refinement.
    #[default]
    Joint,
}

impl LossMode {
    pub fn reweighting(self) -> Reweighting {
        match self {
            LossMode::GlobalInitial => Reweighting::Initial,
            _ => Reweighting::Refined,
        }
    }

    pub fn uses_local(self) -> bool {
        self != LossMode::Global
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Objective {
    pub align: AlignConfig,
    pub mode: LossMode,
    /// Backpropagate through `S~_{t-1}` instead of treating it as constant.
    pub backprop_history: bool,
}

impl Default for Objective {
    fn default() -> Self {
        Self { align: AlignConfig::default(), mode: LossMode::Joint, backprop_history: false }
    }
}

/// Borrowed local features of one sample.
#[derive(Debug, Clone, Copy)]
pub struct SampleView<'a> {
    pub text: ArrayView2<'a, f64>,
    pub image: ArrayView2<'a, f64>,
}

/// Forward record of one sample.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub projected: Array2<f64>,
    pub image_global: Array1<f64>,
    pub text_global: Array1<f64>,
    pub steps: Vec<StepTrace>,
    /// `S~_{t-1}` fed into step `t`.
    pub history_in: Vec<Array2<f64>>,
    pub state: ProgressiveState,
}

impl Trajectory {
    pub fn keywords(&self) -> Vec<Vec<usize>> {
        self.steps.iter().map(|s| s.align.keyword_indices.clone()).collect()
    }
}

/// Selections (and optionally history) held fixed across evaluations.
#[derive(Debug, Clone, Default)]
pub struct Frozen {
    pub keywords: Vec<Vec<Vec<usize>>>,
    /// Detached history per sample and iteration.
    pub history: Option<Vec<Vec<Array2<f64>>>>,
}

impl Frozen {
    pub fn from_trajectories(trajectories: &[Trajectory], with_history: bool) -> Self {
        Self {
            keywords: trajectories.iter().map(Trajectory::keywords).collect(),
            history: with_history.then(|| trajectories.iter().map(|t| t.history_in.clone()).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossReport {
    pub global_report_from_image: f64,
    pub global_image_from_report: f64,
    pub global: f64,
    /// Batch and iteration means of the local terms, whether or not they are optimized.
    pub local_image_from_report: f64,
    pub local_report_from_image: f64,
    pub local: f64,
    /// `(L_g^t, L_l^t)` as they enter the objective.
    pub per_iteration: Vec<(f64, f64)>,
    pub total: f64,
    /// Mean surviving keyword count after each iteration.
    pub keyword_counts: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub g: ProjectionParams,
    pub pool: ProjectionParams,
    pub alpha: f64,
    pub beta: f64,
}

impl ParamGrads {
    pub fn zeros(dim: usize) -> Self {
        let z = || ProjectionParams { weight: Array2::zeros((dim, dim)), bias: Array1::zeros(dim) };
        Self { g: z(), pool: z(), alpha: 0.0, beta: 0.0 }
    }

    fn add(&mut self, other: &ParamGrads) {
        self.g.weight += &other.g.weight;
        self.g.bias += &other.g.bias;
        self.pool.weight += &other.pool.weight;
        self.pool.bias += &other.pool.bias;
        self.alpha += other.alpha;
        self.beta += other.beta;
    }

    pub fn to_named(&self) -> Vec<NamedParam> {
        named_groups(&self.g, &self.pool, self.alpha, self.beta)
    }
}

pub const PARAM_GROUPS: [&str; 6] = ["g.weight", "g.bias", "pool.weight", "pool.bias", "alpha", "beta"];

fn named_groups(g: &ProjectionParams, pool: &ProjectionParams, alpha: f64, beta: f64) -> Vec<NamedParam> {
    let flat = |a: &Array2<f64>| a.iter().copied().collect::<Vec<_>>();
    vec![
        NamedParam::new(PARAM_GROUPS[0], flat(&g.weight)),
        NamedParam::new(PARAM_GROUPS[1], g.bias.to_vec()),
        NamedParam::new(PARAM_GROUPS[2], flat(&pool.weight)),
        NamedParam::new(PARAM_GROUPS[3], pool.bias.to_vec()),
        NamedParam::new(PARAM_GROUPS[4], vec![alpha]),
        NamedParam::new(PARAM_GROUPS[5], vec![beta]),
    ]
}

pub fn params_to_named(p: &AlignParams) -> Vec<NamedParam> {
    named_groups(&p.g, &p.pool, p.alpha, p.beta)
}

/// Inverse of [`params_to_named`]; extra groups are ignored.
pub fn params_from_named(named: &[NamedParam], dim: usize) -> Result<AlignParams> {
    let find = |name: &str, len: usize| -> Result<&[f64]> {
        let g = named
            .iter()
            .find(|g| g.name == name)
            .ok_or_else(|| Error::Shape(format!("missing parameter group `{name}`")))?;
        if g.values.len() != len {
            return Err(Error::Shape(format!("group `{name}` has {} values, expected {len}", g.values.len())));
        }
        Ok(&g.values)
    };
    let mat = |name: &str| -> Result<Array2<f64>> {
        Ok(Array2::from_shape_vec((dim, dim), find(name, dim * dim)?.to_vec()).expect("length checked"))
    };
    let vec = |name: &str| -> Result<Array1<f64>> { Ok(Array1::from(find(name, dim)?.to_vec())) };
    Ok(AlignParams {
        g: ProjectionParams { weight: mat(PARAM_GROUPS[0])?, bias: vec(PARAM_GROUPS[1])? },
        pool: ProjectionParams { weight: mat(PARAM_GROUPS[2])?, bias: vec(PARAM_GROUPS[3])? },
        alpha: find(PARAM_GROUPS[4], 1)?[0],
        beta: find(PARAM_GROUPS[5], 1)?[0],
    })
}

/// Gradients with respect to the input features, one entry per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrads {
    pub text: Vec<Array2<f64>>,
    pub image: Vec<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub report: LossReport,
    pub grads: Option<ParamGrads>,
    pub feature_grads: Option<FeatureGrads>,
    pub trajectories: Vec<Trajectory>,
}

/// Runs the progressive forward pass for one sample.
pub fn forward_sample(
    params: &AlignParams,
    sample: SampleView<'_>,
    objective: &Objective,
    mut rng_for: impl FnMut(usize) -> ChaCha8Rng,
    frozen_keywords: Option<&[Vec<usize>]>,
    frozen_history: Option<&[Array2<f64>]>,
) -> Result<Trajectory> {
    if sample.text.ncols() != params.g.weight.nrows() || sample.image.ncols() != params.g.weight.ncols() {
        return Err(Error::Shape(format!(
            "features of width {}/{} do not match parameters of width {}",
            sample.text.ncols(),
            sample.image.ncols(),
            params.g.weight.nrows()
        )));
    }
    let iterations = objective.align.iterations;
    let projected = project_image(sample.image, &params.g);
    let image_global = pool_global(projected.view());
    let text_global = pool_global(sample.text);
    let mut state = ProgressiveState::initial(sample.text, sample.image, params);
    let mut steps = Vec::with_capacity(iterations);
    let mut history_in = Vec::with_capacity(iterations);
    for t in 1..=iterations {
        if let Some(h) = frozen_history {
            if t > 1 {
                state.s_tilde = h[t - 1].clone();
            }
        }
        history_in.push(state.s_tilde.clone());
        let frozen = frozen_keywords.map(|k| k[t - 1].as_slice());
        let mut rng = rng_for(t);
        let (next, trace) = progressive_step_traced(
            &state,
            sample.text,
            sample.image,
            projected.view(),
            params,
            &objective.align,
            objective.mode.reweighting(),
            frozen,
            &mut rng,
        )?;
        state = next;
        steps.push(trace);
    }
    Ok(Trajectory { projected, image_global, text_global, steps, history_in, state })
}

struct SampleGrads {
    params: ParamGrads,
    text: Array2<f64>,
    image: Array2<f64>,
}

fn backward_sample(
    params: &AlignParams,
    sample: SampleView<'_>,
    traj: &Trajectory,
    d_image_global: &Array1<f64>,
    d_text_global: &Array1<f64>,
    local_coef: f64,
    objective: &Objective,
) -> SampleGrads {
    let dim = params.g.weight.nrows();
    let delta = objective.align.delta;
    let mut grads = ParamGrads::zeros(dim);
    let mut d_text = pool_global_backward(sample.text, d_text_global);
    let mut d_image = Array2::<f64>::zeros(sample.image.dim());
    let mut d_proj = pool_global_backward(traj.projected.view(), d_image_global);

    if local_coef != 0.0 {
        let inputs = params.inputs(sample.image);
        let mut carry: Option<Array2<f64>> = None;
        for step in traj.steps.iter().rev() {
            let d_pooled = &step.local.d_pooled * local_coef;
            let ag = align_backward(&step.align, &inputs, &d_pooled);
            let mut d_m = ag.d_s;
            if let Some(c) = carry.take() {
                for (r, &i) in step.align.keyword_indices.iter().enumerate() {
                    let mut row = d_m.row_mut(i);
                    row += &c.row(r);
                }
            }
            let d_s = if step.first { d_m.clone() } else { &d_m * delta };
            if objective.backprop_history && !step.first {
                carry = Some(&d_m * (1.0 - delta));
            }
            let words = sample.text.select(Axis(0), &step.rows);
            let d_words = d_s.dot(&traj.projected) + &step.local.d_words * local_coef;
            for (r, &w) in step.rows.iter().enumerate() {
                let mut row = d_text.row_mut(w);
                row += &d_words.row(r);
            }
            d_proj += &d_s.t().dot(&words);
            d_image += &ag.d_image;
            grads.pool.weight += &ag.d_pool_weight;
            grads.pool.bias += &ag.d_pool_bias;
            grads.alpha += ag.d_alpha;
            grads.beta += ag.d_beta;
        }
    }

    grads.g.weight += &d_proj.t().dot(&sample.image);
    grads.g.bias += &d_proj.sum_axis(Axis(0));
    d_image += &d_proj.dot(&params.g.weight);
    SampleGrads { params: grads, text: d_text, image: d_image }
}

/// Objective value over a batch and, when `with_grads`, its gradients.
///
/// `rng_for(position, t)` supplies the selection stream; it is ignored for
/// samples whose keywords are frozen.
pub fn batch_objective<F>(
    params: &AlignParams,
    samples: &[SampleView<'_>],
    objective: &Objective,
    rng_for: F,
    frozen: Option<&Frozen>,
    with_grads: bool,
) -> Result<BatchOutput>
where
    F: Fn(usize, usize) -> ChaCha8Rng + Sync,
{
    objective.align.validate()?;
    if samples.is_empty() {
        return Err(Error::Shape("batch must contain at least one sample".into()));
    }
    let b = samples.len();
    let iterations = objective.align.iterations;
    let trajectories = samples
        .par_iter()
        .enumerate()
        .map(|(n, s)| {
            let kw = frozen.map(|f| f.keywords[n].as_slice());
            let hist = frozen.and_then(|f| f.history.as_ref()).map(|h| h[n].as_slice());
            forward_sample(params, *s, objective, |t| rng_for(n, t), kw, hist)
        })
        .collect::<Result<Vec<_>>>()?;

    let dim = params.g.weight.nrows();
    let stack = |f: &dyn Fn(&Trajectory) -> &Array1<f64>| {
        Array2::from_shape_fn((b, dim), |(n, k)| f(&trajectories[n])[k])
    };
    let img_g = stack(&|t| &t.image_global);
    let txt_g = stack(&|t| &t.text_global);
    let global = global_contrastive_loss(img_g.view(), txt_g.view(), objective.align.tau1);

    let mut local_ir = vec![0.0; iterations];
    let mut local_ri = vec![0.0; iterations];
    let mut counts = vec![0.0; iterations];
    for traj in &trajectories {
        for (t, step) in traj.steps.iter().enumerate() {
            local_ir[t] += step.local.image_from_report / b as f64;
            local_ri[t] += step.local.report_from_image / b as f64;
            counts[t] += step.align.keyword_indices.len() as f64 / b as f64;
        }
    }
    let uses_local = objective.mode.uses_local();
    let per_iteration: Vec<(f64, f64)> = (0..iterations)
        .map(|t| (global.total, if uses_local { local_ir[t] + local_ri[t] } else { 0.0 }))
        .collect();
    let total = crate::losses::total_objective(&per_iteration, iterations)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / iterations as f64;
    let report = LossReport {
        global_report_from_image: global.report_from_image,
        global_image_from_report: global.image_from_report,
        global: global.total,
        local_image_from_report: mean(&local_ir),
        local_report_from_image: mean(&local_ri),
        local: mean(&local_ir) + mean(&local_ri),
        per_iteration,
        total,
        keyword_counts: counts,
    };

    if !with_grads {
        return Ok(BatchOutput { report, grads: None, feature_grads: None, trajectories });
    }
    let local_coef = if uses_local { 1.0 / (b * iterations) as f64 } else { 0.0 };
    let per_sample: Vec<SampleGrads> = samples
        .par_iter()
        .enumerate()
        .map(|(n, s)| {
            backward_sample(
                params,
                *s,
                &trajectories[n],
                &global.d_image.row(n).to_owned(),
                &global.d_text.row(n).to_owned(),
                local_coef,
                objective,
            )
        })
        .collect();
    let mut grads = ParamGrads::zeros(dim);
    let mut text = Vec::with_capacity(b);
    let mut image = Vec::with_capacity(b);
    for g in per_sample {
        grads.add(&g.params);
        text.push(g.text);
        image.push(g.image);
    }
    Ok(BatchOutput {
        report,
        grads: Some(grads),
        feature_grads: Some(FeatureGrads { text, image }),
        trajectories,
    })
}

/// Finite-difference check of every trainable parameter group (and
/// optionally the input features) with keyword selection frozen at the
/// base point. In detached mode the history fed into each step is frozen too.
pub fn check_objective_gradients<F>(
    params: &AlignParams,
    samples: &[SampleView<'_>],
    objective: &Objective,
    rng_for: F,
    include_features: bool,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(usize, usize) -> ChaCha8Rng + Sync,
{
    let base = batch_objective(params, samples, objective, rng_for, None, true)?;
    let frozen = Frozen::from_trajectories(&base.trajectories, !objective.backprop_history);
    let dim = params.g.weight.nrows();
    let grads = base.grads.expect("requested");
    let fgrads = base.feature_grads.expect("requested");

    let mut point = params_to_named(params);
    let mut analytic = grads.to_named();
    if include_features {
        point.push(NamedParam::new("text_local", flatten(samples.iter().map(|s| s.text))));
        point.push(NamedParam::new("image_local", flatten(samples.iter().map(|s| s.image))));
        analytic.push(NamedParam::new("text_local", flatten(fgrads.text.iter().map(|a| a.view()))));
        analytic.push(NamedParam::new("image_local", flatten(fgrads.image.iter().map(|a| a.view()))));
    }
    let unflatten = |values: &[f64], shape: &dyn Fn(usize) -> (usize, usize)| -> Vec<Array2<f64>> {
        let mut offset = 0;
        (0..samples.len())
            .map(|n| {
                let (r, c) = shape(n);
                let a = Array2::from_shape_vec((r, c), values[offset..offset + r * c].to_vec()).expect("sized");
                offset += r * c;
                a
            })
            .collect()
    };

    let mut failure = None;
    let report = gradient_check(
        |named| {
            let p = match params_from_named(named, dim) {
                Ok(p) => p,
                Err(e) => {
                    failure.get_or_insert(e);
                    return f64::NAN;
                }
            };
            let owned: Option<(Vec<Array2<f64>>, Vec<Array2<f64>>)> = include_features.then(|| {
                let text = &named.iter().find(|g| g.name == "text_local").expect("pushed").values;
                let image = &named.iter().find(|g| g.name == "image_local").expect("pushed").values;
                (unflatten(text, &|n| samples[n].text.dim()), unflatten(image, &|n| samples[n].image.dim()))
            });
            let views: Vec<SampleView<'_>> = match &owned {
                Some((t, i)) => t.iter().zip(i).map(|(t, i)| SampleView { text: t.view(), image: i.view() }).collect(),
                None => samples.iter().map(|s| SampleView { text: s.text.view(), image: s.image.view() }).collect(),
            };
            let no_rng = |_: usize, _: usize| -> ChaCha8Rng { unreachable_rng() };
            match batch_objective(&p, &views, objective, no_rng, Some(&frozen), false) {
                Ok(out) => out.report.total,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        &point,
        &analytic,
        step,
        tolerance,
    );
    match failure {
        Some(e) => Err(e),
        None => report,
    }
}

/// Seeded random features and perturbed-identity parameters for gradient
/// checks: `b` samples of `l x d` words and `hw x d` pixels.
pub fn seeded_instance(seed: u64, b: usize, l: usize, hw: usize, d: usize) -> (AlignParams, Vec<(Array2<f64>, Array2<f64>)>) {
    use rand::Rng;
    use rand_distr::StandardNormal;
    let mut rng = crate::rng::substream(seed, crate::rng::Domain::Gradcheck, 0, 0, 0);
    let mut randn = |r: usize, c: usize| Array2::from_shape_simple_fn((r, c), || rng.sample::<f64, _>(StandardNormal));
    let mut params = AlignParams::identity(d, 0.3, 0.2);
    params.g.weight += &(randn(d, d) * 0.3);
    params.g.bias = randn(1, d).row(0).to_owned() * 0.1;
    params.pool.weight += &(randn(d, d) * 0.3);
    params.pool.bias = randn(1, d).row(0).to_owned() * 0.1;
    let data = (0..b).map(|_| (randn(l, d), randn(hw, d))).collect();
    (params, data)
}

fn flatten<'a>(arrays: impl Iterator<Item = ArrayView2<'a, f64>>) -> Vec<f64> {
    arrays.flat_map(|a| a.iter().copied().collect::<Vec<_>>()).collect()
}

fn unreachable_rng() -> ChaCha8Rng {
    use rand::SeedableRng;
    // selection is frozen, so this stream is never sampled
    ChaCha8Rng::seed_from_u64(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::local_contrastive_loss;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((r, c), || rng.sample(StandardNormal))
    }

    fn instance(seed: u64, b: usize, l: usize, hw: usize, d: usize) -> (AlignParams, Vec<(Array2<f64>, Array2<f64>)>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = AlignParams::identity(d, 0.3, 0.2);
        params.g.weight += &(randn(&mut rng, d, d) * 0.3);
        params.g.bias = randn(&mut rng, 1, d).row(0).to_owned() * 0.1;
        params.pool.weight += &(randn(&mut rng, d, d) * 0.3);
        params.pool.bias = randn(&mut rng, 1, d).row(0).to_owned() * 0.1;
        let data = (0..b).map(|_| (randn(&mut rng, l, d), randn(&mut rng, hw, d))).collect();
        (params, data)
    }

    fn views(data: &[(Array2<f64>, Array2<f64>)]) -> Vec<SampleView<'_>> {
        data.iter().map(|(t, i)| SampleView { text: t.view(), image: i.view() }).collect()
    }

    fn streams(n: usize, t: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64((n * 100 + t) as u64)
    }

    fn objective(mode: LossMode, backprop_history: bool) -> Objective {
        let align = AlignConfig { iterations: 2, tau1: 0.5, tau2: 0.5, keep_ratio: 0.7, ..AlignConfig::default() };
        Objective { align, mode, backprop_history }
    }

    #[test]
    fn gradients_match_finite_differences_in_every_mode() {
        let (params, data) = instance(11, 4, 6, 9, 5);
        let samples = views(&data);
        for mode in [LossMode::Global, LossMode::GlobalInitial, LossMode::Joint] {
            for history in [false, true] {
                let obj = objective(mode, history);
                let r = check_objective_gradients(&params, &samples, &obj, streams, true, 1e-6, 1e-6).unwrap();
                assert!(r.passed, "{mode:?} history={history}: {:#?}", r.groups);
            }
        }
    }

    #[test]
    fn objective_composes_per_iteration_losses() {
        let (params, data) = instance(12, 3, 5, 6, 4);
        let samples = views(&data);
        let obj = objective(LossMode::Joint, false);
        let out = batch_objective(&params, &samples, &obj, streams, None, false).unwrap();
        let t = obj.align.iterations as f64;
        let mut local = 0.0;
        for traj in &out.trajectories {
            for step in &traj.steps {
                local += step.local.total;
            }
        }
        local /= 3.0 * t;
        assert!((out.report.total - (out.report.global + local)).abs() < 1e-12);
        assert!((out.report.local - local).abs() < 1e-12);

        let global_only = batch_objective(&params, &samples, &objective(LossMode::Global, false), streams, None, false).unwrap();
        assert!((global_only.report.total - global_only.report.global).abs() < 1e-15);
    }

    #[test]
    fn local_loss_uses_surviving_rows() {
        let (params, data) = instance(13, 1, 6, 9, 5);
        let samples = views(&data);
        let obj = objective(LossMode::Joint, false);
        let out = batch_objective(&params, &samples, &obj, streams, None, false).unwrap();
        let traj = &out.trajectories[0];
        assert_eq!(traj.steps[0].rows, (0..6).collect::<Vec<_>>());
        assert_eq!(traj.steps[1].rows, traj.state.history[1].surviving);
        let step = &traj.steps[1];
        let words = data[0].0.select(Axis(0), &step.rows);
        let direct = local_contrastive_loss(step.align.pooled_regions.view(), words.view(), &step.align.keyword_indices, 0.5).unwrap();
        assert_eq!(direct.total, step.local.total);
    }

    #[test]
    fn batch_result_is_independent_of_thread_count() {
        let (params, data) = instance(14, 6, 6, 9, 5);
        let samples = views(&data);
        let obj = objective(LossMode::Joint, false);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| batch_objective(&params, &samples, &obj, streams, None, true).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.report, b.report);
        assert_eq!(a.grads, b.grads);
    }

    #[test]
    fn named_round_trip() {
        let (params, _) = instance(15, 1, 2, 4, 3);
        let back = params_from_named(&params_to_named(&params), 3).unwrap();
        assert_eq!(back, params);
        assert!(params_from_named(&params_to_named(&params)[..3], 3).is_err());
    }

    #[test]
    fn mismatched_width_is_rejected() {
        let (params, _) = instance(16, 1, 2, 4, 3);
        let t = Array2::zeros((3, 4));
        let i = Array2::zeros((4, 4));
        let s = [SampleView { text: t.view(), image: i.view() }];
        assert!(batch_objective(&params, &s, &Objective::default(), streams, None, false).is_err());
    }
}
