//! Numerical verification of the progressive update's convergence under a
//! fixed row-removal projector.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};

/// Caveat printed with every report.
pub const IDEALIZATION_NOTE: &str =
    "fixed projector P across iterations (linear idealization); training re-selects rows every step";

/// 0/1 selection matrix keeping `kept` rows of an `source_rows`-row input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowProjector {
    pub kept: Vec<usize>,
    pub source_rows: usize,
}

impl RowProjector {
    pub fn new(kept: Vec<usize>, source_rows: usize) -> Result<Self> {
        if let Some(&index) = kept.iter().find(|&&i| i >= source_rows) {
            return Err(Error::ProjectorIndex { index, rows: source_rows });
        }
        Ok(Self { kept, source_rows })
    }

    pub fn identity(rows: usize) -> Self {
        Self { kept: (0..rows).collect(), source_rows: rows }
    }

    pub fn matrix(&self) -> Array2<f64> {
        let mut p = Array2::zeros((self.kept.len(), self.source_rows));
        for (r, &c) in self.kept.iter().enumerate() {
            p[(r, c)] = 1.0;
        }
        p
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius(self.matrix().view())
    }
}

pub fn frobenius(x: ArrayView2<f64>) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn apply_projector(p: &RowProjector, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    if x.nrows() != p.source_rows {
        return Err(Error::Shape(format!("projector expects {} rows, got {}", p.source_rows, x.nrows())));
    }
    if let Some(&index) = p.kept.iter().find(|&&i| i >= x.nrows()) {
        return Err(Error::ProjectorIndex { index, rows: x.nrows() });
    }
    Ok(x.select(Axis(0), &p.kept))
}

/// `delta (1 - delta)^k` for `k = 0..=t` followed by `(1 - delta)^(t + 1)`.
pub fn mixing_weights(delta: f64, t: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..=t).map(|k| delta * (1.0 - delta).powi(k as i32)).collect();
    w.push((1.0 - delta).powi(t as i32 + 1));
    w
}

/// Closed-form expansion of the recurrence at step `t`, evaluated term by term.
pub fn geometric_sum_oracle(
    history: &[Array2<f64>],
    initial: ArrayView2<f64>,
    p: &RowProjector,
    delta: f64,
    t: usize,
) -> Result<Array2<f64>> {
    if history.len() < t + 1 {
        return Err(Error::Shape(format!("oracle needs {} stream entries, got {}", t + 1, history.len())));
    }
    let mut out = apply_projector(p, initial)? * (1.0 - delta).powi(t as i32 + 1);
    for k in 0..=t {
        let term = apply_projector(p, history[t - k].view())?;
        out.scaled_add(delta * (1.0 - delta).powi(k as i32), &term);
    }
    Ok(out)
}

/// Partial sum `sum_{k=0}^t delta (1-delta)^k P S_{t-k}`.
fn partial_sum(projected: &[Array2<f64>], delta: f64, t: usize) -> Array2<f64> {
    let mut out = Array2::zeros(projected[0].dim());
    for k in 0..=t {
        out.scaled_add(delta * (1.0 - delta).powi(k as i32), &projected[t - k]);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    pub closed_form: f64,
    pub decay: f64,
    pub ratio: f64,
    pub weights: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { closed_form: 1e-10, decay: 1e-10, ratio: 1e-9, weights: 1e-12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayRow {
    pub t: usize,
    /// `||S~_t - oracle_t||_F`.
    pub closed_form_diff: f64,
    pub partial_sum_norm: f64,
    pub stream_norm: f64,
    pub weight_sum_dev: f64,
    /// Constant streams only: `||S~_t - P S||_F`.
    pub error: Option<f64>,
    /// Constant streams only: `(1-delta)^(t+1) ||P (S~_0 - S)||_F`.
    pub predicted_error: Option<f64>,
    /// Constant streams only: `error / ||P (S~_0 - S)||_F`.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Clause {
    pub passed: bool,
    pub worst: f64,
    pub tolerance: f64,
}

impl Clause {
    fn new(worst: f64, tolerance: f64) -> Self {
        Self { passed: worst <= tolerance, worst, tolerance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub note: &'static str,
    pub delta: f64,
    pub t_max: usize,
    pub m_bound: f64,
    pub projector_rows: usize,
    pub projector_norm: f64,
    pub constant_stream: bool,
    pub rows: Vec<DecayRow>,
    pub closed_form: Clause,
    pub weights: Clause,
    /// Worst partial-sum norm against `m_bound`.
    pub boundedness: Clause,
    /// First `t` with `||P S_t||_F > m_bound`.
    pub bound_violation: Option<usize>,
    pub decay: Option<Clause>,
    pub decay_ratio: Option<Clause>,
    pub passed: bool,
}

impl ConvergenceReport {
    /// First `t` whose error against the limit is at most `threshold`.
    pub fn first_below(&self, threshold: f64) -> Option<usize> {
        self.rows.iter().find(|r| r.error.is_some_and(|e| e <= threshold)).map(|r| r.t)
    }
}

/// Iterates `S~_t = delta P S_t + (1-delta) S~_{t-1}` for `t = 0..=t_max` with
/// `S~_{-1} = P initial` and checks it against the closed form. The stream is
/// treated as constant when every entry equals the first one.
pub fn verify_convergence(
    mut stream: impl FnMut(usize) -> Array2<f64>,
    initial: ArrayView2<f64>,
    delta: f64,
    p: &RowProjector,
    m_bound: f64,
    t_max: usize,
    tol: Tolerances,
) -> Result<ConvergenceReport> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidConfig(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(m_bound >= 0.0) {
        return Err(Error::InvalidConfig("bound must be non-negative".into()));
    }
    let history: Vec<Array2<f64>> = (0..=t_max).map(&mut stream).collect();
    if history.iter().any(|s| s.dim() != initial.dim()) {
        return Err(Error::Shape("stream entries must match the initial matrix shape".into()));
    }
    let projected = history
        .iter()
        .map(|s| apply_projector(p, s.view()))
        .collect::<Result<Vec<_>>>()?;
    let constant_stream = history.iter().all(|s| s == &history[0]);
    let limit = &projected[0];
    let initial_gap = frobenius((apply_projector(p, initial)? - limit).view());

    let mut s_tilde = apply_projector(p, initial)?;
    let mut rows = Vec::with_capacity(t_max + 1);
    let mut bound_violation = None;
    for t in 0..=t_max {
        s_tilde = &projected[t] * delta + &s_tilde * (1.0 - delta);
        let oracle = geometric_sum_oracle(&history, initial, p, delta, t)?;
        let stream_norm = frobenius(projected[t].view());
        if stream_norm > m_bound && bound_violation.is_none() {
            bound_violation = Some(t);
        }
        let weight_sum_dev = (mixing_weights(delta, t).iter().sum::<f64>() - 1.0).abs();
        let (error, predicted_error, ratio) = if constant_stream {
            let e = frobenius((&s_tilde - limit).view());
            let predicted = (1.0 - delta).powi(t as i32 + 1) * initial_gap;
            let ratio = if initial_gap > 0.0 { e / initial_gap } else { 0.0 };
            (Some(e), Some(predicted), Some(ratio))
        } else {
            (None, None, None)
        };
        rows.push(DecayRow {
            t,
            closed_form_diff: frobenius((&s_tilde - &oracle).view()),
            partial_sum_norm: frobenius(partial_sum(&projected, delta, t).view()),
            stream_norm,
            weight_sum_dev,
            error,
            predicted_error,
            ratio,
        });
    }

    let worst = |f: &dyn Fn(&DecayRow) -> f64| rows.iter().map(f).fold(0.0, f64::max);
    let closed_form = Clause::new(worst(&|r| r.closed_form_diff), tol.closed_form);
    let weights = Clause::new(worst(&|r| r.weight_sum_dev), tol.weights);
    let max_partial = worst(&|r| r.partial_sum_norm);
    let boundedness = Clause { passed: max_partial <= m_bound, worst: max_partial, tolerance: m_bound };
    let (decay, decay_ratio) = if constant_stream {
        let d = worst(&|r| (r.error.unwrap() - r.predicted_error.unwrap()).abs());
        let q = worst(&|r| (r.ratio.unwrap() - (1.0 - delta).powi(r.t as i32 + 1)).abs());
        (Some(Clause::new(d, tol.decay)), Some(Clause::new(q, tol.ratio)))
    } else {
        (None, None)
    };
    let passed = closed_form.passed
        && weights.passed
        && boundedness.passed
        && bound_violation.is_none()
        && decay.as_ref().is_none_or(|c| c.passed)
        && decay_ratio.as_ref().is_none_or(|c| c.passed);
    Ok(ConvergenceReport {
        note: IDEALIZATION_NOTE,
        delta,
        t_max,
        m_bound,
        projector_rows: p.kept.len(),
        projector_norm: p.frobenius_norm(),
        constant_stream,
        rows,
        closed_form,
        weights,
        boundedness,
        bound_violation,
        decay,
        decay_ratio,
        passed,
    })
}

/// Gaussian matrices rescaled so that `||X||_F = m_bound * u`, `u ~ U(0, 1]`.
pub fn bounded_random_stream(rng: &mut impl Rng, rows: usize, cols: usize, m_bound: f64, len: usize) -> Vec<Array2<f64>> {
    (0..len)
        .map(|_| {
            let x = Array2::from_shape_simple_fn((rows, cols), || rng.sample::<f64, _>(StandardNormal));
            let u: f64 = 1.0 - rng.random::<f64>();
            let n = frobenius(x.view());
            if n > 0.0 {
                x * (m_bound * u / n)
            } else {
                x
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((r, c), || rng.sample(StandardNormal))
    }

    #[test]
    fn projector_cases() {
        let x = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        assert_eq!(apply_projector(&RowProjector::identity(3), x.view()).unwrap(), x);
        let p = RowProjector::new(vec![2], 3).unwrap();
        assert_eq!(apply_projector(&p, x.view()).unwrap(), array![[5.0, 6.0]]);
        let p = RowProjector::new(vec![0, 2], 3).unwrap();
        assert!((p.frobenius_norm() - 2f64.sqrt()).abs() < 1e-15);
        for row in p.matrix().rows() {
            assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(row.iter().filter(|&&v| v == 0.0).count(), 2);
        }
        assert!(matches!(RowProjector::new(vec![3], 3), Err(Error::ProjectorIndex { index: 3, rows: 3 })));
        let p = RowProjector { kept: vec![0], source_rows: 2 };
        assert!(apply_projector(&p, x.view()).is_err());
        // matches the explicit matrix product
        let p = RowProjector::new(vec![1, 0], 3).unwrap();
        assert_eq!(apply_projector(&p, x.view()).unwrap(), p.matrix().dot(&x));
    }

    #[test]
    fn oracle_single_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s0 = randn(&mut rng, 3, 4);
        let init = randn(&mut rng, 3, 4);
        let p = RowProjector::new(vec![0, 2], 3).unwrap();
        let out = geometric_sum_oracle(&[s0.clone()], init.view(), &p, 0.3, 0).unwrap();
        let expected = apply_projector(&p, s0.view()).unwrap() * 0.3 + apply_projector(&p, init.view()).unwrap() * 0.7;
        assert!(frobenius((&out - &expected).view()) < 1e-15);
        assert!(geometric_sum_oracle(&[s0], init.view(), &p, 0.3, 1).is_err());
    }

    #[test]
    fn weights_sum_to_one() {
        for &delta in &[0.01, 0.1, 0.5, 0.9, 0.99] {
            for t in 0..=64 {
                assert!((mixing_weights(delta, t).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn constant_history_is_fixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = randn(&mut rng, 4, 3);
        let p = RowProjector::new(vec![1, 3], 4).unwrap();
        let history = vec![s.clone(); 10];
        let ps = apply_projector(&p, s.view()).unwrap();
        for t in 0..10 {
            let out = geometric_sum_oracle(&history, s.view(), &p, 0.4, t).unwrap();
            assert!(frobenius((&out - &ps).view()) < 1e-14);
        }
    }

    #[test]
    fn error_halves_from_zero_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = randn(&mut rng, 3, 5);
        let norm = frobenius(s.view());
        let zero = Array2::zeros((3, 5));
        let r = verify_convergence(|_| s.clone(), zero.view(), 0.5, &RowProjector::identity(3), norm, 64, Tolerances::default()).unwrap();
        assert!(r.passed, "{r:?}");
        for row in &r.rows {
            let expected = 0.5f64.powi(row.t as i32 + 1) * norm;
            assert!((row.error.unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn larger_delta_converges_sooner() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = randn(&mut rng, 3, 3);
        let init = randn(&mut rng, 3, 3);
        let p = RowProjector::new(vec![0, 1], 3).unwrap();
        let run = |delta| verify_convergence(|_| s.clone(), init.view(), delta, &p, 1e3, 200, Tolerances::default()).unwrap();
        let fast = run(0.9).first_below(1e-6).unwrap();
        let slow = run(0.1).first_below(1e-6).unwrap();
        assert!(fast < slow);
    }

    #[test]
    fn random_stream_is_bounded_and_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = 2.5;
        let stream = bounded_random_stream(&mut rng, 6, 4, m, 65);
        let init = randn(&mut rng, 6, 4);
        let p = RowProjector::new(vec![0, 3, 5], 6).unwrap();
        for &delta in &[0.1, 0.5, 0.9] {
            let r = verify_convergence(|t| stream[t].clone(), init.view(), delta, &p, m, 64, Tolerances::default()).unwrap();
            assert!(r.passed, "{delta}: {:?}", r.closed_form);
            assert!(!r.constant_stream);
            assert!(r.decay.is_none());
        }
    }

    #[test]
    fn bound_violation_names_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let small = randn(&mut rng, 2, 2) * 1e-3;
        let big = Array2::from_elem((2, 2), 10.0);
        let r = verify_convergence(
            |t| if t == 7 { big.clone() } else { small.clone() },
            small.view(),
            0.5,
            &RowProjector::identity(2),
            1.0,
            10,
            Tolerances::default(),
        )
        .unwrap();
        assert_eq!(r.bound_violation, Some(7));
        assert!(!r.passed);
    }

    #[test]
    fn invalid_delta_is_rejected() {
        let z = Array2::zeros((1, 1));
        for d in [0.0, 1.0, -0.5, f64::NAN] {
            assert!(verify_convergence(|_| z.clone(), z.view(), d, &RowProjector::identity(1), 1.0, 3, Tolerances::default()).is_err());
        }
    }

    proptest::proptest! {
        #[test]
        fn projector_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = randn(&mut rng, 5, 4);
            let y = randn(&mut rng, 5, 4);
            let kept: Vec<usize> = (0..5).filter(|_| rng.random::<bool>()).collect();
            let p = RowProjector::new(kept, 5).unwrap();
            let lhs = apply_projector(&p, (&x * a + &y * b).view()).unwrap();
            let rhs = apply_projector(&p, x.view()).unwrap() * a + apply_projector(&p, y.view()).unwrap() * b;
            proptest::prop_assert!(lhs.iter().zip(rhs.iter()).all(|(u, v)| (u - v).abs() <= 1e-12));
        }

        #[test]
        fn decay_ratio_is_exact(seed in 0u64..200, delta in 0.05f64..0.95) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = randn(&mut rng, 4, 3);
            let init = randn(&mut rng, 4, 3);
            let p = RowProjector::new(vec![0, 2, 3], 4).unwrap();
            let r = verify_convergence(|_| s.clone(), init.view(), delta, &p, 1e6, 64, Tolerances::default()).unwrap();
            proptest::prop_assert!(r.passed);
        }
    }
}
