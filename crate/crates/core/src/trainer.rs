//! Optimization loop, optimizer state and checkpoints.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::align::{AlignConfig, AlignParams, ProjectionParams};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::gradcheck::NamedParam;
use crate::model::{batch_objective, params_from_named, params_to_named, LossMode, Objective, SampleView};
use crate::rng::{substream, Domain};
use crate::tensor_io::{read_array, write_array, DType};

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Also supplies the initial values of `alpha` and `beta`.
    pub align: AlignConfig,
    pub mode: LossMode,
    pub backprop_history: bool,
    /// Save a checkpoint every this many steps; 0 saves only at the end.
    pub checkpoint_every: u64,
    /// Metrics destination; defaults to `metrics.jsonl` in the run directory.
    pub log_path: Option<PathBuf>,
    /// Stop after this many optimizer steps in total.
    pub max_steps: Option<u64>,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    /// Standard deviation of the perturbation added to the identity in `g`.
    pub init_noise: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 48,
            learning_rate: 1e-5,
            weight_decay: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            align: AlignConfig::default(),
            mode: LossMode::Joint,
            backprop_history: false,
            checkpoint_every: 0,
            log_path: None,
            max_steps: None,
            plateau_factor: 0.5,
            plateau_patience: 5,
            init_noise: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor <= 1.0) {
            return bad("plateau_factor must lie in (0, 1]");
        }
        if !(self.init_noise >= 0.0) {
            return bad("init_noise must be non-negative");
        }
        self.align.validate()
    }

    pub fn objective(&self) -> Objective {
        Objective { align: self.align.clone(), mode: self.mode, backprop_history: self.backprop_history }
    }

    fn hyper(&self, lr: f64) -> AdamHyper {
        AdamHyper { lr, weight_decay: self.weight_decay, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// One AdamW update at 1-based `step`. Gradients are checked before any
/// parameter is touched.
pub fn adam_step(
    params: &mut [NamedParam],
    grads: &[NamedParam],
    m: &mut [NamedParam],
    v: &mut [NamedParam],
    hp: &AdamHyper,
    step: u64,
) -> Result<()> {
    if step == 0 {
        return Err(Error::InvalidConfig("adam step counter starts at 1".into()));
    }
    if grads.len() != params.len() || m.len() != params.len() || v.len() != params.len() {
        return Err(Error::Shape("optimizer groups do not match parameters".into()));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.name != g.name || p.values.len() != g.values.len() {
            return Err(Error::Shape(format!("gradient for `{}` does not match", p.name)));
        }
        if g.values.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient(g.name.clone()));
        }
    }
    let c1 = 1.0 - hp.beta1.powf(step as f64);
    let c2 = 1.0 - hp.beta2.powf(step as f64);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        for i in 0..p.values.len() {
            let gi = g.values[i];
            m.values[i] = hp.beta1 * m.values[i] + (1.0 - hp.beta1) * gi;
            v.values[i] = hp.beta2 * v.values[i] + (1.0 - hp.beta2) * gi * gi;
            let m_hat = m.values[i] / c1;
            let v_hat = v.values[i] / c2;
            p.values[i] -= hp.lr * hp.weight_decay * p.values[i];
            p.values[i] -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
        }
    }
    Ok(())
}

fn zeros_like(groups: &[NamedParam]) -> Vec<NamedParam> {
    groups.iter().map(|g| NamedParam::new(g.name.clone(), vec![0.0; g.values.len()])).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub epoch: usize,
    /// Batches of `epoch` already consumed.
    pub batch_in_epoch: usize,
    pub seed: u64,
    pub lr: f64,
    pub plateau_best: f64,
    pub plateau_bad: usize,
    pub epoch_loss_sum: f64,
    pub epoch_batches: usize,
    pub params: AlignParams,
    pub adam_m: Vec<NamedParam>,
    pub adam_v: Vec<NamedParam>,
}

const STATE_FILE: &str = "state";
const NO_BEST: f64 = f64::MAX;

impl Checkpoint {
    /// Fresh parameters: `g = I + noise`, identity pooling, zero biases.
    pub fn init(config: &TrainConfig, dim: usize) -> Self {
        let mut rng = substream(config.seed, Domain::Init, 0, 0, 0);
        let noise = Array2::from_shape_simple_fn((dim, dim), || rng.sample::<f64, _>(StandardNormal));
        let params = AlignParams {
            g: ProjectionParams { weight: Array2::eye(dim) + noise * config.init_noise, bias: Array1::zeros(dim) },
            pool: ProjectionParams::identity(dim),
            alpha: config.align.alpha,
            beta: config.align.beta,
        };
        let named = params_to_named(&params);
        Self {
            step: 0,
            epoch: 0,
            batch_in_epoch: 0,
            seed: config.seed,
            lr: config.learning_rate,
            plateau_best: NO_BEST,
            plateau_bad: 0,
            epoch_loss_sum: 0.0,
            epoch_batches: 0,
            params,
            adam_m: zeros_like(&named),
            adam_v: zeros_like(&named),
        }
    }

    pub fn dim(&self) -> usize {
        self.params.g.weight.nrows()
    }

    fn state_vector(&self) -> Vec<f64> {
        vec![
            self.step as f64,
            self.epoch as f64,
            self.batch_in_epoch as f64,
            (self.seed >> 32) as f64,
            (self.seed & 0xFFFF_FFFF) as f64,
            self.lr,
            self.plateau_best,
            self.plateau_bad as f64,
            self.epoch_loss_sum,
            self.epoch_batches as f64,
        ]
    }
}

fn group_shape(name: &str, len: usize, dim: usize) -> Vec<usize> {
    if len == dim * dim && name.ends_with("weight") {
        vec![dim, dim]
    } else {
        vec![len]
    }
}

fn write_groups(dir: &Path, prefix: &str, groups: &[NamedParam], dim: usize) -> Result<()> {
    for g in groups {
        let shape = group_shape(&g.name, g.values.len(), dim);
        let array = ndarray::ArrayD::from_shape_vec(shape, g.values.clone()).expect("sized");
        write_array(&array, DType::F64, &dir.join(format!("{prefix}{}.tnsr", g.name)))?;
    }
    Ok(())
}

fn read_groups(dir: &Path, prefix: &str) -> Result<Vec<NamedParam>> {
    crate::model::PARAM_GROUPS
        .iter()
        .map(|name| {
            let a = read_array(&dir.join(format!("{prefix}{name}.tnsr")))?;
            Ok(NamedParam::new(*name, a.iter().copied().collect()))
        })
        .collect()
}

/// Atomically writes `checkpoint` to `dir`: the files go to a sibling
/// temporary directory which then replaces `dir`.
pub fn save_checkpoint(checkpoint: &Checkpoint, dir: &Path) -> Result<()> {
    let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or("checkpoint");
    let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let tmp = parent.join(format!(".{name}.tmp"));
    let old = parent.join(format!(".{name}.old"));
    for p in [&tmp, &old] {
        if p.exists() {
            fs::remove_dir_all(p).map_err(|e| Error::io(p, e))?;
        }
    }
    fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let dim = checkpoint.dim();
    write_groups(&tmp, "", &params_to_named(&checkpoint.params), dim)?;
    write_groups(&tmp, "adam_m.", &checkpoint.adam_m, dim)?;
    write_groups(&tmp, "adam_v.", &checkpoint.adam_v, dim)?;
    let state = ndarray::ArrayD::from_shape_vec(vec![10], checkpoint.state_vector()).expect("sized");
    write_array(&state, DType::F64, &tmp.join(format!("{STATE_FILE}.tnsr")))?;
    if dir.exists() {
        fs::rename(dir, &old).map_err(|e| Error::io(dir, e))?;
    }
    fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))?;
    if old.exists() {
        fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
    }
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let named = read_groups(dir, "")?;
    let weight = &named[0].values;
    let dim = (weight.len() as f64).sqrt() as usize;
    if dim * dim != weight.len() {
        return Err(Error::Shape(format!("g.weight with {} values is not square", weight.len())));
    }
    let params = params_from_named(&named, dim)?;
    let adam_m = read_groups(dir, "adam_m.")?;
    let adam_v = read_groups(dir, "adam_v.")?;
    for (a, b) in adam_m.iter().chain(&adam_v).zip(named.iter().chain(&named)) {
        if a.values.len() != b.values.len() {
            return Err(Error::Shape(format!("optimizer moment `{}` does not match its parameter", a.name)));
        }
    }
    let state: Vec<f64> = read_array(&dir.join(format!("{STATE_FILE}.tnsr")))?.iter().copied().collect();
    if state.len() != 10 {
        return Err(Error::Shape(format!("checkpoint state has {} entries, expected 10", state.len())));
    }
    Ok(Checkpoint {
        step: state[0] as u64,
        epoch: state[1] as usize,
        batch_in_epoch: state[2] as usize,
        seed: ((state[3] as u64) << 32) | state[4] as u64,
        lr: state[5],
        plateau_best: state[6],
        plateau_bad: state[7] as usize,
        epoch_loss_sum: state[8],
        epoch_batches: state[9] as usize,
        params,
        adam_m,
        adam_v,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub total: f64,
    pub global: f64,
    pub local: f64,
    pub global_report_from_image: f64,
    pub global_image_from_report: f64,
    pub local_image_from_report: f64,
    pub local_report_from_image: f64,
    pub keyword_counts: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<MetricRecord>,
}

/// Sample order of `epoch`.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, Domain::Shuffle, epoch as u64, 0, 0));
    order
}

fn plateau_update(ck: &mut Checkpoint, config: &TrainConfig) {
    if ck.epoch_batches == 0 {
        return;
    }
    let mean = ck.epoch_loss_sum / ck.epoch_batches as f64;
    let threshold = if ck.plateau_best == NO_BEST { NO_BEST } else { ck.plateau_best - ck.plateau_best.abs() * 1e-4 };
    if mean < threshold {
        ck.plateau_best = mean;
        ck.plateau_bad = 0;
    } else {
        ck.plateau_bad += 1;
        if ck.plateau_bad > config.plateau_patience {
            ck.lr *= config.plateau_factor;
            ck.plateau_bad = 0;
        }
    }
}

/// Trains from freshly initialized parameters. With `run_dir` the resolved
/// config, metrics log and checkpoints are written there.
pub fn train(dataset: &Dataset, config: &TrainConfig, run_dir: Option<&Path>) -> Result<TrainOutput> {
    config.validate()?;
    let ck = Checkpoint::init(config, dataset.dims.embed);
    if let Some(dir) = run_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(CONFIG_FILE);
        fs::write(&path, serde_json::to_string_pretty(config)?).map_err(|e| Error::io(&path, e))?;
        let log = log_path(config, dir);
        if log.exists() {
            fs::remove_file(&log).map_err(|e| Error::io(&log, e))?;
        }
    }
    resume(dataset, config, ck, run_dir)
}

fn log_path(config: &TrainConfig, dir: &Path) -> PathBuf {
    config.log_path.clone().unwrap_or_else(|| dir.join(METRICS_FILE))
}

/// Continues training from `checkpoint`; metrics are appended to the log.
pub fn resume(dataset: &Dataset, config: &TrainConfig, mut ck: Checkpoint, run_dir: Option<&Path>) -> Result<TrainOutput> {
    config.validate()?;
    if ck.dim() != dataset.dims.embed {
        return Err(Error::Shape(format!("checkpoint D={} but dataset D={}", ck.dim(), dataset.dims.embed)));
    }
    if ck.seed != config.seed {
        return Err(Error::InvalidConfig(format!("checkpoint seed {} differs from config seed {}", ck.seed, config.seed)));
    }
    let mut metrics = Vec::new();
    let n = dataset.len();
    if config.epochs > ck.epoch && n == 0 {
        return Err(Error::InvalidConfig("cannot train on an empty dataset".into()));
    }
    let ck_dir = run_dir.map(|d| d.join(CHECKPOINT_DIR));
    let mut log = match run_dir {
        Some(dir) => {
            let path = log_path(config, dir);
            let file = fs::OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
            Some((path, file))
        }
        None => None,
    };
    let objective = config.objective();
    let batches = n.div_ceil(config.batch_size.max(1));
    'epochs: while ck.epoch < config.epochs {
        let order = epoch_order(config.seed, ck.epoch, n);
        while ck.batch_in_epoch < batches {
            if config.max_steps.is_some_and(|m| ck.step >= m) {
                break 'epochs;
            }
            let start = ck.batch_in_epoch * config.batch_size;
            let ids = &order[start..(start + config.batch_size).min(n)];
            let views: Vec<SampleView<'_>> = ids
                .iter()
                .map(|&i| SampleView { text: dataset.samples[i].text.view(), image: dataset.samples[i].image.view() })
                .collect();
            let epoch = ck.epoch as u64;
            let seed = config.seed;
            let out = batch_objective(
                &ck.params,
                &views,
                &objective,
                |pos, t| substream(seed, Domain::Keywords, epoch, ids[pos] as u64, t as u64),
                None,
                true,
            )?;
            let r = &out.report;
            if !r.total.is_finite() {
                return Err(Error::NonFiniteLoss(ck.step + 1));
            }
            let grads = out.grads.expect("requested").to_named();
            let mut named = params_to_named(&ck.params);
            adam_step(&mut named, &grads, &mut ck.adam_m, &mut ck.adam_v, &config.hyper(ck.lr), ck.step + 1)?;
            ck.params = params_from_named(&named, ck.dim())?;
            ck.step += 1;
            ck.batch_in_epoch += 1;
            ck.epoch_loss_sum += r.total;
            ck.epoch_batches += 1;
            let record = MetricRecord {
                step: ck.step,
                epoch: ck.epoch,
                lr: ck.lr,
                total: r.total,
                global: r.global,
                local: r.local,
                global_report_from_image: r.global_report_from_image,
                global_image_from_report: r.global_image_from_report,
                local_image_from_report: r.local_image_from_report,
                local_report_from_image: r.local_report_from_image,
                keyword_counts: r.keyword_counts.clone(),
            };
            if let Some((path, file)) = log.as_mut() {
                writeln!(file, "{}", serde_json::to_string(&record)?).map_err(|e| Error::io(path.as_path(), e))?;
            }
            metrics.push(record);
            if let Some(dir) = &ck_dir {
                if config.checkpoint_every > 0 && ck.step % config.checkpoint_every == 0 {
                    save_checkpoint(&ck, dir)?;
                }
            }
        }
        plateau_update(&mut ck, config);
        ck.epoch += 1;
        ck.batch_in_epoch = 0;
        ck.epoch_loss_sum = 0.0;
        ck.epoch_batches = 0;
    }
    if let Some((path, file)) = log.as_mut() {
        file.flush().map_err(|e| Error::io(path.as_path(), e))?;
    }
    if let Some(dir) = &ck_dir {
        save_checkpoint(&ck, dir)?;
    }
    Ok(TrainOutput { checkpoint: ck, metrics })
}

/// Reads the config and checkpoint of a finished run directory.
pub fn load_run(run_dir: &Path) -> Result<(TrainConfig, Checkpoint)> {
    let path = run_dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let config: TrainConfig = serde_json::from_str(&text)?;
    let ck = load_checkpoint(&run_dir.join(CHECKPOINT_DIR))?;
    Ok((config, ck))
}
