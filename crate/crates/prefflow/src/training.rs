//! Trainers: the linear weighted objective with an EMA reference, the
//! sigmoid baseline, supervised regression, and metric logging.
//!
//! One training step, in order: draw `(t, eps_w, eps_l)` per pair, evaluate
//! policy predictions, evaluate reference predictions without gradient
//! tracking, form the loss, apply one optimizer step, then update the
//! reference as `theta_ref <- gamma * theta_ref + (1 - gamma) * theta`.
//! Metrics are computed on the pre-update batch margins. Batch selection and
//! every random draw are keyed by `(seed, step)`, so a run checkpointed and
//! resumed reproduces the uninterrupted run bit-exactly.

use crate::data::{pref_mass, ToyTaskSpec};
use crate::dynamics::{sample, PredictionKind, SampleMode};
use crate::error::{Error, Result};
use crate::math::sigmoid;
use crate::nn::checkpoint::SCHEMA_VERSION;
use crate::nn::{
    grad_loss, mlp_init, optimizer_step, Activation, MlpModel, ModelCheckpoint, OptimHyper,
    OptimizerState,
};
use crate::objectives::{
    delta_d, dpo_unified_loss_on_tape, linear_dpo_loss_on_tape, margin_scale, sft_loss_on_tape,
    utility_weight, DpoConfig, PairDraws, PreferencePair, SftDraws, SftExample,
};
use crate::rng::{self, Purpose};
use crate::schedules::Schedule;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

/// Training objective selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    LinearDpo,
    Dpo,
    Sft,
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear-dpo" => Ok(Method::LinearDpo),
            "dpo" => Ok(Method::Dpo),
            "sft" => Ok(Method::Sft),
            other => Err(Error::Config(format!(
                "unknown method {other:?} (expected linear-dpo | dpo | sft)"
            ))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::LinearDpo => write!(f, "linear-dpo"),
            Method::Dpo => write!(f, "dpo"),
            Method::Sft => write!(f, "sft"),
        }
    }
}

/// Mutable training state.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub step: u64,
    pub policy: MlpModel,
    pub reference: MlpModel,
    pub optimizer: OptimizerState,
    pub rng_seed: u64,
    pub cfg: DpoConfig,
    pub method: Method,
}

impl TrainState {
    /// Fresh state with the reference initialized equal to the policy.
    pub fn new(
        layer_dims: &[usize],
        activation: Activation,
        hyper: OptimHyper,
        cfg: DpoConfig,
        method: Method,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let policy = mlp_init(layer_dims, activation, seed)?;
        let reference = policy.clone();
        let optimizer = OptimizerState::new(policy.param_count(), hyper);
        Ok(TrainState {
            step: 0,
            policy,
            reference,
            optimizer,
            rng_seed: seed,
            cfg,
            method,
        })
    }

    /// Start from a pretrained policy (the reference is set equal to it).
    pub fn from_policy(
        policy: MlpModel,
        hyper: OptimHyper,
        cfg: DpoConfig,
        method: Method,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let reference = policy.clone();
        let optimizer = OptimizerState::new(policy.param_count(), hyper);
        Ok(TrainState {
            step: 0,
            policy,
            reference,
            optimizer,
            rng_seed: seed,
            cfg,
            method,
        })
    }
}

/// Per-step scalar metrics (pre-update margins).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub loss: f64,
    pub implicit_acc: f64,
    pub mean_delta: f64,
    pub mean_weight: f64,
}

/// One metrics-file row; `pref_mass` comes from the periodic sampling eval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub loss: f64,
    pub implicit_acc: f64,
    pub mean_delta: f64,
    pub mean_weight: f64,
    pub pref_mass: f64,
}

pub const METRICS_HEADER: &str = "step,loss,implicit_acc,mean_delta,mean_weight,pref_mass";

impl MetricsRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step,
            self.loss,
            self.implicit_acc,
            self.mean_delta,
            self.mean_weight,
            self.pref_mass
        )
    }

    pub fn parse_csv_line(line: &str, line_no: usize) -> Result<MetricsRow> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 6 metric fields, got {}", fields.len()),
            });
        }
        let num = |i: usize| -> Result<f64> {
            fields[i].trim().parse().map_err(|e| Error::Parse {
                line: line_no,
                msg: format!("bad number in column {}: {e}", i + 1),
            })
        };
        Ok(MetricsRow {
            step: num(0)? as u64,
            loss: num(1)?,
            implicit_acc: num(2)?,
            mean_delta: num(3)?,
            mean_weight: num(4)?,
            pref_mass: num(5)?,
        })
    }
}

/// EMA update `theta_ref <- gamma * theta_ref + (1 - gamma) * theta`.
///
/// `gamma = 1` leaves the reference bit-identical; `gamma = 0` copies the
/// policy.
pub fn ema_update(reference: &mut MlpModel, policy: &MlpModel, gamma: f64) -> Result<()> {
    if !reference.same_architecture(policy) {
        return Err(Error::Contract(
            "EMA update across different architectures".into(),
        ));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Contract(format!(
            "EMA decay must lie in [0, 1], got {gamma}"
        )));
    }
    if gamma == 1.0 {
        return Ok(());
    }
    if gamma == 0.0 {
        *reference = policy.clone();
        return Ok(());
    }
    let mut flat = reference.flat_params();
    for (r, p) in flat.iter_mut().zip(policy.flat_params()) {
        *r = gamma * *r + (1.0 - gamma) * p;
    }
    reference.set_flat_params(&flat)
}

/// Linear warmup factor for a zero-based step index.
fn lr_scale(step: u64, warmup_steps: u32) -> f64 {
    if warmup_steps == 0 {
        1.0
    } else {
        (((step + 1) as f64) / warmup_steps as f64).min(1.0)
    }
}

/// Deterministic batch selection with replacement.
pub fn select_batch(
    dataset: &[PreferencePair],
    batch_size: usize,
    seed: u64,
    step: u64,
) -> Vec<PreferencePair> {
    if dataset.is_empty() {
        return Vec::new();
    }
    let mut rng = rng::stream(seed, Purpose::TrainBatch, step);
    (0..batch_size)
        .map(|_| {
            let i =
                (rng::uniform(&mut rng, 0.0, dataset.len() as f64) as usize).min(dataset.len() - 1);
            dataset[i].clone()
        })
        .collect()
}

/// One optimizer step plus one EMA update, in that order.
///
/// Draws are taken from the `(seed, step)` stream; metrics reflect the
/// pre-update margins. A non-finite loss aborts with a diagnostic.
pub fn train_step(
    state: &mut TrainState,
    batch: &[PreferencePair],
    schedule: &Schedule,
    warmup_steps: u32,
) -> Result<StepMetrics> {
    if batch.is_empty() {
        return Err(Error::Contract("empty training batch".into()));
    }
    let dim = batch[0].x0_w.len();
    let mut draw_rng = rng::stream(state.rng_seed, Purpose::TrainDraw, state.step);
    let cfg = state.cfg;

    let (loss, grads, metrics) = match state.method {
        Method::Sft => {
            let samples: Vec<SftExample> = batch
                .iter()
                .map(|p| SftExample {
                    x0: p.x0_w.clone(),
                    c: p.c.clone(),
                })
                .collect();
            let draws: Vec<SftDraws> = (0..samples.len())
                .map(|_| SftDraws::sample(&mut draw_rng, dim, schedule))
                .collect();
            let (loss, grads) = grad_loss(&state.policy, |tape, taped| {
                sft_loss_on_tape(tape, taped, &samples, cfg.kind, schedule, &draws)
            })?;
            let metrics = StepMetrics {
                loss,
                implicit_acc: 0.5,
                mean_delta: 0.0,
                mean_weight: 1.0,
            };
            (loss, grads, metrics)
        }
        Method::LinearDpo | Method::Dpo => {
            let draws: Vec<PairDraws> = (0..batch.len())
                .map(|_| PairDraws::sample(&mut draw_rng, dim, schedule, cfg.shared_noise))
                .collect();

            // Pre-update margins for logging and the weight statistics.
            let mut deltas = Vec::with_capacity(batch.len());
            let mut weights = Vec::with_capacity(batch.len());
            for (pair, d) in batch.iter().zip(&draws) {
                let parts = delta_d(
                    &state.policy,
                    &state.reference,
                    pair,
                    d.t,
                    &d.eps_w,
                    &d.eps_l,
                    cfg.kind,
                    schedule,
                )?;
                let scaled = margin_scale(&cfg, d.t, schedule)? * parts.delta;
                let w = match state.method {
                    Method::LinearDpo => utility_weight(&cfg.utility, scaled)?,
                    _ => sigmoid(scaled),
                };
                deltas.push(parts.delta);
                weights.push(w);
            }

            let (loss, grads) = match state.method {
                Method::LinearDpo => grad_loss(&state.policy, |tape, taped| {
                    linear_dpo_loss_on_tape(
                        tape,
                        taped,
                        &state.reference,
                        batch,
                        &cfg,
                        schedule,
                        &draws,
                    )
                })?,
                _ => grad_loss(&state.policy, |tape, taped| {
                    dpo_unified_loss_on_tape(
                        tape,
                        taped,
                        &state.reference,
                        batch,
                        &cfg,
                        schedule,
                        &draws,
                    )
                })?,
            };
            let metrics = StepMetrics {
                loss,
                implicit_acc: crate::objectives::implicit_accuracy(&deltas)?,
                mean_delta: crate::math::mean(&deltas),
                mean_weight: crate::math::mean(&weights),
            };
            (loss, grads, metrics)
        }
    };

    if !loss.is_finite() {
        return Err(Error::Training(format!(
            "non-finite loss at step {} (method {})",
            state.step, state.method
        )));
    }

    let mut params = state.policy.flat_params();
    let scale = lr_scale(state.step, warmup_steps);
    optimizer_step(&mut params, &grads, &mut state.optimizer, scale)?;
    state.policy.set_flat_params(&params)?;

    if state.method != Method::Sft {
        ema_update(&mut state.reference, &state.policy, state.cfg.gamma_ema)?;
    }
    state.step += 1;
    Ok(metrics)
}

/// Sample the policy and measure the preferred-region mass for the task's
/// first preferred mode.
#[allow(clippy::too_many_arguments)]
pub fn eval_pref_mass(
    policy: &MlpModel,
    schedule: &Schedule,
    kind: PredictionKind,
    task: &ToyTaskSpec,
    n_samples: usize,
    steps: usize,
    mode: SampleMode,
    seed: u64,
) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::Contract(
            "pref-mass eval needs at least one sample".into(),
        ));
    }
    let mut c = vec![0.0; task.cond_dim];
    c[0] = 1.0;
    let samples: Result<Vec<Vec<f64>>> = (0..n_samples)
        .map(|i| {
            sample(
                policy,
                schedule,
                kind,
                &c,
                steps,
                mode,
                rng::chain_seed(seed, i as u64),
            )
        })
        .collect();
    pref_mass(&samples?, task, &c)
}

/// Margins of a whole dataset at eval-time draws; returns
/// `(implicit accuracy, mean margin)`.
pub fn eval_implicit_acc(
    policy: &MlpModel,
    reference: &MlpModel,
    dataset: &[PreferencePair],
    cfg: &DpoConfig,
    schedule: &Schedule,
    seed: u64,
) -> Result<(f64, f64)> {
    if dataset.is_empty() {
        return Err(Error::Contract(
            "implicit-accuracy eval over an empty dataset".into(),
        ));
    }
    let mut deltas = Vec::with_capacity(dataset.len());
    for (i, pair) in dataset.iter().enumerate() {
        let mut rng = rng::stream(seed, Purpose::Eval, i as u64);
        let d = PairDraws::sample(&mut rng, pair.x0_w.len(), schedule, cfg.shared_noise);
        let parts = delta_d(
            policy, reference, pair, d.t, &d.eps_w, &d.eps_l, cfg.kind, schedule,
        )?;
        deltas.push(parts.delta);
    }
    Ok((
        crate::objectives::implicit_accuracy(&deltas)?,
        crate::math::mean(&deltas),
    ))
}

/// Serialized training state for exact resume.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainCheckpoint {
    pub schema_version: u32,
    pub method: Method,
    pub step: u64,
    pub rng_seed: u64,
    pub cfg: DpoConfig,
    pub schedule: Schedule,
    pub policy: ModelCheckpoint,
    pub reference: ModelCheckpoint,
    pub optimizer: OptimizerState,
}

impl TrainCheckpoint {
    pub fn from_state(state: &TrainState, schedule: &Schedule) -> Self {
        TrainCheckpoint {
            schema_version: SCHEMA_VERSION,
            method: state.method,
            step: state.step,
            rng_seed: state.rng_seed,
            cfg: state.cfg,
            schedule: schedule.clone(),
            policy: ModelCheckpoint::from_model(&state.policy, None),
            reference: ModelCheckpoint::from_model(&state.reference, None),
            optimizer: state.optimizer.clone(),
        }
    }

    pub fn to_state(&self) -> Result<TrainState> {
        let policy = self.policy.to_model()?;
        let reference = self.reference.to_model()?;
        if !policy.same_architecture(&reference) {
            return Err(Error::Contract(
                "checkpoint policy and reference architectures differ".into(),
            ));
        }
        if self.optimizer.first_moment.len() != policy.param_count() {
            return Err(Error::Contract(
                "checkpoint optimizer moments do not fit the policy".into(),
            ));
        }
        self.cfg.validate()?;
        Ok(TrainState {
            step: self.step,
            policy,
            reference,
            optimizer: self.optimizer.clone(),
            rng_seed: self.rng_seed,
            cfg: self.cfg,
            method: self.method,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("state serialization failed: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: format!("bad train checkpoint {}: {e}", path.display()),
        })
    }
}

/// Everything a full run needs besides the dataset.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub method: Method,
    pub cfg: DpoConfig,
    pub schedule: Schedule,
    pub hyper: OptimHyper,
    pub warmup_steps: u32,
    pub batch_size: usize,
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
    pub total_steps: u64,
    pub eval_every: u64,
    pub eval_samples: usize,
    pub sample_steps: usize,
    pub sample_mode: SampleMode,
}

impl RunSettings {
    pub fn validate(&self) -> Result<()> {
        self.cfg.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        if self.sample_steps == 0 {
            return Err(Error::Config("sample_steps must be positive".into()));
        }
        Ok(())
    }

    /// Full layer dims for a task: input embedding width, hidden, data dim.
    pub fn layer_dims(&self, data_dim: usize, cond_dim: usize) -> Vec<usize> {
        let mut dims = vec![crate::nn::input_dim(data_dim, cond_dim)];
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(data_dim);
        dims
    }
}

/// Output of [`train_run`].
pub struct RunOutput {
    pub state: TrainState,
    pub rows: Vec<MetricsRow>,
    pub metrics_path: PathBuf,
    pub final_policy_path: Option<PathBuf>,
}

fn state_path(out_dir: &Path, step: u64) -> PathBuf {
    out_dir.join(format!("state_{step:06}.json"))
}

/// Run (or resume) training end to end, writing checkpoints and metrics.
///
/// Artifacts in `out_dir`: `metrics.csv` (header plus one row per eval),
/// `state_<step>.json` at the start, at every eval point and at the end, and
/// `policy_final.json` once at least one step has run. Resuming from a state
/// file reproduces the uninterrupted run bit-exactly.
pub fn train_run(
    settings: &RunSettings,
    dataset: &[PreferencePair],
    task: &ToyTaskSpec,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<RunOutput> {
    settings.validate()?;
    task.validate()?;
    if dataset.is_empty() {
        return Err(Error::Contract("training needs a nonempty dataset".into()));
    }
    std::fs::create_dir_all(out_dir)?;

    let metrics_path = out_dir.join("metrics.csv");
    let mut state = match resume {
        Some(path) => TrainCheckpoint::load(path)?.to_state()?,
        None => {
            let dims = settings.layer_dims(task.data_dim(), task.cond_dim);
            TrainState::new(
                &dims,
                settings.activation,
                settings.hyper,
                settings.cfg,
                settings.method,
                settings.seed,
            )?
        }
    };

    let mut metrics_file = if resume.is_some() && metrics_path.exists() {
        std::fs::OpenOptions::new()
            .append(true)
            .open(&metrics_path)?
    } else {
        let mut f = std::fs::File::create(&metrics_path)?;
        writeln!(f, "{METRICS_HEADER}")?;
        f
    };

    TrainCheckpoint::from_state(&state, &settings.schedule)
        .save(&state_path(out_dir, state.step))?;

    let mut rows = Vec::new();
    while state.step < settings.total_steps {
        let batch = select_batch(dataset, settings.batch_size, state.rng_seed, state.step);
        let metrics = train_step(
            &mut state,
            &batch,
            &settings.schedule,
            settings.warmup_steps,
        )?;
        if state.step % settings.eval_every == 0 || state.step == settings.total_steps {
            let mass = eval_pref_mass(
                &state.policy,
                &settings.schedule,
                state.cfg.kind,
                task,
                settings.eval_samples,
                settings.sample_steps,
                settings.sample_mode,
                state.rng_seed ^ 0x5eed_0e7a,
            )?;
            let row = MetricsRow {
                step: state.step,
                loss: metrics.loss,
                implicit_acc: metrics.implicit_acc,
                mean_delta: metrics.mean_delta,
                mean_weight: metrics.mean_weight,
                pref_mass: mass,
            };
            writeln!(metrics_file, "{}", row.to_csv_line())?;
            rows.push(row);
            TrainCheckpoint::from_state(&state, &settings.schedule)
                .save(&state_path(out_dir, state.step))?;
        }
    }
    metrics_file.flush()?;

    let final_policy_path = if settings.total_steps > 0 {
        let p = out_dir.join("policy_final.json");
        ModelCheckpoint::from_model(&state.policy, Some(&state.optimizer)).save(&p)?;
        Some(p)
    } else {
        None
    };

    Ok(RunOutput {
        state,
        rows,
        metrics_path,
        final_policy_path,
    })
}

/// Supervised pretraining over clean samples; returns the trained model.
///
/// The same loop as `train_run` without preference structure: batches are
/// drawn from `samples`, the loss is the plain regression objective.
#[allow(clippy::too_many_arguments)]
pub fn train_sft(
    samples: &[SftExample],
    schedule: &Schedule,
    kind: PredictionKind,
    hyper: OptimHyper,
    warmup_steps: u32,
    batch_size: usize,
    layer_dims: &[usize],
    activation: Activation,
    total_steps: u64,
    seed: u64,
) -> Result<MlpModel> {
    if samples.is_empty() {
        return Err(Error::Contract("SFT needs a nonempty sample pool".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let dim = samples[0].x0.len();
    let mut policy = mlp_init(layer_dims, activation, seed)?;
    let mut optimizer = OptimizerState::new(policy.param_count(), hyper);
    for step in 0..total_steps {
        let mut batch_rng = rng::stream(seed, Purpose::TrainBatch, step);
        let batch: Vec<&SftExample> = (0..batch_size)
            .map(|_| {
                let i = (rng::uniform(&mut batch_rng, 0.0, samples.len() as f64) as usize)
                    .min(samples.len() - 1);
                &samples[i]
            })
            .collect();
        let mut draw_rng = rng::stream(seed, Purpose::TrainDraw, step);
        let owned: Vec<SftExample> = batch.into_iter().cloned().collect();
        let draws: Vec<SftDraws> = (0..owned.len())
            .map(|_| SftDraws::sample(&mut draw_rng, dim, schedule))
            .collect();
        let (loss, grads) = grad_loss(&policy, |tape, taped| {
            sft_loss_on_tape(tape, taped, &owned, kind, schedule, &draws)
        })?;
        if !loss.is_finite() {
            return Err(Error::Training(format!(
                "non-finite SFT loss at step {step}"
            )));
        }
        let mut params = policy.flat_params();
        optimizer_step(
            &mut params,
            &grads,
            &mut optimizer,
            lr_scale(step, warmup_steps),
        )?;
        policy.set_flat_params(&params)?;
    }
    Ok(policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_dataset, ToyTaskSpec};
    use crate::dynamics::GaussianRfField;
    use crate::rng::stream;

    fn quick_settings(method: Method, steps: u64, seed: u64) -> RunSettings {
        RunSettings {
            method,
            cfg: DpoConfig::default(),
            schedule: Schedule::rf(),
            hyper: OptimHyper::default(),
            warmup_steps: 10,
            batch_size: 8,
            hidden_dims: vec![16, 16],
            activation: Activation::Tanh,
            seed,
            total_steps: steps,
            eval_every: 5,
            eval_samples: 16,
            sample_steps: 16,
            sample_mode: SampleMode::Ode,
        }
    }

    #[test]
    fn ema_geometry_is_exact() {
        let dims = [4, 8, 2];
        let policy = mlp_init(&dims, Activation::Tanh, 1).unwrap();
        let mut reference = mlp_init(&dims, Activation::Tanh, 2).unwrap();
        let gamma = 0.995;
        let d0: f64 = reference
            .flat_params()
            .iter()
            .zip(policy.flat_params())
            .map(|(r, p)| (r - p) * (r - p))
            .sum::<f64>()
            .sqrt();
        for k in 1..=100u32 {
            ema_update(&mut reference, &policy, gamma).unwrap();
            let dk: f64 = reference
                .flat_params()
                .iter()
                .zip(policy.flat_params())
                .map(|(r, p)| (r - p) * (r - p))
                .sum::<f64>()
                .sqrt();
            let expected = gamma.powi(k as i32) * d0;
            assert!(
                (dk - expected).abs() < 1e-12 * d0.max(1.0),
                "k={k}: {dk} vs {expected}"
            );
        }
    }

    #[test]
    fn ema_endpoint_cases() {
        let dims = [3, 4, 2];
        let policy = mlp_init(&dims, Activation::Tanh, 5).unwrap();
        let mut reference = mlp_init(&dims, Activation::Tanh, 6).unwrap();
        let before = reference.flat_params();
        ema_update(&mut reference, &policy, 1.0).unwrap();
        assert_eq!(reference.flat_params(), before, "gamma = 1 is a no-op");
        ema_update(&mut reference, &policy, 0.0).unwrap();
        assert_eq!(
            reference.flat_params(),
            policy.flat_params(),
            "gamma = 0 copies"
        );
    }

    #[test]
    fn ema_rejects_architecture_mismatch() {
        let policy = mlp_init(&[3, 4, 2], Activation::Tanh, 0).unwrap();
        let mut reference = mlp_init(&[3, 5, 2], Activation::Tanh, 0).unwrap();
        assert!(matches!(
            ema_update(&mut reference, &policy, 0.5),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn zero_lr_step_keeps_policy_and_reference_fixed() {
        let task = ToyTaskSpec::two_mode(64, 3);
        let dataset = gen_dataset(&task).unwrap();
        let settings = quick_settings(Method::LinearDpo, 1, 3);
        let dims = settings.layer_dims(2, 1);
        let hyper = OptimHyper {
            lr: 0.0,
            weight_decay: 0.0,
            ..OptimHyper::default()
        };
        let mut state = TrainState::new(
            &dims,
            Activation::Tanh,
            hyper,
            DpoConfig::default(),
            Method::LinearDpo,
            3,
        )
        .unwrap();
        let before = state.policy.flat_params();
        let batch = select_batch(&dataset, 8, 3, 0);
        train_step(&mut state, &batch, &Schedule::rf(), 0).unwrap();
        assert_eq!(state.policy.flat_params(), before);
        // Reference started equal to the policy, so EMA keeps it equal.
        assert_eq!(state.reference.flat_params(), before);
        assert_eq!(state.step, 1);
    }

    /// At reference init every margin is zero: accuracy 0.5, weight 0.5.
    #[test]
    fn first_step_metrics_at_reference_init() {
        let task = ToyTaskSpec::two_mode(64, 4);
        let dataset = gen_dataset(&task).unwrap();
        let settings = quick_settings(Method::LinearDpo, 1, 4);
        let dims = settings.layer_dims(2, 1);
        let mut state = TrainState::new(
            &dims,
            Activation::Tanh,
            OptimHyper::default(),
            DpoConfig::default(),
            Method::LinearDpo,
            4,
        )
        .unwrap();
        let batch = select_batch(&dataset, 16, 4, 0);
        let m = train_step(&mut state, &batch, &Schedule::rf(), 0).unwrap();
        assert_eq!(m.implicit_acc, 0.5);
        assert_eq!(m.mean_delta, 0.0);
        assert_eq!(m.mean_weight, 0.5);
    }

    /// Order contract: with gamma = 0 the reference equals the post-update
    /// policy after a step.
    #[test]
    fn policy_update_precedes_ema() {
        let task = ToyTaskSpec::two_mode(64, 5);
        let dataset = gen_dataset(&task).unwrap();
        let settings = quick_settings(Method::LinearDpo, 1, 5);
        let dims = settings.layer_dims(2, 1);
        let cfg = DpoConfig {
            gamma_ema: 0.0,
            ..DpoConfig::default()
        };
        let mut state = TrainState::new(
            &dims,
            Activation::Tanh,
            OptimHyper::default(),
            cfg,
            Method::LinearDpo,
            5,
        )
        .unwrap();
        let batch = select_batch(&dataset, 8, 5, 0);
        let before = state.policy.flat_params();
        train_step(&mut state, &batch, &Schedule::rf(), 0).unwrap();
        assert_ne!(state.policy.flat_params(), before, "policy moved");
        assert_eq!(
            state.reference.flat_params(),
            state.policy.flat_params(),
            "reference tracked the *post-update* policy"
        );
    }

    /// gamma = 1 keeps the reference bit-identical across a run.
    #[test]
    fn fixed_reference_mode_never_touches_reference() {
        let task = ToyTaskSpec::two_mode(128, 6);
        let dataset = gen_dataset(&task).unwrap();
        let settings = quick_settings(Method::Dpo, 1, 6);
        let dims = settings.layer_dims(2, 1);
        let cfg = DpoConfig {
            gamma_ema: 1.0,
            ..DpoConfig::default()
        };
        let mut state = TrainState::new(
            &dims,
            Activation::Tanh,
            OptimHyper::default(),
            cfg,
            Method::Dpo,
            6,
        )
        .unwrap();
        let frozen = state.reference.flat_params();
        for step in 0..20 {
            let batch = select_batch(&dataset, 8, 6, step);
            train_step(&mut state, &batch, &Schedule::rf(), 0).unwrap();
        }
        assert_eq!(state.reference.flat_params(), frozen);
    }

    #[test]
    fn training_is_deterministic() {
        let task = ToyTaskSpec::two_mode(128, 7);
        let dataset = gen_dataset(&task).unwrap();
        let run = || {
            let settings = quick_settings(Method::LinearDpo, 1, 7);
            let dims = settings.layer_dims(2, 1);
            let mut state = TrainState::new(
                &dims,
                Activation::Tanh,
                OptimHyper::default(),
                DpoConfig::default(),
                Method::LinearDpo,
                7,
            )
            .unwrap();
            let mut rows = Vec::new();
            for step in 0..25 {
                let batch = select_batch(&dataset, 8, 7, step);
                rows.push(train_step(&mut state, &batch, &Schedule::rf(), 5).unwrap());
            }
            (state.policy.flat_params(), rows)
        };
        let (pa, ra) = run();
        let (pb, rb) = run();
        assert_eq!(pa, pb);
        assert_eq!(ra, rb);
    }

    #[test]
    fn zero_step_run_emits_initial_checkpoint_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let task = ToyTaskSpec::two_mode(32, 8);
        let dataset = gen_dataset(&task).unwrap();
        let settings = quick_settings(Method::LinearDpo, 0, 8);
        let out = train_run(&settings, &dataset, &task, dir.path(), None).unwrap();
        assert!(out.rows.is_empty());
        assert!(out.final_policy_path.is_none());
        let metrics = std::fs::read_to_string(&out.metrics_path).unwrap();
        assert_eq!(metrics.trim(), METRICS_HEADER);
        assert!(dir.path().join("state_000000.json").exists());
    }

    #[test]
    fn resume_reproduces_uninterrupted_run_bit_exactly() {
        let task = ToyTaskSpec::two_mode(128, 9);
        let dataset = gen_dataset(&task).unwrap();

        let dir_full = tempfile::tempdir().unwrap();
        let full = train_run(
            &quick_settings(Method::LinearDpo, 20, 9),
            &dataset,
            &task,
            dir_full.path(),
            None,
        )
        .unwrap();

        let dir_half = tempfile::tempdir().unwrap();
        let half = train_run(
            &quick_settings(Method::LinearDpo, 10, 9),
            &dataset,
            &task,
            dir_half.path(),
            None,
        )
        .unwrap();
        assert_eq!(half.state.step, 10);
        let resumed = train_run(
            &quick_settings(Method::LinearDpo, 20, 9),
            &dataset,
            &task,
            dir_half.path(),
            Some(&dir_half.path().join("state_000010.json")),
        )
        .unwrap();

        assert_eq!(
            full.state.policy.flat_params(),
            resumed.state.policy.flat_params()
        );
        assert_eq!(
            full.state.reference.flat_params(),
            resumed.state.reference.flat_params()
        );
        assert_eq!(
            full.state.optimizer.first_moment,
            resumed.state.optimizer.first_moment
        );
    }

    #[test]
    fn sft_run_dispatch_trains_on_winners() {
        let dir = tempfile::tempdir().unwrap();
        let task = ToyTaskSpec::two_mode(128, 10);
        let dataset = gen_dataset(&task).unwrap();
        let out = train_run(
            &quick_settings(Method::Sft, 10, 10),
            &dataset,
            &task,
            dir.path(),
            None,
        )
        .unwrap();
        assert_eq!(out.state.step, 10);
        assert!(out.final_policy_path.unwrap().exists());
        // SFT rows carry the constant weight 1.
        assert!(out.rows.iter().all(|r| r.mean_weight == 1.0));
    }

    #[test]
    fn sft_zero_steps_returns_initialized_model() {
        let samples = vec![SftExample {
            x0: vec![0.0, 0.0],
            c: vec![],
        }];
        let dims = [crate::nn::input_dim(2, 0), 8, 2];
        let got = train_sft(
            &samples,
            &Schedule::rf(),
            PredictionKind::Velocity,
            OptimHyper::default(),
            0,
            4,
            &dims,
            Activation::Tanh,
            0,
            77,
        )
        .unwrap();
        let init = mlp_init(&dims, Activation::Tanh, 77).unwrap();
        assert_eq!(got.flat_params(), init.flat_params());
    }

    /// SFT on 1D Gaussian data approaches the analytic velocity field.
    #[test]
    fn sft_learns_the_analytic_gaussian_velocity() {
        let field = GaussianRfField::new(2.0, 1);
        let mut rng = stream(12, Purpose::Eval, 70);
        let samples: Vec<SftExample> = (0..4096)
            .map(|_| SftExample {
                x0: vec![2.0 * rng::standard_normal(&mut rng)],
                c: vec![],
            })
            .collect();
        let dims = [crate::nn::input_dim(1, 0), 32, 32, 1];
        let schedule = Schedule::rf();
        let model = train_sft(
            &samples,
            &schedule,
            PredictionKind::Velocity,
            OptimHyper::default(),
            200,
            64,
            &dims,
            Activation::Tanh,
            5000,
            13,
        )
        .unwrap();
        // Mean squared gap to the analytic field over the bulk of the
        // marginal at a few times; the irreducible target variance floor is
        // the conditional variance of (x1 - x0) given x_t, which at these
        // scales is O(1), so demand MSE well under it.
        let mut worst: f64 = 0.0;
        for t in [0.2, 0.5, 0.8] {
            let std_t = field.marginal_var(t).sqrt();
            let mut mse = 0.0;
            let mut count = 0;
            let mut x = -2.0 * std_t;
            while x <= 2.0 * std_t {
                let got = model.forward(&[x], t, &[]).unwrap()[0];
                let want = field.velocity(&[x], t)[0];
                mse += (got - want) * (got - want);
                count += 1;
                x += 0.1 * std_t;
            }
            worst = worst.max(mse / count as f64);
        }
        assert!(worst < 0.15, "worst field MSE {worst}");
    }

    /// A policy with non-finite parameters produces a non-finite loss and
    /// the step aborts with a diagnostic instead of corrupting the state.
    #[test]
    fn non_finite_loss_aborts_training() {
        let task = ToyTaskSpec::two_mode(32, 2);
        let dataset = gen_dataset(&task).unwrap();
        let settings = quick_settings(Method::LinearDpo, 1, 2);
        let dims = settings.layer_dims(2, 1);
        let mut state = TrainState::new(
            &dims,
            Activation::Tanh,
            OptimHyper::default(),
            DpoConfig::default(),
            Method::LinearDpo,
            2,
        )
        .unwrap();
        let mut broken = vec![f64::NAN; state.policy.param_count()];
        broken[0] = 1.0;
        state.policy.set_flat_params(&broken).unwrap();
        let batch = select_batch(&dataset, 4, 2, 0);
        match train_step(&mut state, &batch, &Schedule::rf(), 0) {
            Err(Error::Training(msg)) => assert!(msg.contains("step 0"), "{msg}"),
            other => panic!("expected training abort, got {other:?}"),
        }
        assert_eq!(state.step, 0, "aborted step must not advance the counter");
    }

    /// Calibrated on the two-mode task: the 100-step moving average of the
    /// SFT loss declines to the irreducible-noise floor and never rises more
    /// than 7.5% between consecutive windows once there.
    #[test]
    fn sft_loss_moving_average_is_nonincreasing() {
        let task = ToyTaskSpec::two_mode(1024, 42);
        let dataset = gen_dataset(&task).unwrap();
        let settings = quick_settings(Method::Sft, 1, 7);
        let dims = settings.layer_dims(2, 1);
        let mut state = TrainState::new(
            &dims,
            Activation::Tanh,
            OptimHyper::default(),
            DpoConfig::default(),
            Method::Sft,
            7,
        )
        .unwrap();
        let schedule = Schedule::rf();
        let mut losses = Vec::new();
        for step in 0..1200 {
            let batch = select_batch(&dataset, 64, state.rng_seed, step);
            losses.push(train_step(&mut state, &batch, &schedule, 200).unwrap().loss);
        }
        let ma = |k: usize| losses[k..k + 100].iter().sum::<f64>() / 100.0;
        let first = ma(0);
        let mut prev = first;
        for k in (100..=1100).step_by(100) {
            let m = ma(k);
            assert!(
                m <= prev * 1.075,
                "moving average rose from {prev:.4} to {m:.4} at step {k}"
            );
            prev = m;
        }
        assert!(
            prev < 0.6 * first,
            "loss failed to decline: start {first:.4}, end {prev:.4}"
        );
    }

    #[test]
    fn metrics_row_roundtrips_through_csv() {
        let row = MetricsRow {
            step: 42,
            loss: std::f64::consts::LN_2,
            implicit_acc: 0.5,
            mean_delta: -1.25e-3,
            mean_weight: 0.01,
            pref_mass: 0.875,
        };
        let back = MetricsRow::parse_csv_line(&row.to_csv_line(), 1).unwrap();
        assert_eq!(row, back);
    }
}
