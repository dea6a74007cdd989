//! Train-time density optimization with a persistent coefficient cache.
//!
//! Each training step loads a batch of molecules, substitutes cached
//! coefficients where present (fresh perturbations around the ground
//! state otherwise), evaluates the surrogate loss, updates the model
//! parameters, advances every batch entry by one inference-identical
//! gradient-descent step, writes the results back to the cache, and
//! finally drops each touched entry with probability `q_reset`. The
//! static-sampling baseline replaces the cache machinery by fresh
//! perturbations on every visit.
//!
//! Randomness is split over independent generator streams (shuffling,
//! perturbations, resets) so the degenerate configurations collapse
//! exactly: `q_reset = 1` reproduces static sampling bit for bit, and
//! `q_reset = 0` yields one uninterrupted descent trajectory per
//! molecule.

use std::collections::HashMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Function, NodeId, Tape};
use crate::denopt::gd_step;
use crate::fmt_g17;
use crate::losses::{
    emit_gdi, emit_grad_norm_range, emit_grad_to_gs, emit_lower_bound, step_distances, LossConfig,
    LossKind,
};
use crate::model::{emit_energy, ModelError, ModelSpec, SurrogateModel};
use crate::synth::{unit_vector, Dataset, Molecule};
use crate::Vector;

/// Generator stream ids, fixed so that runs are replayable and the
/// degenerate sampling modes consume identical perturbation streams.
pub const STREAM_SHUFFLE: u64 = 1;
pub const STREAM_PERTURB: u64 = 2;
pub const STREAM_RESET: u64 = 3;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite loss at step {}", dump.step)]
    NonFiniteLoss { dump: Box<BatchDump> },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Snapshot of the batch that produced a non-finite loss.
#[derive(Debug, Clone, Serialize)]
pub struct BatchDump {
    pub step: usize,
    pub epoch: usize,
    pub molecule_ids: Vec<String>,
    pub coefficients: Vec<Vec<f64>>,
    pub sample_losses: Vec<f64>,
    pub theta_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Persistent per-molecule cache advanced one step per visit.
    Pcd,
    /// Fresh perturbation around the ground state on every visit.
    Static,
}

impl std::str::FromStr for SamplingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pcd" => Ok(Self::Pcd),
            "static" => Ok(Self::Static),
            other => Err(format!("unknown sampling mode {other:?}; expected pcd or static")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub batch_size: usize,
    pub epochs: usize,
    /// Step size of the adaptive moment estimation parameter update.
    pub adam_lr: f64,
    pub mode: SamplingMode,
    pub seed: u64,
    /// Probability of dropping a cache entry after each commit.
    pub q_reset: f64,
    /// Mean of the Gaussian the perturbation radius is drawn from.
    pub radius_mean: f64,
    /// Standard deviation of that Gaussian.
    pub radius_std: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig::default(),
            batch_size: 16,
            epochs: 50,
            adam_lr: 1e-3,
            mode: SamplingMode::Pcd,
            seed: 0,
            q_reset: 0.01,
            radius_mean: 0.05,
            radius_std: 0.05,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        self.loss.validate().map_err(TrainError::Config)?;
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if !(self.adam_lr > 0.0 && self.adam_lr.is_finite()) {
            return Err(TrainError::Config(format!(
                "parameter step size must be positive, got {}",
                self.adam_lr
            )));
        }
        if !(0.0..=1.0).contains(&self.q_reset) {
            return Err(TrainError::Config(format!(
                "q_reset must lie in [0, 1], got {}",
                self.q_reset
            )));
        }
        if !(self.radius_mean >= 0.0 && self.radius_std >= 0.0) {
            return Err(TrainError::Config(
                "perturbation radius parameters must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Isotropic perturbation around the ground state: direction uniform on
/// the unit sphere, radius the absolute value of a Gaussian sample.
pub fn perturb<R: Rng>(
    p_star: &Vector,
    rng: &mut R,
    radius_mean: f64,
    radius_std: f64,
) -> Vector {
    let direction = unit_vector(p_star.len(), rng);
    let normal = Normal::new(radius_mean, radius_std).expect("radius std must be finite");
    let radius = normal.sample(rng).abs();
    p_star + direction * radius
}

/// Persistent map molecule-id -> coefficient vector (one entry per
/// molecule), with the reset probability and perturbation parameters
/// used to refill it.
#[derive(Debug, Clone)]
pub struct TrainCache {
    entries: HashMap<String, Vector>,
    pub q_reset: f64,
    pub radius_mean: f64,
    pub radius_std: f64,
}

impl TrainCache {
    pub fn new(q_reset: f64, radius_mean: f64, radius_std: f64) -> Self {
        assert!((0.0..=1.0).contains(&q_reset), "q_reset must lie in [0, 1]");
        Self {
            entries: HashMap::new(),
            q_reset,
            radius_mean,
            radius_std,
        }
    }

    /// Cached coefficients if present, otherwise a fresh perturbation
    /// (not yet committed). The flag reports a cache hit.
    pub fn fetch_or_perturb<R: Rng>(&self, mol: &Molecule, rng: &mut R) -> (Vector, bool) {
        match self.entries.get(&mol.id) {
            Some(p) => (p.clone(), true),
            None => (
                perturb(&mol.ground_state, rng, self.radius_mean, self.radius_std),
                false,
            ),
        }
    }

    pub fn commit(&mut self, id: &str, p: Vector) {
        self.entries.insert(id.to_string(), p);
    }

    /// Drops the entry with probability `q_reset`; reports whether it did.
    pub fn maybe_reset<R: Rng>(&mut self, id: &str, rng: &mut R) -> bool {
        if rng.random::<f64>() < self.q_reset {
            self.entries.remove(id);
            true
        } else {
            false
        }
    }

    pub fn get(&self, id: &str) -> Option<&Vector> {
        self.entries.get(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    /// Batch-mean surrogate loss (before the parameter update).
    pub loss: f64,
    /// Batch-mean single-step contraction factor.
    pub mean_contraction: f64,
    pub cache_hits: usize,
    pub resets: usize,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
}

pub const TRAIN_LOG_CSV_HEADER: &str = "step,epoch,loss,mean_contraction,cache_hits,resets";

impl TrainLog {
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "{TRAIN_LOG_CSV_HEADER}")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.step,
                r.epoch,
                fmt_g17(r.loss),
                fmt_g17(r.mean_contraction),
                r.cache_hits,
                r.resets
            )?;
        }
        Ok(())
    }

    pub fn epoch_mean_loss(&self, epoch: usize) -> f64 {
        let losses: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.epoch == epoch)
            .map(|r| r.loss)
            .collect();
        losses.iter().sum::<f64>() / losses.len() as f64
    }
}

pub struct TrainOutcome {
    pub model: SurrogateModel,
    pub log: TrainLog,
    pub cache: TrainCache,
    /// Generator provenance (seed and per-stream word positions),
    /// embedded in checkpoints.
    pub rng_state: serde_json::Value,
}

/// The per-sample training program: the surrogate energy, its emitted
/// input-gradient nodes, and the loss on top, all on one tape. Auxiliary
/// inputs are the molecule's dSAD coefficients, features, and ground
/// state, in that order.
struct LossProgram {
    func: Function,
    grad_nodes: Vec<NodeId>,
}

fn build_loss_program(spec: &ModelSpec, loss: &LossConfig) -> LossProgram {
    let n = spec.coeff_dim;
    let n_aux = spec.aux_count() + n; // dsad + features + ground state
    let mut tape = Tape::new(n, spec.param_count(), n_aux);
    let p_nodes = tape.coeff_ids();
    let p_star_nodes: Vec<NodeId> = (0..n).map(|i| tape.aux_id(spec.aux_count() + i)).collect();

    let energy_node = emit_energy(&mut tape, spec, &p_nodes);
    let grad_nodes = tape.gradient_nodes(energy_node, &p_nodes);

    let output = match loss.kind {
        LossKind::Gdi => emit_gdi(
            &mut tape,
            &p_nodes,
            &p_star_nodes,
            &grad_nodes,
            loss.beta,
            loss.lambda,
        ),
        LossKind::LowerBound => {
            let energy_at_gs = emit_energy(&mut tape, spec, &p_star_nodes);
            emit_lower_bound(&mut tape, energy_at_gs, energy_node)
        }
        LossKind::GradToGs => emit_grad_to_gs(&mut tape, &p_nodes, &p_star_nodes, &grad_nodes),
        LossKind::GradNormRange => {
            emit_grad_norm_range(&mut tape, &grad_nodes, loss.g_min, loss.g_max)
        }
    };
    LossProgram {
        func: Function::new(tape, output),
        grad_nodes,
    }
}

/// Adaptive moment estimation with the standard defaults.
struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vector,
    v: Vector,
    t: u32,
}

impl Adam {
    fn new(lr: f64, dim: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Vector::zeros(dim),
            v: Vector::zeros(dim),
            t: 0,
        }
    }

    fn step(&mut self, theta: &mut Vector, grad: &Vector) {
        self.t += 1;
        let b1 = self.beta1;
        let b2 = self.beta2;
        self.m = &self.m * b1 + grad * (1.0 - b1);
        self.v = &self.v * b2 + grad.component_mul(grad) * (1.0 - b2);
        let m_hat = &self.m / (1.0 - b1.powi(self.t as i32));
        let v_hat = &self.v / (1.0 - b2.powi(self.t as i32));
        for i in 0..theta.len() {
            theta[i] -= self.lr * m_hat[i] / (v_hat[i].sqrt() + self.eps);
        }
    }
}

pub fn train(
    dataset: &Dataset,
    model: SurrogateModel,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    train_with_observer(dataset, model, cfg, |_, _| {})
}

/// Like [`train`], invoking `observer` with every step record and the
/// model state after that step's parameter update (checkpoint hooks).
pub fn train_with_observer(
    dataset: &Dataset,
    mut model: SurrogateModel,
    cfg: &TrainConfig,
    mut observer: impl FnMut(&StepRecord, &SurrogateModel),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    for mol in &dataset.molecules {
        assert_eq!(
            mol.dim(),
            model.spec().coeff_dim,
            "molecule {} does not match the model's coefficient dimension",
            mol.id
        );
    }

    let stream = |id: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(id);
        rng
    };
    let mut rng_shuffle = stream(STREAM_SHUFFLE);
    let mut rng_perturb = stream(STREAM_PERTURB);
    let mut rng_reset = stream(STREAM_RESET);

    let program = build_loss_program(model.spec(), &cfg.loss);
    let mut cache = TrainCache::new(cfg.q_reset, cfg.radius_mean, cfg.radius_std);
    let mut adam = Adam::new(cfg.adam_lr, model.spec().param_count());
    let mut log = TrainLog::default();

    // Per-molecule aux inputs of the loss program: dsad, features, p*.
    let aux: Vec<Vec<f64>> = dataset
        .molecules
        .iter()
        .map(|m| {
            m.dsad
                .iter()
                .chain(m.features.iter())
                .chain(m.ground_state.iter())
                .copied()
                .collect()
        })
        .collect();

    let n_theta = model.spec().param_count();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let order = epoch_order(dataset, &mut rng_shuffle);
        for batch in order.chunks(cfg.batch_size) {
            // (1)-(2): assemble coefficients, preferring cached entries.
            let mut coeffs = Vec::with_capacity(batch.len());
            let mut cache_hits = 0usize;
            for &mi in batch {
                let mol = &dataset.molecules[mi];
                let p = match cfg.mode {
                    SamplingMode::Pcd => {
                        let (p, hit) = cache.fetch_or_perturb(mol, &mut rng_perturb);
                        cache_hits += usize::from(hit);
                        p
                    }
                    SamplingMode::Static => {
                        perturb(&mol.ground_state, &mut rng_perturb, cfg.radius_mean, cfg.radius_std)
                    }
                };
                coeffs.push(p);
            }

            // (3)-(4): evaluate energies, gradients and the surrogate
            // loss, then update the parameters.
            let theta = model.theta().clone();
            let mut grad_sum = Vector::zeros(n_theta);
            let mut loss_sum = 0.0;
            let mut sample_losses = Vec::with_capacity(batch.len());
            let mut input_grads = Vec::with_capacity(batch.len());
            let mut contraction_sum = 0.0;
            let mut contraction_count = 0usize;
            for (&mi, p) in batch.iter().zip(&coeffs) {
                let mol = &dataset.molecules[mi];
                let values = program.func.forward_pass(p.as_slice(), theta.as_slice(), &aux[mi]);
                let loss_value = values[program.func.output()];
                sample_losses.push(loss_value);
                loss_sum += loss_value;
                let grad_p = Vector::from_iterator(
                    p.len(),
                    program.grad_nodes.iter().map(|&id| values[id]),
                );
                let (after, before) =
                    step_distances(p, &mol.ground_state, &grad_p, cfg.loss.lambda);
                if before > 0.0 {
                    contraction_sum += after / before;
                    contraction_count += 1;
                }
                input_grads.push(grad_p);
                grad_sum += program.func.param_gradient_from_forward(&values);
            }
            let batch_len = batch.len() as f64;
            let loss = loss_sum / batch_len;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    dump: Box::new(BatchDump {
                        step,
                        epoch,
                        molecule_ids: batch
                            .iter()
                            .map(|&mi| dataset.molecules[mi].id.clone())
                            .collect(),
                        coefficients: coeffs
                            .iter()
                            .map(|p| p.iter().copied().collect())
                            .collect(),
                        sample_losses,
                        theta_norm: theta.norm(),
                    }),
                });
            }
            let grad_theta = grad_sum / batch_len;
            let mut theta = theta;
            adam.step(&mut theta, &grad_theta);
            model.set_theta(theta)?;

            // (5)-(7): one inference-identical density step per entry,
            // committed to the cache and probabilistically reset.
            let mut resets = 0usize;
            if cfg.mode == SamplingMode::Pcd {
                for ((&mi, p), grad_p) in batch.iter().zip(&coeffs).zip(&input_grads) {
                    let mol = &dataset.molecules[mi];
                    let advanced = gd_step(p, grad_p, cfg.loss.lambda);
                    cache.commit(&mol.id, advanced);
                    resets += usize::from(cache.maybe_reset(&mol.id, &mut rng_reset));
                }
            }

            let record = StepRecord {
                step,
                epoch,
                loss,
                mean_contraction: if contraction_count > 0 {
                    contraction_sum / contraction_count as f64
                } else {
                    0.0
                },
                cache_hits,
                resets,
            };
            observer(&record, &model);
            log.records.push(record);
            step += 1;
        }
    }

    let rng_state = serde_json::json!({
        "seed": cfg.seed,
        "shuffle_word_pos": rng_shuffle.get_word_pos().to_string(),
        "perturb_word_pos": rng_perturb.get_word_pos().to_string(),
        "reset_word_pos": rng_reset.get_word_pos().to_string(),
    });
    Ok(TrainOutcome {
        model,
        log,
        cache,
        rng_state,
    })
}

/// The shuffled molecule visit order of one epoch: every molecule index
/// repeated `duplication` times.
pub fn epoch_order(dataset: &Dataset, rng: &mut ChaCha8Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..dataset.molecules.len())
        .flat_map(|i| std::iter::repeat_n(i, dataset.duplication))
        .collect();
    order.shuffle(rng);
    order
}
