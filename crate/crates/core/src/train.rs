//! Deterministic minibatch SGD with momentum, L2 weight decay and a step
//! learning-rate schedule, plus the parent → fork → two children protocol.
//!
//! Each epoch's shuffle comes from a ChaCha8 stream keyed by `(seed, epoch)`,
//! so any epoch can be replayed without replaying the ones before it.
//! Children differ from each other only through their shuffle seeds.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::DatasetSlice;
use crate::error::{Error, Result};
use crate::hashing::{canonical_hash, CODE_VERSION};
use crate::network::{Network, NetworkSpec};
use crate::params::ParamVector;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default)]
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 128,
            lr: 0.1,
            lr_decay_epochs: Vec::new(),
            lr_decay_factor: 10.0,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.validate_for(self.epochs)
    }

    /// Like [`validate`](Self::validate), but decay epochs only need to fall
    /// before `horizon`. Forked children count epochs on their own clock, so
    /// a schedule may reach past the parent's last epoch.
    pub fn validate_for(&self, horizon: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be finite and non-negative, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.lr_decay_factor.is_nan() || self.lr_decay_factor < 1.0 {
            return bad(format!("lr_decay_factor must be >= 1, got {}", self.lr_decay_factor));
        }
        if self.lr_decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return bad("lr_decay_epochs must be strictly increasing".into());
        }
        if let Some(&e) = self.lr_decay_epochs.iter().find(|&&e| e >= horizon) {
            return bad(format!("lr decay epoch {e} is outside [0, {horizon})"));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.lr_decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.lr / self.lr_decay_factor.powi(drops as i32)
    }
}

/// Epoch → parameters after that many epochs (0 is the starting point).
pub type Checkpoints = BTreeMap<usize, ParamVector>;

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub checkpoints: Checkpoints,
    /// Full-slice gradient norm of the data loss at the final parameters.
    pub final_grad_norm: f64,
    pub final_loss: f64,
}

impl Trajectory {
    pub fn last(&self) -> &ParamVector {
        self.checkpoints
            .values()
            .next_back()
            .expect("trajectory has a start point")
    }
}

/// Permutation of `0..n` for one epoch.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Trains for `cfg.epochs` epochs from `init`, shuffling with `cfg.seed`.
pub fn train(
    net: &Network,
    init: &ParamVector,
    data: &DatasetSlice,
    cfg: &TrainConfig,
    checkpoint_every: usize,
) -> Result<Trajectory> {
    cfg.validate()?;
    run_sgd(net, init, data, cfg, cfg.seed, cfg.epochs, checkpoint_every)
}

fn run_sgd(
    net: &Network,
    init: &ParamVector,
    data: &DatasetSlice,
    cfg: &TrainConfig,
    seed: u64,
    epochs: usize,
    checkpoint_every: usize,
) -> Result<Trajectory> {
    if checkpoint_every == 0 {
        return Err(Error::Config("checkpoint_every must be at least 1".into()));
    }
    net.check_training_inputs(init, data)?;
    let layout = init.layout().clone();
    let mut theta = init.values().to_vec();
    let mut velocity = vec![0.0; theta.len()];
    let mut grad = vec![0.0; theta.len()];
    let mut checkpoints = BTreeMap::new();
    checkpoints.insert(0, init.clone());

    for epoch in 0..epochs {
        let lr = cfg.lr_at(epoch);
        let order = epoch_order(seed, epoch, data.len());
        for (batch, rows) in order.chunks(cfg.batch_size).enumerate() {
            let loss = match net.batch_into(&theta, data, rows, &mut grad) {
                Ok(l) => l,
                Err(Error::NonFiniteActivation { .. }) => f64::NAN,
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, batch, loss });
            }
            for ((t, v), g) in theta.iter_mut().zip(&mut velocity).zip(&grad) {
                let g = g + cfg.weight_decay * *t;
                *v = cfg.momentum * *v + g;
                *t -= lr * *v;
            }
            if theta.iter().any(|t| !t.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    batch,
                    loss: f64::NAN,
                });
            }
        }
        let done = epoch + 1;
        if done % checkpoint_every == 0 || done == epochs {
            checkpoints.insert(done, ParamVector::new(theta.clone(), layout.clone())?);
        }
    }

    Trajectory::from_checkpoints(net, data, checkpoints)
}

impl Trajectory {
    /// Rebuilds a trajectory from stored checkpoints, recomputing the final
    /// loss and gradient norm on `data`.
    pub fn from_checkpoints(net: &Network, data: &DatasetSlice, checkpoints: Checkpoints) -> Result<Self> {
        let Some(last) = checkpoints.values().next_back() else {
            return Err(Error::Missing("trajectory has no checkpoints".into()));
        };
        let (final_loss, g) = net.loss_and_gradient(last, data)?;
        Ok(Trajectory {
            final_grad_norm: g.norm(),
            final_loss,
            checkpoints,
        })
    }
}

fn default_checkpoint_every() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForkSpec {
    pub fork_epoch: usize,
    pub child_seeds: [u64; 2],
    pub child_epochs: usize,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    /// Permit identical child seeds (the children then coincide exactly).
    #[serde(default)]
    pub allow_equal_seeds: bool,
}

impl ForkSpec {
    pub fn new(fork_epoch: usize, child_seeds: [u64; 2], child_epochs: usize) -> Self {
        Self {
            fork_epoch,
            child_seeds,
            child_epochs,
            checkpoint_every: 1,
            allow_equal_seeds: false,
        }
    }

    pub fn validate(&self, parent_epochs: usize) -> Result<()> {
        if self.fork_epoch > parent_epochs {
            return Err(Error::Config(format!(
                "fork epoch {} is beyond the {parent_epochs} parent epochs",
                self.fork_epoch
            )));
        }
        if self.child_seeds[0] == self.child_seeds[1] && !self.allow_equal_seeds {
            return Err(Error::Config(
                "child seeds must differ (set allow_equal_seeds to force)".into(),
            ));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForkManifest {
    pub config_hash: String,
    pub dataset_id: String,
    pub code_version: String,
    pub fork_epoch: usize,
    pub parent_final_grad_norm: f64,
    pub child_final_grad_norms: [f64; 2],
    pub child_final_losses: [f64; 2],
    /// `"parent/<epoch>"`, `"child1/<epoch>"`, `"child2/<epoch>"` → content hash.
    pub checkpoint_hashes: BTreeMap<String, String>,
}

#[derive(Clone, Debug)]
pub struct ForkedRun {
    pub parent_checkpoints: Checkpoints,
    pub child_checkpoints: [Checkpoints; 2],
    pub config: TrainConfig,
    pub fork: ForkSpec,
    pub manifest: ForkManifest,
}

impl ForkedRun {
    pub fn fork_point(&self) -> &ParamVector {
        &self.child_checkpoints[0][&0]
    }

    /// Final sibling solutions `(θ*₁, θ*₂)`.
    pub fn finals(&self) -> (&ParamVector, &ParamVector) {
        fn last(c: &Checkpoints) -> &ParamVector {
            c.values().next_back().expect("non-empty")
        }
        (last(&self.child_checkpoints[0]), last(&self.child_checkpoints[1]))
    }
}

#[derive(Serialize)]
struct RunIdentity<'a> {
    network: &'a NetworkSpec,
    train: &'a TrainConfig,
    fork: &'a ForkSpec,
    init_hash: String,
    dataset_id: &'a str,
}

/// Trains a parent that will later be forked with `forks`; the schedule is
/// checked against the longest of the parent and child horizons.
pub fn train_parent(
    net: &Network,
    init: &ParamVector,
    data: &DatasetSlice,
    cfg: &TrainConfig,
    forks: &[ForkSpec],
) -> Result<Trajectory> {
    cfg.validate_for(schedule_horizon(cfg, forks))?;
    for fork in forks {
        fork.validate(cfg.epochs)?;
    }
    run_sgd(net, init, data, cfg, cfg.seed, cfg.epochs, 1)
}

fn schedule_horizon(cfg: &TrainConfig, forks: &[ForkSpec]) -> usize {
    forks.iter().map(|f| f.child_epochs).fold(cfg.epochs, usize::max)
}

/// Trains the parent for `cfg.epochs`, then forks at `fork.fork_epoch`.
pub fn fork_and_train(
    net: &Network,
    init: &ParamVector,
    data: &DatasetSlice,
    cfg: &TrainConfig,
    fork: &ForkSpec,
) -> Result<ForkedRun> {
    let parent = train_parent(net, init, data, cfg, std::slice::from_ref(fork))?;
    fork_from_parent(net, data, cfg, &parent, fork)
}

/// Forks an already-trained parent trajectory. The two children start from
/// the parent checkpoint at `fork.fork_epoch` with a fresh momentum buffer,
/// run `cfg`'s schedule on their own epoch counter and shuffle with their own
/// seeds. They are trained concurrently and share nothing mutable.
pub fn fork_from_parent(
    net: &Network,
    data: &DatasetSlice,
    cfg: &TrainConfig,
    parent: &Trajectory,
    fork: &ForkSpec,
) -> Result<ForkedRun> {
    let start = check_fork(cfg, parent, fork)?;
    let child = |seed| run_sgd(net, start, data, cfg, seed, fork.child_epochs, fork.checkpoint_every);
    let (c1, c2) = rayon::join(|| child(fork.child_seeds[0]), || child(fork.child_seeds[1]));
    assemble_fork(net, data, cfg, parent, fork, [c1?, c2?])
}

fn check_fork<'p>(cfg: &TrainConfig, parent: &'p Trajectory, fork: &ForkSpec) -> Result<&'p ParamVector> {
    cfg.validate_for(schedule_horizon(cfg, std::slice::from_ref(fork)))?;
    let parent_epochs = parent.checkpoints.keys().next_back().copied().unwrap_or(0);
    fork.validate(parent_epochs)?;
    parent
        .checkpoints
        .get(&fork.fork_epoch)
        .ok_or_else(|| Error::Missing(format!("parent checkpoint for epoch {}", fork.fork_epoch)))
}

/// Builds a [`ForkedRun`] from child trajectories that were trained earlier
/// (for instance reloaded from disk). The children must start at the parent
/// fork checkpoint.
pub fn assemble_fork(
    net: &Network,
    data: &DatasetSlice,
    cfg: &TrainConfig,
    parent: &Trajectory,
    fork: &ForkSpec,
    children: [Trajectory; 2],
) -> Result<ForkedRun> {
    let start = check_fork(cfg, parent, fork)?;
    for child in &children {
        if child.checkpoints.get(&0) != Some(start) {
            return Err(Error::Precondition(format!(
                "child does not start at parent epoch {}",
                fork.fork_epoch
            )));
        }
    }
    let [c1, c2] = children;

    let identity = RunIdentity {
        network: net.spec(),
        train: cfg,
        fork,
        init_hash: parent.checkpoints[&0].content_hash(),
        dataset_id: data.id(),
    };
    let mut checkpoint_hashes = BTreeMap::new();
    for (tag, ckpts) in [
        ("parent", &parent.checkpoints),
        ("child1", &c1.checkpoints),
        ("child2", &c2.checkpoints),
    ] {
        for (epoch, theta) in ckpts {
            checkpoint_hashes.insert(format!("{tag}/{epoch}"), theta.content_hash());
        }
    }
    let manifest = ForkManifest {
        config_hash: canonical_hash(&identity)?,
        dataset_id: data.id().to_string(),
        code_version: CODE_VERSION.to_string(),
        fork_epoch: fork.fork_epoch,
        parent_final_grad_norm: parent.final_grad_norm,
        child_final_grad_norms: [c1.final_grad_norm, c2.final_grad_norm],
        child_final_losses: [c1.final_loss, c2.final_loss],
        checkpoint_hashes,
    };
    Ok(ForkedRun {
        parent_checkpoints: parent.checkpoints.clone(),
        child_checkpoints: [c1.checkpoints, c2.checkpoints],
        config: cfg.clone(),
        fork: fork.clone(),
        manifest,
    })
}
