use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::connectivity::{AngleBase, HessianWeighting, MetricKind, DEFAULT_GRID, DEFAULT_STATIONARITY_THRESHOLD};
use crate::data::{DatasetDescriptor, DatasetSource};
use crate::error::{Error, Result};
use crate::hashing::canonical_hash;
use crate::network::{Activation, LossKind, Network, NetworkSpec};
use crate::toyscape::{ToyLandscape, DEFAULT_TOY_GRID};
use crate::train::{ForkSpec, TrainConfig};

/// One experiment: what to train, how to fork it and what to measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub dataset: Option<DatasetDescriptor>,
    #[serde(default)]
    pub network: Option<NetworkSpec>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub init_seed: u64,
    #[serde(default)]
    pub forks: Vec<ForkSpec>,
    #[serde(default)]
    pub analysis: AnalysisRequests,
    pub output_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisRequests {
    pub grid_points: usize,
    pub metrics: Vec<MetricKind>,
    pub predict: bool,
    pub stationarity_threshold: f64,
    pub layerwise: Option<LayerwiseRequest>,
    pub geometry: Vec<AngleBase>,
    pub evolution: Option<EvolutionRequest>,
    pub toy: Option<ToyRequest>,
}

impl Default for AnalysisRequests {
    fn default() -> Self {
        Self {
            grid_points: DEFAULT_GRID,
            metrics: vec![MetricKind::Loss],
            predict: true,
            stationarity_threshold: DEFAULT_STATIONARITY_THRESHOLD,
            layerwise: None,
            geometry: vec![AngleBase::Origin],
            evolution: None,
            toy: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerwiseRequest {
    /// Layers to swap one at a time; empty means every layer.
    #[serde(default)]
    pub layers: Vec<String>,
    /// Layer sets whose joint prediction (sum of their block entries) is
    /// reported next to the direct masked prediction.
    #[serde(default)]
    pub layer_sets: Vec<Vec<String>>,
    #[serde(default)]
    pub weighting: HessianWeighting,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionRequest {
    pub stride: usize,
    #[serde(default = "default_evolution_metric")]
    pub metric: MetricKind,
}

fn default_evolution_metric() -> MetricKind {
    MetricKind::ErrorRate
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyRequest {
    pub minima: Vec<f64>,
    #[serde(default)]
    pub scales: Option<Vec<f64>>,
    #[serde(default = "default_toy_grid")]
    pub grid_points: usize,
    #[serde(default = "default_trace_points")]
    pub trace_points: usize,
    /// Trace extends this far beyond the outermost minima.
    #[serde(default = "default_trace_margin")]
    pub trace_margin: f64,
}

fn default_toy_grid() -> usize {
    DEFAULT_TOY_GRID
}

fn default_trace_points() -> usize {
    401
}

fn default_trace_margin() -> f64 {
    0.5
}

impl ToyRequest {
    pub fn landscape(&self) -> Result<ToyLandscape> {
        match &self.scales {
            Some(s) => ToyLandscape::with_scales(self.minima.clone(), s.clone()),
            None => ToyLandscape::new(self.minima.clone()),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Hash of the canonical JSON form; the output directory is excluded so
    /// the same experiment hashes identically wherever it is written.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        canonical_hash(&c)
    }

    /// Compiles the network, if any.
    pub fn build_network(&self) -> Result<Option<Network>> {
        self.network.clone().map(Network::new).transpose()
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.analysis;
        if self.forks.is_empty() && a.toy.is_none() && self.network.is_none() {
            return Err(Error::Config(
                "config requests neither training nor a toy landscape".into(),
            ));
        }
        if a.grid_points < 3 {
            return Err(Error::Config(format!(
                "grid_points must be at least 3, got {}",
                a.grid_points
            )));
        }
        if a.stationarity_threshold.is_nan() || a.stationarity_threshold < 0.0 {
            return Err(Error::Config("stationarity_threshold must be non-negative".into()));
        }
        if let Some(t) = &a.toy {
            t.landscape()?;
            if t.grid_points < 3 || t.trace_points < 3 {
                return Err(Error::Config("toy grids need at least 3 points".into()));
            }
            if !(t.trace_margin >= 0.0 && t.trace_margin.is_finite()) {
                return Err(Error::Config("trace_margin must be finite and non-negative".into()));
            }
        }
        let Some(net) = self.build_network()? else {
            if self.dataset.is_some() || !self.forks.is_empty() {
                return Err(Error::Config("training needs a network".into()));
            }
            return Ok(());
        };
        if self.dataset.is_none() {
            return Err(Error::Config("training needs a dataset".into()));
        }
        let horizon = self
            .forks
            .iter()
            .map(|f| f.child_epochs)
            .fold(self.train.epochs, usize::max);
        self.train.validate_for(horizon)?;
        let mut seen = BTreeSet::new();
        for f in &self.forks {
            f.validate(self.train.epochs)?;
            if !seen.insert(f.fork_epoch) {
                return Err(Error::Config(format!("fork epoch {} listed twice", f.fork_epoch)));
            }
        }
        if net.loss_kind() == LossKind::MeanSquaredError {
            let wants_error = a.metrics.contains(&MetricKind::ErrorRate)
                || a.evolution.as_ref().is_some_and(|e| e.metric == MetricKind::ErrorRate);
            if wants_error {
                return Err(Error::Config("error_rate needs a cross-entropy network".into()));
            }
        }
        if let Some(e) = &a.evolution {
            if e.stride == 0 {
                return Err(Error::Config("evolution stride must be at least 1".into()));
            }
        }
        if let Some(lw) = &a.layerwise {
            let layout = net.layout();
            let known = |name: &String| {
                layout
                    .segment(name)
                    .map(|_| ())
                    .ok_or_else(|| Error::Config(format!("unknown layer `{name}`")))
            };
            lw.layers.iter().try_for_each(known)?;
            for set in &lw.layer_sets {
                if set.is_empty() {
                    return Err(Error::Config("layer sets must not be empty".into()));
                }
                set.iter().try_for_each(known)?;
            }
        }
        Ok(())
    }

    /// Replaces the initialization, parent shuffle and child shuffle seeds.
    /// Child seeds are shifted by the same amount, so distinct seeds stay
    /// distinct.
    pub fn with_seed_override(mut self, seed: u64) -> Self {
        self.init_seed = seed;
        self.train.seed = seed;
        for f in &mut self.forks {
            for s in &mut f.child_seeds {
                *s = s.wrapping_add(seed);
            }
        }
        self
    }

    /// Desk-scale preset: ReLU MLP 2×64 on a 4,000-example stratified subset
    /// of a noisy four-arm spiral, parent 20 epochs, forks at 0, 2, 5 and 10
    /// with 30-epoch children. The learning rate drops tenfold at epochs 15
    /// and 25 of each child, so final siblings sit close to stationary
    /// points.
    pub fn desk() -> Self {
        let classes = 4;
        Self {
            dataset: Some(DatasetDescriptor {
                source: DatasetSource::Spiral {
                    n: 5000,
                    classes,
                    turns: 1.0,
                    noise: 0.3,
                    seed: 1,
                },
                subset: Some(4000),
                subset_seed: 7,
            }),
            network: Some(NetworkSpec::mlp(
                2,
                &[64, 64],
                classes,
                Activation::Relu,
                LossKind::CrossEntropy,
            )),
            train: TrainConfig {
                epochs: 20,
                batch_size: 128,
                lr: 0.1,
                lr_decay_epochs: vec![15, 25],
                lr_decay_factor: 10.0,
                momentum: 0.9,
                weight_decay: 1e-4,
                seed: 0,
            },
            init_seed: 0,
            forks: [0, 2, 5, 10]
                .into_iter()
                .map(|e| ForkSpec::new(e, [101, 202], 30))
                .collect(),
            analysis: AnalysisRequests {
                metrics: vec![MetricKind::Loss, MetricKind::ErrorRate],
                layerwise: Some(LayerwiseRequest {
                    layers: Vec::new(),
                    layer_sets: Vec::new(),
                    weighting: HessianWeighting::EndpointAverage,
                }),
                geometry: vec![AngleBase::Origin, AngleBase::ForkPoint],
                evolution: Some(EvolutionRequest {
                    stride: 5,
                    metric: MetricKind::ErrorRate,
                }),
                ..AnalysisRequests::default()
            },
            output_dir: PathBuf::from("runs/desk"),
        }
    }

    /// Toy-only preset: four minima at ±1 and ±1.5.
    pub fn toy() -> Self {
        Self {
            dataset: None,
            network: None,
            train: TrainConfig::default(),
            init_seed: 0,
            forks: Vec::new(),
            analysis: AnalysisRequests {
                metrics: Vec::new(),
                predict: false,
                geometry: Vec::new(),
                toy: Some(ToyRequest {
                    minima: vec![-1.5, -1.0, 1.0, 1.5],
                    scales: None,
                    grid_points: DEFAULT_TOY_GRID,
                    trace_points: default_trace_points(),
                    trace_margin: default_trace_margin(),
                }),
                ..AnalysisRequests::default()
            },
            output_dir: PathBuf::from("runs/toy"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for cfg in [ExperimentConfig::desk(), ExperimentConfig::toy()] {
            cfg.validate().unwrap();
            let text = serde_json::to_string_pretty(&cfg).unwrap();
            assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
        }
    }

    #[test]
    fn hash_ignores_output_dir_and_key_order() {
        let a = ExperimentConfig::toy();
        let mut b = a.clone();
        b.output_dir = PathBuf::from("/elsewhere");
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());

        let text = r#"{"output_dir":"x","analysis":{"toy":{"minima":[1,-1]},"metrics":[]}}"#;
        let swapped = r#"{"analysis":{"metrics":[],"toy":{"minima":[1,-1]}},"output_dir":"y"}"#;
        let (x, y) = (
            ExperimentConfig::from_json(text).unwrap(),
            ExperimentConfig::from_json(swapped).unwrap(),
        );
        assert_eq!(x.hash().unwrap(), y.hash().unwrap());

        let mut c = a.clone();
        c.analysis.toy.as_mut().unwrap().grid_points = 11;
        assert_ne!(a.hash().unwrap(), c.hash().unwrap());
    }

    #[test]
    fn unknown_layer_rejected() {
        let mut cfg = ExperimentConfig::desk();
        cfg.analysis.layerwise.as_mut().unwrap().layers = vec!["fc9".into()];
        assert!(matches!(cfg.validate(), Err(Error::Config(m)) if m.contains("fc9")));
        let mut cfg = ExperimentConfig::desk();
        cfg.analysis.layerwise.as_mut().unwrap().layer_sets = vec![vec!["fc1".into(), "conv".into()]];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn structural_errors() {
        let mut no_net = ExperimentConfig::desk();
        no_net.network = None;
        assert!(no_net.validate().is_err());

        let mut dup = ExperimentConfig::desk();
        dup.forks.push(dup.forks[0].clone());
        assert!(dup.validate().is_err());

        let mut late = ExperimentConfig::desk();
        late.forks[0].fork_epoch = 21;
        assert!(late.validate().is_err());

        let mut empty = ExperimentConfig::toy();
        empty.analysis.toy = None;
        assert!(empty.validate().is_err());

        assert!(ExperimentConfig::from_json(r#"{"output_dir":"x","bogus":1}"#).is_err());
    }

    #[test]
    fn seed_override_keeps_children_distinct() {
        let cfg = ExperimentConfig::desk().with_seed_override(9);
        assert_eq!(cfg.init_seed, 9);
        assert_eq!(cfg.train.seed, 9);
        assert!(cfg.forks.iter().all(|f| f.child_seeds == [110, 211]));
        cfg.validate().unwrap();
    }
}
