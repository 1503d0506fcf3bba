use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, LayerwiseRequest, ToyRequest};
use super::export::{
    csv_bytes, export_curve_evolution, BlockRow, ComparisonRow, CsvRow, CurveRow, EvolutionRow, GeometryRow,
    LayerCurveRow, LayerSetRow, LayerSummaryRow, PredictedRow, ToyBarrierRow, ToyTraceRow, TraceRow,
};
use super::svg::{small_multiples, Panel};
use crate::checkpoint::{decode_checkpoint, encode_checkpoint, write_atomic, Precision};
use crate::connectivity::{
    alpha_grid, barrier_curve_on, cross_block_matrix, layerwise_barrier_curve, layerwise_predicted,
    predicted_barrier_with, sibling_geometry, AngleBase, BarrierCurve, GeometryReport, LayerBlockReport,
    LayerwiseCurve, MetricKind, PredictedBarrier,
};
use crate::data::{load_dataset, DatasetSlice};
use crate::error::{Error, Result};
use crate::hashing::{canonical_hash, sha256_hex, CODE_VERSION};
use crate::network::Network;
use crate::objective::NetObjective;
use crate::params::{LayerLayout, LayerMask, ParamVector};
use crate::train::{
    assemble_fork, fork_from_parent, train_parent, Checkpoints, ForkManifest, ForkSpec, ForkedRun, Trajectory,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MARKER_FILE: &str = ".in_progress";

/// Pipeline stages to execute. Stages whose analysis the config does not
/// request are skipped regardless.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stages {
    pub fork: bool,
    /// Final barrier curves and curve evolution.
    pub barrier: bool,
    /// Second-order predictions and the predicted-vs-actual table.
    pub predict: bool,
    pub layerwise: bool,
    pub geometry: bool,
    pub toy: bool,
}

impl Stages {
    pub fn all() -> Self {
        Self {
            fork: true,
            barrier: true,
            predict: true,
            layerwise: true,
            geometry: true,
            toy: true,
        }
    }

    /// Parent training only.
    pub fn none() -> Self {
        Self {
            fork: false,
            barrier: false,
            predict: false,
            layerwise: false,
            geometry: false,
            toy: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunOptions {
    pub stages: Stages,
    /// Continue a partial or completed run with the same config, reusing
    /// its checkpoints.
    pub resume: bool,
    /// Delete an existing run directory first.
    pub overwrite: bool,
    pub svg: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            stages: Stages::all(),
            resume: false,
            overwrite: false,
            svg: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForkEntry {
    pub dir: String,
    pub child_seeds: [u64; 2],
    pub manifest: ForkManifest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    /// Identifies the trained state: config, code version, dataset and
    /// every checkpoint. Stamped on each CSV row.
    pub run_hash: String,
    pub code_version: String,
    pub dataset_id: Option<String>,
    pub init_seed: u64,
    pub parent_seed: u64,
    pub parent_final_grad_norm: Option<f64>,
    pub parent_final_loss: Option<f64>,
    pub stages: Stages,
    pub forks: Vec<ForkEntry>,
    /// Relative path → SHA-256 of the file bytes.
    pub checkpoints: BTreeMap<String, String>,
    /// CSV tables and the summary report.
    pub results: BTreeMap<String, String>,
    /// SVG renderings (optional, never part of `results`).
    pub plots: BTreeMap<String, String>,
    pub config: ExperimentConfig,
}

#[derive(Clone, Debug)]
pub struct LayerAnalysis {
    pub blocks: LayerBlockReport,
    pub curves: Vec<LayerwiseCurve>,
    pub summary: Vec<LayerSummaryRow>,
    pub sets: Vec<LayerSetRow>,
}

#[derive(Clone, Debug)]
pub struct ForkAnalysis {
    pub run: ForkedRun,
    pub curves: Vec<BarrierCurve>,
    pub prediction: Option<PredictedBarrier>,
    pub comparison: Option<ComparisonRow>,
    pub layers: Option<LayerAnalysis>,
    pub geometry: Vec<GeometryReport>,
    pub evolution: Option<Vec<EvolutionRow>>,
}

impl ForkAnalysis {
    pub fn fork_epoch(&self) -> usize {
        self.run.fork.fork_epoch
    }

    pub fn curve(&self, metric: MetricKind) -> Option<&BarrierCurve> {
        self.curves.iter().find(|c| c.metric_kind == metric)
    }

    pub fn geometry_for(&self, base: AngleBase) -> Option<&GeometryReport> {
        self.geometry.iter().find(|g| g.base == base)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyOutput {
    pub barriers: Vec<ToyBarrierRow>,
    pub trace: Vec<ToyTraceRow>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub parent: Option<Trajectory>,
    /// Sorted by fork epoch.
    pub forks: Vec<ForkAnalysis>,
    pub comparison: Vec<ComparisonRow>,
    pub toy: Option<ToyOutput>,
}

/// Loads, validates and runs the config at `path`.
pub fn run_experiment_file(path: &Path, opts: &RunOptions) -> Result<RunOutput> {
    run_experiment(&ExperimentConfig::load(path)?, opts)
}

/// Trains, forks and analyses as configured, writing everything below
/// `cfg.output_dir`. `manifest.json` is written once at the end; until then
/// an in-progress marker flags the directory as partial.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutput> {
    cfg.validate()?;
    let config_hash = cfg.hash()?;
    let dir = cfg.output_dir.clone();
    let resuming = prepare_dir(&dir, &config_hash, opts)?;
    std::fs::write(dir.join(MARKER_FILE), &config_hash).map_err(|e| Error::io(dir.join(MARKER_FILE), e))?;
    let mut files = Files::new(&dir);
    files.write_plain("config.json", serde_json::to_string_pretty(cfg)?.as_bytes())?;

    let trained = match cfg.build_network()? {
        Some(net) => Some(train_stage(cfg, &net, opts, resuming, &mut files)?),
        None => None,
    };

    let mut identity = BTreeMap::new();
    identity.insert("config_hash", serde_json::to_value(&config_hash)?);
    identity.insert("code_version", serde_json::to_value(CODE_VERSION)?);
    if let Some(t) = &trained {
        identity.insert("dataset_id", serde_json::to_value(t.data.id())?);
        identity.insert(
            "parent_checkpoints",
            serde_json::to_value(content_hashes(&t.parent.checkpoints))?,
        );
        let forks: Vec<&ForkManifest> = t.runs.iter().map(|r| &r.manifest).collect();
        identity.insert("forks", serde_json::to_value(forks)?);
    }
    let run_hash = canonical_hash(&identity)?;

    let toy = match &cfg.analysis.toy {
        Some(req) if opts.stages.toy => Some(toy_stage(req, &run_hash, opts.svg, &mut files)?),
        _ => None,
    };

    let (parent, forks, comparison, dataset_id, entries) = match trained {
        Some(t) => {
            let obj = NetObjective::new(&t.net, &t.data);
            let forks = t
                .runs
                .into_par_iter()
                .map(|run| analyse_fork(cfg, &obj, run, &opts.stages))
                .collect::<Result<Vec<_>>>()?;
            let comparison: Vec<ComparisonRow> = forks.iter().filter_map(|f| f.comparison.clone()).collect();
            for f in &forks {
                write_fork_tables(f, &run_hash, opts.svg, &mut files)?;
            }
            if !comparison.is_empty() {
                files.write_csv("compare_predicted_actual.csv", &run_hash, &comparison)?;
            }
            let entries = forks
                .iter()
                .map(|f| ForkEntry {
                    dir: fork_dir(f.fork_epoch()),
                    child_seeds: f.run.fork.child_seeds,
                    manifest: f.run.manifest.clone(),
                })
                .collect();
            (
                Some(t.parent),
                forks,
                comparison,
                Some(t.data.id().to_string()),
                entries,
            )
        }
        None => (None, Vec::new(), Vec::new(), None, Vec::new()),
    };

    let summary = summary_report(
        cfg,
        &config_hash,
        &run_hash,
        parent.as_ref(),
        &forks,
        &comparison,
        toy.as_ref(),
    );
    files.write_result("summary.md", summary.as_bytes())?;

    let manifest = RunManifest {
        config_hash,
        run_hash,
        code_version: CODE_VERSION.to_string(),
        dataset_id,
        init_seed: cfg.init_seed,
        parent_seed: cfg.train.seed,
        parent_final_grad_norm: parent.as_ref().map(|p| p.final_grad_norm),
        parent_final_loss: parent.as_ref().map(|p| p.final_loss),
        stages: opts.stages,
        forks: entries,
        checkpoints: files.checkpoints,
        results: files.results,
        plots: files.plots,
        config: cfg.clone(),
    };
    write_atomic(
        &dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )?;
    std::fs::remove_file(dir.join(MARKER_FILE)).map_err(|e| Error::io(dir.join(MARKER_FILE), e))?;
    Ok(RunOutput {
        dir,
        manifest,
        parent,
        forks,
        comparison,
        toy,
    })
}

pub fn load_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Returns whether an existing run is being resumed.
fn prepare_dir(dir: &Path, config_hash: &str, opts: &RunOptions) -> Result<bool> {
    if !dir.exists() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        return Ok(false);
    }
    let mut entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    if entries.next().is_none() {
        return Ok(false);
    }
    let marker = dir.join(MARKER_FILE);
    let partial = marker.exists();
    if !partial && !dir.join(MANIFEST_FILE).exists() {
        // not ours; never delete or write into it
        return Err(Error::ExistingRun(dir.to_path_buf()));
    }
    if opts.overwrite {
        std::fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        return Ok(false);
    }
    if !opts.resume {
        return Err(if partial {
            Error::PartialRun(dir.to_path_buf())
        } else {
            Error::ExistingRun(dir.to_path_buf())
        });
    }
    let stored = if partial {
        std::fs::read_to_string(&marker).map_err(|e| Error::io(&marker, e))?
    } else {
        load_manifest(dir)?.config_hash
    };
    if stored.trim() != config_hash {
        return Err(Error::Config(format!(
            "cannot resume {}: it was produced by a different config",
            dir.display()
        )));
    }
    Ok(true)
}

struct Files {
    root: PathBuf,
    checkpoints: BTreeMap<String, String>,
    results: BTreeMap<String, String>,
    plots: BTreeMap<String, String>,
}

impl Files {
    fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
            checkpoints: BTreeMap::new(),
            results: BTreeMap::new(),
            plots: BTreeMap::new(),
        }
    }

    fn write_plain(&self, rel: &str, bytes: &[u8]) -> Result<String> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        write_atomic(&path, bytes)?;
        Ok(sha256_hex(bytes))
    }

    fn write_result(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let h = self.write_plain(rel, bytes)?;
        self.results.insert(rel.to_string(), h);
        Ok(())
    }

    fn write_csv<R: CsvRow>(&mut self, rel: &str, run_hash: &str, rows: &[R]) -> Result<()> {
        self.write_result(rel, &csv_bytes(run_hash, rows)?)
    }

    fn write_plot(&mut self, rel: &str, svg: &str) -> Result<()> {
        let h = self.write_plain(rel, svg.as_bytes())?;
        self.plots.insert(rel.to_string(), h);
        Ok(())
    }

    fn save_checkpoints(&mut self, rel_dir: &str, ckpts: &Checkpoints) -> Result<()> {
        for (epoch, theta) in ckpts {
            let rel = format!("{rel_dir}/{}", checkpoint_name(*epoch));
            let h = self.write_plain(&rel, &encode_checkpoint(theta, Precision::F64))?;
            self.checkpoints.insert(rel, h);
        }
        Ok(())
    }

    /// Loads the checkpoints at `epochs`, or `None` if any is missing or
    /// unreadable.
    fn load_checkpoints(
        &mut self,
        rel_dir: &str,
        epochs: &[usize],
        layout: &std::sync::Arc<LayerLayout>,
    ) -> Option<Checkpoints> {
        let mut out = Checkpoints::new();
        let mut hashes = Vec::new();
        for &epoch in epochs {
            let rel = format!("{rel_dir}/{}", checkpoint_name(epoch));
            let bytes = std::fs::read(self.root.join(&rel)).ok()?;
            let theta = decode_checkpoint(&bytes, Some(layout)).ok()?;
            hashes.push((rel, sha256_hex(&bytes)));
            out.insert(epoch, theta);
        }
        self.checkpoints.extend(hashes);
        Some(out)
    }
}

fn checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:04}.ckpt")
}

fn fork_dir(fork_epoch: usize) -> String {
    format!("fork_e{fork_epoch:03}")
}

/// Epochs at which a run of `epochs` epochs stores checkpoints.
fn checkpoint_epochs(epochs: usize, every: usize) -> Vec<usize> {
    (0..=epochs).filter(|&e| e % every == 0 || e == epochs).collect()
}

fn content_hashes(ckpts: &Checkpoints) -> BTreeMap<usize, String> {
    ckpts.iter().map(|(e, t)| (*e, t.content_hash())).collect()
}

struct Trained {
    net: Network,
    data: DatasetSlice,
    parent: Trajectory,
    runs: Vec<ForkedRun>,
}

fn train_stage(
    cfg: &ExperimentConfig,
    net: &Network,
    opts: &RunOptions,
    resuming: bool,
    files: &mut Files,
) -> Result<Trained> {
    let desc = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| Error::Config("training needs a dataset".into()))?;
    let data = load_dataset(desc)?;
    let init = net.init_params(cfg.init_seed);
    let layout = net.layout().clone();

    let stored = if resuming {
        files
            .load_checkpoints("parent", &checkpoint_epochs(cfg.train.epochs, 1), &layout)
            .filter(|c| c.get(&0) == Some(&init))
    } else {
        None
    };
    let parent = match stored {
        Some(ckpts) => Trajectory::from_checkpoints(net, &data, ckpts)?,
        None => {
            let p = train_parent(net, &init, &data, &cfg.train, &cfg.forks)?;
            files.save_checkpoints("parent", &p.checkpoints)?;
            p
        }
    };

    let mut runs = Vec::new();
    if opts.stages.fork {
        let reloaded: Vec<Option<[Checkpoints; 2]>> = cfg
            .forks
            .iter()
            .map(|f| {
                if !resuming {
                    return None;
                }
                let epochs = checkpoint_epochs(f.child_epochs, f.checkpoint_every);
                let dir = fork_dir(f.fork_epoch);
                let c1 = files.load_checkpoints(&format!("{dir}/child1"), &epochs, &layout)?;
                let c2 = files.load_checkpoints(&format!("{dir}/child2"), &epochs, &layout)?;
                Some([c1, c2])
            })
            .collect();
        let built = cfg
            .forks
            .par_iter()
            .zip(reloaded)
            .map(|(fork, stored)| fork_one(net, &data, cfg, &parent, fork, stored))
            .collect::<Result<Vec<_>>>()?;
        for (run, fresh) in built {
            if fresh {
                let dir = fork_dir(run.fork.fork_epoch);
                files.save_checkpoints(&format!("{dir}/child1"), &run.child_checkpoints[0])?;
                files.save_checkpoints(&format!("{dir}/child2"), &run.child_checkpoints[1])?;
            }
            runs.push(run);
        }
        runs.sort_by_key(|r| r.fork.fork_epoch);
    }
    Ok(Trained {
        net: net.clone(),
        data,
        parent,
        runs,
    })
}

/// Reuses stored children when they are complete and consistent with the
/// parent; trains them otherwise. The flag tells whether training happened.
fn fork_one(
    net: &Network,
    data: &DatasetSlice,
    cfg: &ExperimentConfig,
    parent: &Trajectory,
    fork: &ForkSpec,
    stored: Option<[Checkpoints; 2]>,
) -> Result<(ForkedRun, bool)> {
    if let Some([c1, c2]) = stored {
        let children = [
            Trajectory::from_checkpoints(net, data, c1)?,
            Trajectory::from_checkpoints(net, data, c2)?,
        ];
        if let Ok(run) = assemble_fork(net, data, &cfg.train, parent, fork, children) {
            return Ok((run, false));
        }
    }
    Ok((fork_from_parent(net, data, &cfg.train, parent, fork)?, true))
}

fn analyse_fork(
    cfg: &ExperimentConfig,
    obj: &NetObjective<'_>,
    run: ForkedRun,
    stages: &Stages,
) -> Result<ForkAnalysis> {
    let a = &cfg.analysis;
    let grid = alpha_grid(a.grid_points)?;
    let (t1, t2) = run.finals();
    let fork_epoch = run.fork.fork_epoch;
    let want_predict = stages.predict && a.predict;

    let mut metrics: Vec<MetricKind> = if stages.barrier { a.metrics.clone() } else { Vec::new() };
    if want_predict && !metrics.contains(&MetricKind::Loss) {
        metrics.insert(0, MetricKind::Loss);
    }
    let curves = metrics
        .iter()
        .map(|&m| barrier_curve_on(obj, t1, t2, &grid, m))
        .collect::<Result<Vec<_>>>()?;

    let prediction = if want_predict {
        Some(predicted_barrier_with(obj, t1, t2, &grid, a.stationarity_threshold)?)
    } else {
        None
    };
    let comparison = prediction.as_ref().map(|p| {
        let loss = curves
            .iter()
            .find(|c| c.metric_kind == MetricKind::Loss)
            .expect("loss curve computed");
        ComparisonRow::new(fork_epoch, loss, p)
    });

    let layers = match &a.layerwise {
        Some(req) if stages.layerwise => Some(layer_analysis(obj, t1, t2, &grid, fork_epoch, req)?),
        _ => None,
    };
    let geometry = if stages.geometry {
        a.geometry
            .iter()
            .map(|&b| sibling_geometry(&run, b))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let evolution = match &a.evolution {
        Some(req) if stages.barrier => Some(export_curve_evolution(obj, &run, &grid, req.metric, req.stride)?),
        _ => None,
    };
    Ok(ForkAnalysis {
        run,
        curves,
        prediction,
        comparison,
        layers,
        geometry,
        evolution,
    })
}

fn layer_analysis(
    obj: &NetObjective<'_>,
    t1: &ParamVector,
    t2: &ParamVector,
    grid: &[f64],
    fork_epoch: usize,
    req: &LayerwiseRequest,
) -> Result<LayerAnalysis> {
    use crate::objective::Objective;
    let blocks = cross_block_matrix(obj, t1, t2, req.weighting)?;
    let layout = obj.layout().clone();
    let targets: Vec<String> = if req.layers.is_empty() {
        blocks.layers.clone()
    } else {
        req.layers.clone()
    };
    let per_layer = targets
        .par_iter()
        .map(|l| {
            let mask = LayerMask::new(layout.clone(), [l])?;
            let predicted = layerwise_predicted(obj, t1, t2, &mask, 0.5)?;
            let curve = layerwise_barrier_curve(obj, t1, t2, l, grid)?;
            Ok((predicted, curve))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut summary = Vec::new();
    let mut curves = Vec::new();
    for (l, (predicted_half, curve)) in targets.iter().zip(per_layer) {
        let (actual_argmax, actual_max) = crate::connectivity::barrier::argmax_first(&curve.alphas, &curve.barrier);
        let i = blocks.layers.iter().position(|x| x == l).expect("validated layer");
        summary.push(LayerSummaryRow {
            fork_epoch,
            layer: l.clone(),
            delta_norm: blocks.delta_norms[i],
            block_diagonal: blocks.block[i][i],
            predicted_half,
            actual_max,
            actual_argmax,
        });
        curves.push(curve);
    }
    let sets = req
        .layer_sets
        .iter()
        .map(|set| {
            let names: Vec<&str> = set.iter().map(String::as_str).collect();
            let mask = LayerMask::new(layout.clone(), names.iter().copied())?;
            Ok(LayerSetRow {
                fork_epoch,
                layers: set.join("+"),
                block_sum: blocks.set_sum(&names)?,
                predicted_half: layerwise_predicted(obj, t1, t2, &mask, 0.5)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LayerAnalysis {
        blocks,
        curves,
        summary,
        sets,
    })
}

fn write_fork_tables(f: &ForkAnalysis, run_hash: &str, svg: bool, files: &mut Files) -> Result<()> {
    let dir = fork_dir(f.fork_epoch());
    let e = f.fork_epoch();
    if !f.curves.is_empty() {
        let rows: Vec<CurveRow> = f.curves.iter().flat_map(|c| CurveRow::from_curve(e, c)).collect();
        files.write_csv(&format!("{dir}/barrier_curves.csv"), run_hash, &rows)?;
    }
    if let Some(p) = &f.prediction {
        files.write_csv(
            &format!("{dir}/predicted.csv"),
            run_hash,
            &PredictedRow::from_prediction(e, p),
        )?;
    }
    if let Some(l) = &f.layers {
        let curve_rows: Vec<LayerCurveRow> = l
            .curves
            .iter()
            .flat_map(|c| {
                (0..c.alphas.len()).map(move |i| LayerCurveRow {
                    fork_epoch: e,
                    layer: c.layer.clone(),
                    alpha: c.alphas[i],
                    loss_2to1: c.loss_2to1[i],
                    loss_1to2: c.loss_1to2[i],
                    barrier: c.barrier[i],
                })
            })
            .collect();
        let b = &l.blocks;
        let block_rows: Vec<BlockRow> = b
            .layers
            .iter()
            .enumerate()
            .flat_map(|(i, r)| {
                b.layers.iter().enumerate().map(move |(j, c)| BlockRow {
                    fork_epoch: e,
                    row_layer: r.clone(),
                    col_layer: c.clone(),
                    value: b.block[i][j],
                })
            })
            .collect();
        files.write_csv(&format!("{dir}/layerwise_curves.csv"), run_hash, &curve_rows)?;
        files.write_csv(&format!("{dir}/layer_blocks.csv"), run_hash, &block_rows)?;
        files.write_csv(&format!("{dir}/layer_summary.csv"), run_hash, &l.summary)?;
        if !l.sets.is_empty() {
            files.write_csv(&format!("{dir}/layer_sets.csv"), run_hash, &l.sets)?;
        }
    }
    if let Some(first) = f.geometry.first() {
        let rows: Vec<GeometryRow> = f
            .geometry
            .iter()
            .map(|g| GeometryRow {
                fork_epoch: e,
                base: match g.base {
                    AngleBase::Origin => "origin".into(),
                    AngleBase::ForkPoint => "fork_point".into(),
                },
                angle_deg: g.angle,
                angle_origin_deg: g.angle_origin,
                angle_fork_deg: g.angle_fork,
                epochs_to_cosine_0_9: g.epochs_to_cosine(0.9),
            })
            .collect();
        let trace: Vec<TraceRow> = first
            .plane_cosine_trace
            .iter()
            .zip(&first.distance_trace)
            .map(|(&(child_epoch, plane_cosine), &(_, distance))| TraceRow {
                fork_epoch: e,
                child_epoch,
                plane_cosine,
                distance,
            })
            .collect();
        files.write_csv(&format!("{dir}/geometry.csv"), run_hash, &rows)?;
        files.write_csv(&format!("{dir}/traces.csv"), run_hash, &trace)?;
    }
    if let Some(rows) = &f.evolution {
        files.write_csv(&format!("{dir}/evolution.csv"), run_hash, rows)?;
        if svg {
            let mut panels: Vec<Panel> = Vec::new();
            for r in rows {
                let title = format!("child epoch {}", r.child_epoch);
                if panels.last().map(|p| &p.title) != Some(&title) {
                    panels.push(Panel {
                        title,
                        series: vec![Vec::new()],
                    });
                }
                panels.last_mut().expect("pushed").series[0].push((r.alpha, r.barrier));
            }
            let metric = rows.first().map(|r| r.metric.as_str()).unwrap_or("loss");
            let title = format!("{metric} barrier, fork epoch {e}");
            files.write_plot(&format!("{dir}/evolution.svg"), &small_multiples(&title, &panels))?;
        }
    }
    Ok(())
}

fn toy_stage(req: &ToyRequest, run_hash: &str, svg: bool, files: &mut Files) -> Result<ToyOutput> {
    let land = req.landscape()?;
    let minima = land.minima().to_vec();
    let mut barriers = Vec::new();
    for i in 0..minima.len() {
        for j in i + 1..minima.len() {
            let (actual_argmax, actual_max) = land.barrier(i, j, req.grid_points)?;
            barriers.push(ToyBarrierRow {
                i,
                j,
                theta_i: minima[i],
                theta_j: minima[j],
                actual_max,
                actual_argmax,
                predicted_half: land.predicted_barrier(i, j)?,
            });
        }
    }
    let lo = minima[0] - req.trace_margin;
    let hi = minima[minima.len() - 1] + req.trace_margin;
    let trace: Vec<ToyTraceRow> = land
        .trace(lo, hi, req.trace_points)?
        .into_iter()
        .map(|(theta, value)| ToyTraceRow { theta, value })
        .collect();
    files.write_csv("toy/toy_barriers.csv", run_hash, &barriers)?;
    files.write_csv("toy/toy_trace.csv", run_hash, &trace)?;
    if svg {
        let panel = Panel {
            title: "f(θ)".into(),
            series: vec![trace.iter().map(|r| (r.theta, r.value)).collect()],
        };
        files.write_plot("toy/toy_trace.svg", &small_multiples("toy landscape", &[panel]))?;
    }
    Ok(ToyOutput { barriers, trace })
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into())
}

fn summary_report(
    cfg: &ExperimentConfig,
    config_hash: &str,
    run_hash: &str,
    parent: Option<&Trajectory>,
    forks: &[ForkAnalysis],
    comparison: &[ComparisonRow],
    toy: Option<&ToyOutput>,
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Run summary\n");
    let _ = writeln!(s, "- config hash: `{config_hash}`");
    let _ = writeln!(s, "- run hash: `{run_hash}`");
    let _ = writeln!(s, "- code version: {CODE_VERSION}");
    if let Some(p) = parent {
        let _ = writeln!(
            s,
            "- parent: {} epochs, final loss {:.6}, final gradient norm {:.6}",
            cfg.train.epochs, p.final_loss, p.final_grad_norm
        );
    }
    if !comparison.is_empty() {
        let _ = writeln!(s, "\n## Predicted vs actual loss barrier\n");
        let _ = writeln!(
            s,
            "| fork epoch | actual max | argmax α | predicted (α=1/2) | ‖Δ‖ | q1 | q2 | grad norms |"
        );
        let _ = writeln!(s, "|---|---|---|---|---|---|---|---|");
        for r in comparison {
            let flag = if r.stationary { "" } else { " (not stationary)" };
            let _ = writeln!(
                s,
                "| {} | {:.6} | {:.3} | {:.6} | {:.4} | {:.4} | {:.4} | {:.4}, {:.4}{flag} |",
                r.fork_epoch,
                r.actual_max,
                r.actual_argmax,
                r.predicted_half,
                r.distance,
                r.q1,
                r.q2,
                r.grad_norm_1,
                r.grad_norm_2
            );
        }
    }
    let with_geometry: Vec<&ForkAnalysis> = forks.iter().filter(|f| !f.geometry.is_empty()).collect();
    if !with_geometry.is_empty() {
        let _ = writeln!(s, "\n## Sibling geometry\n");
        let _ = writeln!(
            s,
            "| fork epoch | angle at origin (deg) | angle at fork point (deg) | child epochs to cosine 0.9 |"
        );
        let _ = writeln!(s, "|---|---|---|---|");
        for f in with_geometry {
            let g = &f.geometry[0];
            let reach = g
                .epochs_to_cosine(0.9)
                .map(|t| t.to_string())
                .unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "| {} | {} | {} | {reach} |",
                f.fork_epoch(),
                fmt_opt(g.angle_origin),
                fmt_opt(g.angle_fork)
            );
        }
    }
    for f in forks {
        if let Some(l) = &f.layers {
            let _ = writeln!(s, "\n## Layers, fork epoch {}\n", f.fork_epoch());
            let _ = writeln!(
                s,
                "block sum {:.6}, full prediction {:.6}\n",
                l.blocks.block_sum(),
                l.blocks.full_predicted_half
            );
            let _ = writeln!(s, "| layer | ‖Δ‖ | predicted (α=1/2) | actual max |");
            let _ = writeln!(s, "|---|---|---|---|");
            for r in &l.summary {
                let _ = writeln!(
                    s,
                    "| {} | {:.4} | {:.6} | {:.6} |",
                    r.layer, r.delta_norm, r.predicted_half, r.actual_max
                );
            }
        }
    }
    if let Some(t) = toy {
        let _ = writeln!(s, "\n## Toy landscape\n");
        let _ = writeln!(s, "| pair | actual max | argmax α | predicted (α=1/2) |");
        let _ = writeln!(s, "|---|---|---|---|");
        for r in &t.barriers {
            let _ = writeln!(
                s,
                "| {} ↔ {} | {:.6} | {:.4} | {:.6} |",
                r.theta_i, r.theta_j, r.actual_max, r.actual_argmax, r.predicted_half
            );
        }
    }
    s
}
