//! CSV rows and the plot-data exports built from forked runs.
//!
//! Every table is written with a leading `run_hash` column identifying the
//! run that produced it.

use rayon::prelude::*;

use crate::connectivity::{
    barrier_curve_on, max_barrier, predicted_barrier_with, BarrierCurve, MetricKind, PredictedBarrier,
};
use crate::error::{Error, Result};
use crate::objective::Objective;
use crate::train::ForkedRun;

pub trait CsvRow {
    const HEADER: &'static [&'static str];
    fn fields(&self) -> Vec<String>;
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// CSV text for `rows`, each prefixed with `run_hash`.
pub fn csv_bytes<R: CsvRow>(run_hash: &str, rows: &[R]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Config(format!("csv: {e}"));
    w.write_record(std::iter::once("run_hash").chain(R::HEADER.iter().copied()))
        .map_err(csv_err)?;
    for row in rows {
        w.write_record(std::iter::once(run_hash.to_string()).chain(row.fields()))
            .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))
}

macro_rules! csv_row {
    ($ty:ident { $($field:ident: $kind:ident),* $(,)? }) => {
        impl CsvRow for $ty {
            const HEADER: &'static [&'static str] = &[$(stringify!($field)),*];
            fn fields(&self) -> Vec<String> {
                vec![$(csv_row!(@fmt $kind, self.$field)),*]
            }
        }
    };
    (@fmt num, $e:expr) => { num($e) };
    (@fmt opt, $e:expr) => { opt($e) };
    (@fmt show, $e:expr) => { $e.to_string() };
    (@fmt metric, $e:expr) => { $e.as_str().to_string() };
    (@fmt count, $e:expr) => { $e.map(|v| v.to_string()).unwrap_or_default() };
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    pub fork_epoch: usize,
    pub metric: MetricKind,
    pub alpha: f64,
    pub segment_value: f64,
    pub barrier: f64,
}
csv_row!(CurveRow {
    fork_epoch: show,
    metric: metric,
    alpha: num,
    segment_value: num,
    barrier: num
});

impl CurveRow {
    pub fn from_curve(fork_epoch: usize, curve: &BarrierCurve) -> Vec<Self> {
        curve
            .alphas
            .iter()
            .zip(curve.segment_values.iter().zip(&curve.barrier))
            .map(|(&alpha, (&segment_value, &barrier))| CurveRow {
                fork_epoch,
                metric: curve.metric_kind,
                alpha,
                segment_value,
                barrier,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictedRow {
    pub fork_epoch: usize,
    pub alpha: f64,
    pub predicted: f64,
    pub q1: f64,
    pub q2: f64,
}
csv_row!(PredictedRow {
    fork_epoch: show,
    alpha: num,
    predicted: num,
    q1: num,
    q2: num
});

impl PredictedRow {
    pub fn from_prediction(fork_epoch: usize, p: &PredictedBarrier) -> Vec<Self> {
        p.alphas
            .iter()
            .zip(&p.predicted)
            .map(|(&alpha, &predicted)| PredictedRow {
                fork_epoch,
                alpha,
                predicted,
                q1: p.q1,
                q2: p.q2,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerCurveRow {
    pub fork_epoch: usize,
    pub layer: String,
    pub alpha: f64,
    pub loss_2to1: f64,
    pub loss_1to2: f64,
    pub barrier: f64,
}
csv_row!(LayerCurveRow {
    fork_epoch: show,
    layer: show,
    alpha: num,
    loss_2to1: num,
    loss_1to2: num,
    barrier: num
});

#[derive(Clone, Debug, PartialEq)]
pub struct BlockRow {
    pub fork_epoch: usize,
    pub row_layer: String,
    pub col_layer: String,
    pub value: f64,
}
csv_row!(BlockRow {
    fork_epoch: show,
    row_layer: show,
    col_layer: show,
    value: num
});

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSummaryRow {
    pub fork_epoch: usize,
    pub layer: String,
    pub delta_norm: f64,
    pub block_diagonal: f64,
    pub predicted_half: f64,
    pub actual_max: f64,
    pub actual_argmax: f64,
}
csv_row!(LayerSummaryRow {
    fork_epoch: show,
    layer: show,
    delta_norm: num,
    block_diagonal: num,
    predicted_half: num,
    actual_max: num,
    actual_argmax: num,
});

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSetRow {
    pub fork_epoch: usize,
    /// Layer names joined with `+`.
    pub layers: String,
    pub block_sum: f64,
    pub predicted_half: f64,
}
csv_row!(LayerSetRow {
    fork_epoch: show,
    layers: show,
    block_sum: num,
    predicted_half: num
});

#[derive(Clone, Debug, PartialEq)]
pub struct GeometryRow {
    pub fork_epoch: usize,
    pub base: String,
    pub angle_deg: Option<f64>,
    pub angle_origin_deg: Option<f64>,
    pub angle_fork_deg: Option<f64>,
    pub epochs_to_cosine_0_9: Option<usize>,
}
csv_row!(GeometryRow {
    fork_epoch: show,
    base: show,
    angle_deg: opt,
    angle_origin_deg: opt,
    angle_fork_deg: opt,
    epochs_to_cosine_0_9: count,
});

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub fork_epoch: usize,
    pub child_epoch: usize,
    pub plane_cosine: Option<f64>,
    pub distance: f64,
}
csv_row!(TraceRow {
    fork_epoch: show,
    child_epoch: show,
    plane_cosine: opt,
    distance: num
});

/// One point of a sampled barrier curve between the children at child
/// epoch `child_epoch`.
#[derive(Clone, Debug, PartialEq)]
pub struct EvolutionRow {
    pub fork_epoch: usize,
    pub child_epoch: usize,
    pub metric: MetricKind,
    pub alpha: f64,
    pub segment_value: f64,
    pub barrier: f64,
}
csv_row!(EvolutionRow {
    fork_epoch: show,
    child_epoch: show,
    metric: metric,
    alpha: num,
    segment_value: num,
    barrier: num,
});

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub fork_epoch: usize,
    pub actual_max: f64,
    pub actual_argmax: f64,
    pub predicted_half: f64,
    pub grad_norm_1: f64,
    pub grad_norm_2: f64,
    pub distance: f64,
    pub q1: f64,
    pub q2: f64,
    pub stationary: bool,
}
csv_row!(ComparisonRow {
    fork_epoch: show,
    actual_max: num,
    actual_argmax: num,
    predicted_half: num,
    grad_norm_1: num,
    grad_norm_2: num,
    distance: num,
    q1: num,
    q2: num,
    stationary: show,
});

impl ComparisonRow {
    pub fn new(fork_epoch: usize, loss_curve: &BarrierCurve, p: &PredictedBarrier) -> Self {
        let (actual_argmax, actual_max) = max_barrier(loss_curve);
        ComparisonRow {
            fork_epoch,
            actual_max,
            actual_argmax,
            predicted_half: p.at_half(),
            grad_norm_1: p.grad_norms[0],
            grad_norm_2: p.grad_norms[1],
            distance: p.distance,
            q1: p.q1,
            q2: p.q2,
            stationary: p.is_stationary(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyBarrierRow {
    pub i: usize,
    pub j: usize,
    pub theta_i: f64,
    pub theta_j: f64,
    pub actual_max: f64,
    pub actual_argmax: f64,
    pub predicted_half: f64,
}
csv_row!(ToyBarrierRow {
    i: show,
    j: show,
    theta_i: num,
    theta_j: num,
    actual_max: num,
    actual_argmax: num,
    predicted_half: num,
});

#[derive(Clone, Debug, PartialEq)]
pub struct ToyTraceRow {
    pub theta: f64,
    pub value: f64,
}
csv_row!(ToyTraceRow { theta: num, value: num });

/// Barrier curves between the two children at sampled child epochs
/// `0, stride, 2·stride, …`, always including the last epoch.
///
/// Needs a checkpoint at every child epoch. A stride larger than the number
/// of child epochs yields nothing to sample and is an error.
pub fn export_curve_evolution<O: Objective + ?Sized>(
    obj: &O,
    run: &ForkedRun,
    alphas: &[f64],
    metric: MetricKind,
    stride: usize,
) -> Result<Vec<EvolutionRow>> {
    let [c1, c2] = &run.child_checkpoints;
    let total = c1.keys().next_back().copied().unwrap_or(0);
    if stride == 0 || stride > total {
        return Err(Error::EmptyOutput(format!(
            "stride {stride} samples no epochs beyond the start of a {total}-epoch run"
        )));
    }
    if (0..=total).any(|t| !c1.contains_key(&t) || !c2.contains_key(&t)) {
        return Err(Error::Precondition(
            "curve evolution needs a checkpoint at every child epoch".into(),
        ));
    }
    let mut epochs: Vec<usize> = (0..=total).step_by(stride).collect();
    if epochs.last() != Some(&total) {
        epochs.push(total);
    }
    let curves = epochs
        .par_iter()
        .map(|t| barrier_curve_on(obj, &c1[t], &c2[t], alphas, metric))
        .collect::<Result<Vec<_>>>()?;
    Ok(epochs
        .iter()
        .zip(&curves)
        .flat_map(|(&child_epoch, curve)| {
            CurveRow::from_curve(run.fork.fork_epoch, curve)
                .into_iter()
                .map(move |r| EvolutionRow {
                    fork_epoch: r.fork_epoch,
                    child_epoch,
                    metric: r.metric,
                    alpha: r.alpha,
                    segment_value: r.segment_value,
                    barrier: r.barrier,
                })
        })
        .collect())
}

/// Actual maximum loss barrier against the α = 1/2 prediction for the final
/// children of each run, one row per fork epoch in ascending order.
pub fn compare_predicted_actual<O: Objective + ?Sized>(
    obj: &O,
    runs: &[&ForkedRun],
    alphas: &[f64],
    stationarity_threshold: f64,
) -> Result<Vec<ComparisonRow>> {
    let mut rows = runs
        .par_iter()
        .map(|run| {
            let (a, b) = run.finals();
            let curve = barrier_curve_on(obj, a, b, alphas, MetricKind::Loss)?;
            let p = predicted_barrier_with(obj, a, b, alphas, stationarity_threshold)?;
            Ok(ComparisonRow::new(run.fork.fork_epoch, &curve, &p))
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by_key(|r| r.fork_epoch);
    Ok(rows)
}
