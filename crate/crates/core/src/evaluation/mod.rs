//! NME, yaw bucketing and bucketed report tables.

mod report;

use rayon::prelude::*;

use crate::dataset::{Dataset, SampleRecord};
use crate::morphable_model::{project, project_vertices, Landmarks2D};
use crate::{Error, MorphableBasis, ParamVector, Result};

pub use report::{
    marker_pixels, overlay_ppm, report_csv, report_text, write_overlay, CSV_HEADER,
};

pub const BUCKET_LABELS: [&str; 3] = ["[0°,30°]", "[30°,60°]", "[60°,90°]"];

/// Side of the ground-truth landmark bounding box normaliser, `sqrt(w·h)`.
pub fn bbox_size(truth: &Landmarks2D) -> Result<f64> {
    let pts = truth.points();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in pts {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let (width, height) = (hi[0] - lo[0], hi[1] - lo[1]);
    if width <= 0.0 || height <= 0.0 {
        return Err(Error::DegenerateBBox { width, height });
    }
    Ok((width * height).sqrt())
}

/// Normalised mean error in percent.
pub fn nme(pred: &Landmarks2D, truth: &Landmarks2D) -> Result<f64> {
    let d = bbox_size(truth)?;
    let total: f64 = pred
        .points()
        .iter()
        .zip(truth.points())
        .map(|(p, t)| (p[0] - t[0]).hypot(p[1] - t[1]))
        .sum();
    Ok(total / pred.points().len() as f64 / d * 100.0)
}

/// Same normalisation as [`nme`] but averaged over every projected vertex.
pub fn dense_nme(
    pred: &ParamVector,
    truth: &ParamVector,
    basis: &MorphableBasis,
) -> Result<f64> {
    let d = bbox_size(&project(basis, truth)?)?;
    let a = project_vertices(basis, pred)?;
    let b = project_vertices(basis, truth)?;
    let total: f64 = a
        .iter()
        .zip(&b)
        .map(|(p, t)| (p[0] - t[0]).hypot(p[1] - t[1]))
        .sum();
    Ok(total / a.len() as f64 / d * 100.0)
}

/// `0` for `[0,30)`, `1` for `[30,60)`, `2` for `[60,90]`.
pub fn bucket_index(yaw_deg: f64) -> usize {
    let y = yaw_deg.abs();
    if y < 30.0 {
        0
    } else if y < 60.0 {
        1
    } else {
        2
    }
}

/// Produces parameters for a record.
pub trait Predictor: Sync {
    fn name(&self) -> &str;
    fn predict(&self, record: &SampleRecord) -> Result<ParamVector>;
}

/// Returns the ground truth.
pub struct PerfectPredictor;

impl Predictor for PerfectPredictor {
    fn name(&self) -> &str {
        "perfect"
    }
    fn predict(&self, record: &SampleRecord) -> Result<ParamVector> {
        Ok(record.p_g)
    }
}

/// Returns the same parameters for every record.
pub struct ConstantPredictor {
    pub label: String,
    pub params: ParamVector,
}

impl ConstantPredictor {
    /// Mean shape at the dataset's average pose.
    pub fn mean_shape(dataset: &Dataset) -> Self {
        let mut params = ParamVector::zeros();
        let n = dataset.len().max(1) as f64;
        for r in &dataset.records {
            for (a, b) in params.0[..12].iter_mut().zip(r.p_g.pose()) {
                *a += b / n;
            }
        }
        ConstantPredictor {
            label: "mean-shape".into(),
            params,
        }
    }
}

impl Predictor for ConstantPredictor {
    fn name(&self) -> &str {
        &self.label
    }
    fn predict(&self, _: &SampleRecord) -> Result<ParamVector> {
        Ok(self.params)
    }
}

/// Per-bucket NME summary of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalTable {
    pub method: String,
    /// `None` for a bucket without samples.
    pub bucket_means: [Option<f64>; 3],
    /// Mean of the present bucket means.
    pub mean: f64,
    /// Population standard deviation of the present bucket means.
    pub std: f64,
    pub counts: [usize; 3],
    /// Samples dropped because their ground-truth bbox was degenerate.
    pub excluded: usize,
    /// Set when at least one bucket is empty.
    pub warning: bool,
}

impl EvalTable {
    /// Aggregates `(|yaw| degrees, NME or None if excluded)` in order.
    pub fn from_samples(method: &str, samples: &[(f64, Option<f64>)]) -> Self {
        let mut sums = [0.0; 3];
        let mut counts = [0usize; 3];
        let mut excluded = 0;
        for &(yaw, e) in samples {
            match e {
                Some(e) => {
                    let b = bucket_index(yaw);
                    sums[b] += e;
                    counts[b] += 1;
                }
                None => excluded += 1,
            }
        }
        let bucket_means: [Option<f64>; 3] =
            std::array::from_fn(|b| (counts[b] > 0).then(|| sums[b] / counts[b] as f64));
        let mut table = Self::from_summary(method, bucket_means, 0.0, 0.0);
        let present: Vec<f64> = bucket_means.iter().flatten().copied().collect();
        if !present.is_empty() {
            let k = present.len() as f64;
            table.mean = present.iter().sum::<f64>() / k;
            table.std = (present.iter().map(|m| (m - table.mean).powi(2)).sum::<f64>() / k).sqrt();
        }
        table.counts = counts;
        table.excluded = excluded;
        table
    }

    /// A table from already-aggregated numbers (e.g. results computed elsewhere).
    pub fn from_summary(method: &str, bucket_means: [Option<f64>; 3], mean: f64, std: f64) -> Self {
        EvalTable {
            method: method.to_string(),
            bucket_means,
            mean,
            std,
            counts: [0; 3],
            excluded: 0,
            warning: bucket_means.iter().any(Option::is_none),
        }
    }
}

/// Per-sample `(|yaw|, NME)`; degenerate ground truth yields `None`.
pub fn per_sample_nme(
    predictor: &dyn Predictor,
    dataset: &Dataset,
    basis: &MorphableBasis,
    workers: usize,
) -> Result<Vec<(f64, Option<f64>)>> {
    let one = |r: &SampleRecord| -> Result<(f64, Option<f64>)> {
        let p = predictor.predict(r)?;
        let lm = project(basis, &p)?;
        match nme(&lm, &r.landmarks_g) {
            Ok(e) => Ok((r.yaw_deg, Some(e))),
            Err(Error::DegenerateBBox { width, height }) => {
                log::warn!("degenerate ground-truth bbox {width}×{height}; sample excluded");
                Ok((r.yaw_deg, None))
            }
            Err(e) => Err(e),
        }
    };
    if workers <= 1 {
        dataset.records.iter().map(one).collect()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| dataset.records.par_iter().map(one).collect())
    }
}

/// Predict → project → NME for every record, bucketed by yaw.
pub fn evaluate(
    predictor: &dyn Predictor,
    dataset: &Dataset,
    basis: &MorphableBasis,
    workers: usize,
) -> Result<EvalTable> {
    dataset.check_basis(basis)?;
    let samples = per_sample_nme(predictor, dataset, basis, workers)?;
    let table = EvalTable::from_samples(predictor.name(), &samples);
    if table.warning {
        log::warn!("{}: at least one yaw bucket is empty", table.method);
    }
    Ok(table)
}
