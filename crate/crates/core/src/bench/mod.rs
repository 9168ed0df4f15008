//! Seeded synthetic experiments: scenario configuration, trial runner, ROC
//! sweeps and the evaluation metrics.
//!
//! Trial `k` of a scenario with seed `s` draws everything from ChaCha8
//! seeded with `s` on stream `k`, so trials are independent, reproducible
//! across platforms, and identical whether run in parallel or not.

pub mod generator;

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::{Point2, Point3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use generator::{
    deform_mesh, deform_sequence, generate_matches, generate_rest_mesh, DeformConfig, PinMotion,
    RestGrid, SyntheticMatches, DEFAULT_MAGNITUDE, MATCH_EPSILON,
};

use crate::error::BenchError;
use crate::mesh::{apply_barycentric, Mesh2D, Mesh3D, PointLocator};
use crate::mismatch::{
    classification_distances, my_neighbor, Classification, MatchLabels, MatchSet, MyNeighborConfig,
    MyNeighborOutput,
};
use crate::sft::CameraIntrinsics;

/// Named match densities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioName {
    Dense,
    Moderate,
    Sparse,
    Custom,
}

impl ScenarioName {
    pub fn n_matches(self) -> Option<usize> {
        match self {
            ScenarioName::Dense => Some(1000),
            ScenarioName::Moderate => Some(200),
            ScenarioName::Sparse => Some(50),
            ScenarioName::Custom => None,
        }
    }
}

/// Config files may omit `n_matches`; it then follows the scenario name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "ScenarioFile")]
pub struct ScenarioConfig {
    pub name: ScenarioName,
    pub n_matches: usize,
    pub correct_rate: f64,
    pub trials: usize,
    pub seed: u64,
    pub deformation_magnitude: f64,
    pub intrinsics: CameraIntrinsics,
    pub rows: usize,
    pub cols: usize,
    /// Grid spacing (m).
    pub spacing: f64,
    /// Texturemap resolution (px per m).
    pub px_per_m: f64,
    /// Distance of the rest sheet from the camera (m).
    pub depth: f64,
    pub mismatch: MyNeighborConfig,
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ScenarioFile {
    name: ScenarioName,
    n_matches: Option<usize>,
    correct_rate: f64,
    trials: usize,
    seed: u64,
    deformation_magnitude: f64,
    intrinsics: CameraIntrinsics,
    rows: usize,
    cols: usize,
    spacing: f64,
    px_per_m: f64,
    depth: f64,
    mismatch: MyNeighborConfig,
}

impl Default for ScenarioFile {
    fn default() -> Self {
        let c = ScenarioConfig::default();
        Self {
            name: c.name,
            n_matches: None,
            correct_rate: c.correct_rate,
            trials: c.trials,
            seed: c.seed,
            deformation_magnitude: c.deformation_magnitude,
            intrinsics: c.intrinsics,
            rows: c.rows,
            cols: c.cols,
            spacing: c.spacing,
            px_per_m: c.px_per_m,
            depth: c.depth,
            mismatch: c.mismatch,
        }
    }
}

impl From<ScenarioFile> for ScenarioConfig {
    fn from(f: ScenarioFile) -> Self {
        Self {
            name: f.name,
            n_matches: f
                .n_matches
                .unwrap_or_else(|| f.name.n_matches().unwrap_or(1000)),
            correct_rate: f.correct_rate,
            trials: f.trials,
            seed: f.seed,
            deformation_magnitude: f.deformation_magnitude,
            intrinsics: f.intrinsics,
            rows: f.rows,
            cols: f.cols,
            spacing: f.spacing,
            px_per_m: f.px_per_m,
            depth: f.depth,
            mismatch: f.mismatch,
        }
    }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::preset(ScenarioName::Dense)
    }
}

impl ScenarioConfig {
    pub fn preset(name: ScenarioName) -> Self {
        Self {
            name,
            n_matches: name.n_matches().unwrap_or(1000),
            correct_rate: 0.6,
            trials: 100,
            seed: 0,
            deformation_magnitude: generator::DEFAULT_MAGNITUDE,
            intrinsics: CameraIntrinsics {
                fx: 800.0,
                fy: 800.0,
                cx: 320.0,
                cy: 240.0,
                width: 640,
                height: 480,
            },
            rows: 6,
            cols: 10,
            spacing: 0.04,
            px_per_m: 1000.0,
            depth: 1.0,
            mismatch: MyNeighborConfig::default(),
        }
    }

    pub fn with_rate(mut self, correct_rate: f64) -> Self {
        self.correct_rate = correct_rate;
        self
    }

    pub fn with_trials(mut self, trials: usize) -> Self {
        self.trials = trials;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::InvalidScenario(m));
        if self.n_matches < 3 {
            return bad(format!(
                "n_matches must be at least 3, got {}",
                self.n_matches
            ));
        }
        if self.trials < 1 {
            return bad("trials must be at least 1".into());
        }
        if !(self.correct_rate > 0.0 && self.correct_rate <= 1.0) {
            return bad(format!(
                "correct_rate must be in (0, 1], got {}",
                self.correct_rate
            ));
        }
        if !(self.deformation_magnitude >= 0.0 && self.deformation_magnitude.is_finite()) {
            return bad("deformation_magnitude must be non-negative".into());
        }
        if !(self.depth > 0.0) {
            return bad("depth must be positive".into());
        }
        if !(self.intrinsics.fx > 0.0
            && self.intrinsics.fy > 0.0
            && self.intrinsics.width > 0
            && self.intrinsics.height > 0)
        {
            return bad("intrinsics need positive focal lengths and image size".into());
        }
        self.mismatch
            .validate()
            .map_err(BenchError::InvalidScenario)
    }

    pub fn rest_grid(&self) -> Result<RestGrid, BenchError> {
        generate_rest_mesh(self.rows, self.cols, self.spacing, self.px_per_m)
    }

    pub fn deform_config(&self) -> DeformConfig {
        DeformConfig {
            magnitude: self.deformation_magnitude,
            ..DeformConfig::default()
        }
    }
}

/// Random source of trial `trial` under `seed`.
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// One synthetic image of the deformed sheet with ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFrame {
    pub grid: RestGrid,
    pub deformed: Mesh3D,
    pub intrinsics: CameraIntrinsics,
    pub matches: MatchSet,
    pub labels: MatchLabels,
    pub true_image_points: Vec<Point2<f64>>,
    pub true_points_3d: Vec<Point3<f64>>,
}

impl SyntheticFrame {
    /// The deformed mesh projected into the image.
    pub fn projected_mesh(&self) -> Mesh2D {
        let v = self
            .deformed
            .vertices()
            .iter()
            .map(|p| self.intrinsics.project(p))
            .collect();
        Mesh2D::new(v, self.deformed.triangles().to_vec())
            .expect("projection of a valid frame is valid")
    }

    fn assemble(
        grid: &RestGrid,
        deformed: Mesh3D,
        cfg: &ScenarioConfig,
        rng: &mut impl Rng,
    ) -> Result<Self, BenchError> {
        let s = generate_matches(
            &grid.flat,
            &deformed,
            &cfg.intrinsics,
            cfg.n_matches,
            cfg.correct_rate,
            rng,
        )?;
        Ok(Self {
            grid: grid.clone(),
            deformed,
            intrinsics: cfg.intrinsics,
            matches: s.matches,
            labels: s.labels,
            true_image_points: s.true_image_points,
            true_points_3d: s.true_points_3d,
        })
    }
}

/// Frame of trial `trial`.
pub fn generate_frame(cfg: &ScenarioConfig, trial: usize) -> Result<SyntheticFrame, BenchError> {
    cfg.validate()?;
    let grid = cfg.rest_grid()?;
    let mut rng = trial_rng(cfg.seed, trial);
    let deformed = deform_mesh(&grid, cfg.depth, rng.random(), &cfg.deform_config())?;
    SyntheticFrame::assemble(&grid, deformed, cfg, &mut rng)
}

/// A continuously deforming sheet over `frames` frames; frame `k` draws its
/// matches from stream `k + 1`.
pub fn generate_sequence(
    cfg: &ScenarioConfig,
    frames: usize,
) -> Result<Vec<SyntheticFrame>, BenchError> {
    cfg.validate()?;
    let grid = cfg.rest_grid()?;
    let shapes = deform_sequence(
        &grid,
        cfg.depth,
        frames,
        trial_rng(cfg.seed, 0).random(),
        &cfg.deform_config(),
    )?;
    shapes
        .into_iter()
        .enumerate()
        .map(|(k, m)| SyntheticFrame::assemble(&grid, m, cfg, &mut trial_rng(cfg.seed, k + 1)))
        .collect()
}

/// Percentages as defined for the evaluation; see [`evaluate_classification`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// Flagged true mismatches over all true mismatches (100 when there are none).
    pub tpr: f64,
    /// Flagged correct matches over all correct matches (0 when there are none).
    pub fpr: f64,
    /// Correct matches among the kept ones (0 when nothing is kept).
    pub aos: f64,
    /// Kept matches over all matches.
    pub n_s: f64,
}

/// Accuracy of selection and selected percentage of a kept index set.
pub fn selection_metrics(kept: &[usize], labels: &MatchLabels) -> (f64, f64) {
    let n = labels.is_correct.len();
    let good = kept.iter().filter(|&&i| labels.is_correct[i]).count();
    let aos = if kept.is_empty() {
        0.0
    } else {
        good as f64 / kept.len() as f64 * 100.0
    };
    let n_s = if n == 0 {
        0.0
    } else {
        kept.len() as f64 / n as f64 * 100.0
    };
    (aos, n_s)
}

pub fn evaluate_classification(predicted: &Classification, labels: &MatchLabels) -> MetricsRecord {
    let n = labels.is_correct.len();
    assert_eq!(
        predicted.d3_values.len(),
        n,
        "classification and labels disagree in length"
    );
    let n_bad = n - labels.correct_count();
    let n_good = labels.correct_count();
    let flagged_bad = predicted
        .outlier_indices
        .iter()
        .filter(|&&i| !labels.is_correct[i])
        .count();
    let flagged_good = predicted.outlier_indices.len() - flagged_bad;
    let (aos, n_s) = selection_metrics(&predicted.inlier_indices, labels);
    MetricsRecord {
        tpr: if n_bad == 0 {
            100.0
        } else {
            flagged_bad as f64 / n_bad as f64 * 100.0
        },
        fpr: if n_good == 0 {
            0.0
        } else {
            flagged_good as f64 / n_good as f64 * 100.0
        },
        aos,
        n_s,
    }
}

/// Metrics of one trial, including the intermediate selections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub metrics: MetricsRecord,
    pub step1_aos: f64,
    pub step1_n_s: f64,
    pub step2_aos: f64,
    pub step2_n_s: f64,
    /// Percentage of true mismatches whose mismatch factor exceeds the mean.
    pub mismatches_above_mean_mf: f64,
    /// Mismatch removal wall time (s).
    pub runtime: f64,
}

/// Per-trial records and their means, reduced in trial order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub config: ScenarioConfig,
    pub trials: Vec<TrialRecord>,
    pub mean: TrialRecord,
}

impl ScenarioReport {
    /// `trial,seed,tpr,fpr,aos,n_s,runtime` rows.
    pub fn trials_csv(&self) -> String {
        let mut out = String::from("trial,seed,tpr,fpr,aos,n_s,runtime\n");
        for t in &self.trials {
            let m = &t.metrics;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                t.trial, t.seed, m.tpr, m.fpr, m.aos, m.n_s, t.runtime
            );
        }
        out
    }
}

fn detect(
    cfg: &ScenarioConfig,
    trial: usize,
) -> Result<(SyntheticFrame, MyNeighborOutput, f64), BenchError> {
    let fail = |message: String| BenchError::Trial {
        trial,
        seed: cfg.seed,
        message,
    };
    let frame = generate_frame(cfg, trial).map_err(|e| fail(e.to_string()))?;
    let start = Instant::now();
    let out = my_neighbor(&frame.matches, &frame.grid.flat, &cfg.mismatch)
        .map_err(|e| fail(e.to_string()))?;
    Ok((frame, out, start.elapsed().as_secs_f64()))
}

fn run_trial(cfg: &ScenarioConfig, trial: usize) -> Result<TrialRecord, BenchError> {
    let (frame, out, runtime) = detect(cfg, trial)?;
    let labels = &frame.labels;
    let (step1_aos, step1_n_s) = selection_metrics(&out.step1.selected_indices, labels);
    let (step2_aos, step2_n_s) = selection_metrics(&out.step2.selected_indices, labels);
    let bad: Vec<usize> = (0..labels.is_correct.len())
        .filter(|&i| !labels.is_correct[i])
        .collect();
    let above = bad
        .iter()
        .filter(|&&i| out.step1.mf_values[i] > out.step1.mf_threshold)
        .count();
    Ok(TrialRecord {
        trial,
        seed: cfg.seed,
        metrics: evaluate_classification(&out.classification, labels),
        step1_aos,
        step1_n_s,
        step2_aos,
        step2_n_s,
        mismatches_above_mean_mf: if bad.is_empty() {
            0.0
        } else {
            above as f64 / bad.len() as f64 * 100.0
        },
        runtime,
    })
}

/// Runs every trial in parallel and keeps the first failure in trial order.
fn collect_trials<T: Send>(
    cfg: &ScenarioConfig,
    f: impl Fn(usize) -> Result<T, BenchError> + Sync + Send,
) -> Result<Vec<T>, BenchError> {
    cfg.validate()?;
    let results: Vec<Result<T, BenchError>> = (0..cfg.trials).into_par_iter().map(f).collect();
    results.into_iter().collect()
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioReport, BenchError> {
    let trials = collect_trials(cfg, |k| run_trial(cfg, k))?;
    let n = trials.len() as f64;
    let avg = |f: &dyn Fn(&TrialRecord) -> f64| trials.iter().map(f).sum::<f64>() / n;
    let mean = TrialRecord {
        trial: trials.len(),
        seed: cfg.seed,
        metrics: MetricsRecord {
            tpr: avg(&|t| t.metrics.tpr),
            fpr: avg(&|t| t.metrics.fpr),
            aos: avg(&|t| t.metrics.aos),
            n_s: avg(&|t| t.metrics.n_s),
        },
        step1_aos: avg(&|t| t.step1_aos),
        step1_n_s: avg(&|t| t.step1_n_s),
        step2_aos: avg(&|t| t.step2_aos),
        step2_n_s: avg(&|t| t.step2_n_s),
        mismatches_above_mean_mf: avg(&|t| t.mismatches_above_mean_mf),
        runtime: avg(&|t| t.runtime),
    };
    Ok(ScenarioReport {
        config: cfg.clone(),
        trials,
        mean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub alpha: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// Mean TPR and FPR over the scenario's trials at each threshold factor,
/// sorted by factor. Selection and purification run once per trial.
pub fn roc_sweep(cfg: &ScenarioConfig, alphas: &[f64]) -> Result<Vec<RocPoint>, BenchError> {
    if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
        return Err(BenchError::InvalidScenario(format!(
            "threshold factors must be positive, got {a}"
        )));
    }
    let mut alphas = alphas.to_vec();
    alphas.sort_by(f64::total_cmp);
    let per_trial = collect_trials(cfg, |k| {
        let (frame, out, _) = detect(cfg, k)?;
        let (d3, scale) = classification_distances(&frame.matches, &out.step2, &frame.grid.flat)
            .map_err(|e| BenchError::Trial {
                trial: k,
                seed: cfg.seed,
                message: e.to_string(),
            })?;
        Ok(alphas
            .iter()
            .map(|&a| {
                let m = evaluate_classification(
                    &Classification::from_distances(d3.clone(), scale, a),
                    &frame.labels,
                );
                (m.tpr, m.fpr)
            })
            .collect::<Vec<_>>())
    })?;
    let n = per_trial.len() as f64;
    Ok(alphas
        .iter()
        .enumerate()
        .map(|(j, &alpha)| RocPoint {
            alpha,
            tpr: per_trial.iter().map(|t| t[j].0).sum::<f64>() / n,
            fpr: per_trial.iter().map(|t| t[j].1).sum::<f64>() / n,
        })
        .collect())
}

pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut out = String::from("alpha,tpr,fpr\n");
    for p in points {
        let _ = writeln!(out, "{},{},{}", p.alpha, p.tpr, p.fpr);
    }
    out
}

/// Where [`shape_error`] compares an inferred shape with the truth.
#[derive(Debug, Clone, Copy)]
pub enum ErrorSites<'a> {
    Vertices,
    /// Template points of these matches, carried onto the inferred mesh.
    Matches(&'a [usize]),
}

/// Mean and median Euclidean distance (m) to the frame's ground truth.
pub fn shape_error(
    inferred: &Mesh3D,
    frame: &SyntheticFrame,
    at: ErrorSites<'_>,
) -> Result<(f64, f64), BenchError> {
    if inferred.triangles() != frame.deformed.triangles() {
        return Err(BenchError::InvalidScenario(
            "inferred mesh topology differs from the frame".into(),
        ));
    }
    let dists: Vec<f64> = match at {
        ErrorSites::Vertices => inferred
            .vertices()
            .iter()
            .zip(frame.deformed.vertices())
            .map(|(a, b)| (a - b).norm())
            .collect(),
        ErrorSites::Matches(indices) => {
            let locator = PointLocator::new(&frame.grid.flat);
            indices
                .iter()
                .map(|&i| {
                    let anchor = locator.locate(&frame.matches.template_points()[i])?;
                    Ok((apply_barycentric(&anchor, inferred)? - frame.true_points_3d[i]).norm())
                })
                .collect::<Result<_, BenchError>>()?
        }
    };
    if dists.is_empty() {
        return Ok((0.0, 0.0));
    }
    Ok((
        dists.iter().sum::<f64>() / dists.len() as f64,
        crate::mismatch::median(&dists),
    ))
}
