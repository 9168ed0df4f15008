//! Per-frame tracking: mismatch removal, warp, salient point selection and
//! shape inference, warm-started from the previous frame.
//!
//! Algorithmic failures inside a frame never abort a run. The frame is
//! marked skipped, carries the previous shape forward and records why.
//! Only configuration and IO errors surface as [`PipelineError`].

pub mod source;
pub mod template;

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use source::{
    run_live, FileSource, LatestSlot, LiveRun, MatchSource, SourceFrame, SyntheticSource,
};
pub use template::{build_template, import_template, Template, INITIAL_DEPTH};

use crate::error::{IoError, PipelineError, SftError};
use crate::mesh::{Mesh2D, Mesh3D};
use crate::mismatch::{fit_inlier_warp, my_neighbor, MatchSet, MyNeighborConfig};
use crate::sft::{infer_shape, select_salient_points, Camera, KnownPointConstraint, SolverParams};

/// Input and output locations used by the command-line front end.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoPaths {
    pub template: Option<PathBuf>,
    /// Match files, one per frame, in frame order.
    pub matches: Vec<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Classification threshold, purification constants and warp settings.
    pub mismatch: MyNeighborConfig,
    pub solver: SolverParams,
    pub known_points: Vec<KnownPointConstraint>,
    pub paths: IoPaths,
}

impl PipelineConfig {
    pub fn validate(&self, template: &Template) -> Result<(), PipelineError> {
        self.mismatch.validate().map_err(PipelineError::Config)?;
        self.solver
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        let n = template.rest_mesh().vertex_count();
        for k in &self.known_points {
            if k.vertex_index >= n {
                return Err(PipelineError::Config(format!(
                    "known point references vertex {} of a {n}-vertex template",
                    k.vertex_index
                )));
            }
            if !(k.radius > 0.0 && k.radius.is_finite()) || !k.center.iter().all(|c| c.is_finite())
            {
                return Err(PipelineError::Config(format!(
                    "known point at vertex {} needs a finite centre and positive radius",
                    k.vertex_index
                )));
            }
        }
        Ok(())
    }
}

/// Wall-clock time per stage (s). The stages are contiguous, so they sum
/// to `total`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub mismatch: f64,
    pub warp: f64,
    pub salient: f64,
    pub inference: f64,
    pub total: f64,
}

impl StageTimings {
    pub fn stage_sum(&self) -> f64 {
        self.mismatch + self.warp + self.salient + self.inference
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub frame_id: usize,
    /// Set when the frame produced no new shape; `shape` is then the
    /// previous one.
    pub skipped: bool,
    pub reason: Option<String>,
    pub inlier_indices: Vec<usize>,
    pub outlier_count: usize,
    pub transferred: Option<Mesh2D>,
    pub shape: Mesh3D,
    pub converged: bool,
    pub outer_iterations: usize,
    pub max_edge_error: f64,
    pub sightline_count: usize,
    pub timings: StageTimings,
}

/// The timing-free summary written once per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: usize,
    pub skipped: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub inliers: usize,
    pub outliers: usize,
    pub converged: bool,
    pub outer_iterations: usize,
    pub max_edge_error: f64,
    pub sightline_count: usize,
}

impl FrameResult {
    pub fn record(&self) -> FrameRecord {
        FrameRecord {
            frame_id: self.frame_id,
            skipped: self.skipped,
            reason: self.reason.clone(),
            inliers: self.inlier_indices.len(),
            outliers: self.outlier_count,
            converged: self.converged,
            outer_iterations: self.outer_iterations,
            max_edge_error: self.max_edge_error,
            sightline_count: self.sightline_count,
        }
    }

    fn skipped(frame_id: usize, prev: &Mesh3D, reason: String) -> Self {
        Self {
            frame_id,
            skipped: true,
            reason: Some(reason),
            inlier_indices: vec![],
            outlier_count: 0,
            transferred: None,
            shape: prev.clone(),
            converged: false,
            outer_iterations: 0,
            max_edge_error: prev.max_edge_error(),
            sightline_count: 0,
            timings: StageTimings::default(),
        }
    }
}

/// Runs one frame. `prev` is the last inferred shape; the template's
/// initial pose is used without one.
pub fn process_frame(
    template: &Template,
    frame_id: usize,
    matches: &MatchSet,
    cfg: &PipelineConfig,
    prev: Option<&Mesh3D>,
) -> Result<FrameResult, PipelineError> {
    cfg.validate(template)?;
    let init = prev.unwrap_or(template.initial_pose());
    if init.triangles() != template.rest_mesh().triangles()
        || init.vertex_count() != template.rest_mesh().vertex_count()
    {
        return Err(PipelineError::TopologyMismatch(
            "previous shape does not share the template topology".into(),
        ));
    }
    let t0 = Instant::now();
    let finish = |mut r: FrameResult, marks: &[Instant]| {
        let span = |i: usize| {
            marks
                .get(i + 1)
                .map_or(0.0, |m| (*m - marks[i]).as_secs_f64())
        };
        r.timings = StageTimings {
            mismatch: span(0),
            warp: span(1),
            salient: span(2),
            inference: span(3),
            total: (*marks.last().expect("start mark") - marks[0]).as_secs_f64(),
        };
        r
    };

    let classification = match my_neighbor(matches, template.mesh2d(), &cfg.mismatch) {
        Ok(out) => out.classification,
        Err(e) => {
            let r = FrameResult::skipped(frame_id, init, format!("mismatch removal: {e}"));
            return Ok(finish(r, &[t0, Instant::now()]));
        }
    };
    let t1 = Instant::now();
    let with_classes = |mut r: FrameResult| {
        r.inlier_indices = classification.inlier_indices.clone();
        r.outlier_count = classification.outlier_indices.len();
        r
    };

    let transferred = match fit_inlier_warp(
        matches,
        &classification,
        template.mesh2d(),
        &cfg.mismatch.warp,
    ) {
        Ok((_, mesh)) => mesh,
        Err(e) => {
            let r = with_classes(FrameResult::skipped(frame_id, init, format!("warp: {e}")));
            return Ok(finish(r, &[t0, t1, Instant::now()]));
        }
    };
    let t2 = Instant::now();

    let inlier_points: Vec<_> = classification
        .inlier_indices
        .iter()
        .map(|&i| matches.template_points()[i])
        .collect();
    let sightlines = select_salient_points(template.mesh2d(), &transferred, &inlier_points);
    let t3 = Instant::now();

    let camera = Camera::new(*template.intrinsics());
    let estimate = match infer_shape(
        template.rest_mesh(),
        &camera,
        &sightlines,
        &cfg.known_points,
        init,
        &cfg.solver,
    ) {
        Ok(e) => e,
        Err(SftError::NoConvergence { estimate }) => *estimate,
        Err(e) => {
            let mut r = with_classes(FrameResult::skipped(
                frame_id,
                init,
                format!("shape inference: {e}"),
            ));
            r.transferred = Some(transferred);
            r.sightline_count = sightlines.len();
            return Ok(finish(r, &[t0, t1, t2, t3, Instant::now()]));
        }
    };
    let t4 = Instant::now();
    let r = FrameResult {
        frame_id,
        skipped: false,
        reason: None,
        inlier_indices: classification.inlier_indices.clone(),
        outlier_count: classification.outlier_indices.len(),
        transferred: Some(transferred),
        converged: estimate.converged,
        outer_iterations: estimate.outer_iterations,
        max_edge_error: estimate.max_edge_error,
        shape: estimate.mesh,
        sightline_count: sightlines.len(),
        timings: StageTimings::default(),
    };
    Ok(finish(r, &[t0, t1, t2, t3, t4]))
}

/// Folds [`process_frame`] over every frame of `source`, threading the last
/// shape. Unreadable frames are recorded as skipped. When `records` is given,
/// one JSON line per frame is appended and flushed as soon as it is known.
pub fn run_frames(
    template: &Template,
    source: &mut dyn MatchSource,
    cfg: &PipelineConfig,
    mut records: Option<&mut dyn Write>,
) -> Result<Vec<FrameResult>, PipelineError> {
    cfg.validate(template)?;
    let mut results: Vec<FrameResult> = Vec::new();
    while let Some(frame) = source.next_frame() {
        let prev = results.last().map(|r| &r.shape);
        let result = match frame.matches {
            Ok(m) => process_frame(template, frame.id, &m, cfg, prev)?,
            Err(e) => FrameResult::skipped(
                frame.id,
                prev.unwrap_or(template.initial_pose()),
                format!("unreadable matches: {e}"),
            ),
        };
        if let Some(out) = records.as_deref_mut() {
            append_record(out, &result)?;
        }
        results.push(result);
    }
    Ok(results)
}

/// [`run_frames`] over match files, frame ids following the list order.
pub fn run_sequence(
    template: &Template,
    match_files: &[PathBuf],
    cfg: &PipelineConfig,
    records: Option<&mut dyn Write>,
) -> Result<Vec<FrameResult>, PipelineError> {
    run_frames(
        template,
        &mut FileSource::new(match_files.to_vec()),
        cfg,
        records,
    )
}

fn append_record(out: &mut dyn Write, result: &FrameResult) -> Result<(), PipelineError> {
    let line = serde_json::to_string(&result.record()).expect("record serialization is infallible");
    let io = |e| PipelineError::Io(IoError::io("frame records", e));
    writeln!(out, "{line}").map_err(io)?;
    out.flush().map_err(io)
}

/// Aggregate over a run, free of timings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSummary {
    pub frames: usize,
    pub skipped: usize,
    pub converged: usize,
    pub mean_outer_iterations: f64,
    pub mean_sightlines: f64,
    pub worst_edge_error: f64,
}

impl SequenceSummary {
    pub fn new(results: &[FrameResult]) -> Self {
        let solved: Vec<&FrameResult> = results.iter().filter(|r| !r.skipped).collect();
        let mean = |f: fn(&FrameResult) -> f64| {
            if solved.is_empty() {
                0.0
            } else {
                solved.iter().map(|r| f(r)).sum::<f64>() / solved.len() as f64
            }
        };
        Self {
            frames: results.len(),
            skipped: results.len() - solved.len(),
            converged: solved.iter().filter(|r| r.converged).count(),
            mean_outer_iterations: mean(|r| r.outer_iterations as f64),
            mean_sightlines: mean(|r| r.sightline_count as f64),
            worst_edge_error: solved.iter().map(|r| r.max_edge_error).fold(0.0, f64::max),
        }
    }
}

/// `frame_id,mismatch,warp,salient,inference,total` in seconds.
pub fn timings_csv(results: &[FrameResult]) -> String {
    let mut out = String::from("frame_id,mismatch,warp,salient,inference,total\n");
    for r in results {
        let t = r.timings;
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.frame_id, t.mismatch, t.warp, t.salient, t.inference, t.total
        ));
    }
    out
}
