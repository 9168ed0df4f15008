//! Neighbourhood-based mismatch removal.
//!
//! Correct matches on a smoothly deforming surface keep their Delaunay
//! neighbours; mismatches land among strangers. The algorithm runs in three
//! steps:
//!
//! 1. **Selection**: every match gets a mismatch factor, the percentage of
//!    its template and image neighbours that are not shared. Matches at or
//!    below the mean factor are selected and a warp is fitted to them.
//! 2. **Purification**: selected matches whose transfer residual through
//!    the warped mesh is an outlier by the median absolute deviation rule
//!    are dropped, and the warp is refitted.
//! 3. **Classification**: every match is flagged as a mismatch when its
//!    transfer residual exceeds a fraction of the mean inter-vertex distance
//!    of the warped mesh.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Point2;
use serde::{Deserialize, Serialize};

use crate::error::{IoError, MismatchError, MismatchStep};
use crate::mesh::{
    apply_barycentric, mean_pairwise_distance, BarycentricAnchor, Mesh2D, PointLocator,
};
use crate::triangulation::delaunay;
use crate::warp::{fit_bbs, transfer_mesh, BbsWarp, Rect, WarpConfig};

/// Smallest selection a warp is fitted to.
pub const MIN_WARP_MATCHES: usize = 4;

/// Spread below which the deviation rule degenerates to "differs from the median".
const ZERO_SPREAD: f64 = 1e-9;

/// Corresponding template (texturemap) and image points.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchSet {
    template_points: Vec<Point2<f64>>,
    image_points: Vec<Point2<f64>>,
}

impl MatchSet {
    pub fn new(
        template_points: Vec<Point2<f64>>,
        image_points: Vec<Point2<f64>>,
    ) -> Result<Self, MismatchError> {
        if template_points.len() != image_points.len() {
            return Err(MismatchError::InvalidMatches(format!(
                "{} template points but {} image points",
                template_points.len(),
                image_points.len()
            )));
        }
        if let Some(i) = template_points
            .iter()
            .zip(&image_points)
            .position(|(p, q)| {
                !(p.x.is_finite() && p.y.is_finite() && q.x.is_finite() && q.y.is_finite())
            })
        {
            return Err(MismatchError::InvalidMatches(format!(
                "match {i} is not finite"
            )));
        }
        Ok(Self {
            template_points,
            image_points,
        })
    }

    pub fn empty() -> Self {
        Self {
            template_points: vec![],
            image_points: vec![],
        }
    }

    pub fn len(&self) -> usize {
        self.template_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.template_points.is_empty()
    }

    pub fn template_points(&self) -> &[Point2<f64>] {
        &self.template_points
    }

    pub fn image_points(&self) -> &[Point2<f64>] {
        &self.image_points
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            template_points: indices.iter().map(|&i| self.template_points[i]).collect(),
            image_points: indices.iter().map(|&i| self.image_points[i]).collect(),
        }
    }
}

/// Ground-truth correctness per match (synthetic data only).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchLabels {
    pub is_correct: Vec<bool>,
}

impl MatchLabels {
    pub fn correct_count(&self) -> usize {
        self.is_correct.iter().filter(|&&c| c).count()
    }
}

/// Residual statistics of the purification step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Purification {
    /// Transfer residual of each step I selection, in selection order (px).
    pub d2_values: Vec<f64>,
    pub median: f64,
    pub mad: f64,
    /// Matches whose deviation from the median reaches this are removed.
    pub cutoff: f64,
    pub removed_indices: Vec<usize>,
}

/// Matches believed correct after step I or II, with the warp fitted to them.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub selected_indices: Vec<usize>,
    pub mf_values: Vec<f64>,
    pub mf_threshold: f64,
    pub warp: BbsWarp,
    pub transferred_mesh: Mesh2D,
    pub purification: Option<Purification>,
}

/// Final partition of all matches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub inlier_indices: Vec<usize>,
    pub outlier_indices: Vec<usize>,
    /// Transfer residual of every match (px).
    pub d3_values: Vec<f64>,
    pub d3_threshold: f64,
    /// Mean pairwise vertex distance of the warped mesh (px).
    pub mesh_scale: f64,
}

impl Classification {
    /// Partition of `d3_values` at `alpha * mesh_scale`; ties are outliers.
    pub fn from_distances(d3_values: Vec<f64>, mesh_scale: f64, alpha: f64) -> Self {
        let d3_threshold = alpha * mesh_scale;
        let (outlier_indices, inlier_indices) =
            (0..d3_values.len()).partition(|&i| d3_values[i] >= d3_threshold);
        Self {
            inlier_indices,
            outlier_indices,
            d3_values,
            d3_threshold,
            mesh_scale,
        }
    }

    pub fn is_inlier_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.d3_values.len()];
        for &i in &self.inlier_indices {
            mask[i] = true;
        }
        mask
    }

    /// `index,d3,is_inlier` rows.
    pub fn to_csv(&self) -> String {
        let mask = self.is_inlier_mask();
        let mut out = String::from("index,d3,is_inlier\n");
        for (i, d) in self.d3_values.iter().enumerate() {
            let _ = writeln!(out, "{i},{d},{}", u8::from(mask[i]));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MyNeighborConfig {
    /// Classification threshold as a fraction of the warped mesh scale.
    pub alpha_s: f64,
    /// Purification removes matches this many MADs from the median.
    pub mad_factor: f64,
    /// Consistency constant scaling the raw median absolute deviation.
    pub mad_k: f64,
    pub warp: WarpConfig,
}

impl Default for MyNeighborConfig {
    fn default() -> Self {
        Self {
            alpha_s: 0.15,
            mad_factor: 2.5,
            mad_k: 1.4826,
            warp: WarpConfig::default(),
        }
    }
}

impl MyNeighborConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.alpha_s > 0.0 && self.alpha_s.is_finite()) {
            return Err(format!("alpha_s must be positive, got {}", self.alpha_s));
        }
        if !(self.mad_factor > 0.0 && self.mad_k > 0.0) {
            return Err("MAD factor and constant must be positive".into());
        }
        if self.warp.grid[0] < 4 || self.warp.grid[1] < 4 || !(self.warp.lambda >= 0.0) {
            return Err("warp grid must be at least 4x4 with non-negative lambda".into());
        }
        Ok(())
    }
}

/// All intermediate results of [`my_neighbor`].
#[derive(Debug, Clone, PartialEq)]
pub struct MyNeighborOutput {
    pub step1: SelectionResult,
    pub step2: SelectionResult,
    pub classification: Classification,
}

impl MyNeighborOutput {
    pub fn diagnostics_json(&self) -> String {
        #[derive(Serialize)]
        struct Diagnostics<'a> {
            mf_values: &'a [f64],
            mf_threshold: f64,
            step1_selected: &'a [usize],
            step2: &'a Option<Purification>,
            step2_selected: &'a [usize],
            mesh_scale: f64,
            d3_threshold: f64,
            inliers: &'a [usize],
            outliers: &'a [usize],
        }
        let d = Diagnostics {
            mf_values: &self.step1.mf_values,
            mf_threshold: self.step1.mf_threshold,
            step1_selected: &self.step1.selected_indices,
            step2: &self.step2.purification,
            step2_selected: &self.step2.selected_indices,
            mesh_scale: self.classification.mesh_scale,
            d3_threshold: self.classification.d3_threshold,
            inliers: &self.classification.inlier_indices,
            outliers: &self.classification.outlier_indices,
        };
        serde_json::to_string_pretty(&d).expect("diagnostics serialization is infallible")
    }
}

fn sorted_symmetric_difference_ratio(a: &[usize], b: &[usize]) -> f64 {
    let (mut i, mut j, mut common) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                common += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - common;
    if union == 0 {
        return 0.0;
    }
    (union - common) as f64 / union as f64 * 100.0
}

/// Mismatch factor of every match, in `[0, 100]`.
pub fn compute_mf(matches: &MatchSet) -> Result<Vec<f64>, MismatchError> {
    let step = MismatchStep::NeighborFactor;
    if matches.len() < 3 {
        return Err(MismatchError::InsufficientMatches {
            step,
            available: matches.len(),
            required: 3,
        });
    }
    let geometry = |source| MismatchError::Geometry { step, source };
    let tp = delaunay(matches.template_points()).map_err(geometry)?;
    let tq = delaunay(matches.image_points()).map_err(geometry)?;
    (0..matches.len())
        .map(|i| {
            let qp = tp.first_order_neighbors(i).map_err(geometry)?;
            let qq = tq.first_order_neighbors(i).map_err(geometry)?;
            Ok(sorted_symmetric_difference_ratio(qp, qq))
        })
        .collect()
}

fn fit_selection(
    matches: &MatchSet,
    indices: &[usize],
    template_mesh: &Mesh2D,
    warp: &WarpConfig,
    step: MismatchStep,
) -> Result<(BbsWarp, Mesh2D), MismatchError> {
    if indices.len() < MIN_WARP_MATCHES {
        return Err(MismatchError::InsufficientMatches {
            step,
            available: indices.len(),
            required: MIN_WARP_MATCHES,
        });
    }
    let sub = matches.subset(indices);
    let w = fit_bbs(
        sub.template_points(),
        sub.image_points(),
        Rect::bounding(template_mesh),
        warp,
    )
    .map_err(|_| MismatchError::InsufficientMatches {
        step,
        available: indices.len(),
        required: MIN_WARP_MATCHES,
    })?;
    let m = transfer_mesh(&w, template_mesh);
    Ok((w, m))
}

/// Selects matches whose mismatch factor is at most the mean and fits the
/// first warp to them.
pub fn step1_select(
    matches: &MatchSet,
    template_mesh: &Mesh2D,
    warp: &WarpConfig,
) -> Result<SelectionResult, MismatchError> {
    let mf_values = compute_mf(matches)?;
    let mf_threshold = mf_values.iter().sum::<f64>() / mf_values.len() as f64;
    let selected_indices: Vec<usize> = (0..mf_values.len())
        .filter(|&i| mf_values[i] <= mf_threshold)
        .collect();
    let (warp, transferred_mesh) = fit_selection(
        matches,
        &selected_indices,
        template_mesh,
        warp,
        MismatchStep::Selection,
    )?;
    Ok(SelectionResult {
        selected_indices,
        mf_values,
        mf_threshold,
        warp,
        transferred_mesh,
        purification: None,
    })
}

/// Median; the mean of the middle pair for even counts.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn anchors(
    points: &[Point2<f64>],
    mesh: &Mesh2D,
    step: MismatchStep,
) -> Result<Vec<BarycentricAnchor>, MismatchError> {
    let locator = PointLocator::new(mesh);
    points
        .iter()
        .map(|p| {
            locator
                .locate(p)
                .map_err(|source| MismatchError::Geometry { step, source })
        })
        .collect()
}

/// Distance between each image point and its template point carried
/// through `transferred` by anchors computed in `template_mesh`.
fn transfer_residuals(
    template: &[Point2<f64>],
    image: &[Point2<f64>],
    template_mesh: &Mesh2D,
    transferred: &Mesh2D,
    step: MismatchStep,
) -> Result<Vec<f64>, MismatchError> {
    anchors(template, template_mesh, step)?
        .iter()
        .zip(image)
        .map(|(a, q)| {
            let q_hat = apply_barycentric(a, transferred)
                .map_err(|source| MismatchError::Geometry { step, source })?;
            Ok((q_hat - q).norm())
        })
        .collect()
}

/// Drops step I selections whose transfer residual deviates from the
/// median by `mad_factor` scaled MADs or more, then refits the warp.
pub fn step2_purify(
    sel: &SelectionResult,
    matches: &MatchSet,
    template_mesh: &Mesh2D,
    config: &MyNeighborConfig,
) -> Result<SelectionResult, MismatchError> {
    let step = MismatchStep::Purification;
    if sel.selected_indices.len() < MIN_WARP_MATCHES {
        return Err(MismatchError::InsufficientMatches {
            step,
            available: sel.selected_indices.len(),
            required: MIN_WARP_MATCHES,
        });
    }
    let sub = matches.subset(&sel.selected_indices);
    let d2 = transfer_residuals(
        sub.template_points(),
        sub.image_points(),
        template_mesh,
        &sel.transferred_mesh,
        step,
    )?;
    let med = median(&d2);
    let deviations: Vec<f64> = d2.iter().map(|d| (d - med).abs()).collect();
    let mad = config.mad_k * median(&deviations);
    let cutoff = config.mad_factor * mad;
    let remove = |dev: f64| {
        if mad < ZERO_SPREAD {
            dev > ZERO_SPREAD
        } else {
            dev >= cutoff
        }
    };
    let (mut kept, mut removed) = (vec![], vec![]);
    for (k, &i) in sel.selected_indices.iter().enumerate() {
        if remove(deviations[k]) {
            removed.push(i);
        } else {
            kept.push(i);
        }
    }
    let (warp, transferred_mesh) =
        fit_selection(matches, &kept, template_mesh, &config.warp, step)?;
    Ok(SelectionResult {
        selected_indices: kept,
        mf_values: sel.mf_values.clone(),
        mf_threshold: sel.mf_threshold,
        warp,
        transferred_mesh,
        purification: Some(Purification {
            d2_values: d2,
            median: med,
            mad,
            cutoff,
            removed_indices: removed,
        }),
    })
}

/// Transfer residual of every match through `sel`'s warped mesh, and the
/// warped mesh's mean pairwise vertex distance.
pub fn classification_distances(
    matches: &MatchSet,
    sel: &SelectionResult,
    template_mesh: &Mesh2D,
) -> Result<(Vec<f64>, f64), MismatchError> {
    let step = MismatchStep::Classification;
    let d3 = transfer_residuals(
        matches.template_points(),
        matches.image_points(),
        template_mesh,
        &sel.transferred_mesh,
        step,
    )?;
    let scale = mean_pairwise_distance(&sel.transferred_mesh)
        .map_err(|source| MismatchError::Geometry { step, source })?;
    Ok((d3, scale))
}

/// Flags matches whose transfer residual reaches `alpha_s` times the warped
/// mesh scale.
pub fn step3_classify(
    matches: &MatchSet,
    sel: &SelectionResult,
    template_mesh: &Mesh2D,
    alpha_s: f64,
) -> Result<Classification, MismatchError> {
    let (d3, scale) = classification_distances(matches, sel, template_mesh)?;
    Ok(Classification::from_distances(d3, scale, alpha_s))
}

/// Runs selection, purification and classification.
pub fn my_neighbor(
    matches: &MatchSet,
    template_mesh: &Mesh2D,
    config: &MyNeighborConfig,
) -> Result<MyNeighborOutput, MismatchError> {
    let step1 = step1_select(matches, template_mesh, &config.warp)?;
    let step2 = step2_purify(&step1, matches, template_mesh, config)?;
    let classification = step3_classify(matches, &step2, template_mesh, config.alpha_s)?;
    Ok(MyNeighborOutput {
        step1,
        step2,
        classification,
    })
}

/// Warp fitted to the inliers of a classification.
pub fn fit_inlier_warp(
    matches: &MatchSet,
    classification: &Classification,
    template_mesh: &Mesh2D,
    warp: &WarpConfig,
) -> Result<(BbsWarp, Mesh2D), MismatchError> {
    fit_selection(
        matches,
        &classification.inlier_indices,
        template_mesh,
        warp,
        MismatchStep::Classification,
    )
}

/// Parses `xp,yp,xq,yq[,label]` CSV text; labels are all-or-nothing.
pub fn matches_from_csv(
    text: &str,
    origin: &str,
) -> Result<(MatchSet, Option<MatchLabels>), IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| IoError::parse(format!("{origin}:1"), e))?
        .clone();
    let names: Vec<&str> = headers.iter().collect();
    let labelled = match names.as_slice() {
        ["xp", "yp", "xq", "yq"] => false,
        ["xp", "yp", "xq", "yq", "label"] => true,
        _ => {
            return Err(IoError::parse(
                format!("{origin}:1"),
                format!(
                    "expected header xp,yp,xq,yq[,label], got {}",
                    names.join(",")
                ),
            ))
        }
    };
    let (mut p, mut q, mut labels) = (vec![], vec![], vec![]);
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |pos| pos.line());
            IoError::parse(format!("{origin}:{line}"), e)
        })?;
        let line = record.position().map_or(0, |pos| pos.line());
        let loc = || format!("{origin}:{line}");
        let num = |k: usize| -> Result<f64, IoError> {
            let v: f64 = record[k]
                .parse()
                .map_err(|e| IoError::parse(loc(), format!("column {}: {e}", names[k])))?;
            if !v.is_finite() {
                return Err(IoError::parse(
                    loc(),
                    format!("column {} is not finite", names[k]),
                ));
            }
            Ok(v)
        };
        p.push(Point2::new(num(0)?, num(1)?));
        q.push(Point2::new(num(2)?, num(3)?));
        if labelled {
            labels.push(match &record[4] {
                "1" => true,
                "0" => false,
                other => {
                    return Err(IoError::parse(
                        loc(),
                        format!("label must be 0 or 1, got {other:?}"),
                    ))
                }
            });
        }
    }
    let set = MatchSet::new(p, q).map_err(|e| IoError::parse(origin, e))?;
    Ok((set, labelled.then_some(MatchLabels { is_correct: labels })))
}

pub fn matches_to_csv(matches: &MatchSet, labels: Option<&MatchLabels>) -> String {
    let mut out = String::from(if labels.is_some() {
        "xp,yp,xq,yq,label\n"
    } else {
        "xp,yp,xq,yq\n"
    });
    for (i, (p, q)) in matches
        .template_points()
        .iter()
        .zip(matches.image_points())
        .enumerate()
    {
        let _ = write!(out, "{},{},{},{}", p.x, p.y, q.x, q.y);
        if let Some(l) = labels {
            let _ = write!(out, ",{}", u8::from(l.is_correct[i]));
        }
        out.push('\n');
    }
    out
}

pub fn read_matches(path: impl AsRef<Path>) -> Result<(MatchSet, Option<MatchLabels>), IoError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    matches_from_csv(&text, &path.display().to_string())
}
