//! Dataset-level evaluation of stitch reports against ground truth.

use std::path::{Path, PathBuf};

use planestitch_core::metrics::{
    evaluate_ap, evaluate_camera, evaluate_ipaa, ApSample, CameraErrorStats, EvalPlane, PairAssociation, TPCriteria,
};
use serde::{Deserialize, Serialize};

use crate::error::FormatError;
use crate::format::{masks_from_dto, pair_dirs, plane_from, read_json, GroundTruth, GtFile, GT_FILE, REPORT_FILE};
use crate::pipeline::Report;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApMetrics {
    pub all: f64,
    #[serde(rename = "-offset")]
    pub no_offset: f64,
    #[serde(rename = "-normal")]
    pub no_normal: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IpaaMetrics {
    #[serde(rename = "100")]
    pub ipaa_100: f64,
    #[serde(rename = "90")]
    pub ipaa_90: f64,
    #[serde(rename = "80")]
    pub ipaa_80: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraMetrics {
    pub median_t: f64,
    pub mean_t: f64,
    pub frac_t_le_1m: f64,
    pub median_r_deg: f64,
    pub mean_r_deg: f64,
    pub frac_r_le_30deg: f64,
}

impl From<CameraErrorStats> for CameraMetrics {
    fn from(s: CameraErrorStats) -> Self {
        CameraMetrics {
            median_t: s.median_t,
            mean_t: s.mean_t,
            frac_t_le_1m: s.frac_t_le_1m,
            median_r_deg: s.median_r,
            mean_r_deg: s.mean_r,
            frac_r_le_30deg: s.frac_r_le_30deg,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub pairs: usize,
    /// Pairs whose stitch run failed. They count as having no predictions
    /// and no matches, and are left out of the camera statistics.
    pub failed_pairs: usize,
    pub ap: ApMetrics,
    pub ipaa: IpaaMetrics,
    pub camera: Option<CameraMetrics>,
}

fn predictions(report: &Report) -> Result<Vec<EvalPlane>, FormatError> {
    let mut out = Vec::with_capacity(report.planes.len());
    for (k, p) in report.planes.iter().enumerate() {
        let field = format!("planes[{k}] ({})", p.id);
        let plane = plane_from(&p.normal, p.offset, &field)?;
        let masks = masks_from_dto(&p.masks, &field)?;
        out.push(EvalPlane { plane, score: p.score, masks });
    }
    Ok(out)
}

pub fn evaluate(pairs: &[(Report, GroundTruth)]) -> Result<MetricsReport, FormatError> {
    let mut samples = Vec::with_capacity(pairs.len());
    let mut associations = Vec::with_capacity(pairs.len());
    let (mut pred_cams, mut gt_cams) = (Vec::new(), Vec::new());
    let mut failed = 0;
    for (report, gt) in pairs {
        let ground_truth = gt
            .planes
            .iter()
            .map(|(_, plane, masks)| EvalPlane { plane: *plane, score: 1.0, masks: masks.clone() })
            .collect();
        let mut association =
            PairAssociation { m: gt.m, n: gt.n, predicted: Vec::new(), ground_truth: gt.correspondence.clone() };
        if report.is_ok() {
            samples.push(ApSample { predictions: predictions(report)?, ground_truth });
            association.predicted = report.correspondence.iter().map(|m| (m.i, m.j)).collect();
            if let Some(c) = &report.camera {
                pred_cams.push(c.to_pose("camera")?);
                gt_cams.push(gt.camera);
            }
        } else {
            failed += 1;
            samples.push(ApSample { predictions: Vec::new(), ground_truth });
        }
        associations.push(association);
    }
    let camera = if pred_cams.is_empty() {
        None
    } else {
        Some(evaluate_camera(&pred_cams, &gt_cams).map_err(|e| FormatError::invalid("camera", e))?.into())
    };
    Ok(MetricsReport {
        pairs: pairs.len(),
        failed_pairs: failed,
        ap: ApMetrics {
            all: evaluate_ap(&samples, &TPCriteria::ALL),
            no_offset: evaluate_ap(&samples, &TPCriteria::NO_OFFSET),
            no_normal: evaluate_ap(&samples, &TPCriteria::NO_NORMAL),
        },
        ipaa: IpaaMetrics {
            ipaa_100: evaluate_ipaa(&associations, 100.0),
            ipaa_90: evaluate_ipaa(&associations, 90.0),
            ipaa_80: evaluate_ipaa(&associations, 80.0),
        },
        camera,
    })
}

/// Pairs each `report.json` under `pred_dir` with the `gt.json` of the
/// same-named subdirectory of `gt_dir`.
pub fn load_eval_pairs(pred_dir: &Path, gt_dir: &Path) -> Result<Vec<(PathBuf, Report, GroundTruth)>, FormatError> {
    let mut out = Vec::new();
    for dir in pair_dirs(pred_dir)? {
        let report_path = dir.join(REPORT_FILE);
        if !report_path.is_file() {
            continue;
        }
        let name = dir.file_name().expect("subdirectory has a name");
        let report: Report = read_json(&report_path)?;
        let gt = read_json::<GtFile>(&gt_dir.join(name).join(GT_FILE))?.validate()?;
        out.push((dir, report, gt));
    }
    Ok(out)
}

#[derive(Serialize)]
struct CsvRow {
    pairs: usize,
    failed_pairs: usize,
    ap_all: f64,
    ap_no_offset: f64,
    ap_no_normal: f64,
    ipaa_100: f64,
    ipaa_90: f64,
    ipaa_80: f64,
    median_t: Option<f64>,
    mean_t: Option<f64>,
    frac_t_le_1m: Option<f64>,
    median_r_deg: Option<f64>,
    mean_r_deg: Option<f64>,
    frac_r_le_30deg: Option<f64>,
}

/// The metrics as a header line and one row.
pub fn to_csv(m: &MetricsReport) -> String {
    let c = m.camera;
    let row = CsvRow {
        pairs: m.pairs,
        failed_pairs: m.failed_pairs,
        ap_all: m.ap.all,
        ap_no_offset: m.ap.no_offset,
        ap_no_normal: m.ap.no_normal,
        ipaa_100: m.ipaa.ipaa_100,
        ipaa_90: m.ipaa.ipaa_90,
        ipaa_80: m.ipaa.ipaa_80,
        median_t: c.map(|c| c.median_t),
        mean_t: c.map(|c| c.mean_t),
        frac_t_le_1m: c.map(|c| c.frac_t_le_1m),
        median_r_deg: c.map(|c| c.median_r_deg),
        mean_r_deg: c.map(|c| c.mean_r_deg),
        frac_r_le_30deg: c.map(|c| c.frac_r_le_30deg),
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.serialize(row).expect("in-memory csv");
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}
