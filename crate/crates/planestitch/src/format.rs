//! JSON interchange files and their validation.
//!
//! The `*File` types mirror the documents on disk. Converting one into its
//! in-memory form checks it and renormalises vectors that are within
//! [`NORM_TOLERANCE`] of unit norm (embeddings, normals, quaternions) or of
//! unit total (probabilities). Anything further off is rejected with the path
//! of the offending field. Values already normalised to rounding precision
//! are kept bit for bit, so a write/read cycle is exact.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use planestitch_core::binning::{CameraDistribution, PoseBins, NUM_BINS};
use planestitch_core::geometry::UNIT_TOLERANCE;
use planestitch_core::synth::SynthPair;
use planestitch_core::{CameraPose, Intrinsics, KeypointMatchSet, KeypointPair, MaskRle, Plane, PlaneDetection};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::FormatError;

pub const NORM_TOLERANCE: f64 = 1e-3;

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, FormatError> {
    let text = fs::read_to_string(path).map_err(|source| FormatError::Io { path: path.to_path_buf(), source })?;
    parse_json(&text, path)
}

/// Parses `text`; `origin` only labels errors.
pub fn parse_json<T: DeserializeOwned>(text: &str, origin: &Path) -> Result<T, FormatError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| FormatError::Schema {
        path: origin.to_path_buf(),
        field: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("file types always serialise");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| FormatError::Io { path: dir.to_path_buf(), source })?;
    }
    fs::write(path, to_json(value)).map_err(|source| FormatError::Io { path: path.to_path_buf(), source })
}

fn finite(values: &[f64], field: &str) -> Result<(), FormatError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(k) => Err(FormatError::invalid(format!("{field}[{k}]"), "value must be finite")),
        None => Ok(()),
    }
}

/// Rescales `v` to unit norm when it is within tolerance of it.
pub fn renormalize_unit(v: &[f64], field: &str) -> Result<Vec<f64>, FormatError> {
    finite(v, field)?;
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if v.is_empty() || (norm - 1.0).abs() > NORM_TOLERANCE {
        return Err(FormatError::normalization(field, format!("norm {norm} is not within {NORM_TOLERANCE} of 1")));
    }
    if (norm - 1.0).abs() <= UNIT_TOLERANCE {
        return Ok(v.to_vec());
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// Rescales a probability vector to total 1 when it is within tolerance.
pub fn renormalize_probabilities(p: &[f64], field: &str) -> Result<Vec<f64>, FormatError> {
    if p.len() != NUM_BINS {
        return Err(FormatError::invalid(field, format!("expected {NUM_BINS} probabilities, got {}", p.len())));
    }
    finite(p, field)?;
    if let Some(k) = p.iter().position(|x| *x < 0.0) {
        return Err(FormatError::invalid(format!("{field}[{k}]"), "probability must be non-negative"));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > NORM_TOLERANCE {
        return Err(FormatError::normalization(field, format!("sum {total} is not within {NORM_TOLERANCE} of 1")));
    }
    if (total - 1.0).abs() <= UNIT_TOLERANCE {
        return Ok(p.to_vec());
    }
    Ok(p.iter().map(|x| x / total).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntrinsicsDto {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl From<&Intrinsics> for IntrinsicsDto {
    fn from(k: &Intrinsics) -> Self {
        IntrinsicsDto { fx: k.fx, fy: k.fy, cx: k.cx, cy: k.cy, width: k.width, height: k.height }
    }
}

impl IntrinsicsDto {
    pub fn to_intrinsics(&self, field: &str) -> Result<Intrinsics, FormatError> {
        Intrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)
            .map_err(|e| FormatError::invalid(field, e))
    }
}

/// Row-major run lengths, starting with a background run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskDto {
    pub height: u32,
    pub width: u32,
    pub counts: Vec<u32>,
}

impl From<&MaskRle> for MaskDto {
    fn from(m: &MaskRle) -> Self {
        MaskDto { height: m.height(), width: m.width(), counts: m.counts().to_vec() }
    }
}

impl MaskDto {
    pub fn to_mask(&self, field: &str, image: Option<&Intrinsics>) -> Result<MaskRle, FormatError> {
        if let Some(k) = image {
            if (self.height, self.width) != (k.height, k.width) {
                return Err(FormatError::invalid(
                    field,
                    format!("mask is {}x{} but the image is {}x{}", self.height, self.width, k.height, k.width),
                ));
            }
        }
        MaskRle::new(self.height, self.width, self.counts.clone()).map_err(|e| FormatError::invalid(field, e))
    }
}

/// Masks of both views; errors name `{field}.masks[v]`.
pub fn masks_from_dto(masks: &[Option<MaskDto>; 2], field: &str) -> Result<[Option<MaskRle>; 2], FormatError> {
    let decode = |v: usize| masks[v].as_ref().map(|m| m.to_mask(&format!("{field}.masks[{v}]"), None)).transpose();
    Ok([decode(0)?, decode(1)?])
}

pub fn masks_to_dto(masks: &[Option<MaskRle>; 2]) -> [Option<MaskDto>; 2] {
    [masks[0].as_ref().map(MaskDto::from), masks[1].as_ref().map(MaskDto::from)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionDto {
    pub id: String,
    pub normal: [f64; 3],
    pub offset: f64,
    pub embedding: Vec<f64>,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<MaskDto>,
}

impl From<&PlaneDetection> for DetectionDto {
    fn from(d: &PlaneDetection) -> Self {
        let n = d.plane.normal();
        DetectionDto {
            id: d.id.clone(),
            normal: [n.x, n.y, n.z],
            offset: d.plane.offset(),
            embedding: d.embedding.clone(),
            score: d.score,
            mask: d.mask.as_ref().map(MaskDto::from),
        }
    }
}

/// Checks a plane given as unit normal and non-negative offset.
pub(crate) fn plane_from(normal: &[f64; 3], offset: f64, field: &str) -> Result<Plane, FormatError> {
    let n = renormalize_unit(normal, &format!("{field}.normal"))?;
    if !(offset.is_finite() && offset >= 0.0) {
        return Err(FormatError::invalid(format!("{field}.offset"), "offset must be finite and non-negative"));
    }
    Plane::new(Vector3::new(n[0], n[1], n[2]), offset).map_err(|e| FormatError::invalid(field, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewDto {
    pub image_id: String,
    pub intrinsics: IntrinsicsDto,
    pub planes: Vec<DetectionDto>,
}

/// Plane detections of both views of a pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionsFile {
    pub views: [ViewDto; 2],
}

/// A validated view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewInputs {
    pub image_id: String,
    pub intrinsics: Intrinsics,
    pub detections: Vec<PlaneDetection>,
}

impl DetectionsFile {
    pub fn from_views(views: [(&str, &Intrinsics, &[PlaneDetection]); 2]) -> Self {
        DetectionsFile {
            views: views.map(|(image_id, k, dets)| ViewDto {
                image_id: image_id.to_string(),
                intrinsics: k.into(),
                planes: dets.iter().map(DetectionDto::from).collect(),
            }),
        }
    }

    pub fn validate(&self) -> Result<[ViewInputs; 2], FormatError> {
        let mut dim = None;
        let mut out = Vec::with_capacity(2);
        for (v, view) in self.views.iter().enumerate() {
            let vf = format!("views[{v}]");
            let k = view.intrinsics.to_intrinsics(&format!("{vf}.intrinsics"))?;
            let mut seen = HashSet::new();
            let mut detections = Vec::with_capacity(view.planes.len());
            for (p, d) in view.planes.iter().enumerate() {
                let field = format!("{vf}.planes[{p}] ({})", d.id);
                if !seen.insert(d.id.as_str()) {
                    return Err(FormatError::invalid(format!("{field}.id"), "duplicate plane id in view"));
                }
                let embedding = renormalize_unit(&d.embedding, &format!("{field}.embedding"))?;
                match dim {
                    None => dim = Some(embedding.len()),
                    Some(n) if n != embedding.len() => {
                        return Err(FormatError::invalid(
                            format!("{field}.embedding"),
                            format!("dimension {} differs from {n} used elsewhere in the file", embedding.len()),
                        ))
                    }
                    Some(_) => {}
                }
                if !d.score.is_finite() {
                    return Err(FormatError::invalid(format!("{field}.score"), "score must be finite"));
                }
                let mask = d.mask.as_ref().map(|m| m.to_mask(&format!("{field}.mask"), Some(&k))).transpose()?;
                detections.push(PlaneDetection {
                    id: d.id.clone(),
                    plane: plane_from(&d.normal, d.offset, &field)?,
                    embedding,
                    score: d.score,
                    mask,
                });
            }
            out.push(ViewInputs { image_id: view.image_id.clone(), intrinsics: k, detections });
        }
        let second = out.pop().expect("two views");
        let first = out.pop().expect("two views");
        Ok([first, second])
    }
}

/// Translation centroids in metres and rotation centroids as `[w, x, y, z]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinFile {
    pub translation_bins: Vec<[f64; 3]>,
    pub rotation_bins: Vec<[f64; 4]>,
}

impl From<&PoseBins> for BinFile {
    fn from(b: &PoseBins) -> Self {
        BinFile {
            translation_bins: b.translations().iter().map(|t| [t.x, t.y, t.z]).collect(),
            rotation_bins: b.rotations().iter().map(quaternion_array).collect(),
        }
    }
}

fn quaternion_array(q: &UnitQuaternion<f64>) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

fn quaternion_from(q: &[f64; 4], field: &str) -> Result<UnitQuaternion<f64>, FormatError> {
    let q = renormalize_unit(q, field)?;
    Ok(UnitQuaternion::new_unchecked(Quaternion::new(q[0], q[1], q[2], q[3])))
}

impl BinFile {
    pub fn to_bins(&self) -> Result<PoseBins, FormatError> {
        let mut translations = Vec::with_capacity(self.translation_bins.len());
        for (k, t) in self.translation_bins.iter().enumerate() {
            finite(t, &format!("translation_bins[{k}]"))?;
            translations.push(Vector3::new(t[0], t[1], t[2]));
        }
        let rotations = self
            .rotation_bins
            .iter()
            .enumerate()
            .map(|(k, q)| quaternion_from(q, &format!("rotation_bins[{k}]")))
            .collect::<Result<Vec<_>, _>>()?;
        PoseBins::new(translations, rotations).map_err(|e| FormatError::invalid("bins", e))
    }
}

/// Bins either inline or as a path relative to the camera file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BinsRef {
    Inline(BinFile),
    Path(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraFile {
    pub bins: BinsRef,
    pub p_trans: Vec<f64>,
    pub p_rot: Vec<f64>,
}

impl CameraFile {
    pub fn inline(dist: &CameraDistribution) -> Self {
        CameraFile {
            bins: BinsRef::Inline(dist.bins().into()),
            p_trans: dist.p_trans().to_vec(),
            p_rot: dist.p_rot().to_vec(),
        }
    }

    /// Resolves referenced bins against `base_dir` and validates.
    pub fn to_distribution(&self, base_dir: &Path) -> Result<CameraDistribution, FormatError> {
        let bins = match &self.bins {
            BinsRef::Inline(b) => b.to_bins()?,
            BinsRef::Path(p) => read_json::<BinFile>(&base_dir.join(p))?.to_bins()?,
        };
        let p_trans = renormalize_probabilities(&self.p_trans, "p_trans")?;
        let p_rot = renormalize_probabilities(&self.p_rot, "p_rot")?;
        CameraDistribution::new(bins, p_trans, p_rot).map_err(|e| FormatError::invalid("camera", e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeypointPairDto {
    pub i: usize,
    pub j: usize,
    /// `[u1, v1, u2, v2]` pixel pairs.
    pub points: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeypointFile {
    pub pairs: Vec<KeypointPairDto>,
}

impl From<&KeypointMatchSet> for KeypointFile {
    fn from(k: &KeypointMatchSet) -> Self {
        KeypointFile {
            pairs: k.pairs.iter().map(|p| KeypointPairDto { i: p.i, j: p.j, points: p.points.clone() }).collect(),
        }
    }
}

impl KeypointFile {
    /// Checks plane indices against the views and pixels against the image
    /// bounds.
    pub fn validate(&self, views: &[ViewInputs; 2]) -> Result<KeypointMatchSet, FormatError> {
        let mut pairs = Vec::with_capacity(self.pairs.len());
        for (k, p) in self.pairs.iter().enumerate() {
            let field = format!("pairs[{k}]");
            if p.i >= views[0].detections.len() {
                return Err(FormatError::invalid(format!("{field}.i"), format!("no view-1 plane {}", p.i)));
            }
            if p.j >= views[1].detections.len() {
                return Err(FormatError::invalid(format!("{field}.j"), format!("no view-2 plane {}", p.j)));
            }
            for (q, pt) in p.points.iter().enumerate() {
                let pf = format!("{field}.points[{q}]");
                finite(pt, &pf)?;
                if !views[0].intrinsics.contains(pt[0], pt[1]) || !views[1].intrinsics.contains(pt[2], pt[3]) {
                    return Err(FormatError::invalid(pf, "pixel outside the image"));
                }
            }
            pairs.push(KeypointPair { i: p.i, j: p.j, points: p.points.clone() });
        }
        Ok(KeypointMatchSet { pairs })
    }
}

/// A rigid pose: rotation `[w, x, y, z]` and translation in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseDto {
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
}

impl From<&CameraPose> for PoseDto {
    fn from(p: &CameraPose) -> Self {
        let t = p.translation();
        PoseDto { rotation: quaternion_array(&p.rotation()), translation: [t.x, t.y, t.z] }
    }
}

impl PoseDto {
    pub fn to_pose(&self, field: &str) -> Result<CameraPose, FormatError> {
        let q = quaternion_from(&self.rotation, &format!("{field}.rotation"))?;
        finite(&self.translation, &format!("{field}.translation"))?;
        Ok(CameraPose::new(q, Vector3::from(self.translation)))
    }
}

/// A ground-truth world-frame plane with its masks in each view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GtPlaneDto {
    pub id: String,
    pub normal: [f64; 3],
    pub offset: f64,
    pub masks: [Option<MaskDto>; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GtFile {
    pub camera: PoseDto,
    /// Plane counts of the two views.
    pub m: usize,
    pub n: usize,
    pub correspondence: Vec<[usize; 2]>,
    pub planes: Vec<GtPlaneDto>,
}

impl GtFile {
    /// Ground truth of a synthetic pair. Every world plane seen by either
    /// view is listed once, with the masks of the detections it produced.
    pub fn from_synth(pair: &SynthPair) -> Self {
        let mut planes = Vec::new();
        for (w, plane) in pair.gt_world_planes.iter().enumerate() {
            let mut masks = [None, None];
            let mut id = None;
            for (view, (dets, source)) in
                [(&pair.dets1, &pair.source1), (&pair.dets2, &pair.source2)].iter().enumerate()
            {
                if let Some(k) = source.iter().position(|s| *s == w) {
                    masks[view] = dets[k].mask.clone();
                    id.get_or_insert_with(|| dets[k].id.clone());
                }
            }
            let Some(id) = id else { continue };
            let n = plane.normal();
            planes.push(GtPlaneDto {
                id,
                normal: [n.x, n.y, n.z],
                offset: plane.offset(),
                masks: masks_to_dto(&masks),
            });
        }
        GtFile {
            camera: (&pair.gt_camera).into(),
            m: pair.dets1.len(),
            n: pair.dets2.len(),
            correspondence: pair.gt_correspondence.matches.iter().map(|m| [m.i, m.j]).collect(),
            planes,
        }
    }
}

/// Validated ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub camera: CameraPose,
    pub m: usize,
    pub n: usize,
    pub correspondence: Vec<(usize, usize)>,
    pub planes: Vec<(String, Plane, [Option<MaskRle>; 2])>,
}

impl GtFile {
    pub fn validate(&self) -> Result<GroundTruth, FormatError> {
        let camera = self.camera.to_pose("camera")?;
        for (k, [i, j]) in self.correspondence.iter().enumerate() {
            if *i >= self.m || *j >= self.n {
                return Err(FormatError::invalid(format!("correspondence[{k}]"), "index out of range"));
            }
        }
        let mut planes = Vec::with_capacity(self.planes.len());
        for (k, p) in self.planes.iter().enumerate() {
            let field = format!("planes[{k}] ({})", p.id);
            let plane = plane_from(&p.normal, p.offset, &field)?;
            let masks = masks_from_dto(&p.masks, &field)?;
            planes.push((p.id.clone(), plane, masks));
        }
        Ok(GroundTruth {
            camera,
            m: self.m,
            n: self.n,
            correspondence: self.correspondence.iter().map(|[i, j]| (*i, *j)).collect(),
            planes,
        })
    }
}

/// File names of one pair directory.
pub const DETECTIONS_FILE: &str = "detections.json";
pub const CAMERA_FILE: &str = "camera.json";
pub const KEYPOINTS_FILE: &str = "keypoints.json";
pub const GT_FILE: &str = "gt.json";
pub const REPORT_FILE: &str = "report.json";

/// All validated inputs of one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairData {
    pub views: [ViewInputs; 2],
    pub distribution: CameraDistribution,
    pub keypoints: KeypointMatchSet,
}

/// Loads `detections.json`, `camera.json` and, when present,
/// `keypoints.json` from a pair directory.
pub fn load_pair(dir: &Path) -> Result<PairData, FormatError> {
    let views = read_json::<DetectionsFile>(&dir.join(DETECTIONS_FILE))?.validate()?;
    let distribution = read_json::<CameraFile>(&dir.join(CAMERA_FILE))?.to_distribution(dir)?;
    let kp_path = dir.join(KEYPOINTS_FILE);
    let keypoints = if kp_path.exists() {
        read_json::<KeypointFile>(&kp_path)?.validate(&views)?
    } else {
        KeypointMatchSet::default()
    };
    Ok(PairData { views, distribution, keypoints })
}

/// Subdirectories of `dir` in name order.
pub fn pair_dirs(dir: &Path) -> Result<Vec<PathBuf>, FormatError> {
    let io = |source| FormatError::Io { path: dir.to_path_buf(), source };
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.is_dir() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
