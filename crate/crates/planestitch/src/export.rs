//! Wavefront OBJ export of a reconstruction.
//!
//! Each plane becomes one quad: the corners of its mask bounding box in the
//! first view that has a mask, cast onto the plane and expressed in the
//! world frame. Planes are written in id order.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use planestitch_core::geometry::{backproject, world2cam};
use planestitch_core::merge::{MergedPlane, Reconstruction};
use planestitch_core::{CameraPose, Intrinsics};

use crate::error::FormatError;
use crate::pipeline::plane_id;

#[derive(Debug, Clone, PartialEq)]
pub struct ObjExport {
    pub text: String,
    /// Planes that were skipped, and why.
    pub warnings: Vec<String>,
}

fn quad(p: &MergedPlane, camera: &CameraPose, intrinsics: &[Intrinsics; 2]) -> Result<[[f64; 3]; 4], String> {
    let view = (0..2).find(|v| p.masks[*v].is_some()).ok_or("no mask")?;
    let mask = p.masks[view].as_ref().expect("checked");
    let bb = mask.bounding_box().ok_or("empty mask")?;
    let pose = if view == 0 { CameraPose::identity() } else { *camera };
    let local = world2cam(&p.plane, &pose).map_err(|e| e.to_string())?;
    // pixel-edge corners of the inclusive box
    let (u0, u1) = (bb.col_min as f64, bb.col_max as f64 + 1.0);
    let (v0, v1) = (bb.row_min as f64, bb.row_max as f64 + 1.0);
    let mut out = [[0.0; 3]; 4];
    for (k, px) in [(u0, v0), (u1, v0), (u1, v1), (u0, v1)].into_iter().enumerate() {
        let x = backproject(px, &local, &intrinsics[view]).map_err(|e| e.to_string())?;
        let w = pose.transform_point(&x);
        out[k] = [w.x, w.y, w.z];
    }
    Ok(out)
}

pub fn obj_text(recon: &Reconstruction, intrinsics: &[Intrinsics; 2]) -> ObjExport {
    let mut planes: Vec<(String, &MergedPlane)> = recon.planes().map(|p| (plane_id(&p.sources), p)).collect();
    planes.sort_by(|a, b| a.0.cmp(&b.0));
    let mut text = String::from("# planestitch reconstruction\n");
    let mut warnings = Vec::new();
    let mut vertices = 0usize;
    for (id, p) in planes {
        match quad(p, &recon.camera, intrinsics) {
            Ok(corners) => {
                let _ = writeln!(text, "o {id}");
                for c in corners {
                    let _ = writeln!(text, "v {} {} {}", c[0], c[1], c[2]);
                }
                let _ = writeln!(text, "f {} {} {} {}", vertices + 1, vertices + 2, vertices + 3, vertices + 4);
                vertices += 4;
            }
            Err(e) => warnings.push(format!("plane {id} skipped: {e}")),
        }
    }
    ObjExport { text, warnings }
}

/// Writes the OBJ file and returns the warnings of skipped planes.
pub fn export_obj(
    recon: &Reconstruction,
    intrinsics: &[Intrinsics; 2],
    path: &Path,
) -> Result<Vec<String>, FormatError> {
    let obj = obj_text(recon, intrinsics);
    fs::write(path, obj.text).map_err(|source| FormatError::Io { path: path.to_path_buf(), source })?;
    Ok(obj.warnings)
}
