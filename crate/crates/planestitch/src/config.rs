//! The pipeline configuration file.
//!
//! Every field is optional in the file; missing fields take the defaults,
//! which are also shipped as `config/default.json`.

use std::path::Path;

use planestitch_core::stitch::StitchConfig;
use planestitch_core::synth::SynthConfig;
use planestitch_core::{Intrinsics, MatchConfig, RefineConfig};
use serde::{Deserialize, Serialize};

use crate::error::FormatError;
use crate::format::{read_json, IntrinsicsDto};

/// The shipped defaults, byte for byte.
pub const DEFAULT_CONFIG_JSON: &str = include_str!("../../../config/default.json");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchingSettings {
    pub match_threshold: f64,
    pub lambda_e: f64,
    pub lambda_n: f64,
    pub lambda_o: f64,
    pub o_clamp: f64,
    pub lambda_n_matches: f64,
    pub lambda_h: f64,
    pub lambda_t: f64,
    pub lambda_r: f64,
}

impl Default for MatchingSettings {
    fn default() -> Self {
        MatchingSettings::from(&MatchConfig::default())
    }
}

impl From<&MatchConfig> for MatchingSettings {
    fn from(c: &MatchConfig) -> Self {
        MatchingSettings {
            match_threshold: c.match_threshold,
            lambda_e: c.lambda_e,
            lambda_n: c.lambda_n,
            lambda_o: c.lambda_o,
            o_clamp: c.o_clamp,
            lambda_n_matches: c.lambda_n_matches,
            lambda_h: c.lambda_h,
            lambda_t: c.lambda_t,
            lambda_r: c.lambda_r,
        }
    }
}

impl MatchingSettings {
    pub fn to_core(&self) -> MatchConfig {
        MatchConfig {
            lambda_e: self.lambda_e,
            lambda_n: self.lambda_n,
            lambda_o: self.lambda_o,
            o_clamp: self.o_clamp,
            match_threshold: self.match_threshold,
            lambda_h: self.lambda_h,
            lambda_t: self.lambda_t,
            lambda_r: self.lambda_r,
            lambda_n_matches: self.lambda_n_matches,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineSettings {
    pub w_plane: f64,
    pub w_pixel: f64,
    pub w_cam: f64,
    pub w_prior: f64,
    pub ftol: f64,
    pub xtol: f64,
    pub gtol: f64,
    pub max_iterations: usize,
    pub ransac_threshold: f64,
    pub ransac_iterations: usize,
    pub ransac_min_matches: usize,
    pub ransac_seed: u64,
}

impl Default for RefineSettings {
    fn default() -> Self {
        RefineSettings::from(&RefineConfig::default())
    }
}

impl From<&RefineConfig> for RefineSettings {
    fn from(c: &RefineConfig) -> Self {
        RefineSettings {
            w_plane: c.w_plane,
            w_pixel: c.w_pixel,
            w_cam: c.w_cam,
            w_prior: c.w_prior,
            ftol: c.ftol,
            xtol: c.xtol,
            gtol: c.gtol,
            max_iterations: c.max_iterations,
            ransac_threshold: c.ransac_threshold,
            ransac_iterations: c.ransac_iterations,
            ransac_min_matches: c.ransac_min_matches,
            ransac_seed: c.ransac_seed,
        }
    }
}

impl RefineSettings {
    pub fn to_core(&self) -> RefineConfig {
        RefineConfig {
            w_plane: self.w_plane,
            w_pixel: self.w_pixel,
            w_cam: self.w_cam,
            w_prior: self.w_prior,
            ftol: self.ftol,
            xtol: self.xtol,
            gtol: self.gtol,
            max_iterations: self.max_iterations,
            ransac_threshold: self.ransac_threshold,
            ransac_iterations: self.ransac_iterations,
            ransac_min_matches: self.ransac_min_matches,
            ransac_seed: self.ransac_seed,
        }
    }
}

/// Parameters of the synthetic generator; the seed comes from the command
/// line and the intrinsics from the top-level config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub n_shared: usize,
    pub n_unique_per_view: usize,
    pub max_rotation_deg: f64,
    pub max_translation: f64,
    pub sigma_normal_deg: f64,
    pub sigma_offset: f64,
    pub sigma_embedding: f64,
    pub sigma_pixel: f64,
    pub distribution_temperature: f64,
    pub embedding_dim: usize,
    pub keypoints_per_plane: usize,
}

impl Default for SynthSettings {
    fn default() -> Self {
        let c = SynthConfig::default();
        SynthSettings {
            n_shared: c.n_shared,
            n_unique_per_view: c.n_unique_per_view,
            max_rotation_deg: c.max_rotation_deg,
            max_translation: c.max_translation,
            sigma_normal_deg: c.sigma_normal_deg,
            sigma_offset: c.sigma_offset,
            sigma_embedding: c.sigma_embedding,
            sigma_pixel: c.sigma_pixel,
            distribution_temperature: c.distribution_temperature,
            embedding_dim: c.embedding_dim,
            keypoints_per_plane: c.keypoints_per_plane,
        }
    }
}

impl SynthSettings {
    pub fn to_core(&self, intrinsics: Intrinsics, seed: u64) -> SynthConfig {
        SynthConfig {
            n_shared: self.n_shared,
            n_unique_per_view: self.n_unique_per_view,
            max_rotation_deg: self.max_rotation_deg,
            max_translation: self.max_translation,
            sigma_normal_deg: self.sigma_normal_deg,
            sigma_offset: self.sigma_offset,
            sigma_embedding: self.sigma_embedding,
            sigma_pixel: self.sigma_pixel,
            distribution_temperature: self.distribution_temperature,
            embedding_dim: self.embedding_dim,
            keypoints_per_plane: self.keypoints_per_plane,
            intrinsics,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub matching: MatchingSettings,
    pub refine: RefineSettings,
    /// Stops after the discrete search and merges with the bin pose.
    pub skip_continuous: bool,
    /// Intrinsics used by the synthetic generator.
    pub intrinsics: IntrinsicsDto,
    pub synth: SynthSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            matching: MatchingSettings::default(),
            refine: RefineSettings::default(),
            skip_continuous: false,
            intrinsics: (&Intrinsics::default()).into(),
            synth: SynthSettings::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, FormatError> {
        let cfg: PipelineConfig = read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), FormatError> {
        self.matching.to_core().validate().map_err(|e| FormatError::invalid("matching", e))?;
        self.refine.to_core().validate().map_err(|e| FormatError::invalid("refine", e))?;
        let k = self.intrinsics.to_intrinsics("intrinsics")?;
        self.synth.to_core(k, 0).validate().map_err(|e| FormatError::invalid("synth", e))?;
        Ok(())
    }

    pub fn stitch_config(&self) -> StitchConfig {
        StitchConfig {
            matching: self.matching.to_core(),
            refine: self.refine.to_core(),
            skip_continuous: self.skip_continuous,
        }
    }

    pub fn synth_config(&self, seed: u64) -> Result<SynthConfig, FormatError> {
        Ok(self.synth.to_core(self.intrinsics.to_intrinsics("intrinsics")?, seed))
    }
}
