use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::RecNorm;
use crate::sampler::ModulationMode;

/// Which experiment a configuration is for; selects the defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Collapse,
    FlowRecover,
    SilhouetteFit,
    Fid,
    Gradcheck,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Collapse => "collapse",
            Experiment::FlowRecover => "flow-recover",
            Experiment::SilhouetteFit => "silhouette-fit",
            Experiment::Fid => "fid",
            Experiment::Gradcheck => "gradcheck",
        }
    }
}

/// Loss weights. Not every experiment uses every term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub iou: f64,
    pub deform: f64,
    pub lap: f64,
    pub flat: f64,
    pub rec: f64,
    pub align: f64,
    pub part: f64,
    pub prob: f64,
    /// Pull of the variance map towards 1.
    pub var_reg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            iou: 1.0,
            deform: 0.01,
            lap: 1.0,
            flat: 0.001,
            rec: 1.0,
            align: 0.0,
            part: 0.0,
            prob: 0.0,
            var_reg: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollapseParams {
    /// Variance grows linearly from 1 to `1 + var_ramp` across the columns.
    pub var_ramp: f64,
    /// Added source intensity per column step; 0 gives the uniform image.
    pub source_slope: f64,
    pub source_level: f64,
}

impl Default for CollapseParams {
    fn default() -> Self {
        Self {
            var_ramp: 1.0,
            source_slope: 0.0,
            source_level: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowParams {
    /// Ground-truth translation in pixels `(x, y)`.
    pub displacement: [f64; 2],
    /// Amplitude in pixels of the smooth wobble added to the translation.
    pub wobble: f64,
    pub landmarks: usize,
    /// Amplitude in pixels of the smooth error in the pseudo-labels.
    pub pseudo_label_error: f64,
    /// Step length the variance objective assumes for one flow update.
    pub probe_step: f64,
    pub init_from_truth: bool,
    pub log_every: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            displacement: [3.0, -2.0],
            wobble: 0.5,
            landmarks: 12,
            pseudo_label_error: 0.5,
            probe_step: 0.02,
            init_from_truth: false,
            log_every: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeParams {
    pub template_level: u32,
    pub target_level: u32,
    pub target_axes: [f64; 3],
    pub camera_scale: f64,
    /// `(azimuth, elevation)` in radians for each fitting view.
    pub views: Vec<[f64; 2]>,
    pub iou_threshold: f64,
    /// Random views rendered for the FID report; 0 skips it.
    pub fid_views: usize,
    pub fid_grid: usize,
    pub log_every: usize,
}

impl Default for ShapeParams {
    fn default() -> Self {
        use std::f64::consts::PI;
        Self {
            template_level: 2,
            target_level: 3,
            target_axes: [1.0, 0.7, 0.7],
            camera_scale: 0.65,
            views: vec![[0.0, 0.3], [0.5 * PI, 0.3], [PI, -0.3], [1.5 * PI, -0.3]],
            iou_threshold: 0.5,
            fid_views: 8,
            fid_grid: 4,
            log_every: 50,
        }
    }
}

/// Everything an experiment run depends on. Serialized field names are the
/// keys accepted in a JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub mode: ModulationMode,
    pub image_height: usize,
    pub image_width: usize,
    pub flow_height: usize,
    pub flow_width: usize,
    pub iterations: usize,
    pub lr_flow: f64,
    pub lr_var: f64,
    pub lr_shape: f64,
    pub sigma: f64,
    pub var_lo: f64,
    pub var_hi: f64,
    pub rec_norm: RecNorm,
    pub weights: LossWeights,
    pub collapse: CollapseParams,
    pub flow: FlowParams,
    pub shape: ShapeParams,
}

impl ExperimentConfig {
    pub fn defaults(experiment: Experiment) -> Self {
        let base = Self {
            seed: 0,
            mode: ModulationMode::GradientOnly,
            image_height: 48,
            image_width: 48,
            flow_height: 40,
            flow_width: 40,
            iterations: 300,
            lr_flow: 0.005,
            lr_var: 0.05,
            lr_shape: 0.01,
            sigma: 5e-4,
            var_lo: crate::optim::DEFAULT_VAR_LO,
            var_hi: crate::optim::DEFAULT_VAR_HI,
            rec_norm: RecNorm::L1,
            weights: LossWeights::default(),
            collapse: CollapseParams::default(),
            flow: FlowParams::default(),
            shape: ShapeParams::default(),
        };
        match experiment {
            Experiment::Collapse => Self {
                image_height: 8,
                image_width: 8,
                flow_height: 7,
                flow_width: 7,
                iterations: 1,
                ..base
            },
            Experiment::SilhouetteFit => Self {
                image_height: 64,
                image_width: 64,
                iterations: 2000,
                ..base
            },
            Experiment::Gradcheck => Self { iterations: 10, ..base },
            _ => base,
        }
    }

    /// Defaults for `experiment` overlaid with the keys present in `overrides`.
    pub fn from_json(experiment: Experiment, overrides: &Value) -> Result<Self> {
        let mut merged = serde_json::to_value(Self::defaults(experiment)).expect("config serializes");
        if !overrides.is_object() {
            return Err(Error::Config("config file must hold a JSON object".into()));
        }
        overlay(&mut merged, overrides);
        let cfg: Self = serde_json::from_value(merged).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(experiment: Experiment, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(experiment, &value)
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("image_height", self.image_height),
            ("image_width", self.image_width),
            ("flow_height", self.flow_height),
            ("flow_width", self.flow_width),
        ];
        for (name, v) in sizes {
            if v < 2 {
                return Err(Error::Config(format!("{name} must be at least 2, got {v}")));
            }
        }
        let rates = [
            ("lr_flow", self.lr_flow),
            ("lr_var", self.lr_var),
            ("lr_shape", self.lr_shape),
            ("sigma", self.sigma),
        ];
        for (name, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.var_lo > 0.0 && self.var_hi > self.var_lo && self.var_lo < 1.0 && self.var_hi > 1.0) {
            return Err(Error::Config(format!(
                "variance bounds must satisfy 0 < lo < 1 < hi, got [{}, {}]",
                self.var_lo, self.var_hi
            )));
        }
        let w = &self.weights;
        let weights = [
            ("iou", w.iou),
            ("deform", w.deform),
            ("lap", w.lap),
            ("flat", w.flat),
            ("rec", w.rec),
            ("align", w.align),
            ("part", w.part),
            ("prob", w.prob),
            ("var_reg", w.var_reg),
        ];
        for (name, v) in weights {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("weight {name} must be non-negative, got {v}")));
            }
        }
        if self.shape.views.is_empty() {
            return Err(Error::Config("at least one fitting view is required".into()));
        }
        if self.shape.fid_grid == 0 {
            return Err(Error::Config("fid_grid must be at least 1".into()));
        }
        Ok(())
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        hex::encode(&digest[..8])
    }
}

fn overlay(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => overlay(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn overlay_keeps_unmentioned_fields() {
        let cfg = ExperimentConfig::from_json(
            Experiment::FlowRecover,
            &json!({"seed": 7, "weights": {"align": 0.5}, "flow": {"landmarks": 3}}),
        )
        .unwrap();
        let d = ExperimentConfig::defaults(Experiment::FlowRecover);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.weights.align, 0.5);
        assert_eq!(cfg.weights.lap, d.weights.lap);
        assert_eq!(cfg.flow.landmarks, 3);
        assert_eq!(cfg.flow.displacement, d.flow.displacement);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(
            ExperimentConfig::from_json(Experiment::Collapse, &json!({"sede": 1})),
            Err(Error::Config(_))
        ));
        assert!(ExperimentConfig::from_json(Experiment::Collapse, &json!({"image_width": 1})).is_err());
        assert!(ExperimentConfig::from_json(Experiment::Collapse, &json!({"weights": {"lap": -1.0}})).is_err());
        assert!(ExperimentConfig::from_json(Experiment::Collapse, &json!([1, 2])).is_err());
        assert!(ExperimentConfig::from_json(Experiment::Collapse, &json!({"mode": "sideways"})).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::defaults(Experiment::Collapse);
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
