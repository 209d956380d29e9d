//! Detector model: configuration, graph construction, execution, weight
//! storage, and cost analysis.

pub mod build;
pub mod flops;
pub mod graph;
pub mod weights;

pub use build::{
    build_backbone, build_baseline_graph, build_detector_graph, build_neck_head, run_detector,
    shuffle_unit_v1, shuffle_unit_v2, DetectorGraph,
};
pub use flops::{count_costs, prefix_totals, CostReport, CostTotals, LayerCost};
pub use graph::{weighted_fusion, BnNames, Graph, LayerRecord, OpKind};
pub use weights::{init_weights, validate_store, WeightStore};

use crate::error::{Error, Result};
use crate::postprocess::AnchorSet;

/// Which backbone unit family to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitStyle {
    /// Channel split, half-path convolutions, concat, two-group shuffle.
    V2Split,
    /// Grouped pointwise convolutions with shuffles and residual or
    /// pool-concat shortcuts.
    V1Grouped,
}

/// Everything needed to construct the detector graph.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    /// Letterboxed network input extents (height, width).
    pub input_size: (usize, usize),
    pub class_count: usize,
    pub class_names: Vec<String>,
    /// Stem width followed by the three stage widths.
    pub stage_channels: Vec<usize>,
    /// Units per stage; the first unit of each stage downsamples.
    pub stage_repeats: Vec<usize>,
    pub unit_style: UnitStyle,
    /// Group count for the grouped-pointwise unit style.
    pub group_count: usize,
    /// Append a spatial pyramid after the last stage.
    pub sppf_enabled: bool,
    pub anchors: AnchorSet,
    pub fusion_epsilon: f32,
    /// Channel width of all neck features.
    pub neck_width: usize,
    pub bn_epsilon: f32,
}

/// Class names for the six-category hot-rolled strip surface set.
const NEU_CLASSES: [&str; 6] = [
    "rolled_in_scale",
    "patches",
    "crazing",
    "inclusion",
    "pitted_surface",
    "scratches",
];

/// Class names for the ten-category strip surface set.
const GC10_CLASSES: [&str; 10] = [
    "punching",
    "weld_line",
    "crescent_gap",
    "water_spot",
    "oil_spot",
    "silk_spot",
    "inclusion",
    "rolled_pit",
    "crease",
    "waist_folding",
];

/// Default names for a class count: the six- and ten-class surface-defect
/// sets get their canonical names, anything else is enumerated.
pub fn default_class_names(class_count: usize) -> Vec<String> {
    match class_count {
        6 => NEU_CLASSES.iter().map(|s| s.to_string()).collect(),
        10 => GC10_CLASSES.iter().map(|s| s.to_string()).collect(),
        n => (0..n).map(|i| format!("class_{i}")).collect(),
    }
}

impl ModelConfig {
    /// Standard configuration for a given number of defect classes.
    pub fn for_classes(class_count: usize) -> Self {
        ModelConfig {
            input_size: (640, 640),
            class_count,
            class_names: default_class_names(class_count),
            stage_channels: vec![24, 116, 232, 464],
            stage_repeats: vec![4, 8, 4],
            unit_style: UnitStyle::V2Split,
            group_count: 2,
            sppf_enabled: false,
            anchors: AnchorSet::default(),
            fusion_epsilon: 1e-4,
            neck_width: 128,
            bn_epsilon: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count == 0 {
            return Err(Error::Param("class count must be positive".into()));
        }
        if self.class_names.len() != self.class_count {
            return Err(Error::Param(format!(
                "{} class names for {} classes",
                self.class_names.len(),
                self.class_count
            )));
        }
        if self.stage_channels.len() != self.stage_repeats.len() + 1 {
            return Err(Error::Param(format!(
                "{} stage widths need {} repeat counts, got {}",
                self.stage_channels.len(),
                self.stage_channels.len() - 1,
                self.stage_repeats.len()
            )));
        }
        if self.stage_repeats.len() != 3 {
            return Err(Error::Param(format!(
                "the pyramid expects exactly 3 stages, got {}",
                self.stage_repeats.len()
            )));
        }
        if self.stage_repeats.iter().any(|&r| r == 0) {
            return Err(Error::Param("every stage needs at least one unit".into()));
        }
        if self.stage_channels.iter().any(|&c| c == 0 || c % 2 != 0) {
            return Err(Error::Param(format!(
                "stage widths must be positive and even, got {:?}",
                self.stage_channels
            )));
        }
        if self.group_count == 0 {
            return Err(Error::Param("group count must be positive".into()));
        }
        if self.neck_width == 0 || self.neck_width % 2 != 0 {
            return Err(Error::Param(format!(
                "neck width must be positive and even, got {}",
                self.neck_width
            )));
        }
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return Err(Error::Param(format!(
                "input size must be a positive multiple of 32, got {h}x{w}"
            )));
        }
        if !(self.fusion_epsilon > 0.0) || !(self.bn_epsilon > 0.0) {
            return Err(Error::Param("epsilons must be positive".into()));
        }
        self.anchors.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_have_canonical_names() {
        let six = ModelConfig::for_classes(6);
        assert_eq!(six.class_names[0], "rolled_in_scale");
        assert_eq!(six.class_names[5], "scratches");
        six.validate().unwrap();

        let ten = ModelConfig::for_classes(10);
        assert_eq!(ten.class_names[1], "weld_line");
        assert_eq!(ten.class_names[9], "waist_folding");
        ten.validate().unwrap();

        let other = ModelConfig::for_classes(3);
        assert_eq!(other.class_names, vec!["class_0", "class_1", "class_2"]);
        other.validate().unwrap();
    }

    #[test]
    fn validation_rejects_inconsistent_configs() {
        let mut cfg = ModelConfig::for_classes(6);
        cfg.class_names.pop();
        assert!(cfg.validate().is_err());

        let mut cfg = ModelConfig::for_classes(6);
        cfg.stage_repeats = vec![4, 8];
        assert!(cfg.validate().is_err());

        let mut cfg = ModelConfig::for_classes(6);
        cfg.input_size = (600, 640);
        assert!(cfg.validate().is_err());

        let mut cfg = ModelConfig::for_classes(6);
        cfg.stage_channels = vec![24, 116, 233, 464];
        assert!(cfg.validate().is_err());

        assert!(ModelConfig::for_classes(0).validate().is_err());
    }
}
