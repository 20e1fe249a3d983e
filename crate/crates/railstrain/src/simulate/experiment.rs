//! Experiment plans: condition matrices, dataset files, and the manifest.
//!
//! The default baseline plan crosses 3 speeds x 4 train weights x 8 track
//! irregularity spectra into 96 conditions; the default damage plan crosses
//! 3 speeds x 3 sections x 6 components x 4 stiffness-reduction factors into
//! 216 conditions at nominal weight and irregularity. Passages repeat per
//! condition with fresh measurement noise; the roughness realization is fixed
//! per (spectrum, speed), like a physical track.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::signals::{format_num, Condition, CsvDatasetWriter, DamageSpec, Section};
use crate::signals::{ChannelMeta, Component};

use super::girder::{GirderSpec, SurrogateParams};
use super::train::TrainSpec;
use super::{add_noise, synthesize_passage, IrregularityPreset, PassageContext};

/// Labeled uniform scaling of the template train's axle weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightClass {
    pub label: String,
    pub factor: f64,
}

fn default_weight_classes() -> Vec<WeightClass> {
    [("w095", 0.95), ("w100", 1.00), ("w105", 1.05), ("w110", 1.10)]
        .into_iter()
        .map(|(label, factor)| WeightClass {
            label: label.to_string(),
            factor,
        })
        .collect()
}

/// Eight irregularity spectra: four "good track" levels and four markedly
/// rougher ones, the extremes labeled after the customary good/bad spectra.
pub fn default_irregularities() -> Vec<IrregularityPreset> {
    [
        ("uic-good", 0.20, 101),
        ("good-2", 0.23, 102),
        ("good-3", 0.27, 103),
        ("good-4", 0.31, 104),
        ("bad-5", 1.70, 105),
        ("bad-6", 1.95, 106),
        ("bad-7", 2.25, 107),
        ("uic-bad", 2.60, 108),
    ]
    .into_iter()
    .map(|(label, level, seed)| IrregularityPreset {
        label: label.to_string(),
        level,
        seed,
    })
    .collect()
}

fn default_speeds() -> Vec<f64> {
    vec![300.0, 330.0, 360.0]
}

fn default_deltas() -> Vec<f64> {
    vec![0.05, 0.10, 0.15, 0.20]
}

fn default_sections() -> Vec<Section> {
    Section::ALL.to_vec()
}

fn default_components() -> Vec<Component> {
    Component::ALL.to_vec()
}

fn default_noise_level() -> f64 {
    0.05
}

fn default_passages() -> usize {
    3
}

fn default_sample_rate() -> f64 {
    1000.0
}

fn default_entry_margin() -> f64 {
    6.5
}

fn default_seed() -> u64 {
    42
}

fn default_true() -> bool {
    true
}

fn default_damage_weight() -> String {
    "w100".to_string()
}

fn default_damage_irregularity() -> String {
    "good-2".to_string()
}

/// Damage condition grid: sections x components x stiffness reductions,
/// crossed with every plan speed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DamageGridPlan {
    #[serde(default = "default_sections")]
    pub sections: Vec<Section>,
    #[serde(default = "default_components")]
    pub components: Vec<Component>,
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
}

impl Default for DamageGridPlan {
    fn default() -> Self {
        DamageGridPlan {
            sections: default_sections(),
            components: default_components(),
            deltas: default_deltas(),
        }
    }
}

/// Full experiment description, loadable from TOML or JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentPlan {
    #[serde(default = "default_speeds")]
    pub speeds_kmh: Vec<f64>,
    #[serde(default = "default_weight_classes")]
    pub weight_classes: Vec<WeightClass>,
    #[serde(default = "default_irregularities")]
    pub irregularities: Vec<IrregularityPreset>,
    #[serde(default = "default_noise_level")]
    pub noise_level: f64,
    #[serde(default = "default_passages")]
    pub passages_per_condition: usize,
    /// Include the baseline condition matrix.
    #[serde(default = "default_true")]
    pub include_baseline: bool,
    /// Damage grid; absent means a baseline-only dataset.
    #[serde(default)]
    pub damage: Option<DamageGridPlan>,
    /// Weight class label used for damage conditions.
    #[serde(default = "default_damage_weight")]
    pub damage_weight_class: String,
    /// Irregularity label used for damage conditions.
    #[serde(default = "default_damage_irregularity")]
    pub damage_irregularity: String,
    #[serde(default = "default_sample_rate")]
    pub sample_rate: f64,
    /// Records are trimmed to the window where the head axle has advanced
    /// this far onto the span (and symmetrically at the exit), so every
    /// stored record starts well above the alignment trigger level.
    #[serde(default = "default_entry_margin")]
    pub entry_margin_m: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            speeds_kmh: default_speeds(),
            weight_classes: default_weight_classes(),
            irregularities: default_irregularities(),
            noise_level: default_noise_level(),
            passages_per_condition: default_passages(),
            include_baseline: true,
            damage: Some(DamageGridPlan::default()),
            damage_weight_class: default_damage_weight(),
            damage_irregularity: default_damage_irregularity(),
            sample_rate: default_sample_rate(),
            entry_margin_m: default_entry_margin(),
            seed: default_seed(),
        }
    }
}

/// One enumerated condition of the plan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionSpec {
    pub condition_id: String,
    pub kind: Condition,
    pub speed_kmh: f64,
    pub weight_class: String,
    pub weight_factor: f64,
    pub irregularity: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damage: Option<DamageSpec>,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.speeds_kmh.is_empty() || self.speeds_kmh.iter().any(|s| *s <= 0.0) {
            return Err(Error::Config("plan needs positive speeds".to_string()));
        }
        if self.weight_classes.is_empty() {
            return Err(Error::Config("plan needs at least one weight class".to_string()));
        }
        if self.irregularities.is_empty() {
            return Err(Error::Config("plan needs at least one irregularity preset".to_string()));
        }
        if self.noise_level < 0.0 {
            return Err(Error::Config("noise level must be nonnegative".to_string()));
        }
        if self.passages_per_condition == 0 {
            return Err(Error::Config("passages_per_condition must be positive".to_string()));
        }
        if self.damage.is_some() {
            if !self.weight_classes.iter().any(|w| w.label == self.damage_weight_class) {
                return Err(Error::Config(format!(
                    "damage_weight_class {:?} is not a plan weight class",
                    self.damage_weight_class
                )));
            }
            if !self.irregularities.iter().any(|i| i.label == self.damage_irregularity) {
                return Err(Error::Config(format!(
                    "damage_irregularity {:?} is not a plan irregularity",
                    self.damage_irregularity
                )));
            }
        }
        if let Some(d) = &self.damage {
            if d.sections.is_empty() || d.components.is_empty() || d.deltas.is_empty() {
                return Err(Error::Config("damage grid must not be empty".to_string()));
            }
            for delta in &d.deltas {
                if !(0.0..1.0).contains(delta) {
                    return Err(Error::Config(format!("damage delta {delta} outside [0, 1)")));
                }
            }
        }
        Ok(())
    }

    fn weight(&self, label: &str) -> &WeightClass {
        self.weight_classes
            .iter()
            .find(|w| w.label == label)
            .expect("validated weight label")
    }

    pub fn irregularity(&self, label: &str) -> Option<&IrregularityPreset> {
        self.irregularities.iter().find(|i| i.label == label)
    }

    /// Enumerate all conditions, baseline first, in a fixed order.
    pub fn conditions(&self) -> Vec<ConditionSpec> {
        let mut out = Vec::new();
        if self.include_baseline {
            for speed in &self.speeds_kmh {
                for w in &self.weight_classes {
                    for irr in &self.irregularities {
                        out.push(ConditionSpec {
                            condition_id: format!(
                                "b-s{}-{}-{}",
                                format_num(*speed),
                                w.label,
                                irr.label
                            ),
                            kind: Condition::Baseline,
                            speed_kmh: *speed,
                            weight_class: w.label.clone(),
                            weight_factor: w.factor,
                            irregularity: irr.label.clone(),
                            damage: None,
                        });
                    }
                }
            }
        }
        if let Some(grid) = &self.damage {
            let w = self.weight(&self.damage_weight_class);
            for speed in &self.speeds_kmh {
                for section in &grid.sections {
                    for component in &grid.components {
                        for delta in &grid.deltas {
                            let spec = DamageSpec {
                                section: *section,
                                component: *component,
                                delta: *delta,
                            };
                            out.push(ConditionSpec {
                                condition_id: format!(
                                    "d-s{}-{}-{}-d{:03}",
                                    format_num(*speed),
                                    section.label().replace('/', ""),
                                    component.id(),
                                    (delta * 100.0).round() as u32
                                ),
                                kind: Condition::Damaged,
                                speed_kmh: *speed,
                                weight_class: w.label.clone(),
                                weight_factor: w.factor,
                                irregularity: self.damage_irregularity.clone(),
                                damage: Some(spec),
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

/// One condition as recorded in the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestCondition {
    #[serde(flatten)]
    pub spec: ConditionSpec,
    pub passage_ids: Vec<String>,
}

/// Dataset manifest: counts, files, channels, conditions, and the exact plan
/// and surrogate parameters that produced them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub baseline_conditions: usize,
    pub damaged_conditions: usize,
    pub passages_per_condition: usize,
    pub baseline_file: Option<String>,
    pub damaged_file: Option<String>,
    pub span_m: f64,
    pub channels: Vec<ChannelMeta>,
    pub conditions: Vec<ManifestCondition>,
    pub plan: ExperimentPlan,
    pub surrogate: SurrogateParams,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let data = std::fs::read(path)?;
        serde_json::from_slice(&data)
            .map_err(|e| Error::parse(path.display().to_string(), None, format!("{e}")))
    }
}

/// Index window that keeps the head axle at least `margin` meters onto the
/// span and the last axle at least `margin` meters before the exit.
fn trim_window(train: &TrainSpec, span: f64, margin: f64, sample_rate: f64, n: usize) -> (usize, usize) {
    if margin <= 0.0 {
        return (0, n);
    }
    let v = train.speed_ms();
    let last_axle = train
        .axle_layout()
        .iter()
        .map(|(off, _)| *off)
        .fold(0.0_f64, f64::max);
    let start = ((margin / v) * sample_rate).ceil() as usize;
    let end = (((span - margin + last_axle) / v) * sample_rate).floor() as usize;
    (start.min(n), end.min(n).max(start.min(n)))
}

/// Generate the dataset files for a plan: `baseline.csv`, `damaged.csv`, and
/// `manifest.json` under `out_dir`. Byte-identical for identical inputs.
pub fn generate_experiment(
    plan: &ExperimentPlan,
    train_template: &TrainSpec,
    girder: &GirderSpec,
    out_dir: &Path,
) -> Result<Manifest> {
    plan.validate()?;
    girder.validate()?;
    std::fs::create_dir_all(out_dir)?;

    let conditions = plan.conditions();
    let has_baseline = conditions.iter().any(|c| c.kind == Condition::Baseline);
    let has_damage = conditions.iter().any(|c| c.kind == Condition::Damaged);

    let tmp_base = out_dir.join("baseline.csv.tmp");
    let tmp_dmg = out_dir.join("damaged.csv.tmp");
    let mut base_writer = if has_baseline {
        Some(CsvDatasetWriter::new(std::fs::File::create(&tmp_base)?)?)
    } else {
        None
    };
    let mut dmg_writer = if has_damage {
        Some(CsvDatasetWriter::new(std::fs::File::create(&tmp_dmg)?)?)
    } else {
        None
    };

    let mut manifest_conditions = Vec::with_capacity(conditions.len());
    for cond in &conditions {
        let train = train_template
            .clone()
            .with_speed(cond.speed_kmh)
            .scaled(cond.weight_factor);
        let preset = plan
            .irregularity(&cond.irregularity)
            .ok_or_else(|| Error::Config(format!("unknown irregularity {:?}", cond.irregularity)))?;
        let mut passage_ids = Vec::with_capacity(plan.passages_per_condition);
        for rep in 0..plan.passages_per_condition {
            let passage_id = format!("{}-r{rep}", cond.condition_id);
            let ctx = PassageContext {
                passage_id: passage_id.clone(),
                weight_class: cond.weight_class.clone(),
                fluctuation_seed: derive_seed(plan.seed, &[&passage_id, "fluct"]),
            };
            let records =
                synthesize_passage(&train, girder, cond.damage, preset, plan.sample_rate, &ctx)?;
            let writer = match cond.kind {
                Condition::Baseline => base_writer.as_mut().expect("baseline writer open"),
                Condition::Damaged => dmg_writer.as_mut().expect("damaged writer open"),
            };
            for rec in records {
                let (lo, hi) =
                    trim_window(&train, girder.span_m, plan.entry_margin_m, plan.sample_rate, rec.samples.len());
                let mut trimmed = rec;
                trimmed.samples = trimmed.samples[lo..hi].to_vec();
                trimmed.samples = add_noise(
                    &trimmed.samples,
                    plan.noise_level,
                    derive_seed(plan.seed, &[&passage_id, &trimmed.channel_id, "noise"]),
                );
                writer.write_record(&trimmed)?;
            }
            passage_ids.push(passage_id);
        }
        manifest_conditions.push(ManifestCondition {
            spec: cond.clone(),
            passage_ids,
        });
    }

    if let Some(w) = base_writer {
        w.finish()?;
        std::fs::rename(&tmp_base, out_dir.join("baseline.csv"))?;
    }
    if let Some(w) = dmg_writer {
        w.finish()?;
        std::fs::rename(&tmp_dmg, out_dir.join("damaged.csv"))?;
    }

    let manifest = Manifest {
        baseline_conditions: conditions.iter().filter(|c| c.kind == Condition::Baseline).count(),
        damaged_conditions: conditions.iter().filter(|c| c.kind == Condition::Damaged).count(),
        passages_per_condition: plan.passages_per_condition,
        baseline_file: has_baseline.then(|| "baseline.csv".to_string()),
        damaged_file: has_damage.then(|| "damaged.csv".to_string()),
        span_m: girder.span_m,
        channels: girder.channel_metas(),
        conditions: manifest_conditions,
        plan: plan.clone(),
        surrogate: girder.params.clone(),
    };
    let json = serde_json::to_vec_pretty(&manifest)?;
    crate::cli::write_atomic(&out_dir.join("manifest.json"), &json)?;
    Ok(manifest)
}
