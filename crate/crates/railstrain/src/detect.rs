//! Fit ratios, the damage feature, and confidence-boundary outlier analysis.
//!
//! The fit ratio of a passage is the normalized distance between the AR
//! target and its one-step reconstruction. The damage feature compares a test
//! passage's fit ratio against the baseline reference, in percent. Baseline
//! damage features from a held-out validation split are fit with a Gaussian;
//! its quantile at `1 - alpha` is the confidence boundary, and any feature at
//! or above it is an outlier. Baselines are keyed by channel and speed bin:
//! the learned waveform stretches with train speed, so models never pool
//! speeds.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;


use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::ar::{self, ArModel};
use crate::error::{Error, Result};
use crate::pca::{self, PcaBasis, PcaBasisBundle};
use crate::seed::derive_seed;
use crate::signals::{
    align_record, align_to_matrix, common_target_n, AlignMethod, ChannelMeta, Condition,
    DamageSpec, PassageRecord, Section, SpeedBinRule,
};

/// Euclidean-norm fit ratio between a measured vector and its reconstruction.
pub fn fit_ratio(measured: &[f64], reconstructed: &[f64]) -> Result<f64> {
    if measured.len() != reconstructed.len() {
        return Err(Error::Dimension(format!(
            "fit_ratio lengths differ: {} vs {}",
            measured.len(),
            reconstructed.len()
        )));
    }
    let norm: f64 = measured.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::invalid("fit_ratio: measured signal has zero norm".to_string()));
    }
    let diff: f64 = measured
        .iter()
        .zip(reconstructed)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(diff / norm)
}

/// Damage feature in percent: `|fr2 - fr1_ref| / fr2 * 100`.
pub fn damage_feature(fr2: f64, fr1_ref: f64) -> Result<f64> {
    if fr2 <= 0.0 {
        return Err(Error::invalid(format!("damage_feature needs fr2 > 0, got {fr2}")));
    }
    Ok((fr2 - fr1_ref).abs() / fr2 * 100.0)
}

/// Inverse of the Gaussian CDF with parameters `(mu, sigma)` at probability `p`.
///
/// Wichura's PPND16 rational approximations, accurate to well below 1e-10
/// relative over the open unit interval.
pub fn gaussian_quantile(p: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("quantile probability must lie in (0,1), got {p}")));
    }
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("quantile sigma must be positive, got {sigma}")));
    }
    Ok(mu + sigma * standard_normal_quantile(p))
}

fn standard_normal_quantile(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.387_132_872_796_366_608_0,
        1.331_416_678_917_843_774_5e2,
        1.971_590_950_306_551_442_7e3,
        1.373_169_376_550_946_112_5e4,
        4.592_195_393_154_987_145_7e4,
        6.726_577_092_700_870_085_3e4,
        3.343_057_558_358_812_810_5e4,
        2.509_080_928_730_122_672_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091_125_2e1,
        6.871_870_074_920_579_083_0e2,
        5.394_196_021_424_751_107_7e3,
        2.121_379_430_158_659_586_7e4,
        3.930_789_580_009_271_061_0e4,
        2.872_908_573_572_194_267_4e4,
        5.226_495_278_852_854_561_0e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_577_34,
        4.630_337_846_156_545_295_90,
        5.769_497_221_460_691_405_50,
        3.647_848_324_763_204_605_04,
        1.270_458_252_452_368_382_58,
        2.417_807_251_774_506_117_70e-1,
        2.272_384_498_926_918_458_33e-2,
        7.745_450_142_783_414_076_40e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_758_821_87,
        1.676_384_830_183_803_849_40,
        6.897_673_349_851_000_045_50e-1,
        1.481_039_764_274_800_745_90e-1,
        1.519_866_656_361_645_719_66e-2,
        5.475_938_084_995_344_946_00e-4,
        1.050_750_071_644_416_843_24e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103_777_20,
        5.463_784_911_164_114_369_90,
        1.784_826_539_917_291_335_80,
        2.965_605_718_285_048_912_30e-1,
        2.653_218_952_657_612_309_30e-2,
        1.242_660_947_388_078_438_60e-3,
        2.711_555_568_743_487_578_15e-5,
        2.010_334_399_292_288_132_65e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_879_376_90e-1,
        1.369_298_809_227_358_053_10e-1,
        1.487_536_129_085_061_485_25e-2,
        7.868_691_311_456_132_591_00e-4,
        1.846_318_317_510_054_681_80e-5,
        1.421_511_758_316_445_888_70e-7,
        2.044_263_103_389_939_785_64e-15,
    ];

    fn poly(c: &[f64; 8], x: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
    }

    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-r.ln()).sqrt();
    let z = if r <= 5.0 {
        r -= 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        r -= 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -z
    } else {
        z
    }
}

/// Gaussian confidence boundary estimated from baseline damage features.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CbThreshold {
    pub mu: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub cb: f64,
    /// Set when the validation features were (nearly) constant and sigma was
    /// floored at `1e-9 * max(1, mu)`.
    pub degenerate: bool,
}

impl CbThreshold {
    /// Fit mean and sample standard deviation to validation damage features
    /// and place the boundary at the Gaussian `1 - alpha` quantile.
    pub fn from_dfs(dfs: &[f64], alpha: f64) -> Result<CbThreshold> {
        if dfs.is_empty() {
            return Err(Error::invalid("no validation damage features".to_string()));
        }
        if !(alpha > 0.0 && alpha < 0.5) {
            return Err(Error::invalid(format!("alpha must lie in (0, 0.5), got {alpha}")));
        }
        let k = dfs.len() as f64;
        let mu = dfs.iter().sum::<f64>() / k;
        let mut sigma = if dfs.len() < 2 {
            0.0
        } else {
            (dfs.iter().map(|d| (d - mu) * (d - mu)).sum::<f64>() / (k - 1.0)).sqrt()
        };
        let mut degenerate = false;
        let floor = 1e-9 * mu.max(1.0);
        if sigma < floor {
            sigma = floor;
            degenerate = true;
        }
        let cb = gaussian_quantile(1.0 - alpha, mu, sigma)?;
        Ok(CbThreshold {
            mu,
            sigma,
            alpha,
            cb,
            degenerate,
        })
    }
}

/// AR order policy for baseline fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderSpec {
    Fixed(usize),
    Auto { min: usize, max: usize },
}

impl OrderSpec {
    pub fn grid(min: usize, max: usize) -> Vec<usize> {
        (min..=max).collect()
    }
}

/// Pipeline configuration shared by baseline fitting and scoring.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectConfig {
    /// Significance level of the confidence boundary.
    pub alpha: f64,
    /// Cumulative-variance threshold for the number of removed components.
    pub pca_threshold: f64,
    pub order: OrderSpec,
    /// Fraction of baseline passages used for fitting; the rest estimate the
    /// boundary.
    pub split_fraction: f64,
    pub seed: u64,
    pub bin_rule: SpeedBinRule,
    pub align: AlignMethod,
    /// Score passages against a model of a different speed bin. Off by
    /// default; detection across speeds is unreliable by construction.
    pub allow_speed_mismatch: bool,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            alpha: 0.01,
            pca_threshold: 0.80,
            order: OrderSpec::Auto { min: 1, max: 150 },
            split_fraction: 0.7,
            seed: 42,
            bin_rule: SpeedBinRule::Exact,
            align: AlignMethod::Truncate,
            allow_speed_mismatch: false,
        }
    }
}

impl DetectConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(Error::Config(format!("alpha must lie in (0, 0.5), got {}", self.alpha)));
        }
        if !(self.pca_threshold > 0.0 && self.pca_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "pca_threshold must lie in (0, 1], got {}",
                self.pca_threshold
            )));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Config(format!(
                "split_fraction must lie in (0, 1), got {}",
                self.split_fraction
            )));
        }
        if let OrderSpec::Auto { min, max } = self.order {
            if min == 0 || min > max {
                return Err(Error::Config(format!("bad order grid {min}..{max}")));
            }
        }
        Ok(())
    }
}

/// Frozen per-(channel, speed bin) baseline: basis, AR model, reference fit
/// ratio, and the confidence boundary.
#[derive(Debug, Clone)]
pub struct BaselineModel {
    pub channel_id: String,
    pub speed_bin: String,
    /// Aligned signal length every scored passage is mapped to.
    pub n: usize,
    pub align: AlignMethod,
    pub pca: PcaBasis,
    pub ar: ArModel,
    pub fr1_ref: f64,
    pub threshold: CbThreshold,
    pub fit_passages: Vec<String>,
    pub validation_passages: Vec<String>,
    /// Sensor description, carried along for component attribution.
    pub channel_meta: Option<ChannelMeta>,
}

/// Aligned, split, and PC-removed baseline data, ready for AR fitting.
pub struct BaselinePrep {
    pub matrix: crate::signals::PassageMatrix,
    pub fit_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub basis: PcaBasis,
    /// PC-removed signals of the fit split, row per passage.
    pub fit_residuals: Vec<Vec<f64>>,
}

/// Align one channel-and-bin's baseline passages, split them, fit the basis
/// on the fit split, and remove its components.
pub fn prepare_baseline(records: &[PassageRecord], config: &DetectConfig) -> Result<BaselinePrep> {
    config.validate()?;
    if records.len() < 4 {
        return Err(Error::invalid(format!(
            "baseline fit needs at least 4 passages for a fit/validation split, got {}",
            records.len()
        )));
    }
    for r in records {
        r.validate()?;
        if r.condition != Condition::Baseline {
            return Err(Error::invalid(format!(
                "passage {} is not a baseline passage",
                r.passage_id
            )));
        }
    }

    let target_n = common_target_n(records)?;
    let matrix = align_to_matrix(records, target_n, config.align, &config.bin_rule)?;
    let k = matrix.k();

    // deterministic fit/validation split
    let mut idx: Vec<usize> = (0..k).collect();
    let split_seed = derive_seed(config.seed, &["split", &matrix.channel_id, &matrix.speed_bin]);
    idx.shuffle(&mut ChaCha20Rng::seed_from_u64(split_seed));
    let n_fit = ((config.split_fraction * k as f64).round() as usize).clamp(2, k - 1);
    let mut fit_idx = idx[..n_fit].to_vec();
    let mut val_idx = idx[n_fit..].to_vec();
    fit_idx.sort_unstable();
    val_idx.sort_unstable();

    let fit_matrix = {
        let mut data = nalgebra::DMatrix::zeros(fit_idx.len(), target_n);
        for (row, &i) in fit_idx.iter().enumerate() {
            for j in 0..target_n {
                data[(row, j)] = matrix.data[(i, j)];
            }
        }
        data
    };

    let basis = pca::fit_pca_data(&fit_matrix, config.pca_threshold)?;
    let fit_resid = pca::remove_components_data(&fit_matrix, &basis)?;
    let fit_residuals: Vec<Vec<f64>> = (0..fit_resid.nrows())
        .map(|i| fit_resid.row(i).iter().copied().collect())
        .collect();

    Ok(BaselinePrep {
        matrix,
        fit_idx,
        val_idx,
        basis,
        fit_residuals,
    })
}

/// Fit the full baseline for one channel and speed bin.
pub fn fit_baseline(records: &[PassageRecord], config: &DetectConfig) -> Result<BaselineModel> {
    let prep = prepare_baseline(records, config)?;
    let resid_slices: Vec<&[f64]> = prep.fit_residuals.iter().map(|r| r.as_slice()).collect();

    let order = match config.order {
        OrderSpec::Fixed(m) => m,
        OrderSpec::Auto { min, max } => {
            let grid = OrderSpec::grid(min, max);
            ar::select_order(&resid_slices, &grid)?.optimum
        }
    };

    let mut fit = ar::fit_ar_stacked(&resid_slices, order)?;
    fit.model.channel_id = prep.matrix.channel_id.clone();

    // reference fit ratio: mean over the fit split, scored with frozen models
    let mut fr_sum = 0.0;
    for row in &prep.fit_residuals {
        fr_sum += passage_fit_ratio(row, &fit.model)?;
    }
    let fr1_ref = fr_sum / prep.fit_residuals.len() as f64;

    // boundary from held-out validation passages
    let mut dfs = Vec::with_capacity(prep.val_idx.len());
    for &i in &prep.val_idx {
        let raw: Vec<f64> = prep.matrix.data.row(i).iter().copied().collect();
        let resid = pca::remove_components_vector(&raw, &prep.basis)?;
        let fr2 = passage_fit_ratio(resid.as_slice(), &fit.model)?;
        dfs.push(damage_feature(fr2, fr1_ref)?);
    }
    let threshold = CbThreshold::from_dfs(&dfs, config.alpha)?;

    Ok(BaselineModel {
        channel_id: prep.matrix.channel_id.clone(),
        speed_bin: prep.matrix.speed_bin.clone(),
        n: prep.matrix.n(),
        align: config.align,
        pca: prep.basis,
        ar: fit.model,
        fr1_ref,
        threshold,
        fit_passages: prep
            .fit_idx
            .iter()
            .map(|&i| prep.matrix.passage_ids[i].clone())
            .collect(),
        validation_passages: prep
            .val_idx
            .iter()
            .map(|&i| prep.matrix.passage_ids[i].clone())
            .collect(),
        channel_meta: None,
    })
}

/// Fit ratio of one PC-removed signal under a frozen AR model.
fn passage_fit_ratio(resid_signal: &[f64], model: &ArModel) -> Result<f64> {
    let (_, recon) = ar::predict_residuals(resid_signal, model)?;
    let target = &resid_signal[model.order..];
    fit_ratio(target, recon.as_slice())
}

/// Verdict of one scored (passage, channel) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreRow {
    pub passage_id: String,
    pub channel_id: String,
    pub speed_bin: String,
    pub condition: Condition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damage: Option<DamageSpec>,
    pub fr2: f64,
    pub fr1_ref: f64,
    pub df: f64,
    pub cb: f64,
    pub outlier: bool,
}

/// Score test passages against one frozen baseline model.
pub fn score(
    records: &[PassageRecord],
    model: &BaselineModel,
    config: &DetectConfig,
) -> Result<Vec<ScoreRow>> {
    let mut rows = Vec::with_capacity(records.len());
    for r in records {
        r.validate()?;
        if r.channel_id != model.channel_id {
            return Err(Error::invalid(format!(
                "passage {} is channel {}, model is for {}",
                r.passage_id, r.channel_id, model.channel_id
            )));
        }
        let bin = config.bin_rule.bin_label(r.speed_kmh);
        if bin != model.speed_bin && !config.allow_speed_mismatch {
            return Err(Error::SpeedBinMismatch {
                passage_bin: bin,
                model_bin: model.speed_bin.clone(),
            });
        }
        let aligned = align_record(r, model.n, model.align)?;
        let resid = pca::remove_components_vector(&aligned, &model.pca)?;
        let fr2 = passage_fit_ratio(resid.as_slice(), &model.ar)?;
        let df = damage_feature(fr2, model.fr1_ref)?;
        rows.push(ScoreRow {
            passage_id: r.passage_id.clone(),
            channel_id: r.channel_id.clone(),
            speed_bin: model.speed_bin.clone(),
            condition: r.condition,
            damage: r.damage,
            fr2,
            fr1_ref: model.fr1_ref,
            df,
            cb: model.threshold.cb,
            outlier: df >= model.threshold.cb,
        });
    }
    Ok(rows)
}

/// Aggregated verdict for one component of one section.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentVerdict {
    pub section: Section,
    pub component: crate::signals::Component,
    pub detected: bool,
    pub flagged_channels: Vec<String>,
}

/// Full scoring report: per-row verdicts, component attribution, and rates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DamageReport {
    pub rows: Vec<ScoreRow>,
    pub attribution: Vec<ComponentVerdict>,
    /// Flag rate among rows recorded on the healthy structure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub false_positive_rate: Option<f64>,
    /// Flag rate among rows recorded on the damaged structure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection_rate: Option<f64>,
}

impl DamageReport {
    /// Build the report from scored rows. A component counts as detected at a
    /// section when any outlier-flagged channel of that section lists the
    /// component in its affinity.
    pub fn from_rows(rows: Vec<ScoreRow>, channels: &[ChannelMeta]) -> DamageReport {
        let mut verdicts: BTreeMap<(Section, crate::signals::Component), Vec<String>> =
            BTreeMap::new();
        for ch in channels {
            for comp in &ch.component_affinity {
                verdicts.entry((ch.section, *comp)).or_default();
            }
        }
        for row in rows.iter().filter(|r| r.outlier) {
            if let Some(ch) = channels.iter().find(|c| c.channel_id == row.channel_id) {
                for comp in &ch.component_affinity {
                    let v = verdicts.entry((ch.section, *comp)).or_default();
                    if !v.contains(&row.channel_id) {
                        v.push(row.channel_id.clone());
                    }
                }
            }
        }
        let attribution = verdicts
            .into_iter()
            .map(|((section, component), flagged_channels)| ComponentVerdict {
                section,
                component,
                detected: !flagged_channels.is_empty(),
                flagged_channels,
            })
            .collect();

        let rate = |cond: Condition| -> Option<f64> {
            let total = rows.iter().filter(|r| r.condition == cond).count();
            if total == 0 {
                return None;
            }
            let flagged = rows
                .iter()
                .filter(|r| r.condition == cond && r.outlier)
                .count();
            Some(flagged as f64 / total as f64)
        };

        DamageReport {
            false_positive_rate: rate(Condition::Baseline),
            detection_rate: rate(Condition::Damaged),
            rows,
            attribution,
        }
    }

    pub fn any_outlier(&self) -> bool {
        self.rows.iter().any(|r| r.outlier)
    }

    /// Row-level CSV: `passage_id,channel_id,fr2,df,cb,outlier`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "passage_id,channel_id,fr2,df,cb,outlier")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.passage_id, r.channel_id, r.fr2, r.df, r.cb, r.outlier
            )?;
        }
        Ok(())
    }
}

/// Serialized baseline bundle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineModelBundle {
    pub channel_id: String,
    pub speed_bin: String,
    pub n: usize,
    pub align: AlignMethod,
    pub pca: PcaBasisBundle,
    pub ar: ArModel,
    pub fr1_ref: f64,
    pub threshold: CbThreshold,
    pub fit_passages: Vec<String>,
    pub validation_passages: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_meta: Option<ChannelMeta>,
}

impl BaselineModel {
    pub fn to_bundle(&self) -> BaselineModelBundle {
        BaselineModelBundle {
            channel_id: self.channel_id.clone(),
            speed_bin: self.speed_bin.clone(),
            n: self.n,
            align: self.align,
            pca: self.pca.to_bundle(false),
            ar: self.ar.clone(),
            fr1_ref: self.fr1_ref,
            threshold: self.threshold.clone(),
            fit_passages: self.fit_passages.clone(),
            validation_passages: self.validation_passages.clone(),
            channel_meta: self.channel_meta.clone(),
        }
    }

    pub fn from_bundle(bundle: BaselineModelBundle) -> Result<BaselineModel> {
        Ok(BaselineModel {
            pca: PcaBasis::from_bundle(&bundle.pca)?,
            channel_id: bundle.channel_id,
            speed_bin: bundle.speed_bin,
            n: bundle.n,
            align: bundle.align,
            ar: bundle.ar,
            fr1_ref: bundle.fr1_ref,
            threshold: bundle.threshold,
            fit_passages: bundle.fit_passages,
            validation_passages: bundle.validation_passages,
            channel_meta: bundle.channel_meta,
        })
    }

    /// File name of the persisted bundle inside a model store directory.
    pub fn store_name(channel_id: &str, speed_bin: &str) -> String {
        let sane = |s: &str| s.replace(['/', '\\'], "_");
        format!("{}__{}.json", sane(channel_id), sane(speed_bin))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(Self::store_name(&self.channel_id, &self.speed_bin));
        let json = serde_json::to_vec_pretty(&self.to_bundle())?;
        crate::cli::write_atomic(&path, &json)?;
        Ok(())
    }
}

/// Load every model bundle in a directory, sorted by (channel, bin).
pub fn load_models(dir: &Path) -> Result<Vec<BaselineModel>> {
    let mut models = Vec::new();
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    for path in paths {
        let data = std::fs::read(&path)?;
        let bundle: BaselineModelBundle = serde_json::from_slice(&data)
            .map_err(|e| Error::parse(path.display().to_string(), None, format!("{e}")))?;
        models.push(BaselineModel::from_bundle(bundle)?);
    }
    models.sort_by(|a, b| {
        (a.channel_id.as_str(), a.speed_bin.as_str()).cmp(&(b.channel_id.as_str(), b.speed_bin.as_str()))
    });
    Ok(models)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::Component;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn fit_ratio_examples() {
        assert_eq!(fit_ratio(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(fit_ratio(&[3.0, 4.0], &[0.0, 0.0]).unwrap(), 1.0);
        // s = (3,4), reconstruction (3,0): diff (0,4), norm(s) = 5
        assert_relative_eq!(fit_ratio(&[3.0, 4.0], &[3.0, 0.0]).unwrap(), 0.8, epsilon = 1e-15);
        assert!(fit_ratio(&[0.0, 0.0], &[1.0, 1.0]).is_err());
        assert!(fit_ratio(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn damage_feature_examples() {
        assert_eq!(damage_feature(0.3, 0.3).unwrap(), 0.0);
        assert_relative_eq!(damage_feature(0.10, 0.05).unwrap(), 50.0, epsilon = 1e-12);
        assert_relative_eq!(damage_feature(0.05, 0.10).unwrap(), 100.0, epsilon = 1e-12);
        assert!(damage_feature(0.0, 0.1).is_err());
    }

    #[test]
    fn quantile_median_and_symmetry() {
        assert_relative_eq!(gaussian_quantile(0.5, 3.0, 2.0).unwrap(), 3.0, epsilon = 1e-12);
        for p in [0.01, 0.1, 0.25, 0.4, 0.49, 0.001, 1e-6] {
            let lo = gaussian_quantile(p, 1.5, 0.7).unwrap();
            let hi = gaussian_quantile(1.0 - p, 1.5, 0.7).unwrap();
            assert_relative_eq!(lo + hi, 3.0, epsilon = 1e-12);
        }
        assert!(gaussian_quantile(0.0, 0.0, 1.0).is_err());
        assert!(gaussian_quantile(1.0, 0.0, 1.0).is_err());
        assert!(gaussian_quantile(0.5, 0.0, 0.0).is_err());
        assert!(gaussian_quantile(0.5, 0.0, -1.0).is_err());
    }

    #[test]
    fn quantile_reference_value() {
        let z = gaussian_quantile(0.99, 0.0, 1.0).unwrap();
        assert!((z - 2.3263478740).abs() < 1e-9, "z = {z}");
    }

    #[test]
    fn threshold_from_known_dfs() {
        let t = CbThreshold::from_dfs(&[1.0, 2.0, 3.0, 4.0], 0.01).unwrap();
        assert_relative_eq!(t.mu, 2.5, epsilon = 1e-12);
        assert_relative_eq!(t.sigma, (5.0_f64 / 3.0).sqrt(), epsilon = 1e-12);
        assert!((t.sigma - 1.2910).abs() < 1e-4);
        assert!((t.cb - 5.5033).abs() < 1e-3, "cb = {}", t.cb);
        assert!(!t.degenerate);
    }

    #[test]
    fn threshold_degenerate_all_equal() {
        let t = CbThreshold::from_dfs(&[0.0, 0.0, 0.0], 0.01).unwrap();
        assert!(t.degenerate);
        assert_eq!(t.mu, 0.0);
        assert!(t.cb.abs() < 1e-8, "cb = {}", t.cb);
    }

    #[test]
    fn threshold_monotone_in_alpha() {
        let dfs = [0.5, 1.0, 1.5, 2.5, 3.0];
        let a = CbThreshold::from_dfs(&dfs, 0.05).unwrap();
        let b = CbThreshold::from_dfs(&dfs, 0.01).unwrap();
        let c = CbThreshold::from_dfs(&dfs, 0.001).unwrap();
        assert!(b.cb > a.cb);
        assert!(c.cb > b.cb);
        // flagged sets nest: anything below a.cb is below b.cb too
        for df in [0.1, 1.9, 2.9, 3.9, 6.0] {
            if df >= c.cb {
                assert!(df >= b.cb && df >= a.cb);
            }
        }
    }

    // Small synthetic channel: a fixed waveform plus seeded per-passage noise.
    fn synthetic_records(k: usize, speed: f64, scale: f64, seed: u64) -> Vec<PassageRecord> {
        let n = 160;
        let base: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / n as f64;
                30.0 * (std::f64::consts::PI * t).sin().powi(2) + 10.0
            })
            .collect();
        (0..k)
            .map(|p| {
                let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, &[&format!("p{p}")]));
                let samples: Vec<f64> = base
                    .iter()
                    .map(|v| scale * (v + 0.3 * rng.gen_range(-1.0..1.0)))
                    .collect();
                PassageRecord {
                    passage_id: format!("p{p}"),
                    channel_id: "P3b".into(),
                    samples,
                    sample_rate: 1000.0,
                    speed_kmh: speed,
                    weight_class: "w100".into(),
                    irregularity: "uic-good".into(),
                    condition: Condition::Baseline,
                    damage: None,
                }
            })
            .collect()
    }

    fn quick_config() -> DetectConfig {
        DetectConfig {
            order: OrderSpec::Fixed(4),
            ..DetectConfig::default()
        }
    }

    #[test]
    fn baseline_fit_and_self_scoring() {
        let records = synthetic_records(12, 360.0, 1.0, 7);
        let cfg = quick_config();
        let model = fit_baseline(&records, &cfg).unwrap();
        assert_eq!(model.channel_id, "P3b");
        assert_eq!(model.speed_bin, "360");
        assert_eq!(model.fit_passages.len() + model.validation_passages.len(), 12);
        for id in &model.fit_passages {
            assert!(!model.validation_passages.contains(id), "splits overlap on {id}");
        }

        // scoring a fit-set passage stays below the boundary
        let fit_set: Vec<PassageRecord> = records
            .iter()
            .filter(|r| model.fit_passages.contains(&r.passage_id))
            .cloned()
            .collect();
        let rows = score(&fit_set, &model, &cfg).unwrap();
        assert!(rows.iter().all(|r| !r.outlier), "fit passages flagged as outliers");
    }

    #[test]
    fn speed_mismatch_guard() {
        let records = synthetic_records(12, 360.0, 1.0, 7);
        let cfg = quick_config();
        let model = fit_baseline(&records, &cfg).unwrap();
        let other = synthetic_records(2, 330.0, 1.0, 8);
        let err = score(&other, &model, &cfg).unwrap_err();
        assert!(matches!(err, Error::SpeedBinMismatch { .. }), "{err}");

        let mut permissive = cfg.clone();
        permissive.allow_speed_mismatch = true;
        assert!(score(&other, &model, &permissive).is_ok());
    }

    #[test]
    fn pipeline_scale_invariance() {
        let cfg = quick_config();
        let base = synthetic_records(12, 360.0, 1.0, 3);
        let scaled = synthetic_records(12, 360.0, 250.0, 3);
        let m1 = fit_baseline(&base, &cfg).unwrap();
        let m2 = fit_baseline(&scaled, &cfg).unwrap();
        let r1 = score(&base, &m1, &cfg).unwrap();
        let r2 = score(&scaled, &m2, &cfg).unwrap();
        assert_relative_eq!(m1.fr1_ref, m2.fr1_ref, max_relative = 1e-9);
        assert_relative_eq!(m1.threshold.cb, m2.threshold.cb, max_relative = 1e-8);
        for (a, b) in r1.iter().zip(&r2) {
            assert_relative_eq!(a.fr2, b.fr2, max_relative = 1e-9);
            assert_relative_eq!(a.df, b.df, epsilon = 1e-7);
            assert_eq!(a.outlier, b.outlier);
        }
    }

    #[test]
    fn deterministic_fit_bytes() {
        let records = synthetic_records(10, 360.0, 1.0, 5);
        let cfg = quick_config();
        let a = fit_baseline(&records, &cfg).unwrap();
        let b = fit_baseline(&records, &cfg).unwrap();
        let ja = serde_json::to_vec(&a.to_bundle()).unwrap();
        let jb = serde_json::to_vec(&b.to_bundle()).unwrap();
        assert_eq!(ja, jb);
    }

    #[test]
    fn model_bundle_roundtrip() {
        let records = synthetic_records(10, 360.0, 1.0, 9);
        let cfg = quick_config();
        let model = fit_baseline(&records, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();
        let loaded = load_models(dir.path()).unwrap();
        assert_eq!(loaded.len(), 1);
        let rows_a = score(&records, &model, &cfg).unwrap();
        let rows_b = score(&records, &loaded[0], &cfg).unwrap();
        for (a, b) in rows_a.iter().zip(&rows_b) {
            assert_eq!(a.df, b.df);
        }
    }

    #[test]
    fn attribution_any_flagging_channel_detects() {
        let channels = vec![
            ChannelMeta {
                channel_id: "P3b".into(),
                section: Section::Quarter,
                position_label: "P3b".into(),
                longitudinal_coord: 8.0,
                component_affinity: vec![Component::BottomPlate, Component::LeftWeb],
            },
            ChannelMeta {
                channel_id: "P12b".into(),
                section: Section::Quarter,
                position_label: "P12b".into(),
                longitudinal_coord: 8.0,
                component_affinity: vec![Component::BottomPlate, Component::RightWeb],
            },
        ];
        let row = |ch: &str, outlier: bool| ScoreRow {
            passage_id: "p0".into(),
            channel_id: ch.into(),
            speed_bin: "360".into(),
            condition: Condition::Damaged,
            damage: None,
            fr2: 1.0,
            fr1_ref: 1.0,
            df: if outlier { 50.0 } else { 0.0 },
            cb: 5.0,
            outlier,
        };
        // conflicting verdicts: P3b flags, P12b does not
        let report = DamageReport::from_rows(vec![row("P3b", true), row("P12b", false)], &channels);
        let find = |c: Component| {
            report
                .attribution
                .iter()
                .find(|v| v.component == c && v.section == Section::Quarter)
                .unwrap()
        };
        assert!(find(Component::BottomPlate).detected);
        assert!(find(Component::LeftWeb).detected);
        assert!(!find(Component::RightWeb).detected);
        assert_eq!(report.detection_rate, Some(0.5));
    }

    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use crate::seed::derive_seed;

    // Independent oracle: bisection on a series-based Gaussian CDF.
    fn erf_series(x: f64) -> f64 {
        // alternating Maclaurin series; adequate to ~1e-14 for |x| <= 3.5
        let mut term = x;
        let mut sum = x;
        let x2 = x * x;
        for n in 1..200 {
            term *= -x2 / n as f64;
            let add = term / (2 * n + 1) as f64;
            sum += add;
            if add.abs() < 1e-18 {
                break;
            }
        }
        sum * 2.0 / std::f64::consts::PI.sqrt()
    }

    fn normal_cdf(x: f64) -> f64 {
        0.5 * (1.0 + erf_series(x / std::f64::consts::SQRT_2))
    }

    #[test]
    fn quantile_vs_bisection_oracle() {
        for p in [0.99, 0.95, 0.9, 0.75, 0.6, 0.5005, 0.999] {
            let (mut lo, mut hi) = (-10.0_f64, 10.0_f64);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if normal_cdf(mid) < p {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let oracle = 0.5 * (lo + hi);
            let got = gaussian_quantile(p, 0.0, 1.0).unwrap();
            assert!(
                (got - oracle).abs() <= 1e-10 * oracle.abs().max(1.0),
                "p={p}: got {got}, oracle {oracle}"
            );
        }
    }
}
