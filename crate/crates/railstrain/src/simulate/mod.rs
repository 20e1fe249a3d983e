//! Desk-scale synthetic passage generator.
//!
//! A simply supported girder under a moving axle train, evaluated through the
//! classical bending-moment influence line. Damage is a stiffness reduction
//! of one plate component at one section: its strain contribution amplifies
//! by `1/(1 - kappa*delta)` while an axle loads the section, plus a small
//! band-limited fluctuation standing in for damage-induced local dynamics.
//! Track irregularity enters as a fixed per-(spectrum, speed) roughness
//! realization, the way one physical track excites every passage alike; white
//! measurement noise is added per passage on top.

mod experiment;
mod girder;
mod train;

pub use experiment::{
    default_irregularities, generate_experiment, DamageGridPlan, ExperimentPlan, Manifest,
    ManifestCondition, WeightClass,
};
pub use girder::{default_girder, quarter_section_girder, ChannelSpec, GirderSpec, SurrogateParams};
pub use train::{crh380_train, CarriageSpec, Lane, TrainSpec};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::signals::{format_num, Condition, DamageSpec, PassageRecord};

/// One labeled track-irregularity spectrum: severity level and the seed that
/// pins its realization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IrregularityPreset {
    pub label: String,
    /// Multiplies the base roughness RMS.
    pub level: f64,
    /// Fixed per spectrum, independent of the experiment seed: the same
    /// "track" excites baseline, damaged, and held-out passages alike.
    pub seed: u64,
}

/// Bending-moment influence ordinate at `x_sensor` for a unit load at
/// `x_load` on a simply supported span. Zero off-span.
pub fn influence_strain(x_sensor: f64, x_load: f64, span: f64) -> f64 {
    debug_assert!((0.0..=span).contains(&x_sensor));
    if !(0.0..=span).contains(&x_load) {
        return 0.0;
    }
    if x_load <= x_sensor {
        x_load * (span - x_sensor) / span
    } else {
        x_sensor * (span - x_load) / span
    }
}

/// Unit-RMS band-limited noise: random-phase harmonic superposition with a
/// power-law amplitude spectrum inside the band.
fn band_limited_noise(
    n: usize,
    sample_rate: f64,
    band_hz: (f64, f64),
    psd_exponent: f64,
    seed: u64,
) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let df = sample_rate / n as f64;
    let k_lo = (band_hz.0 / df).ceil().max(1.0) as usize;
    let k_hi = ((band_hz.1 / df).floor() as usize).min(n / 2);
    let mut out = vec![0.0_f64; n];
    if k_lo > k_hi {
        return out;
    }
    for k in k_lo..=k_hi {
        let f = k as f64 * df;
        let amp = f.powf(-psd_exponent / 2.0);
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let w = std::f64::consts::TAU * f / sample_rate;
        for (i, v) in out.iter_mut().enumerate() {
            *v += amp * (w * i as f64 + phase).cos();
        }
    }
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        for v in &mut out {
            *v /= rms;
        }
    }
    out
}

/// Per-passage identity for synthesis: naming, metadata labels, and the seed
/// of the damage fluctuation term.
#[derive(Debug, Clone)]
pub struct PassageContext {
    pub passage_id: String,
    pub weight_class: String,
    pub fluctuation_seed: u64,
}

/// Synthesize one passage: one record per channel, full entry-to-exit length.
///
/// The record spans from the head axle entering the span to the last axle
/// leaving it, so the duration is `(train length + span) / speed`.
pub fn synthesize_passage(
    train: &TrainSpec,
    girder: &GirderSpec,
    damage: Option<DamageSpec>,
    irregularity: &IrregularityPreset,
    sample_rate: f64,
    ctx: &PassageContext,
) -> Result<Vec<PassageRecord>> {
    train.validate()?;
    girder.validate()?;
    if let Some(d) = &damage {
        d.validate()?;
    }
    if !(sample_rate > 0.0) {
        return Err(Error::invalid(format!("sample rate must be positive, got {sample_rate}")));
    }

    let v = train.speed_ms();
    let span = girder.span_m;
    let p = &girder.params;
    let axles = train.axle_layout();
    let duration = (train.length_m() + span) / v;
    let n = (duration * sample_rate).round() as usize;
    if n < 2 {
        return Err(Error::invalid("passage too short for the sample rate".to_string()));
    }

    // one fixed roughness realization per (spectrum, speed)
    let rough_seed = derive_seed(
        irregularity.seed,
        &["roughness", &format_num(train.speed_kmh)],
    );
    let roughness = band_limited_noise(n, sample_rate, p.roughness_band_hz, p.roughness_exponent, rough_seed);
    let rough_rms = irregularity.level
        * p.roughness_base_rms
        * (train.speed_kmh / p.roughness_ref_speed_kmh).powf(p.roughness_speed_exponent);

    let damage_coord = damage.as_ref().map(|d| d.section.coord(span));
    let amp_minus_one = damage
        .as_ref()
        .map(|d| 1.0 / (1.0 - p.kappa * d.delta) - 1.0)
        .unwrap_or(0.0);

    let mut records = Vec::with_capacity(girder.channels.len());
    for ch in &girder.channels {
        let tau = ch.tau(train.lane);
        let x_s = ch.meta.longitudinal_coord;
        let plain_gain = ch.total_gain();
        let damaged_gain = damage.as_ref().map(|d| ch.gain(d.component)).unwrap_or(0.0);

        let mut samples = vec![0.0_f64; n];
        for (i, s) in samples.iter_mut().enumerate() {
            let head = v * (i as f64 / sample_rate);
            let mut acc = 0.0;
            for (off, w) in &axles {
                let x = head - off;
                if !(0.0..=span).contains(&x) {
                    continue;
                }
                let u = influence_strain(x_s, x, span);
                let mut gain = plain_gain;
                if damaged_gain > 0.0 {
                    let dc = damage_coord.expect("damage coord present");
                    if (x - dc).abs() <= p.damage_window_halfwidth_m {
                        gain += damaged_gain * amp_minus_one;
                    }
                }
                acc += w * u * gain;
            }
            *s = tau * p.strain_scale * acc;
        }

        // local dynamics of the damaged component, scaled by how well this
        // channel observes it
        if let Some(d) = &damage {
            if damaged_gain > 0.0 && d.delta > 0.0 {
                let peak = samples.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                let rms = p.fluctuation_rms_per_delta * d.delta * peak * damaged_gain;
                let fluct = band_limited_noise(
                    n,
                    sample_rate,
                    p.fluctuation_band_hz,
                    0.0,
                    derive_seed(ctx.fluctuation_seed, &["fluct", &ch.meta.channel_id]),
                );
                for (s, f) in samples.iter_mut().zip(&fluct) {
                    *s += rms * f;
                }
            }
        }

        for (s, r) in samples.iter_mut().zip(&roughness) {
            *s += tau * rough_rms * r;
        }

        let record = PassageRecord {
            passage_id: ctx.passage_id.clone(),
            channel_id: ch.meta.channel_id.clone(),
            samples,
            sample_rate,
            speed_kmh: train.speed_kmh,
            weight_class: ctx.weight_class.clone(),
            irregularity: irregularity.label.clone(),
            condition: if damage.is_some() {
                Condition::Damaged
            } else {
                Condition::Baseline
            },
            damage,
        };
        record.validate()?;
        records.push(record);
    }
    Ok(records)
}

/// Additive white-noise contamination: `b + nlev * mean(|b|) * z` with `z`
/// standard normal. A zero level returns the input exactly.
pub fn add_noise(b: &[f64], nlev: f64, seed: u64) -> Vec<f64> {
    if nlev == 0.0 || b.is_empty() {
        return b.to_vec();
    }
    let mean_abs = b.iter().map(|v| v.abs()).sum::<f64>() / b.len() as f64;
    let scale = nlev * mean_abs;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    b.iter()
        .map(|v| v + scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::{Component, Section};
    use approx::assert_relative_eq;

    fn ctx(id: &str) -> PassageContext {
        PassageContext {
            passage_id: id.to_string(),
            weight_class: "w100".to_string(),
            fluctuation_seed: 7,
        }
    }

    fn quiet_preset() -> IrregularityPreset {
        IrregularityPreset {
            label: "none".into(),
            level: 0.0,
            seed: 1,
        }
    }

    fn single_axle_train(speed: f64, weight: f64) -> TrainSpec {
        TrainSpec {
            carriages: vec![CarriageSpec {
                label: "A".into(),
                total_weight_kn: weight * 4.0,
                axle_weights_kn: [weight; 4],
                axle_offsets_m: [0.0001, 10_000.0, 20_000.0, 30_000.0],
            }],
            carriage_length_m: 40_000.0,
            speed_kmh: speed,
            lane: Lane::Up,
        }
    }

    #[test]
    fn influence_midspan_maximum() {
        assert_relative_eq!(influence_strain(16.0, 16.0, 32.0), 8.0, epsilon = 1e-12);
    }

    #[test]
    fn influence_zero_at_supports_and_off_span() {
        assert_eq!(influence_strain(16.0, 0.0, 32.0), 0.0);
        assert_eq!(influence_strain(16.0, 32.0, 32.0), 0.0);
        assert_eq!(influence_strain(16.0, -3.0, 32.0), 0.0);
        assert_eq!(influence_strain(16.0, 35.0, 32.0), 0.0);
    }

    #[test]
    fn influence_symmetry() {
        let span = 32.0;
        for (xs, xl) in [(8.0, 5.0), (10.0, 25.0), (4.0, 30.0)] {
            assert_relative_eq!(
                influence_strain(xs, xl, span),
                influence_strain(span - xs, span - xl, span),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn band_limited_noise_unit_rms_and_band() {
        let n = 4096;
        let fs = 1000.0;
        let x = band_limited_noise(n, fs, (20.0, 80.0), 0.0, 3);
        let rms = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        assert_relative_eq!(rms, 1.0, epsilon = 1e-9);
        // crude spectral check: correlate against an out-of-band tone
        let probe = |f: f64| -> f64 {
            let w = std::f64::consts::TAU * f / fs;
            let c: f64 = x.iter().enumerate().map(|(i, v)| v * (w * i as f64).cos()).sum();
            let s: f64 = x.iter().enumerate().map(|(i, v)| v * (w * i as f64).sin()).sum();
            (c * c + s * s).sqrt() / n as f64
        };
        assert!(probe(150.0) < 1e-9, "energy outside the band");
        assert!(probe(5.0) < 1e-9, "energy below the band");
    }

    #[test]
    fn single_axle_peak_reduces_to_influence_line() {
        // unit axle, midspan sensor with unit gain and tau, scale 1
        let mut girder = quarter_section_girder();
        girder.params.strain_scale = 1.0;
        girder.channels.truncate(1);
        girder.channels[0].meta.longitudinal_coord = 16.0;
        girder.channels[0].gains = vec![(Component::BottomPlate, 1.0)];
        girder.channels[0].tau_up = 1.0;

        let train = single_axle_train(36.0, 1.0); // 10 m/s
        let recs =
            synthesize_passage(&train, &girder, None, &quiet_preset(), 1000.0, &ctx("p")).unwrap();
        let peak = recs[0].samples.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        assert_relative_eq!(peak, 8.0, max_relative = 1e-4);
    }

    #[test]
    fn zero_delta_is_bitwise_baseline() {
        let girder = quarter_section_girder();
        let train = crh380_train(360.0, Lane::Up);
        let preset = IrregularityPreset {
            label: "good-2".into(),
            level: 0.3,
            seed: 5,
        };
        let healthy =
            synthesize_passage(&train, &girder, None, &preset, 1000.0, &ctx("p")).unwrap();
        let damage = DamageSpec {
            section: Section::Quarter,
            component: Component::BottomPlate,
            delta: 0.0,
        };
        let zero =
            synthesize_passage(&train, &girder, Some(damage), &preset, 1000.0, &ctx("p")).unwrap();
        for (h, z) in healthy.iter().zip(&zero) {
            assert_eq!(h.samples, z.samples);
        }
    }

    #[test]
    fn kinematic_duration_matches_geometry() {
        let girder = quarter_section_girder();
        let train = crh380_train(360.0, Lane::Up);
        let recs =
            synthesize_passage(&train, &girder, None, &quiet_preset(), 1000.0, &ctx("p")).unwrap();
        // (200 m train + 32 m span) / 100 m/s = 2.32 s = 2320 samples at 1 kHz
        assert_eq!(recs[0].samples.len(), 2320);
        assert!((train.length_m() + girder.span_m) / train.speed_ms() - 2.32 < 1e-12);
    }

    #[test]
    fn superposition_of_single_axles() {
        let mut girder = quarter_section_girder();
        girder.channels.truncate(2);
        let speed = 72.0;
        let two_axle = TrainSpec {
            carriages: vec![CarriageSpec {
                label: "A".into(),
                total_weight_kn: 400.0,
                axle_weights_kn: [100.0; 4],
                axle_offsets_m: [1.0, 7.0, 50_000.0, 60_000.0],
            }],
            carriage_length_m: 70_000.0,
            speed_kmh: speed,
            lane: Lane::Up,
        };
        let combined =
            synthesize_passage(&two_axle, &girder, None, &quiet_preset(), 500.0, &ctx("p")).unwrap();

        // same two axles, one at a time (the far dummy axles never enter)
        let single = |off: f64| {
            let t = TrainSpec {
                carriages: vec![CarriageSpec {
                    label: "A".into(),
                    total_weight_kn: 400.0,
                    axle_weights_kn: [100.0; 4],
                    axle_offsets_m: [off, 50_000.0, 60_000.0, 65_000.0],
                }],
                carriage_length_m: 70_000.0,
                speed_kmh: speed,
                lane: Lane::Up,
            };
            synthesize_passage(&t, &girder, None, &quiet_preset(), 500.0, &ctx("p")).unwrap()
        };
        let a = single(1.0);
        let b = single(7.0);
        for chan in 0..combined.len() {
            for i in 0..combined[chan].samples.len() {
                let sum = a[chan].samples[i] + b[chan].samples[i];
                assert!(
                    (combined[chan].samples[i] - sum).abs() <= 1e-12,
                    "superposition broken at {i}"
                );
            }
        }
    }

    #[test]
    fn static_limit_at_crawl_speed() {
        // at 1 km/h the sampled peak matches a fine static sweep of the
        // axle pattern to well under 0.1%
        let mut girder = quarter_section_girder();
        girder.channels.truncate(1);
        let train = crh380_train(1.0, Lane::Up);
        let recs =
            synthesize_passage(&train, &girder, None, &quiet_preset(), 50.0, &ctx("p")).unwrap();
        let peak = recs[0].samples.iter().fold(0.0_f64, |m, v| m.max(v.abs()));

        let ch = &girder.channels[0];
        let axles = train.axle_layout();
        let mut static_peak = 0.0_f64;
        let mut head = 0.0;
        while head <= train.length_m() + girder.span_m {
            let mut acc = 0.0;
            for (off, w) in &axles {
                let x = head - off;
                if (0.0..=girder.span_m).contains(&x) {
                    acc += w * influence_strain(ch.meta.longitudinal_coord, x, girder.span_m);
                }
            }
            static_peak = static_peak.max(ch.tau(Lane::Up) * girder.params.strain_scale * acc);
            head += 0.001;
        }
        assert!(
            (peak - static_peak).abs() / static_peak < 1e-3,
            "sampled {peak} vs static {static_peak}"
        );
    }

    #[test]
    fn eccentricity_near_side_leads_on_up_lane() {
        let girder = quarter_section_girder();
        let train = crh380_train(360.0, Lane::Up);
        let recs =
            synthesize_passage(&train, &girder, None, &quiet_preset(), 1000.0, &ctx("p")).unwrap();
        let peak = |id: &str| {
            recs.iter()
                .find(|r| r.channel_id == id)
                .unwrap()
                .samples
                .iter()
                .fold(0.0_f64, |m, v| m.max(v.abs()))
        };
        assert!(peak("P3b") > peak("P12b"));
        assert!(peak("P3t") > peak("P12t"));
    }

    #[test]
    fn midspan_section_outresponds_quarter_span() {
        let girder = default_girder();
        let train = crh380_train(360.0, Lane::Up);
        let recs =
            synthesize_passage(&train, &girder, None, &quiet_preset(), 1000.0, &ctx("p")).unwrap();
        let peak = |id: &str| {
            recs.iter()
                .find(|r| r.channel_id == id)
                .unwrap()
                .samples
                .iter()
                .fold(0.0_f64, |m, v| m.max(v.abs()))
        };
        assert!(peak("P5b") > peak("P3b"));
        assert!(peak("P5t") > peak("P3t"));
    }

    #[test]
    fn damage_only_moves_affine_channels() {
        let girder = quarter_section_girder();
        let train = crh380_train(360.0, Lane::Up);
        let preset = quiet_preset();
        let healthy =
            synthesize_passage(&train, &girder, None, &preset, 1000.0, &ctx("p")).unwrap();
        let damaged = synthesize_passage(
            &train,
            &girder,
            Some(DamageSpec {
                section: Section::Quarter,
                component: Component::RightWeb,
                delta: 0.2,
            }),
            &preset,
            1000.0,
            &ctx("p"),
        )
        .unwrap();
        let diff = |id: &str| {
            let h = healthy.iter().find(|r| r.channel_id == id).unwrap();
            let d = damaged.iter().find(|r| r.channel_id == id).unwrap();
            h.samples
                .iter()
                .zip(&d.samples)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0_f64, f64::max)
        };
        // the near-side bottom channel cannot see the far web
        assert_eq!(diff("P3b"), 0.0);
        assert!(diff("P12b") > 0.0);
    }

    #[test]
    fn noise_zero_level_exact_and_seeded() {
        let b = vec![1.0, -2.0, 3.0];
        assert_eq!(add_noise(&b, 0.0, 9), b);
        let a = add_noise(&b, 0.05, 9);
        let c = add_noise(&b, 0.05, 9);
        assert_eq!(a, c);
        let d = add_noise(&b, 0.05, 10);
        assert_ne!(a, d);
    }

    #[test]
    fn noise_std_matches_formula() {
        // constant signal 4, nlev 0.05: injected noise std 0.2 within 5%
        let b = vec![4.0_f64; 100_000];
        let noisy = add_noise(&b, 0.05, 123);
        let mean = noisy.iter().sum::<f64>() / noisy.len() as f64;
        let var =
            noisy.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (noisy.len() - 1) as f64;
        let std = var.sqrt();
        assert!((std - 0.2).abs() / 0.2 < 0.05, "std = {std}");
    }

    #[test]
    fn passage_deterministic_for_fixed_inputs() {
        let girder = quarter_section_girder();
        let train = crh380_train(330.0, Lane::Up);
        let preset = IrregularityPreset {
            label: "bad-6".into(),
            level: 2.0,
            seed: 77,
        };
        let a = synthesize_passage(&train, &girder, None, &preset, 1000.0, &ctx("p")).unwrap();
        let b = synthesize_passage(&train, &girder, None, &preset, 1000.0, &ctx("p")).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.samples, y.samples);
        }
    }
}
