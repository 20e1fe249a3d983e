//! Girder geometry, sensor layout, and the surrogate response parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::{ChannelMeta, Component, Section};

use super::train::Lane;

/// Tunable constants of the surrogate response model.
///
/// None of these come from the reference study; they shape the synthetic
/// stand-in for the finite-element ground truth and are recorded in every
/// dataset manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurrogateParams {
    /// Microstrain per (kN x influence ordinate).
    pub strain_scale: f64,
    /// Local-flexibility gain: a damaged component amplifies by
    /// `1 / (1 - kappa * delta)` while an axle loads its section.
    pub kappa: f64,
    /// Half-width of the loading window around a damaged section, meters.
    pub damage_window_halfwidth_m: f64,
    /// Band of the damage-induced local fluctuation, Hz.
    pub fluctuation_band_hz: (f64, f64),
    /// Fluctuation RMS as a fraction of (delta x channel peak strain).
    pub fluctuation_rms_per_delta: f64,
    /// Band of the track-roughness response, Hz.
    pub roughness_band_hz: (f64, f64),
    /// Power-law exponent of the roughness PSD within its band.
    pub roughness_exponent: f64,
    /// Roughness RMS scales with `(v / ref)^exponent`.
    pub roughness_speed_exponent: f64,
    pub roughness_ref_speed_kmh: f64,
    /// Microstrain RMS of a level-1.0 irregularity at the reference speed.
    pub roughness_base_rms: f64,
}

impl Default for SurrogateParams {
    fn default() -> Self {
        SurrogateParams {
            strain_scale: 0.02,
            kappa: 1.0,
            damage_window_halfwidth_m: 4.0,
            fluctuation_band_hz: (20.0, 80.0),
            fluctuation_rms_per_delta: 0.02,
            roughness_band_hz: (1.0, 50.0),
            roughness_exponent: 2.0,
            roughness_speed_exponent: 1.5,
            roughness_ref_speed_kmh: 360.0,
            roughness_base_rms: 1.0,
        }
    }
}

/// One strain channel: metadata plus its response couplings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub meta: ChannelMeta,
    /// Sensitivity to each component's strain, in [0, 1]; the primary
    /// component has gain 1.
    pub gains: Vec<(Component, f64)>,
    /// Bending-torsion factor when the train runs on the up lane.
    pub tau_up: f64,
    /// Same for the down lane.
    pub tau_down: f64,
}

impl ChannelSpec {
    pub fn tau(&self, lane: Lane) -> f64 {
        match lane {
            Lane::Up => self.tau_up,
            Lane::Down => self.tau_down,
        }
    }

    pub fn gain(&self, component: Component) -> f64 {
        self.gains
            .iter()
            .find(|(c, _)| *c == component)
            .map(|(_, g)| *g)
            .unwrap_or(0.0)
    }

    pub fn total_gain(&self) -> f64 {
        self.gains.iter().map(|(_, g)| g).sum()
    }
}

/// Girder span, sensors, and surrogate constants.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GirderSpec {
    pub span_m: f64,
    pub channels: Vec<ChannelSpec>,
    pub params: SurrogateParams,
}

impl GirderSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.span_m > 0.0) {
            return Err(Error::invalid("span must be positive".to_string()));
        }
        let mut seen: Vec<&str> = Vec::new();
        for ch in &self.channels {
            ch.meta.validate(self.span_m)?;
            if seen.contains(&ch.meta.channel_id.as_str()) {
                return Err(Error::invalid(format!(
                    "duplicate channel id {}",
                    ch.meta.channel_id
                )));
            }
            seen.push(&ch.meta.channel_id);
            if ch.gains.is_empty() {
                return Err(Error::invalid(format!(
                    "channel {} has no component gains",
                    ch.meta.channel_id
                )));
            }
            let max = ch.gains.iter().map(|(_, g)| *g).fold(f64::MIN, f64::max);
            if (max - 1.0).abs() > 1e-12 {
                return Err(Error::invalid(format!(
                    "channel {}: primary component gain must be 1, max is {max}",
                    ch.meta.channel_id
                )));
            }
            if ch.gains.iter().any(|(_, g)| !(0.0..=1.0).contains(g)) {
                return Err(Error::invalid(format!(
                    "channel {}: gains must lie in [0, 1]",
                    ch.meta.channel_id
                )));
            }
            if ch.tau_up <= 0.0 || ch.tau_down <= 0.0 {
                return Err(Error::invalid(format!(
                    "channel {}: lane factors must be positive",
                    ch.meta.channel_id
                )));
            }
        }
        Ok(())
    }

    pub fn channel(&self, id: &str) -> Option<&ChannelSpec> {
        self.channels.iter().find(|c| c.meta.channel_id == id)
    }

    pub fn channel_metas(&self) -> Vec<ChannelMeta> {
        self.channels.iter().map(|c| c.meta.clone()).collect()
    }
}

fn channel(
    id: &str,
    section: Section,
    span: f64,
    gains: Vec<(Component, f64)>,
    affinity: Vec<Component>,
    near_side: bool,
) -> ChannelSpec {
    // the up lane runs on the near side: near channels respond more strongly
    let (tau_up, tau_down) = if near_side { (1.15, 0.85) } else { (0.85, 1.15) };
    ChannelSpec {
        meta: ChannelMeta {
            channel_id: id.to_string(),
            section,
            position_label: id.to_string(),
            longitudinal_coord: section.coord(span),
            component_affinity: affinity,
        },
        gains,
        tau_up,
        tau_down,
    }
}

/// Four sensors for one section: bottom and top, near and far side.
fn section_channels(span: f64, section: Section, bn: &str, bf: &str, tn: &str, tf: &str) -> Vec<ChannelSpec> {
    use Component::*;
    vec![
        channel(
            bn,
            section,
            span,
            vec![(BottomPlate, 1.0), (LeftWeb, 0.6)],
            vec![BottomPlate, LeftWeb],
            true,
        ),
        channel(
            bf,
            section,
            span,
            vec![(BottomPlate, 1.0), (RightWeb, 0.6)],
            vec![BottomPlate, RightWeb],
            false,
        ),
        channel(
            tn,
            section,
            span,
            vec![(TopPlate, 1.0), (LeftTrackPlate, 0.5)],
            vec![TopPlate, LeftTrackPlate],
            true,
        ),
        channel(
            tf,
            section,
            span,
            vec![(TopPlate, 1.0), (RightTrackPlate, 0.5)],
            vec![TopPlate, RightTrackPlate],
            false,
        ),
    ]
}

/// Default 32 m girder with four sensors on each of the three key sections.
pub fn default_girder() -> GirderSpec {
    let span = 32.0;
    let mut channels = Vec::new();
    channels.extend(section_channels(span, Section::Quarter, "P3b", "P12b", "P3t", "P12t"));
    channels.extend(section_channels(span, Section::Mid, "P5b", "P14b", "P5t", "P14t"));
    channels.extend(section_channels(span, Section::ThreeQuarter, "P7b", "P16b", "P7t", "P16t"));
    GirderSpec {
        span_m: span,
        channels,
        params: SurrogateParams::default(),
    }
}

/// Reduced girder carrying only the quarter-span sensors; same physics,
/// a quarter of the data volume.
pub fn quarter_section_girder() -> GirderSpec {
    let span = 32.0;
    GirderSpec {
        span_m: span,
        channels: section_channels(span, Section::Quarter, "P3b", "P12b", "P3t", "P12t"),
        params: SurrogateParams::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_girder_valid() {
        let g = default_girder();
        g.validate().unwrap();
        assert_eq!(g.channels.len(), 12);
        // near-side channel leads on the up lane
        let near = g.channel("P3b").unwrap();
        let far = g.channel("P12b").unwrap();
        assert!(near.tau(Lane::Up) > far.tau(Lane::Up));
        assert!(far.tau(Lane::Down) > near.tau(Lane::Down));
        // affinities mirror the sensor placement
        assert!(near.meta.component_affinity.contains(&Component::LeftWeb));
        assert!(!near.meta.component_affinity.contains(&Component::RightWeb));
        assert_eq!(near.gain(Component::RightWeb), 0.0);
    }

    #[test]
    fn gain_normalization_enforced() {
        let mut g = quarter_section_girder();
        g.channels[0].gains = vec![(Component::BottomPlate, 0.7)];
        assert!(g.validate().is_err());
    }
}
