//! Train geometry and axle loads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which of the two lanes the train runs on. The up lane passes closer to the
/// near-side sensors, twisting the girder toward them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lane {
    Up,
    Down,
}

/// One carriage: total weight and its four axles.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CarriageSpec {
    pub label: String,
    pub total_weight_kn: f64,
    /// Four axle weights; their mean must equal a quarter of the total.
    pub axle_weights_kn: [f64; 4],
    /// Axle positions in meters from the carriage front, strictly increasing.
    pub axle_offsets_m: [f64; 4],
}

impl CarriageSpec {
    fn validate(&self) -> Result<()> {
        let sum: f64 = self.axle_weights_kn.iter().sum();
        if (sum - self.total_weight_kn).abs() > 1e-6 * self.total_weight_kn.max(1.0) {
            return Err(Error::invalid(format!(
                "carriage {}: axle weights sum to {sum}, total is {}",
                self.label, self.total_weight_kn
            )));
        }
        for w in self.axle_offsets_m.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::invalid(format!(
                    "carriage {}: axle offsets must strictly increase",
                    self.label
                )));
            }
        }
        if self.axle_weights_kn.iter().any(|w| *w <= 0.0) {
            return Err(Error::invalid(format!(
                "carriage {}: axle weights must be positive",
                self.label
            )));
        }
        Ok(())
    }
}

/// Full train: ordered carriages, shared geometry, speed, and lane.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSpec {
    pub carriages: Vec<CarriageSpec>,
    pub carriage_length_m: f64,
    pub speed_kmh: f64,
    pub lane: Lane,
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.carriages.is_empty() {
            return Err(Error::invalid("train has no carriages".to_string()));
        }
        if !(self.speed_kmh > 0.0) {
            return Err(Error::invalid(format!("speed must be positive, got {}", self.speed_kmh)));
        }
        for c in &self.carriages {
            c.validate()?;
            if c.axle_offsets_m[3] > self.carriage_length_m {
                return Err(Error::invalid(format!(
                    "carriage {}: last axle offset beyond carriage length",
                    c.label
                )));
            }
        }
        Ok(())
    }

    pub fn speed_ms(&self) -> f64 {
        self.speed_kmh / 3.6
    }

    pub fn length_m(&self) -> f64 {
        self.carriages.len() as f64 * self.carriage_length_m
    }

    /// Axles as (distance behind the train head, weight in kN), head first.
    pub fn axle_layout(&self) -> Vec<(f64, f64)> {
        let mut axles = Vec::with_capacity(self.carriages.len() * 4);
        for (i, c) in self.carriages.iter().enumerate() {
            let front = i as f64 * self.carriage_length_m;
            for (off, w) in c.axle_offsets_m.iter().zip(&c.axle_weights_kn) {
                axles.push((front + off, *w));
            }
        }
        axles
    }

    /// Uniformly scaled axle weights, used for the weight-class variants.
    pub fn scaled(&self, factor: f64) -> TrainSpec {
        let mut t = self.clone();
        for c in &mut t.carriages {
            c.total_weight_kn *= factor;
            for w in &mut c.axle_weights_kn {
                *w *= factor;
            }
        }
        t
    }

    pub fn with_speed(mut self, speed_kmh: f64) -> TrainSpec {
        self.speed_kmh = speed_kmh;
        self
    }
}

/// Eight-carriage high-speed train (4 motor + 4 trailer cars) with the total
/// weights of the reference consist under its passenger load. Axle weights are
/// uniform within a carriage; bogie geometry is typical for 25 m cars.
pub fn crh380_train(speed_kmh: f64, lane: Lane) -> TrainSpec {
    const TOTALS: [(&str, f64); 8] = [
        ("M1", 574.3),
        ("T2", 666.4),
        ("M3", 651.7),
        ("T4", 599.8),
        ("T5", 612.5),
        ("M6", 666.4),
        ("T7", 654.6),
        ("M8", 571.3),
    ];
    // bogie centers 17.375 m apart, centered in the carriage; 2.5 m wheelbase
    let offsets = [2.5625, 5.0625, 19.9375, 22.4375];
    let carriages = TOTALS
        .iter()
        .map(|(label, total)| CarriageSpec {
            label: (*label).to_string(),
            total_weight_kn: *total,
            axle_weights_kn: [total / 4.0; 4],
            axle_offsets_m: offsets,
        })
        .collect();
    TrainSpec {
        carriages,
        carriage_length_m: 25.0,
        speed_kmh,
        lane,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_train_geometry() {
        let t = crh380_train(360.0, Lane::Up);
        t.validate().unwrap();
        assert_eq!(t.length_m(), 200.0);
        let axles = t.axle_layout();
        assert_eq!(axles.len(), 32);
        // M1 average axle weight from the consist table
        assert!((axles[0].1 - 143.575).abs() < 1e-9);
        // offsets strictly increase across the whole train
        for w in axles.windows(2) {
            assert!(w[1].0 > w[0].0);
        }
    }

    #[test]
    fn scaling_preserves_the_axle_invariant() {
        let t = crh380_train(360.0, Lane::Up).scaled(1.10);
        t.validate().unwrap();
        assert!((t.carriages[0].total_weight_kn - 574.3 * 1.10).abs() < 1e-9);
    }

    #[test]
    fn bad_offsets_rejected() {
        let mut t = crh380_train(360.0, Lane::Up);
        t.carriages[0].axle_offsets_m = [2.0, 2.0, 3.0, 4.0];
        assert!(t.validate().is_err());
    }
}
