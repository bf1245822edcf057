//! Seeded synthetic trips for tests and dataset-free runs.
//!
//! Behaviour is encoded in the speed process: normal trips track a cruise
//! speed with small accelerations, aggressive trips add large noise and
//! abrupt accelerate/brake bursts, drowsy trips drift slowly around the
//! cruise speed.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

use super::{Behaviour, DriverId, GpsRecord, Road, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthSpec {
    pub seed: u64,
    pub drivers: usize,
    pub trips_per_behaviour: usize,
    pub trip_len_s: usize,
}

impl SynthSpec {
    pub fn new(seed: u64, drivers: usize, trips_per_behaviour: usize, trip_len_s: usize) -> Self {
        SynthSpec { seed, drivers, trips_per_behaviour, trip_len_s }
    }
}

const METRES_PER_DEG: f64 = 111_320.0;

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("positive standard deviation")
}

/// Generates `drivers × 3 × trips_per_behaviour` trajectories of
/// `trip_len_s` one-second records. Output depends only on the arguments.
pub fn generate_synthetic_dataset(spec: SynthSpec) -> Result<Vec<Trajectory>> {
    if spec.drivers == 0 || spec.trips_per_behaviour == 0 || spec.trip_len_s == 0 {
        return Err(Error::InvalidConfig("synthetic dataset counts must be positive".into()));
    }
    if spec.drivers > usize::from(DriverId::MAX) {
        return Err(Error::InvalidConfig(format!("at most {} synthetic drivers", DriverId::MAX)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.drivers * 3 * spec.trips_per_behaviour);
    for (d_idx, driver) in DriverId::all().take(spec.drivers).enumerate() {
        // per-driver style offset so drivers are distinguishable but overlapping
        let style = rng.random_range(-5.0..5.0);
        for behaviour in Behaviour::ALL {
            for trip in 0..spec.trips_per_behaviour {
                let road = if (d_idx + trip) % 2 == 0 { Road::Motorway } else { Road::Secondary };
                let name = format!(
                    "synth{:04}-{}km-{}-{}-{}",
                    out.len(),
                    road.nominal_length_km(),
                    driver,
                    behaviour.token(),
                    road.token()
                );
                let records = synth_records(&mut rng, behaviour, road, style, spec.trip_len_s);
                out.push(Trajectory::new(name, driver, behaviour, road, road.nominal_length_km(), records)?);
            }
        }
    }
    out.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    Ok(out)
}

fn synth_records(rng: &mut ChaCha8Rng, behaviour: Behaviour, road: Road, style: f64, len: usize) -> Vec<GpsRecord> {
    let limit = road.speed_limit_kmh();
    let accuracy_noise = normal(0.3);
    let heading_noise = normal(0.02);

    let cruise = match behaviour {
        Behaviour::Normal => 0.85 * limit + style,
        Behaviour::Drowsy => 0.80 * limit + style,
        Behaviour::Aggressive => 1.05 * limit + style,
    };
    let drift_period = rng.random_range(60.0..120.0);
    let drift_phase = rng.random_range(0.0..2.0 * PI);

    let mut speed = cruise * rng.random_range(0.9..1.0);
    let mut heading = rng.random_range(0.0..2.0 * PI);
    let mut lat = 40.40 + rng.random_range(-0.05..0.05);
    let mut lon = -3.70 + rng.random_range(-0.05..0.05);
    let alt_base = rng.random_range(550.0..750.0);
    let mut burst_left = 0usize;
    let mut burst_accel = 0.0;

    let mut records = Vec::with_capacity(len);
    for t in 0..len {
        let tf = t as f64;
        let accel = match behaviour {
            Behaviour::Normal => 0.10 * (cruise - speed) + normal(0.4).sample(rng),
            Behaviour::Drowsy => {
                let target = cruise + 8.0 * (2.0 * PI * tf / drift_period + drift_phase).sin();
                0.05 * (target - speed) + normal(0.25).sample(rng)
            }
            Behaviour::Aggressive => {
                if burst_left == 0 && rng.random::<f64>() < 0.08 {
                    burst_left = rng.random_range(2..=4);
                    let magnitude = rng.random_range(6.0..12.0);
                    burst_accel = if speed > cruise * 0.8 && rng.random::<bool>() { -magnitude } else { magnitude };
                }
                let base = 0.15 * (cruise - speed) + normal(2.0).sample(rng);
                if burst_left > 0 {
                    burst_left -= 1;
                    base + burst_accel
                } else {
                    base
                }
            }
        };
        if t > 0 {
            speed = (speed + accel).max(0.0);
            heading += heading_noise.sample(rng);
            let dist_m = speed / 3.6;
            lat += dist_m * heading.cos() / METRES_PER_DEG;
            lon += dist_m * heading.sin() / (METRES_PER_DEG * lat.to_radians().cos());
        }
        let alt = alt_base + 20.0 * (tf / 200.0).sin() + accuracy_noise.sample(rng);
        records.push(GpsRecord {
            timestamp_s: tf,
            speed_kmh: speed,
            lat_deg: lat.clamp(-90.0, 90.0),
            lon_deg: lon.clamp(-180.0, 180.0),
            alt_m: alt,
            vacc_m: rng.random_range(2.0..8.0),
            hacc_m: rng.random_range(3.0..12.0),
        });
    }
    records
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_lengths() {
        let trips = generate_synthetic_dataset(SynthSpec::new(1, 2, 1, 300)).unwrap();
        assert_eq!(trips.len(), 6);
        assert!(trips.iter().all(|t| t.records.len() == 300));
    }

    #[test]
    fn deterministic() {
        let a = generate_synthetic_dataset(SynthSpec::new(1, 2, 1, 300)).unwrap();
        let b = generate_synthetic_dataset(SynthSpec::new(1, 2, 1, 300)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_dataset(SynthSpec::new(2, 2, 1, 300)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_zero_counts() {
        assert!(generate_synthetic_dataset(SynthSpec::new(1, 0, 1, 300)).is_err());
        assert!(generate_synthetic_dataset(SynthSpec::new(1, 7, 1, 300)).is_err());
    }

    #[test]
    fn names_are_parseable() {
        for t in generate_synthetic_dataset(SynthSpec::new(3, 6, 2, 10)).unwrap() {
            let tag = super::super::parse_trip_folder_name(&t.name).unwrap();
            assert_eq!((tag.driver, tag.behaviour, tag.road), (t.driver, t.behaviour, t.road));
        }
    }
}
