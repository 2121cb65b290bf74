use rand::Rng;
use serde::{Deserialize, Serialize};

pub const MIN_SPEED: f64 = 0.4;
pub const MAX_SPEED: f64 = 1.2;
pub const MAX_YAW_RATE: f64 = 1.0;

/// Base velocity command in the body frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Command {
    pub vx: f64,
    pub vy: f64,
    pub yaw_rate: f64,
}

impl Command {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn forward(speed: f64) -> Self {
        Command {
            vx: speed,
            vy: 0.0,
            yaw_rate: 0.0,
        }
    }

    pub fn planar_speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.vx, self.vy, self.yaw_rate]
    }
}

/// Speed uniform in [0.4, 1.2] m/s, heading uniform, yaw rate uniform in
/// [-1, 1] rad/s.
pub fn sample_command<R: Rng + ?Sized>(rng: &mut R) -> Command {
    let speed = rng.gen_range(MIN_SPEED..=MAX_SPEED);
    let heading = rng.gen_range(0.0..std::f64::consts::TAU);
    Command {
        vx: speed * heading.cos(),
        vy: speed * heading.sin(),
        yaw_rate: rng.gen_range(-MAX_YAW_RATE..=MAX_YAW_RATE),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn speeds_in_range_and_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100_000 {
            let c = sample_command(&mut rng);
            let s = c.planar_speed();
            assert!((MIN_SPEED - 1e-12..=MAX_SPEED + 1e-12).contains(&s), "{s}");
            assert!(c.yaw_rate.abs() <= 1.0);
        }
        let a: Vec<_> = (0..10)
            .scan(ChaCha8Rng::seed_from_u64(9), |r, _| Some(sample_command(r)))
            .collect();
        let b: Vec<_> = (0..10)
            .scan(ChaCha8Rng::seed_from_u64(9), |r, _| Some(sample_command(r)))
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn speed_distribution_is_uniform() {
        // one-sample Kolmogorov-Smirnov against U[0.4, 1.2]
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 20_000;
        let mut speeds: Vec<f64> = (0..n).map(|_| sample_command(&mut rng).planar_speed()).collect();
        speeds.sort_by(f64::total_cmp);
        let d = speeds
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let cdf = (s - MIN_SPEED) / (MAX_SPEED - MIN_SPEED);
                (cdf - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - cdf).abs())
            })
            .fold(0.0, f64::max);
        // 1% critical value
        let critical = 1.628 / (n as f64).sqrt();
        assert!(d < critical, "D = {d}, critical {critical}");
    }
}
