//! Two balls on a vertical half-line under gravity.
//!
//! The lower ball (mass `m1`) bounces elastically off the floor at height 0
//! and off the upper ball (mass `m2 < m1`). Between events both balls follow
//! free parabolas with the same acceleration, so their separation is linear
//! in time and both event times have closed forms.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DynamicsError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FallingBalls {
    pub m1: f64,
    pub m2: f64,
    pub g: f64,
    pub energy: f64,
}

impl Default for FallingBalls {
    fn default() -> Self {
        Self { m1: 2.0, m2: 1.0, g: 1.0, energy: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallsState {
    pub q1: f64,
    pub q2: f64,
    pub v1: f64,
    pub v2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BallsEvent {
    Floor,
    BallBall,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallsStep {
    pub event: BallsEvent,
    pub time: f64,
    /// Both event times agreed within `1e-12`; the floor event was taken.
    pub tie: bool,
}

/// Threshold for treating the two candidate event times as simultaneous.
const TIE_TOL: f64 = 1e-12;

/// Post-collision velocities of an elastic collision of masses `m1`, `m2`.
pub fn elastic(m1: f64, m2: f64, v1: f64, v2: f64) -> (f64, f64) {
    let m = m1 + m2;
    (((m1 - m2) * v1 + 2.0 * m2 * v2) / m, ((m2 - m1) * v2 + 2.0 * m1 * v1) / m)
}

impl FallingBalls {
    pub fn new(m1: f64, m2: f64, g: f64, energy: f64) -> Result<Self, DynamicsError> {
        if !(m1 > m2 && m2 > 0.0) {
            return Err(DynamicsError::InvalidParameter(format!(
                "need m1 > m2 > 0 for hyperbolicity, got m1 = {m1}, m2 = {m2}"
            )));
        }
        if !(g > 0.0 && energy > 0.0) {
            return Err(DynamicsError::InvalidParameter("gravity and energy must be positive".into()));
        }
        Ok(Self { m1, m2, g, energy })
    }

    pub fn energy_of(&self, s: &BallsState) -> f64 {
        0.5 * self.m1 * s.v1 * s.v1 + 0.5 * self.m2 * s.v2 * s.v2 + self.g * (self.m1 * s.q1 + self.m2 * s.q2)
    }

    /// Time until the lower ball reaches the floor.
    fn floor_time(&self, s: &BallsState) -> f64 {
        let disc = (s.v1 * s.v1 + 2.0 * self.g * s.q1).sqrt();
        if s.v1 >= 0.0 {
            (s.v1 + disc) / self.g
        } else {
            // Same root, written without cancellation.
            2.0 * s.q1 / (disc - s.v1)
        }
    }

    /// Advances to the next collision and applies it.
    pub fn step(&self, s: &mut BallsState) -> Result<BallsStep, DynamicsError> {
        let t_floor = self.floor_time(s);
        let t_ball = if s.v1 > s.v2 { (s.q2 - s.q1) / (s.v1 - s.v2) } else { f64::INFINITY };
        let tie = (t_floor - t_ball).abs() <= TIE_TOL * t_floor.max(1.0);
        let (event, t) =
            if t_floor <= t_ball || tie { (BallsEvent::Floor, t_floor) } else { (BallsEvent::BallBall, t_ball) };
        if !t.is_finite() {
            return Err(DynamicsError::Degenerate("no future collision".into()));
        }
        let half = 0.5 * self.g * t * t;
        match event {
            BallsEvent::Floor => {
                s.q2 += s.v2 * t - half;
                s.v2 -= self.g * t;
                s.v1 = -(s.v1 - self.g * t);
                s.q1 = 0.0;
                if s.q2 < 0.0 {
                    s.q2 = 0.0;
                }
            }
            BallsEvent::BallBall => {
                let q = s.q1 + s.v1 * t - half;
                let (u1, u2) = (s.v1 - self.g * t, s.v2 - self.g * t);
                let (w1, w2) = self.collide(u1, u2)?;
                *s = BallsState { q1: q.max(0.0), q2: q.max(0.0), v1: w1, v2: w2 };
            }
        }
        Ok(BallsStep { event, time: t, tie })
    }

    /// Ball-ball collision; approaching velocities are required.
    pub fn collide(&self, v1: f64, v2: f64) -> Result<(f64, f64), DynamicsError> {
        if v1 <= v2 {
            return Err(DynamicsError::Degenerate(format!("balls are not approaching: v1 = {v1}, v2 = {v2}")));
        }
        Ok(elastic(self.m1, self.m2, v1, v2))
    }

    /// A random state on the energy surface, drawn from `rng`.
    pub fn fiducial<R: Rng + ?Sized>(&self, rng: &mut R) -> BallsState {
        let budget = 0.9 * self.energy;
        let q1 = rng.random::<f64>() * budget / (self.g * (self.m1 + self.m2));
        let room = budget - self.g * (self.m1 + self.m2) * q1;
        let q2 = q1 + rng.random::<f64>() * room / (self.g * self.m2);
        let kinetic = self.energy - self.g * (self.m1 * q1 + self.m2 * q2);
        let psi = rng.random::<f64>() * std::f64::consts::TAU;
        BallsState {
            q1,
            q2,
            v1: (2.0 * kinetic / self.m1).sqrt() * psi.cos(),
            v2: (2.0 * kinetic / self.m2).sqrt() * psi.sin(),
        }
    }

    /// Section coordinates `(q, ψ)` of a state just after a ball-ball
    /// collision: `(√m1 v1, √m2 v2) = √(2K) (cos ψ, sin ψ)`, where `K` is the
    /// kinetic energy. Outgoing states (`v2 > v1`) fill a half circle of `ψ`.
    pub fn chart(&self, s: &BallsState) -> (f64, f64) {
        let psi = (self.m2.sqrt() * s.v2).atan2(self.m1.sqrt() * s.v1);
        (s.q1, psi)
    }

    /// State with both balls at height `q` and kinetic direction `ψ`.
    pub fn from_chart(&self, q: f64, psi: f64) -> Result<BallsState, DynamicsError> {
        let kinetic = self.energy - self.g * (self.m1 + self.m2) * q;
        if !(q >= 0.0) || kinetic <= 0.0 {
            return Err(DynamicsError::InvalidState(format!("height {q} outside the energy surface")));
        }
        let s = BallsState {
            q1: q,
            q2: q,
            v1: (2.0 * kinetic / self.m1).sqrt() * psi.cos(),
            v2: (2.0 * kinetic / self.m2).sqrt() * psi.sin(),
        };
        if s.v2 <= s.v1 {
            return Err(DynamicsError::InvalidState(format!("ψ = {psi} is not an outgoing direction")));
        }
        Ok(s)
    }

    /// First return to the ball-ball section from a post-collision state:
    /// the next post-collision state and the number of collisions taken.
    pub fn first_return(&self, s: &BallsState) -> Result<(BallsState, u64), DynamicsError> {
        let mut cur = *s;
        for n in 1..=MAX_RETURN_STEPS {
            if self.step(&mut cur)?.event == BallsEvent::BallBall {
                return Ok((cur, n));
            }
        }
        Err(DynamicsError::Degenerate(format!("no ball-ball collision within {MAX_RETURN_STEPS} events")))
    }
}

/// Cap on a single first-return excursion.
pub const MAX_RETURN_STEPS: u64 = 100_000_000;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn equal_masses_swap() {
        assert_eq!(elastic(1.0, 1.0, 2.0, -3.0), (-3.0, 2.0));
    }

    #[test]
    fn worked_collision() {
        let sys = FallingBalls::default();
        let (a, b) = sys.collide(1.0, -1.0).unwrap();
        assert!((a + 1.0 / 3.0).abs() < 1e-15);
        assert!((b - 5.0 / 3.0).abs() < 1e-15);
        assert!((2.0 * a + b - 1.0).abs() < 1e-15);
        assert!((0.5 * 2.0 * a * a + 0.5 * b * b - 1.5).abs() < 1e-14);
        assert!(sys.collide(0.5, 0.5).is_err());
    }

    #[test]
    fn invalid_masses() {
        assert!(FallingBalls::new(1.0, 1.0, 1.0, 1.0).is_err());
        assert!(FallingBalls::new(1.0, 2.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn energy_conserved() {
        let sys = FallingBalls::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = sys.fiducial(&mut rng);
        let e0 = sys.energy_of(&s);
        assert!((e0 - sys.energy).abs() < 1e-12);
        for _ in 0..100_000 {
            sys.step(&mut s).unwrap();
            assert!(s.q1 >= 0.0 && s.q1 <= s.q2);
        }
        assert!((sys.energy_of(&s) - e0).abs() / e0 < 1e-10);
    }

    #[test]
    fn chart_round_trip() {
        let sys = FallingBalls::default();
        let s = sys.from_chart(0.1, 1.2).unwrap();
        let (q, psi) = sys.chart(&s);
        assert!((q - 0.1).abs() < 1e-15 && (psi - 1.2).abs() < 1e-12);
        assert!(sys.from_chart(0.1, 0.0).is_err());
    }
}
