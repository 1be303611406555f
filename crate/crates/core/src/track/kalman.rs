//! Constant-velocity Kalman filter over `(x, y, vx, vy)`.

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Vector2, Vector4};

use crate::domain::Point;
use crate::{Error, Result};

/// Relative tolerance for the positive-semidefinite check. A covariance may
/// reach exact zero variance (noise-free updates), so semidefinite matrices
/// are accepted.
const PSD_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanState {
    pub mean: Vector4<f64>,
    pub covariance: Matrix4<f64>,
}

impl KalmanState {
    pub fn new(mean: Vector4<f64>, covariance: Matrix4<f64>) -> Result<Self> {
        check_covariance(&covariance)?;
        Ok(Self { mean, covariance })
    }

    /// Stationary prior at `pos`.
    pub fn at_rest(pos: Point, pos_var: f64, vel_var: f64) -> Result<Self> {
        Self::new(
            Vector4::new(pos.x, pos.y, 0.0, 0.0),
            Matrix4::from_diagonal(&Vector4::new(pos_var, pos_var, vel_var, vel_var)),
        )
    }

    pub fn position(&self) -> Point {
        Point::new(self.mean[0], self.mean[1])
    }

    pub fn velocity(&self) -> Point {
        Point::new(self.mean[2], self.mean[3])
    }
}

fn check_covariance(p: &Matrix4<f64>) -> Result<()> {
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonSpdCovariance);
    }
    let scale = p.amax().max(1.0);
    if (p - p.transpose()).amax() > PSD_TOL * scale {
        return Err(Error::NonSpdCovariance);
    }
    let eig = p.symmetric_eigen().eigenvalues;
    if eig.min() < -PSD_TOL * scale {
        return Err(Error::NonSpdCovariance);
    }
    Ok(())
}

/// `x ← F x`, `P ← F P Fᵀ + q·dt·I` with `F = [[I, dt I], [0, I]]`.
pub fn kalman_predict(s: &KalmanState, dt: f64, q: f64) -> Result<KalmanState> {
    check_covariance(&s.covariance)?;
    let mut f = Matrix4::identity();
    f[(0, 2)] = dt;
    f[(1, 3)] = dt;
    let covariance = f * s.covariance * f.transpose() + Matrix4::identity() * (q * dt);
    Ok(KalmanState {
        mean: f * s.mean,
        covariance: symmetrize(covariance),
    })
}

/// Position measurement `z` with isotropic noise `r`.
pub fn kalman_update(s: &KalmanState, z: Point, r: f64) -> Result<KalmanState> {
    check_covariance(&s.covariance)?;
    let h = Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0);
    let innovation = Vector2::new(z.x, z.y) - h * s.mean;
    let sys = h * s.covariance * h.transpose() + Matrix2::identity() * r;
    let sys_inv = sys.try_inverse().ok_or(Error::SingularInnovation)?;
    let gain = s.covariance * h.transpose() * sys_inv;
    let mean = s.mean + gain * innovation;
    let covariance = (Matrix4::identity() - gain * h) * s.covariance;
    Ok(KalmanState {
        mean,
        covariance: symmetrize(covariance),
    })
}

fn symmetrize(p: Matrix4<f64>) -> Matrix4<f64> {
    (p + p.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    use super::*;

    #[test]
    fn noise_free_constant_velocity_is_learned_in_two_updates() {
        let mut s = KalmanState::at_rest(Point::new(0.0, 0.0), 1.0, 100.0).unwrap();
        let truth = |t: f64| Point::new(1.0 + 2.0 * t, 3.0 - 0.5 * t);
        s = kalman_update(&s, truth(0.0), 0.0).unwrap();
        s = kalman_predict(&s, 1.0, 0.0).unwrap();
        s = kalman_update(&s, truth(1.0), 0.0).unwrap();
        let pred = kalman_predict(&s, 1.0, 0.0).unwrap();
        assert!(pred.position().dist(truth(2.0)) < 1e-9);
        assert!(pred.velocity().dist(Point::new(2.0, -0.5)) < 1e-9);
    }

    #[test]
    fn stationary_variance_shrinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut s = KalmanState::at_rest(Point::new(0.0, 0.0), 4.0, 1.0).unwrap();
        let mut last = s.covariance[(0, 0)];
        for _ in 0..30 {
            s = kalman_predict(&s, 1.0, 0.0).unwrap();
            let z = Point::new(5.0 + noise.sample(&mut rng), 5.0 + noise.sample(&mut rng));
            s = kalman_update(&s, z, 0.25).unwrap();
            let var = s.covariance[(0, 0)];
            assert!(var < last, "{var} !< {last}");
            last = var;
            assert_eq!(s.covariance, s.covariance.transpose());
        }
        assert!(s.position().dist(Point::new(5.0, 5.0)) < 0.5);
    }

    #[test]
    fn zero_dt_is_identity() {
        let s = KalmanState::new(
            Vector4::new(1.0, 2.0, 3.0, 4.0),
            Matrix4::from_diagonal(&Vector4::new(1.0, 2.0, 3.0, 4.0)),
        )
        .unwrap();
        assert_eq!(kalman_predict(&s, 0.0, 0.01).unwrap(), s);
    }

    #[test]
    fn invalid_covariances() {
        let mut p = Matrix4::identity();
        p[(0, 0)] = -1.0;
        assert!(matches!(
            KalmanState::new(Vector4::zeros(), p),
            Err(Error::NonSpdCovariance)
        ));
        let mut p = Matrix4::identity();
        p[(0, 1)] = 0.5;
        assert!(KalmanState::new(Vector4::zeros(), p).is_err());
        let bad = KalmanState {
            mean: Vector4::zeros(),
            covariance: -Matrix4::identity(),
        };
        assert!(kalman_predict(&bad, 1.0, 0.0).is_err());
        let zero = KalmanState::new(Vector4::zeros(), Matrix4::zeros()).unwrap();
        assert!(matches!(
            kalman_update(&zero, Point::new(1.0, 1.0), 0.0),
            Err(Error::SingularInnovation)
        ));
    }
}
