use nalgebra::{Matrix3, Vector3};

use super::Point;
use crate::{Error, Result};

const SINGULAR_EPS: f64 = 1e-12;

/// Pinhole calibration with the ground-plane homography derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub intrinsics: Matrix3<f64>,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    homography: Matrix3<f64>,
    inverse: Matrix3<f64>,
}

impl CameraModel {
    pub fn new(
        intrinsics: Matrix3<f64>,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        let homography = homography_from_calib(&intrinsics, &rotation, &translation)?;
        let inverse = homography
            .try_inverse()
            .ok_or(Error::SingularHomography(homography.determinant().abs()))?;
        Ok(Self {
            intrinsics,
            rotation,
            translation,
            homography,
            inverse,
        })
    }

    /// Ground-to-image homography.
    pub fn homography(&self) -> &Matrix3<f64> {
        &self.homography
    }

    pub fn project_ground_to_image(&self, p: Point) -> Result<Point> {
        project_point(&self.homography, p)
    }

    pub fn project_image_to_ground(&self, p: Point) -> Result<Point> {
        project_point(&self.inverse, p)
    }
}

/// `K [r1 r2 t]`: the homography mapping z=0 ground points to the image.
pub fn homography_from_calib(
    k: &Matrix3<f64>,
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
) -> Result<Matrix3<f64>> {
    let rt = Matrix3::from_columns(&[r.column(0).into_owned(), r.column(1).into_owned(), *t]);
    let h = k * rt;
    let det = h.determinant();
    if det.abs() < SINGULAR_EPS {
        return Err(Error::SingularHomography(det.abs()));
    }
    Ok(h)
}

pub fn project_point(h: &Matrix3<f64>, p: Point) -> Result<Point> {
    let v = h * Vector3::new(p.x, p.y, 1.0);
    if v.z.abs() <= SINGULAR_EPS {
        return Err(Error::PointAtInfinity(v.z));
    }
    Ok(Point::new(v.x / v.z, v.y / v.z))
}

#[cfg(test)]
mod tests {
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn identity_and_scaling_calibrations() {
        let t = Vector3::new(0.0, 0.0, 1.0);
        let h = homography_from_calib(&Matrix3::identity(), &Matrix3::identity(), &t).unwrap();
        assert_eq!(h, Matrix3::identity());
        let k = Matrix3::from_diagonal(&Vector3::new(2.0, 2.0, 1.0));
        let h = homography_from_calib(&k, &Matrix3::identity(), &t).unwrap();
        assert_eq!(h, k);
    }

    #[test]
    fn singular_calibration_is_rejected() {
        let t = Vector3::zeros();
        assert!(matches!(
            homography_from_calib(&Matrix3::identity(), &Matrix3::identity(), &t),
            Err(Error::SingularHomography(_))
        ));
    }

    #[test]
    fn project_point_examples() {
        let p = project_point(&Matrix3::identity(), Point::new(3.5, 2.0)).unwrap();
        assert_eq!(p, Point::new(3.5, 2.0));
        let d = Matrix3::from_diagonal(&Vector3::new(2.0, 2.0, 1.0));
        assert_eq!(
            project_point(&d, Point::new(1.0, 1.0)).unwrap(),
            Point::new(2.0, 2.0)
        );
        let shift = Matrix3::new(1.0, 0.0, 5.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert_eq!(
            project_point(&shift, Point::new(0.0, 0.0)).unwrap(),
            Point::new(5.0, 0.0)
        );
        let flat = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0);
        assert!(matches!(
            project_point(&flat, Point::new(0.0, 3.0)),
            Err(Error::PointAtInfinity(_))
        ));
    }

    #[test]
    fn random_calibrations_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let k = Matrix3::new(
                rng.random_range(500.0..1500.0),
                0.0,
                rng.random_range(300.0..700.0),
                0.0,
                rng.random_range(500.0..1500.0),
                rng.random_range(200.0..500.0),
                0.0,
                0.0,
                1.0,
            );
            let r = Rotation3::from_euler_angles(
                rng.random_range(-2.5..-1.2),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.5..0.5),
            )
            .into_inner();
            let t = Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(4.0..10.0),
            );
            let cam = CameraModel::new(k, r, t).unwrap();
            let mut worst: f64 = 0.0;
            for _ in 0..100 {
                let img = Point::new(rng.random_range(0.0..1000.0), rng.random_range(0.0..700.0));
                let Ok(ground) = cam.project_image_to_ground(img) else {
                    continue;
                };
                let back = cam.project_ground_to_image(ground).unwrap();
                worst = worst.max(back.dist(img));
            }
            assert!(worst < 1e-9, "round-trip error {worst}");
        }
    }
}
