//! Joint least-squares polish of placed points against every consumed entry.
//!
//! Trilateration only uses three entries per point; the bridges carry extra
//! information that matters in far-field scenes, where the out-of-plane
//! coordinate of a trilaterated point is poorly conditioned.

use nalgebra::{DMatrix, DVector, Vector3};

use super::predicted_length;
use crate::geometry::{PathLabel, Point3};

const MAX_ITERATIONS: usize = 30;

fn cost(points: &[Point3], entries: &[(f64, PathLabel)]) -> f64 {
    entries.iter().map(|&(l, path)| (predicted_length(points, path) - l).powi(2)).sum()
}

fn unit(v: Vector3<f64>) -> Vector3<f64> {
    let n = v.norm();
    if n > 0.0 {
        v / n
    } else {
        Vector3::zeros()
    }
}

/// Levenberg-Marquardt on all coordinates. Returns refined points, or the
/// input unchanged when there is no redundancy or no improvement.
pub(crate) fn refine(points: &[Point3], entries: &[(f64, PathLabel)]) -> Vec<Point3> {
    let k = points.len();
    let dof = 3 * k;
    // Rotations about the sensor are free, so 3k - 3 entries just determine.
    if k < 3 || entries.len() <= dof - 3 {
        return points.to_vec();
    }
    let mut current = points.to_vec();
    let mut c0 = cost(&current, entries);
    let mut lambda = 1e-3;
    for _ in 0..MAX_ITERATIONS {
        if c0 == 0.0 {
            break;
        }
        let mut jac = DMatrix::<f64>::zeros(entries.len(), dof);
        let mut res = DVector::<f64>::zeros(entries.len());
        for (row, &(l, path)) in entries.iter().enumerate() {
            res[row] = predicted_length(&current, path) - l;
            match path {
                PathLabel::Ping(i) => {
                    let g = unit(current[i].coords) * 2.0;
                    jac.view_mut((row, 3 * i), (1, 3)).copy_from(&g.transpose());
                }
                PathLabel::Loop(i, j) => {
                    let u = unit(current[i].coords - current[j].coords);
                    let gi = unit(current[i].coords) + u;
                    let gj = unit(current[j].coords) - u;
                    jac.view_mut((row, 3 * i), (1, 3)).copy_from(&gi.transpose());
                    jac.view_mut((row, 3 * j), (1, 3)).copy_from(&gj.transpose());
                }
            }
        }
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &res;
        let mut improved = false;
        for _ in 0..10 {
            let mut a = jtj.clone();
            for d in 0..dof {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&(-&grad));
            let trial: Vec<Point3> = current
                .iter()
                .enumerate()
                .map(|(i, p)| p + Vector3::new(step[3 * i], step[3 * i + 1], step[3 * i + 2]))
                .collect();
            let c1 = cost(&trial, entries);
            if c1 < c0 {
                let converged = c0 - c1 <= 1e-15 * c0;
                current = trial;
                c0 = c1;
                lambda = (lambda * 0.1).max(1e-12);
                improved = !converged;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    current
}

/// Expresses `points` in the canonical frame: first point on +x, second in
/// the xy-plane with y ≥ 0.
pub(crate) fn to_canonical(points: &mut [Point3]) {
    if points.len() < 2 {
        if let Some(p) = points.first_mut() {
            *p = Point3::new(p.coords.norm(), 0.0, 0.0);
        }
        return;
    }
    let ex = unit(points[0].coords);
    let perp = points[1].coords - ex * points[1].coords.dot(&ex);
    if perp.norm() <= 1e-15 * points[1].coords.norm() {
        return;
    }
    let ey = unit(perp);
    let ez = ex.cross(&ey);
    for p in points.iter_mut() {
        *p = Point3::new(p.coords.dot(&ex), p.coords.dot(&ey), p.coords.dot(&ez));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polish_reduces_noise_and_keeps_frame() {
        let truth = [
            Point3::new(3.0, 0.0, 0.0),
            Point3::new(2.8, 0.9, 0.0),
            Point3::new(3.3, 0.2, 0.8),
            Point3::new(2.6, -0.5, 0.4),
            Point3::new(3.1, 0.6, -0.6),
        ];
        let paths: Vec<PathLabel> = (0..5)
            .map(PathLabel::Ping)
            .chain((0..5).flat_map(|i| (i + 1..5).map(move |j| PathLabel::Loop(i, j))))
            .collect();
        let entries: Vec<(f64, PathLabel)> = paths.iter().map(|&p| (predicted_length(&truth, p), p)).collect();
        let mut start: Vec<Point3> = truth.to_vec();
        for (i, p) in start.iter_mut().enumerate() {
            *p += Vector3::new(1e-3, -2e-3, 1.5e-3) * (i as f64 - 2.0);
        }
        let mut out = refine(&start, &entries);
        assert!(cost(&out, &entries) < 1e-20);
        to_canonical(&mut out);
        assert!(out[0].y.abs() < 1e-12 && out[0].z.abs() < 1e-12 && out[1].z.abs() < 1e-12);
        for (a, b) in out.iter().zip(&truth) {
            assert!((a.coords.norm() - b.coords.norm()).abs() < 1e-9);
        }
    }

    #[test]
    fn exactly_determined_sets_are_left_alone() {
        let pts = [Point3::new(3.0, 0.0, 0.0), Point3::new(2.8, 0.9, 0.0)];
        let entries = [(6.0, PathLabel::Ping(0)), (6.0, PathLabel::Ping(1)), (7.0, PathLabel::Loop(0, 1))];
        assert_eq!(refine(&pts, &entries), pts.to_vec());
    }
}
