//! Scenes too small for a five-point core: one or two points plus the sensor.

use super::core::{loop_through, BaseTriangle};
use super::{Builder, Diagnostics, ReconParams, ReconStatus, Reconstruction};
use crate::geometry::{AnchorFrame, PathLabel, Point3, Solutions};

pub(crate) fn reconstruct(lengths: &[f64], p: &ReconParams) -> Reconstruction {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by(|&a, &b| lengths[a].total_cmp(&lengths[b]));
    let placed = match lengths.len() {
        3 => two_points(lengths, &order, p.tol),
        6 => three_points(lengths, &order, p.tol),
        _ => None,
    };
    match placed {
        Some(b) if p.expected_points.is_none_or(|n| n == b.points.len()) => {
            b.finish(ReconStatus::Complete, Diagnostics::default(), p.tol)
        }
        Some(b) => b.finish(ReconStatus::Partial, Diagnostics::default(), p.tol),
        None => Reconstruction::not_found(lengths, Diagnostics::default()),
    }
}

fn base(lengths: &[f64], a: usize, b: usize, link: usize, tol: f64) -> Option<BaseTriangle> {
    let (d_a, d_b) = (lengths[a] / 2.0, lengths[b] / 2.0);
    let d_ab = lengths[link] - d_a - d_b;
    if d_ab < (d_a - d_b).abs() - tol || d_ab > d_a + d_b + tol {
        return None;
    }
    Some(BaseTriangle { pings: [a, b], link, d_a, d_b, d_ab: d_ab.max(0.0) })
}

fn two_points<'a>(lengths: &'a [f64], order: &[usize], tol: f64) -> Option<Builder<'a>> {
    let t = base(lengths, order[0], order[1], order[2], tol)?;
    let (pa, pb) = t.place();
    let mut b = Builder::new(lengths);
    b.points = vec![pa, pb];
    b.consume(order[0], PathLabel::Ping(0));
    b.consume(order[1], PathLabel::Ping(1));
    b.consume(order[2], PathLabel::Loop(0, 1));
    Some(b)
}

/// Permutations of three items, lexicographic.
const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

fn three_points<'a>(lengths: &'a [f64], order: &[usize], tol: f64) -> Option<Builder<'a>> {
    let (e0, e1) = (order[0], order[1]);
    for ci in 2..6 {
        let ec = order[ci];
        let rest: Vec<usize> = order[2..].iter().copied().filter(|&e| e != ec).collect();
        for perm in PERMS {
            let [l01, l02, l12] = perm.map(|k| rest[k]);
            let Some(t) = base(lengths, e0, e1, l01, tol) else { continue };
            let (pa, pb) = t.place();
            let d = lengths[ec] / 2.0;
            let r_a = lengths[l02] - t.d_a - d;
            let r_b = lengths[l12] - t.d_b - d;
            let Some(q) = apex(pa, pb, d, r_a, r_b, tol) else { continue };
            let fits = (2.0 * q.coords.norm() - lengths[ec]).abs() <= tol
                && (loop_through(&pa, &q) - lengths[l02]).abs() <= tol
                && (loop_through(&pb, &q) - lengths[l12]).abs() <= tol;
            if !fits {
                continue;
            }
            let mut b = Builder::new(lengths);
            b.points = vec![pa, pb, q];
            b.consume(e0, PathLabel::Ping(0));
            b.consume(e1, PathLabel::Ping(1));
            b.consume(l01, PathLabel::Loop(0, 1));
            b.consume(ec, PathLabel::Ping(2));
            b.consume(l02, PathLabel::Loop(0, 2));
            b.consume(l12, PathLabel::Loop(1, 2));
            return Some(b);
        }
    }
    None
}

fn apex(pa: Point3, pb: Point3, d: f64, r_a: f64, r_b: f64, tol: f64) -> Option<Point3> {
    match AnchorFrame::new(Point3::origin(), pa, pb) {
        Ok(frame) => match frame.solve(d, r_a, r_b, tol) {
            Solutions::None => None,
            Solutions::One(q) | Solutions::Two(q, _) => Some(q),
        },
        // Sensor and both points on one line: the third point only has a
        // range and an angle, so put it in the xy-plane.
        Err(_) => {
            let x = (d * d - r_a * r_a + pa.x * pa.x) / (2.0 * pa.x);
            let y = (d * d - x * x).max(0.0).sqrt();
            let q = Point3::new(x, y, 0.0);
            ((nalgebra::distance(&q, &pb) - r_b).abs() <= tol).then_some(q)
        }
    }
}
