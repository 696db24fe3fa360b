use std::ops::ControlFlow;

use nalgebra::Vector3;

use super::pool::{circle_distance_range, FreeList};
use super::Budget;
use crate::geometry::{AnchorFrame, DistanceList, PathLabel, Point3, Solutions};

/// Two entries read as pings plus one read as the loop between them, forming
/// a triangle with the sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaseTriangle {
    /// Entry indices of the two pings, shorter first.
    pub pings: [usize; 2],
    pub link: usize,
    /// Sensor ranges of the two points.
    pub d_a: f64,
    pub d_b: f64,
    /// Distance between the two points.
    pub d_ab: f64,
}

impl BaseTriangle {
    /// Canonical placement: a on +x, b in the upper xy half-plane.
    pub fn place(&self) -> (Point3, Point3) {
        let x = (self.d_a * self.d_a + self.d_b * self.d_b - self.d_ab * self.d_ab) / (2.0 * self.d_a);
        let y = (self.d_b * self.d_b - x * x).max(0.0).sqrt();
        (Point3::new(self.d_a, 0.0, 0.0), Point3::new(x, y, 0.0))
    }
}

fn triangles_on(free: &FreeList, a: (f64, usize), b: (f64, usize), tol: f64) -> Vec<BaseTriangle> {
    let (u, v) = (a.0, b.0);
    let (d_a, d_b) = (u / 2.0, v / 2.0);
    free.range(u.max(v) - tol, u + v + tol)
        .iter()
        .filter(|e| e.1 != a.1 && e.1 != b.1)
        .map(|&(w, link)| BaseTriangle { pings: [a.1, b.1], link, d_a, d_b, d_ab: (w - d_a - d_b).max(0.0) })
        .collect()
}

/// Every ping pair and connecting loop in `beta` that could seed a core.
/// Entry indices refer to `beta`.
pub fn find_base_triangle(beta: &DistanceList, tol: f64) -> Vec<BaseTriangle> {
    let lengths = beta.lengths();
    let free = FreeList::new(&lengths, &vec![false; lengths.len()]);
    let items = free.items();
    let mut out = vec![];
    for (i, &a) in items.iter().enumerate() {
        for &b in &items[i + 1..] {
            out.extend(triangles_on(&free, a, b, tol));
        }
    }
    out
}

/// A placed point with the three entries that put it there.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Apex {
    pub pos: Point3,
    pub ping: usize,
    pub loop_a: usize,
    pub loop_b: usize,
}

impl Apex {
    fn entries(&self) -> [usize; 3] {
        [self.ping, self.loop_a, self.loop_b]
    }
}

/// Points reachable from anchors `pa`, `pb` using `ping` and two free loops.
/// Returns `false` if `tick` refused an attempt.
#[allow(clippy::too_many_arguments)]
pub(crate) fn apexes(
    free: &FreeList,
    frame: &AnchorFrame,
    pa: &Point3,
    pb: &Point3,
    ping: (f64, usize),
    exclude: &[usize],
    tol: f64,
    upper_only: bool,
    tick: &mut dyn FnMut() -> bool,
    out: &mut Vec<Apex>,
) -> bool {
    let (p_len, e_ping) = ping;
    let d = p_len / 2.0;
    let (d_a, d_b) = (pa.coords.norm(), pb.coords.norm());
    let va: Vector3<f64> = pa.coords;
    let vb: Vector3<f64> = pb.coords;
    for &(w_a, e_a) in free.range((2.0 * d_a).max(p_len) - tol, 2.0 * d_a + p_len + tol) {
        if e_a == e_ping || exclude.contains(&e_a) {
            continue;
        }
        let r_a = w_a - d_a - d;
        let Some((lo, hi)) = circle_distance_range(&va, d, r_a, &vb, tol) else {
            continue;
        };
        for &(w_b, e_b) in free.range(d_b + d + lo - 3.0 * tol, d_b + d + hi + 3.0 * tol) {
            if e_b == e_ping || e_b == e_a || exclude.contains(&e_b) {
                continue;
            }
            if !tick() {
                return false;
            }
            let r_b = w_b - d_b - d;
            let sols = match frame.solve(d, r_a, r_b, tol) {
                Solutions::Two(up, _) if upper_only => vec![up],
                Solutions::One(q) if upper_only && q.z < -0.5 * tol => vec![],
                s => s.to_vec(),
            };
            for q in sols {
                let fits = (2.0 * q.coords.norm() - p_len).abs() <= tol
                    && (loop_through(pa, &q) - w_a).abs() <= tol
                    && (loop_through(pb, &q) - w_b).abs() <= tol;
                if fits {
                    out.push(Apex { pos: q, ping: e_ping, loop_a: e_a, loop_b: e_b });
                }
            }
        }
    }
    true
}

pub(crate) fn loop_through(p: &Point3, q: &Point3) -> f64 {
    p.coords.norm() + nalgebra::distance(p, q) + q.coords.norm()
}

/// Four placed points (indices 0..4) and the ten entries they explain.
#[derive(Debug, Clone)]
pub(crate) struct CoreCandidate {
    pub points: [Point3; 4],
    pub entries: [(usize, PathLabel); 10],
}

/// Rank tuples `(a, b, c, d)` whose total slack equals `s`: `a < b` index
/// the base pings in the free list, `c` and `d` index the apex pings among
/// entries not already taken.
fn tuples(s: usize) -> Vec<[usize; 4]> {
    let mut out = vec![];
    for a in 0..=s {
        for b in a + 1..=s + 1 {
            if a + (b - 1) > s {
                continue;
            }
            let rest = s - a - (b - 1);
            for c in 0..=rest {
                out.push([a, b, c, rest - c]);
            }
        }
    }
    out
}

impl CoreCandidate {
    fn total_residual(&self, lengths: &[f64]) -> f64 {
        self.entries.iter().map(|&(e, path)| (super::predicted_length(&self.points, path) - lengths[e]).abs()).sum()
    }
}

/// Enumerates cores one slack level at a time. Within a level, cores reach
/// `on_core` in ascending order of total residual, ties by discovery order.
/// Stops when `on_core` breaks or the core budget runs out.
pub(crate) fn search_cores(
    lengths: &[f64],
    used: &[bool],
    tol: f64,
    max_slack: usize,
    budget: &mut Budget,
    mut on_core: impl FnMut(CoreCandidate, &mut Budget) -> ControlFlow<()>,
) {
    let free = FreeList::new(lengths, used);
    if free.len() < super::CORE_ENTRIES {
        return;
    }
    let items = free.items();
    for s in 0..=max_slack {
        let mut level: Vec<(f64, CoreCandidate)> = vec![];
        'collect: for [ia, ib, kc, kd] in tuples(s) {
            if ib >= items.len() {
                continue;
            }
            for base in triangles_on(&free, items[ia], items[ib], tol) {
                if grow_base(&free, &base, kc, kd, tol, budget, &mut |core| {
                    level.push((core.total_residual(lengths), core));
                })
                .is_break()
                {
                    break 'collect;
                }
            }
        }
        level.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (_, core) in level {
            if on_core(core, budget).is_break() {
                return;
            }
        }
        if budget.core_exhausted {
            return;
        }
    }
}

fn grow_base(
    free: &FreeList,
    base: &BaseTriangle,
    kc: usize,
    kd: usize,
    tol: f64,
    budget: &mut Budget,
    on_core: &mut impl FnMut(CoreCandidate),
) -> ControlFlow<()> {
    let (pa, pb) = base.place();
    let Ok(frame) = AnchorFrame::new(Point3::origin(), pa, pb) else {
        return ControlFlow::Continue(());
    };
    let base_entries = [base.pings[0], base.pings[1], base.link];
    let Some(ping_c) = free.nth_excluding(kc, &base_entries) else {
        return ControlFlow::Continue(());
    };
    let mut cs = vec![];
    if !apexes(free, &frame, &pa, &pb, ping_c, &base_entries, tol, true, &mut || budget.core_tick(), &mut cs) {
        return ControlFlow::Break(());
    }
    // Apex sets for d depend only on which entry serves as its ping.
    let mut d_cache: Vec<(usize, Vec<Apex>)> = vec![];
    for c in cs {
        let [pc, ca, cb] = c.entries();
        let taken = [base_entries[0], base_entries[1], base_entries[2], pc, ca, cb];
        let Some(ping_d) = free.nth_excluding(kd, &taken) else {
            continue;
        };
        let slot = match d_cache.iter().position(|(e, _)| *e == ping_d.1) {
            Some(i) => i,
            None => {
                let mut ds = vec![];
                let ok =
                    apexes(free, &frame, &pa, &pb, ping_d, &base_entries, tol, false, &mut || budget.core_tick(), &mut ds);
                if !ok {
                    return ControlFlow::Break(());
                }
                d_cache.push((ping_d.1, ds));
                d_cache.len() - 1
            }
        };
        for d in &d_cache[slot].1 {
            if d.entries().iter().any(|e| taken.contains(e)) {
                continue;
            }
            if !budget.core_tick() {
                return ControlFlow::Break(());
            }
            let [pd, da, db] = d.entries();
            let all = [taken[0], taken[1], taken[2], pc, ca, cb, pd, da, db];
            let Some((bridge, _)) = free.nearest(loop_through(&c.pos, &d.pos), tol, &all) else {
                continue;
            };
            let core = CoreCandidate {
                points: [pa, pb, c.pos, d.pos],
                entries: [
                    (base.pings[0], PathLabel::Ping(0)),
                    (base.pings[1], PathLabel::Ping(1)),
                    (base.link, PathLabel::Loop(0, 1)),
                    (c.ping, PathLabel::Ping(2)),
                    (c.loop_a, PathLabel::Loop(0, 2)),
                    (c.loop_b, PathLabel::Loop(1, 2)),
                    (d.ping, PathLabel::Ping(3)),
                    (d.loop_a, PathLabel::Loop(0, 3)),
                    (d.loop_b, PathLabel::Loop(1, 3)),
                    (bridge, PathLabel::Loop(2, 3)),
                ],
            };
            on_core(core);
        }
    }
    ControlFlow::Continue(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tuple_slack_sums() {
        assert_eq!(tuples(0), vec![[0, 1, 0, 0]]);
        for s in 0..5 {
            for [a, b, c, d] in tuples(s) {
                assert!(a < b);
                assert_eq!(a + b - 1 + c + d, s);
            }
        }
        assert_eq!(tuples(1).len(), 3);
    }

    #[test]
    fn base_triangle_placement() {
        let t = BaseTriangle { pings: [0, 1], link: 2, d_a: 3.0, d_b: 4.0, d_ab: 5.0 };
        let (a, b) = t.place();
        assert!((a - Point3::new(3.0, 0.0, 0.0)).norm() < 1e-12);
        assert!((b.coords.norm() - 4.0).abs() < 1e-12);
        assert!((nalgebra::distance(&a, &b) - 5.0).abs() < 1e-12);
        assert!(b.y >= 0.0);
    }
}
