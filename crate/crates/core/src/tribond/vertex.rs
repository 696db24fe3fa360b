use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::core::{apexes, loop_through, Apex};
use super::{Budget, Builder, ReconParams, ENTRIES_PER_VERTEX};
use crate::geometry::{AnchorFrame, PathLabel, Point3};

const DECISIVE_BRIDGES: usize = 3;

struct Candidate {
    apex: Apex,
    anchors: (usize, usize),
    bridges: Vec<(usize, usize)>,
    worst: f64,
}

enum Outcome {
    Found(Candidate),
    NotFound,
    Exhausted,
}

/// Adds vertices until none fits. Returns `true` when the search ended on its
/// own rather than by budget.
pub(crate) fn grow(b: &mut Builder, p: &ReconParams, budget: &mut Budget, rng: &mut ChaCha8Rng) -> bool {
    loop {
        if p.expected_points.is_some_and(|n| b.points.len() >= n) {
            return true;
        }
        if b.free_count() < ENTRIES_PER_VERTEX.max(3 + p.required_bridges(b.points.len())) {
            return true;
        }
        match next_vertex(b, p, budget, rng) {
            Outcome::Found(c) => {
                let k = b.points.len();
                b.points.push(c.apex.pos);
                b.consume(c.apex.ping, PathLabel::Ping(k));
                b.consume(c.apex.loop_a, PathLabel::loop_of(c.anchors.0, k));
                b.consume(c.apex.loop_b, PathLabel::loop_of(c.anchors.1, k));
                for (x, e) in c.bridges {
                    b.consume(e, PathLabel::loop_of(x, k));
                }
            }
            Outcome::NotFound => return true,
            Outcome::Exhausted => return false,
        }
    }
}

fn next_vertex(b: &Builder, p: &ReconParams, budget: &mut Budget, rng: &mut ChaCha8Rng) -> Outcome {
    let k = b.points.len();
    let mut pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect();
    pairs.shuffle(rng);
    let frames: Vec<Option<AnchorFrame>> = pairs
        .iter()
        .map(|&(i, j)| AnchorFrame::new(Point3::origin(), b.points[i], b.points[j]).ok())
        .collect();
    let free = b.free();
    let need = p.required_bridges(k);
    // With few other points a stray bridge match is cheap to come by, so the
    // best candidate over every ping and pair wins unless one is decisive.
    let decisive = need.max(DECISIVE_BRIDGES);
    let mut found = vec![];
    let mut best: Option<Candidate> = None;
    // Loops never undercut the pings of their endpoints, so the next point's
    // ping sits at the bottom of the free list up to clutter.
    for &ping in free.items().iter().take(p.max_ping_slack + 1) {
        for (&(i, j), frame) in pairs.iter().zip(&frames) {
            let Some(frame) = frame else { continue };
            found.clear();
            let (pi, pj) = (&b.points[i], &b.points[j]);
            if !apexes(&free, frame, pi, pj, ping, &[], p.tol, false, &mut || budget.vertex_tick(), &mut found) {
                return match best {
                    Some(c) => Outcome::Found(c),
                    None => Outcome::Exhausted,
                };
            }
            for apex in &found {
                let mut taken = vec![apex.ping, apex.loop_a, apex.loop_b];
                let mut bridges = vec![];
                let mut worst = 0.0f64;
                for x in (0..k).filter(|&x| x != i && x != j) {
                    if let Some((e, r)) = free.nearest(loop_through(&b.points[x], &apex.pos), p.tol, &taken) {
                        taken.push(e);
                        bridges.push((x, e));
                        worst = worst.max(r.abs());
                    }
                }
                if bridges.len() < need {
                    continue;
                }
                let better = best.as_ref().is_none_or(|c| {
                    bridges.len() > c.bridges.len() || (bridges.len() == c.bridges.len() && worst < c.worst)
                });
                if better {
                    best = Some(Candidate { apex: *apex, anchors: (i, j), bridges, worst });
                }
            }
            if best.as_ref().is_some_and(|c| c.bridges.len() >= decisive) {
                break;
            }
        }
        if best.as_ref().is_some_and(|c| c.bridges.len() >= decisive) {
            break;
        }
    }
    match best {
        Some(c) => Outcome::Found(c),
        None => Outcome::NotFound,
    }
}
