use nalgebra::Vector3;

/// Unused distance-list entries sorted by length, as `(length, entry index)`.
#[derive(Debug, Clone)]
pub(crate) struct FreeList {
    items: Vec<(f64, usize)>,
}

impl FreeList {
    pub fn new(lengths: &[f64], used: &[bool]) -> Self {
        let mut items: Vec<(f64, usize)> = lengths
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .map(|(i, &l)| (l, i))
            .collect();
        items.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Self { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn items(&self) -> &[(f64, usize)] {
        &self.items
    }

    /// Entries with length in `[lo, hi]`.
    pub fn range(&self, lo: f64, hi: f64) -> &[(f64, usize)] {
        let start = self.items.partition_point(|e| e.0 < lo);
        let end = self.items.partition_point(|e| e.0 <= hi);
        if start >= end {
            &[]
        } else {
            &self.items[start..end]
        }
    }

    /// Closest entry within `tol` of `target`, skipping `exclude`; returns the
    /// entry index and the signed residual `entry - target`.
    pub fn nearest(&self, target: f64, tol: f64, exclude: &[usize]) -> Option<(usize, f64)> {
        self.range(target - tol, target + tol)
            .iter()
            .filter(|e| !exclude.contains(&e.1))
            .map(|e| (e.1, e.0 - target))
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
    }

    /// The `k`-th smallest entry not in `exclude`.
    pub fn nth_excluding(&self, k: usize, exclude: &[usize]) -> Option<(f64, usize)> {
        self.items.iter().filter(|e| !exclude.contains(&e.1)).nth(k).copied()
    }
}

/// Range of `|b - q|` over the circle of points `q` with `|q| = r0` and
/// `|q - a| = ra`, widened by `tol` on the radii. `None` when the two spheres
/// cannot meet.
pub(crate) fn circle_distance_range(
    a: &Vector3<f64>,
    r0: f64,
    ra: f64,
    b: &Vector3<f64>,
    tol: f64,
) -> Option<(f64, f64)> {
    let da = a.norm();
    if da <= 0.0 || ra < -tol || (r0 - ra).abs() > da + 2.0 * tol || da > r0 + ra + 2.0 * tol {
        return None;
    }
    let axis = a / da;
    let x = (r0 * r0 - ra * ra + da * da) / (2.0 * da);
    let rho = (r0 * r0 - x * x).max(0.0).sqrt();
    let v = b - axis * x;
    let along = v.dot(&axis);
    let h = (v.norm_squared() - along * along).max(0.0).sqrt();
    let base = v.norm_squared() + rho * rho;
    Some(((base - 2.0 * rho * h).max(0.0).sqrt(), (base + 2.0 * rho * h).sqrt()))
}
