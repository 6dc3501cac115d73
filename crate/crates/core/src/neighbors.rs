//! Static k-d tree answering closed-ball radius queries.

use crate::error::{Error, Result};
use crate::space::{metric, State};

const LEAF_SIZE: usize = 8;

/// Balanced k-d tree over a fixed point set.
///
/// The tree is implicit: `order` is a permutation of point indices laid out
/// so that the median of every range `[lo, hi)` sits at `(lo + hi) / 2` and
/// splits on axis `depth % dim`.
#[derive(Clone, Debug)]
pub struct SpatialIndex {
    dim: usize,
    coords: Vec<f64>,
    order: Vec<usize>,
}

impl SpatialIndex {
    pub fn build<'a, I>(points: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a State>,
    {
        let mut coords = Vec::new();
        let mut dim = None;
        for p in points {
            match dim {
                None => dim = Some(p.dim()),
                Some(d) if d != p.dim() => {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        found: p.dim(),
                    })
                }
                Some(_) => {}
            }
            coords.extend_from_slice(p.coords());
        }
        let dim = dim.ok_or(Error::Empty("point set"))?;
        let mut order: Vec<usize> = (0..coords.len() / dim).collect();
        let mut index = SpatialIndex {
            dim,
            coords,
            order: Vec::new(),
        };
        index.arrange(&mut order, 0);
        index.order = order;
        Ok(index)
    }

    fn arrange(&self, range: &mut [usize], depth: usize) {
        if range.len() <= LEAF_SIZE {
            return;
        }
        let axis = depth % self.dim;
        let mid = range.len() / 2;
        // (value, index) ordering makes the layout independent of the
        // selection algorithm's handling of equal keys.
        range.select_nth_unstable_by(mid, |&a, &b| {
            self.coord(a, axis)
                .total_cmp(&self.coord(b, axis))
                .then(a.cmp(&b))
        });
        let (left, rest) = range.split_at_mut(mid);
        self.arrange(left, depth + 1);
        self.arrange(&mut rest[1..], depth + 1);
    }

    #[inline]
    fn coord(&self, i: usize, axis: usize) -> f64 {
        self.coords[i * self.dim + axis]
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Indices `j` with `d(points[j], center) <= radius`, ascending.
    pub fn query_radius(&self, center: &State, radius: f64) -> Result<Vec<usize>> {
        if center.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: center.dim(),
            });
        }
        if !(radius >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "radius",
                reason: format!("{radius} is negative"),
            });
        }
        let mut out = Vec::new();
        self.within(center.coords(), radius, |j, _| out.push(j));
        out.sort_unstable();
        Ok(out)
    }

    /// Calls `visit(j, distance)` for every point within `radius` of
    /// `center`, in tree order. No validation; for hot loops.
    pub fn within<F: FnMut(usize, f64)>(&self, center: &[f64], radius: f64, mut visit: F) {
        debug_assert_eq!(center.len(), self.dim);
        self.walk(0, self.order.len(), 0, center, radius, &mut visit);
    }

    fn walk<F: FnMut(usize, f64)>(
        &self,
        lo: usize,
        hi: usize,
        depth: usize,
        center: &[f64],
        radius: f64,
        visit: &mut F,
    ) {
        if hi - lo <= LEAF_SIZE {
            for &j in &self.order[lo..hi] {
                let d = metric(self.point(j), center);
                if d <= radius {
                    visit(j, d);
                }
            }
            return;
        }
        let axis = depth % self.dim;
        let mid = (lo + hi) / 2;
        let pivot = self.order[mid];
        let split = self.coord(pivot, axis);
        let d = metric(self.point(pivot), center);
        if d <= radius {
            visit(pivot, d);
        }
        // Left holds values <= split, right values >= split.
        if center[axis] - radius <= split {
            self.walk(lo, mid, depth + 1, center, radius, visit);
        }
        if center[axis] + radius >= split {
            self.walk(mid + 1, hi, depth + 1, center, radius, visit);
        }
    }
}
