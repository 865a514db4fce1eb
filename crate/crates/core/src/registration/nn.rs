//! Exact nearest-neighbour queries with a radius cutoff.
//!
//! Both searches return the same answer: the closest target within
//! `max_dist`, ties broken by the lowest target index.

use std::collections::HashMap;

use nalgebra::Point3;

use crate::geometry::distance_squared;

/// Above this many query points the grid index is used.
pub const GRID_THRESHOLD: usize = 2000;

pub trait NearestNeighbor {
    /// `(target index, squared distance)` of the nearest target within the
    /// search radius.
    fn nearest(&self, query: &Point3<f64>) -> Option<(usize, f64)>;
}

pub struct BruteForce<'a> {
    targets: &'a [Point3<f64>],
    max_dist_sq: f64,
}

impl<'a> BruteForce<'a> {
    pub fn new(targets: &'a [Point3<f64>], max_dist: f64) -> Self {
        Self {
            targets,
            max_dist_sq: max_dist * max_dist,
        }
    }
}

impl NearestNeighbor for BruteForce<'_> {
    fn nearest(&self, query: &Point3<f64>) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, t) in self.targets.iter().enumerate() {
            let d = distance_squared(query, t);
            if d <= self.max_dist_sq && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best
    }
}

/// Uniform hash grid with cell size equal to the search radius, so every
/// candidate lies in the 27 cells around the query.
pub struct GridIndex<'a> {
    targets: &'a [Point3<f64>],
    cells: HashMap<[i64; 3], Vec<usize>>,
    cell: f64,
    max_dist_sq: f64,
}

impl<'a> GridIndex<'a> {
    pub fn new(targets: &'a [Point3<f64>], max_dist: f64) -> Self {
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, t) in targets.iter().enumerate() {
            cells.entry(Self::key(t, max_dist)).or_default().push(i);
        }
        Self {
            targets,
            cells,
            cell: max_dist,
            max_dist_sq: max_dist * max_dist,
        }
    }

    fn key(p: &Point3<f64>, cell: f64) -> [i64; 3] {
        [
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        ]
    }
}

impl NearestNeighbor for GridIndex<'_> {
    fn nearest(&self, query: &Point3<f64>) -> Option<(usize, f64)> {
        let [cx, cy, cz] = Self::key(query, self.cell);
        let mut best: Option<(usize, f64)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(bucket) = self.cells.get(&[cx + dx, cy + dy, cz + dz]) else {
                        continue;
                    };
                    for &i in bucket {
                        let d = distance_squared(query, &self.targets[i]);
                        if d > self.max_dist_sq {
                            continue;
                        }
                        let better = match best {
                            None => true,
                            Some((bi, bd)) => d < bd || (d == bd && i < bi),
                        };
                        if better {
                            best = Some((i, d));
                        }
                    }
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn grid_agrees_with_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut cloud = |n: usize| -> Vec<Point3<f64>> {
            (0..n)
                .map(|_| {
                    Point3::new(
                        rng.random_range(-3.0..3.0),
                        rng.random_range(-3.0..3.0),
                        rng.random_range(-1.0..1.0),
                    )
                })
                .collect()
        };
        let targets = cloud(500);
        let queries = cloud(500);
        for radius in [0.05, 0.3, 1.0] {
            let brute = BruteForce::new(&targets, radius);
            let grid = GridIndex::new(&targets, radius);
            for q in &queries {
                assert_eq!(brute.nearest(q), grid.nearest(q));
            }
        }
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let targets = vec![Point3::new(1.0, 0.0, 0.0), Point3::new(-1.0, 0.0, 0.0)];
        let q = Point3::origin();
        assert_eq!(BruteForce::new(&targets, 2.0).nearest(&q).unwrap().0, 0);
        assert_eq!(GridIndex::new(&targets, 2.0).nearest(&q).unwrap().0, 0);
        assert!(BruteForce::new(&targets, 0.5).nearest(&q).is_none());
    }
}
