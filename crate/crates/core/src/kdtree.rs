//! Exact nearest-neighbor queries over 3D points.
//!
//! Median-split kd-tree with widest-spread axis selection. Queries prune
//! with the hypersphere/hyperplane test, so results are exact, matching a
//! brute-force scan (which the test suite asserts).

use crate::rangegrid::Point;

const NONE: usize = usize::MAX;

struct Node {
    point: usize,
    axis: usize,
    left: usize,
    right: usize,
}

pub struct KdTree {
    points: Vec<Point>,
    nodes: Vec<Node>,
    root: usize,
}

fn dist2(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

impl KdTree {
    pub fn new(points: &[Point]) -> Self {
        let mut tree = KdTree {
            points: points.to_vec(),
            nodes: Vec::with_capacity(points.len()),
            root: NONE,
        };
        let mut idx: Vec<usize> = (0..points.len()).collect();
        tree.root = tree.build(&mut idx);
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build(&mut self, idx: &mut [usize]) -> usize {
        if idx.is_empty() {
            return NONE;
        }
        // Split on the axis with the largest spread.
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in idx.iter() {
            for d in 0..3 {
                lo[d] = lo[d].min(self.points[i][d]);
                hi[d] = hi[d].max(self.points[i][d]);
            }
        }
        let mut axis = 0;
        for d in 1..3 {
            if hi[d] - lo[d] > hi[axis] - lo[axis] {
                axis = d;
            }
        }
        let mid = idx.len() / 2;
        let points = &self.points;
        idx.select_nth_unstable_by(mid, |&a, &b| {
            points[a][axis]
                .total_cmp(&points[b][axis])
                .then(a.cmp(&b))
        });
        let point = idx[mid];
        let node_slot = self.nodes.len();
        self.nodes.push(Node {
            point,
            axis,
            left: NONE,
            right: NONE,
        });
        let (left_idx, rest) = idx.split_at_mut(mid);
        let right_idx = &mut rest[1..];
        let left = self.build(left_idx);
        let right = self.build(right_idx);
        self.nodes[node_slot].left = left;
        self.nodes[node_slot].right = right;
        node_slot
    }

    /// Index and squared distance of the nearest point.
    pub fn nearest(&self, query: &Point) -> (usize, f64) {
        assert!(!self.points.is_empty(), "nearest on empty tree");
        let mut best = (NONE, f64::INFINITY);
        self.nearest_rec(self.root, query, &mut best);
        best
    }

    fn nearest_rec(&self, node: usize, query: &Point, best: &mut (usize, f64)) {
        if node == NONE {
            return;
        }
        let n = &self.nodes[node];
        let p = &self.points[n.point];
        let d2 = dist2(query, p);
        if d2 < best.1 {
            *best = (n.point, d2);
        }
        let delta = query[n.axis] - p[n.axis];
        let (near, far) = if delta < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        self.nearest_rec(near, query, best);
        if delta * delta < best.1 {
            self.nearest_rec(far, query, best);
        }
    }

    /// Up to k nearest points as (index, squared distance), closest first.
    pub fn k_nearest(&self, query: &Point, k: usize) -> Vec<(usize, f64)> {
        let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        self.k_nearest_rec(self.root, query, k, &mut best);
        best
    }

    fn k_nearest_rec(&self, node: usize, query: &Point, k: usize, best: &mut Vec<(usize, f64)>) {
        if node == NONE || k == 0 {
            return;
        }
        let n = &self.nodes[node];
        let p = &self.points[n.point];
        let d2 = dist2(query, p);
        let worst = best.last().map(|&(_, d)| d).unwrap_or(f64::INFINITY);
        if best.len() < k || d2 < worst {
            let pos = best.partition_point(|&(_, d)| d <= d2);
            best.insert(pos, (n.point, d2));
            best.truncate(k);
        }
        let delta = query[n.axis] - p[n.axis];
        let (near, far) = if delta < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        self.k_nearest_rec(near, query, k, best);
        let worst = best.last().map(|&(_, d)| d).unwrap_or(f64::INFINITY);
        if best.len() < k || delta * delta < worst {
            self.k_nearest_rec(far, query, k, best);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, seed: u64) -> Vec<Point> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                [
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-2.0..2.0),
                ]
            })
            .collect()
    }

    fn brute_nearest(points: &[Point], q: &Point) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d = dist2(p, q);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    #[test]
    fn nearest_matches_brute_force() {
        let cloud = random_cloud(500, 1);
        let tree = KdTree::new(&cloud);
        let queries = random_cloud(200, 2);
        for q in &queries {
            let (_, d_tree) = tree.nearest(q);
            let (_, d_brute) = brute_nearest(&cloud, q);
            assert_eq!(d_tree, d_brute);
        }
    }

    #[test]
    fn k_nearest_matches_sorted_brute_force() {
        let cloud = random_cloud(300, 3);
        let tree = KdTree::new(&cloud);
        let queries = random_cloud(50, 4);
        for q in &queries {
            let got = tree.k_nearest(q, 12);
            let mut all: Vec<f64> = cloud.iter().map(|p| dist2(p, q)).collect();
            all.sort_by(f64::total_cmp);
            assert_eq!(got.len(), 12);
            for (i, &(_, d)) in got.iter().enumerate() {
                assert_eq!(d, all[i], "neighbor {} differs", i);
            }
        }
    }

    #[test]
    fn single_point_tree() {
        let tree = KdTree::new(&[[1.0, 2.0, 3.0]]);
        let (idx, d2) = tree.nearest(&[1.0, 2.0, 4.0]);
        assert_eq!(idx, 0);
        assert_eq!(d2, 1.0);
    }

    #[test]
    fn duplicate_points_are_handled() {
        let cloud = vec![[0.0; 3]; 8];
        let tree = KdTree::new(&cloud);
        let (_, d2) = tree.nearest(&[0.5, 0.0, 0.0]);
        assert_eq!(d2, 0.25);
        assert_eq!(tree.k_nearest(&[0.0; 3], 3).len(), 3);
    }
}
