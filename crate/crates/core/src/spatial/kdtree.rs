use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::scalar::Real;

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
enum Node<T> {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: T, left: usize, right: usize },
}

/// Exact k-nearest-neighbour tree over row-major points of any dimension.
///
/// Results are ordered by `(squared distance, index)`, so equidistant points
/// are reported by ascending index. Distances are accumulated axis by axis in
/// index order, matching a naive scan bit for bit.
#[derive(Debug, Clone)]
pub struct KdTree<'a, T: Real> {
    data: &'a [T],
    dim: usize,
    order: Vec<usize>,
    nodes: Vec<Node<T>>,
}

#[derive(Debug, Clone, Copy)]
struct Candidate<T> {
    d2: T,
    index: usize,
}

impl<T: PartialOrd> PartialEq for Candidate<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: PartialOrd> Eq for Candidate<T> {}

impl<T: PartialOrd> PartialOrd for Candidate<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: PartialOrd> Ord for Candidate<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2
            .partial_cmp(&other.d2)
            .unwrap_or(Ordering::Equal)
            .then(self.index.cmp(&other.index))
    }
}

#[inline]
pub(crate) fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        let d = *x - *y;
        acc += d * d;
    }
    acc
}

impl<'a, T: Real> KdTree<'a, T> {
    /// `data` holds `data.len() / dim` points of `dim` coordinates each.
    pub fn new(data: &'a [T], dim: usize) -> Self {
        assert!(dim > 0 && data.len() % dim == 0, "data is not a whole number of rows");
        let n = data.len() / dim;
        let mut tree = Self {
            data,
            dim,
            order: (0..n).collect(),
            nodes: Vec::new(),
        };
        if n > 0 {
            tree.build(0, n);
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    #[inline]
    fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let axis = (0..self.dim)
            .map(|a| {
                let (lo, hi) = self.order[start..end].iter().fold(
                    (T::infinity(), T::neg_infinity()),
                    |(lo, hi), &i| {
                        let v = self.data[i * self.dim + a];
                        (lo.min(v), hi.max(v))
                    },
                );
                (a, hi - lo)
            })
            .fold((0, T::neg_infinity()), |best, c| if c.1 > best.1 { c } else { best })
            .0;
        let mid = start + (end - start) / 2;
        let (data, dim) = (self.data, self.dim);
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            data[a * dim + axis]
                .partial_cmp(&data[b * dim + axis])
                .unwrap_or(Ordering::Equal)
        });
        let value = self.data[self.order[mid] * self.dim + axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// The `min(k, len)` nearest points as `(index, squared distance)`,
    /// ascending by distance then index.
    pub fn nearest(&self, query: &[T], k: usize) -> Vec<(usize, T)> {
        assert_eq!(query.len(), self.dim, "query dimension");
        if k == 0 || self.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, query, k, &mut heap);
        heap.into_sorted_vec()
            .into_iter()
            .map(|c| (c.index, c.d2))
            .collect()
    }

    fn search(&self, node: usize, query: &[T], k: usize, heap: &mut BinaryHeap<Candidate<T>>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let cand = Candidate {
                        d2: sq_dist(self.row(i), query),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let delta = query[axis] - value;
                let (near, far) = if delta < T::zero() { (left, right) } else { (right, left) };
                self.search(near, query, k, heap);
                // `<=` keeps equidistant candidates on the far side reachable
                if heap.len() < k || delta * delta <= heap.peek().expect("heap is full").d2 {
                    self.search(far, query, k, heap);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(data: &[f64], dim: usize, q: &[f64], k: usize) -> Vec<(usize, f64)> {
        let mut all: Vec<(usize, f64)> = data
            .chunks(dim)
            .enumerate()
            .map(|(i, r)| (i, r.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum()))
            .collect();
        all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    #[test]
    fn matches_brute_force_in_several_dimensions() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for dim in [1, 3, 8, 32] {
            let data: Vec<f64> = (0..500 * dim).map(|_| rng.random::<f64>()).collect();
            let tree = KdTree::new(&data, dim);
            for _ in 0..40 {
                let q: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
                let k = rng.random_range(1..20);
                let got: Vec<usize> = tree.nearest(&q, k).into_iter().map(|c| c.0).collect();
                let want: Vec<usize> = brute(&data, dim, &q, k).into_iter().map(|c| c.0).collect();
                assert_eq!(got, want);
            }
        }
    }

    #[test]
    fn equidistant_points_resolve_by_index() {
        // integer lattice with many exact ties
        let mut data = Vec::new();
        for i in 0..6 {
            for j in 0..6 {
                for l in 0..6 {
                    data.extend_from_slice(&[i as f64, j as f64, l as f64]);
                }
            }
        }
        let tree = KdTree::new(&data, 3);
        for q in [[2.0, 2.0, 2.0], [2.5, 2.5, 2.5], [0.0, 5.0, 2.5]] {
            for k in [1, 7, 19, 27] {
                assert_eq!(tree.nearest(&q, k), brute(&data, 3, &q, k));
            }
        }
    }

    #[test]
    fn empty_and_oversized_k() {
        let empty: [f64; 0] = [];
        assert!(KdTree::new(&empty, 3).nearest(&[0.0; 3], 4).is_empty());
        let data = [0.0, 1.0, 2.0];
        assert_eq!(KdTree::new(&data, 1).nearest(&[1.2], 10).len(), 3);
    }
}
