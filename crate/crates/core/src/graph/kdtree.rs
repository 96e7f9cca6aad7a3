//! Static 2D k-d tree with exact k-nearest-neighbor queries.
//!
//! Built once with median splits on the axis of larger spread. Results are
//! ordered by `(squared distance, id)`, so equidistant points resolve to the
//! lower id and the output is fully deterministic.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const LEAF_SIZE: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    /// Position of the point in the slice the tree was built from.
    pub index: usize,
    pub id: u64,
    pub dist2: f64,
}

impl Neighbor {
    pub fn dist(&self) -> f64 {
        self.dist2.sqrt()
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Candidate(Neighbor);

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .dist2
            .total_cmp(&other.0.dist2)
            .then(self.0.id.cmp(&other.0.id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Copy, Debug)]
enum Node {
    Leaf { start: u32, end: u32 },
    Split { axis: u8, value: f64, left: u32, right: u32 },
}

pub struct KdTree {
    points: Vec<[f64; 2]>,
    ids: Vec<u64>,
    /// Point indices, permuted so every node owns a contiguous range.
    order: Vec<u32>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn build(points: Vec<[f64; 2]>, ids: Vec<u64>) -> Self {
        assert_eq!(points.len(), ids.len(), "one id per point");
        assert!(points.len() < u32::MAX as usize, "too many points");
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1);
        if !points.is_empty() {
            build_node(&points, &mut order, 0, &mut nodes);
        }
        KdTree {
            points,
            ids,
            order,
            nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> [f64; 2] {
        self.points[index]
    }

    pub fn id(&self, index: usize) -> u64 {
        self.ids[index]
    }

    /// The `k` nearest points to `query`, skipping the point at `exclude`.
    /// Returns fewer than `k` only when the tree holds too few points.
    pub fn nearest(&self, query: [f64; 2], k: usize, exclude: Option<usize>) -> Vec<Neighbor> {
        if k == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, query, k, exclude, &mut heap);
        let mut out: Vec<Neighbor> = heap.into_iter().map(|c| c.0).collect();
        out.sort_by_key(|a| Candidate(*a));
        out
    }

    fn search(
        &self,
        node: usize,
        q: [f64; 2],
        k: usize,
        exclude: Option<usize>,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &pi in &self.order[start as usize..end as usize] {
                    let index = pi as usize;
                    if Some(index) == exclude {
                        continue;
                    }
                    let p = self.points[index];
                    let (dx, dy) = (p[0] - q[0], p[1] - q[1]);
                    let cand = Candidate(Neighbor {
                        index,
                        id: self.ids[index],
                        dist2: dx * dx + dy * dy,
                    });
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().unwrap() {
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
                let diff = q[axis as usize] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(near as usize, q, k, exclude, heap);
                // equal distance must still be explored: a tie may carry a lower id
                if heap.len() < k || diff * diff <= heap.peek().unwrap().0.dist2 {
                    self.search(far as usize, q, k, exclude, heap);
                }
            }
        }
    }
}

fn build_node(points: &[[f64; 2]], order: &mut [u32], offset: u32, nodes: &mut Vec<Node>) -> u32 {
    let id = nodes.len() as u32;
    if order.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: offset,
            end: offset + order.len() as u32,
        });
        return id;
    }
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for &i in order.iter() {
        let p = points[i as usize];
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let axis = usize::from(hi[1] - lo[1] > hi[0] - lo[0]);
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize][axis].total_cmp(&points[b as usize][axis])
    });
    // left holds values <= split, right holds values >= split
    let value = points[order[mid] as usize][axis];
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let (left_part, right_part) = order.split_at_mut(mid);
    let left = build_node(points, left_part, offset, nodes);
    let right = build_node(points, right_part, offset + mid as u32, nodes);
    nodes[id as usize] = Node::Split {
        axis: axis as u8,
        value,
        left,
        right,
    };
    id
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_points() {
        let pts = (0..4).map(|i| [i as f64, 0.0]).collect();
        let tree = KdTree::build(pts, vec![10, 11, 12, 13]);
        let nn = tree.nearest([0.0, 0.0], 2, Some(0));
        assert_eq!(nn.iter().map(|n| n.id).collect::<Vec<_>>(), vec![11, 12]);
        assert_eq!(nn[1].dist(), 2.0);
    }

    #[test]
    fn ties_prefer_lower_id() {
        let pts = vec![[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]];
        let tree = KdTree::build(pts, vec![5, 9, 2, 7]);
        let nn = tree.nearest([0.0, 0.0], 2, Some(0));
        assert_eq!(nn.iter().map(|n| n.id).collect::<Vec<_>>(), vec![2, 7]);
    }

    #[test]
    fn many_duplicates() {
        // every point identical: order is purely by id
        let n = 100;
        let pts = vec![[3.0, 3.0]; n];
        let ids: Vec<u64> = (0..n as u64).rev().collect();
        let tree = KdTree::build(pts, ids);
        let nn = tree.nearest([3.0, 3.0], 5, Some(99));
        assert_eq!(nn.iter().map(|n| n.id).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn small_tree_returns_what_it_has() {
        let tree = KdTree::build(vec![[0.0, 0.0], [1.0, 1.0]], vec![0, 1]);
        assert_eq!(tree.nearest([0.0, 0.0], 5, Some(0)).len(), 1);
        assert!(KdTree::build(vec![], vec![]).nearest([0.0, 0.0], 3, None).is_empty());
    }
}
