//! Disjoint-set forest over dense indices.
//!
//! Component membership depends only on the set of unions performed, never on
//! their order; [`UnionFind::classes`] returns components sorted by their
//! smallest index so callers get a canonical grouping.

#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn find(&mut self, mut node: usize) -> usize {
        let mut root = node;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[node] != node {
            let next = self.parent[node];
            self.parent[node] = root;
            node = next;
        }
        root
    }

    /// Returns `true` if the two sets were distinct.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let mut a = self.find(a);
        let mut b = self.find(b);
        if a == b {
            return false;
        }
        if self.rank[a] < self.rank[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        if self.rank[a] == self.rank[b] {
            self.rank[a] = self.rank[a].saturating_add(1);
        }
        true
    }

    pub fn same(&mut self, a: usize, b: usize) -> bool {
        self.find(a) == self.find(b)
    }

    /// Components as sorted index lists, ordered by smallest member.
    pub fn classes(&mut self) -> Vec<Vec<usize>> {
        let n = self.len();
        let mut slot_of_root = vec![usize::MAX; n];
        let mut classes: Vec<Vec<usize>> = Vec::new();
        for i in 0..n {
            let root = self.find(i);
            if slot_of_root[root] == usize::MAX {
                slot_of_root[root] = classes.len();
                classes.push(Vec::new());
            }
            classes[slot_of_root[root]].push(i);
        }
        classes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_unions() {
        let mut uf = UnionFind::new(5);
        assert!(uf.union(0, 3));
        assert!(uf.union(3, 4));
        assert!(!uf.union(0, 4));
        assert!(uf.same(0, 4));
        assert!(!uf.same(1, 2));
        assert_eq!(uf.classes(), vec![vec![0, 3, 4], vec![1], vec![2]]);
    }

    #[test]
    fn order_independent_classes() {
        let pairs = [(0, 1), (2, 3), (1, 2), (5, 6)];
        let mut a = UnionFind::new(7);
        for &(x, y) in &pairs {
            a.union(x, y);
        }
        let mut b = UnionFind::new(7);
        for &(x, y) in pairs.iter().rev() {
            b.union(y, x);
        }
        assert_eq!(a.classes(), b.classes());
    }
}
