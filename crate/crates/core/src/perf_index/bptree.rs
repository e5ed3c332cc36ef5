//! Arena-backed B+ tree with linked leaves.

use std::fmt::Debug;

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
enum Node<K, V> {
    Internal { keys: Vec<K>, children: Vec<usize> },
    Leaf { keys: Vec<K>, vals: Vec<V>, next: Option<usize> },
}

impl<K, V> Node<K, V> {
    fn keys(&self) -> &[K] {
        match self {
            Node::Internal { keys, .. } | Node::Leaf { keys, .. } => keys,
        }
    }

    fn len(&self) -> usize {
        self.keys().len()
    }
}

/// Order-`b` B+ tree: internal nodes hold at most `b` children, every node
/// at most `b − 1` keys and every non-root node at least `⌈b/2⌉ − 1` keys.
/// Keys are unique; inserting an existing key replaces its value.
#[derive(Clone, Debug)]
pub struct BPlusTree<K, V> {
    order: usize,
    nodes: Vec<Node<K, V>>,
    free: Vec<usize>,
    root: usize,
    len: usize,
}

impl<K: Ord + Clone + Debug, V: Clone> BPlusTree<K, V> {
    pub fn new(order: usize) -> Self {
        assert!(order >= 3, "B+ tree order must be at least 3");
        Self {
            order,
            nodes: vec![Node::Leaf {
                keys: Vec::new(),
                vals: Vec::new(),
                next: None,
            }],
            free: Vec::new(),
            root: 0,
            len: 0,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn max_keys(&self) -> usize {
        self.order - 1
    }

    fn min_keys(&self) -> usize {
        self.order.div_ceil(2) - 1
    }

    /// Number of edges from the root to any leaf.
    pub fn height(&self) -> usize {
        let mut h = 0;
        let mut n = self.root;
        while let Node::Internal { children, .. } = &self.nodes[n] {
            n = children[0];
            h += 1;
        }
        h
    }

    fn alloc(&mut self, node: Node<K, V>) -> usize {
        match self.free.pop() {
            Some(i) => {
                self.nodes[i] = node;
                i
            }
            None => {
                self.nodes.push(node);
                self.nodes.len() - 1
            }
        }
    }

    fn release(&mut self, i: usize) {
        self.nodes[i] = Node::Leaf {
            keys: Vec::new(),
            vals: Vec::new(),
            next: None,
        };
        self.free.push(i);
    }

    /// Child slot to descend into for `key`: keys equal to a separator go right.
    fn route(keys: &[K], key: &K) -> usize {
        keys.partition_point(|k| k <= key)
    }

    fn find_leaf(&self, key: &K) -> (usize, usize) {
        let mut n = self.root;
        let mut visits = 1;
        while let Node::Internal { keys, children } = &self.nodes[n] {
            n = children[Self::route(keys, key)];
            visits += 1;
        }
        (n, visits)
    }

    pub fn get(&self, key: &K) -> Option<&V> {
        self.get_counted(key).0
    }

    /// Point lookup that also reports how many nodes were visited.
    pub fn get_counted(&self, key: &K) -> (Option<&V>, usize) {
        let (leaf, visits) = self.find_leaf(key);
        let Node::Leaf { keys, vals, .. } = &self.nodes[leaf] else {
            unreachable!()
        };
        (keys.binary_search(key).ok().map(|i| &vals[i]), visits)
    }

    /// Insert, returning the previous value for an existing key.
    pub fn insert(&mut self, key: K, val: V) -> Option<V> {
        let root = self.root;
        let (old, split) = self.insert_at(root, key, val);
        if let Some((sep, right)) = split {
            let new_root = self.alloc(Node::Internal {
                keys: vec![sep],
                children: vec![root, right],
            });
            self.root = new_root;
        }
        if old.is_none() {
            self.len += 1;
        }
        old
    }

    fn insert_at(&mut self, n: usize, key: K, val: V) -> (Option<V>, Option<(K, usize)>) {
        let max = self.max_keys();
        match &mut self.nodes[n] {
            Node::Leaf { keys, vals, .. } => {
                match keys.binary_search(&key) {
                    Ok(i) => return (Some(std::mem::replace(&mut vals[i], val)), None),
                    Err(i) => {
                        keys.insert(i, key);
                        vals.insert(i, val);
                    }
                }
                if keys.len() <= max {
                    return (None, None);
                }
                let mid = keys.len() / 2;
                let rk = keys.split_off(mid);
                let rv = vals.split_off(mid);
                let sep = rk[0].clone();
                let Node::Leaf { next, .. } = &self.nodes[n] else { unreachable!() };
                let old_next = *next;
                let right = self.alloc(Node::Leaf {
                    keys: rk,
                    vals: rv,
                    next: old_next,
                });
                if let Node::Leaf { next, .. } = &mut self.nodes[n] {
                    *next = Some(right);
                }
                (None, Some((sep, right)))
            }
            Node::Internal { keys, children } => {
                let slot = Self::route(keys, &key);
                let child = children[slot];
                let (old, split) = self.insert_at(child, key, val);
                let Some((sep, right)) = split else {
                    return (old, None);
                };
                let Node::Internal { keys, children } = &mut self.nodes[n] else { unreachable!() };
                keys.insert(slot, sep);
                children.insert(slot + 1, right);
                if keys.len() <= max {
                    return (old, None);
                }
                let mid = keys.len() / 2;
                let mut rk = keys.split_off(mid);
                let up = rk.remove(0);
                let rc = children.split_off(mid + 1);
                let right = self.alloc(Node::Internal { keys: rk, children: rc });
                (old, Some((up, right)))
            }
        }
    }

    /// Remove `key`, returning its value; `None` signals an absent key.
    pub fn remove(&mut self, key: &K) -> Option<V> {
        let root = self.root;
        let out = self.remove_at(root, key);
        if out.is_some() {
            self.len -= 1;
        }
        if let Node::Internal { keys, children } = &self.nodes[self.root] {
            if keys.is_empty() {
                let only = children[0];
                let old = self.root;
                self.root = only;
                self.release(old);
            }
        }
        out
    }

    fn remove_at(&mut self, n: usize, key: &K) -> Option<V> {
        match &mut self.nodes[n] {
            Node::Leaf { keys, vals, .. } => {
                let i = keys.binary_search(key).ok()?;
                keys.remove(i);
                Some(vals.remove(i))
            }
            Node::Internal { keys, children } => {
                let slot = Self::route(keys, key);
                let child = children[slot];
                let out = self.remove_at(child, key)?;
                if self.nodes[child].len() < self.min_keys() {
                    self.rebalance(n, slot);
                }
                Some(out)
            }
        }
    }

    /// Fix an underfull child `slot` of internal node `parent` by borrowing
    /// from a sibling or merging with one.
    fn rebalance(&mut self, parent: usize, slot: usize) {
        let min = self.min_keys();
        let Node::Internal { children, .. } = &self.nodes[parent] else { unreachable!() };
        let left = (slot > 0).then(|| children[slot - 1]);
        let right = children.get(slot + 1).copied();
        let child = children[slot];

        if let Some(l) = left.filter(|l| self.nodes[*l].len() > min) {
            self.borrow_from_left(parent, slot, l, child);
        } else if let Some(r) = right.filter(|r| self.nodes[*r].len() > min) {
            self.borrow_from_right(parent, slot, child, r);
        } else if let Some(l) = left {
            self.merge(parent, slot - 1, l, child);
        } else if let Some(r) = right {
            self.merge(parent, slot, child, r);
        }
    }

    fn two_mut(&mut self, a: usize, b: usize) -> (&mut Node<K, V>, &mut Node<K, V>) {
        assert_ne!(a, b);
        if a < b {
            let (x, y) = self.nodes.split_at_mut(b);
            (&mut x[a], &mut y[0])
        } else {
            let (x, y) = self.nodes.split_at_mut(a);
            (&mut y[0], &mut x[b])
        }
    }

    fn set_sep(&mut self, parent: usize, idx: usize, key: K) {
        if let Node::Internal { keys, .. } = &mut self.nodes[parent] {
            keys[idx] = key;
        }
    }

    fn sep(&self, parent: usize, idx: usize) -> K {
        match &self.nodes[parent] {
            Node::Internal { keys, .. } => keys[idx].clone(),
            Node::Leaf { .. } => unreachable!(),
        }
    }

    fn borrow_from_left(&mut self, parent: usize, slot: usize, l: usize, c: usize) {
        let sep = self.sep(parent, slot - 1);
        let new_sep = match self.two_mut(l, c) {
            (Node::Leaf { keys: lk, vals: lv, .. }, Node::Leaf { keys: ck, vals: cv, .. }) => {
                let k = lk.pop().expect("donor");
                let v = lv.pop().expect("donor");
                ck.insert(0, k.clone());
                cv.insert(0, v);
                k
            }
            (
                Node::Internal {
                    keys: lk,
                    children: lc,
                },
                Node::Internal {
                    keys: ck,
                    children: cc,
                },
            ) => {
                let k = lk.pop().expect("donor");
                let moved = lc.pop().expect("donor");
                ck.insert(0, sep);
                cc.insert(0, moved);
                k
            }
            _ => unreachable!("siblings share a level"),
        };
        self.set_sep(parent, slot - 1, new_sep);
    }

    fn borrow_from_right(&mut self, parent: usize, slot: usize, c: usize, r: usize) {
        let sep = self.sep(parent, slot);
        let new_sep = match self.two_mut(c, r) {
            (Node::Leaf { keys: ck, vals: cv, .. }, Node::Leaf { keys: rk, vals: rv, .. }) => {
                ck.push(rk.remove(0));
                cv.push(rv.remove(0));
                rk[0].clone()
            }
            (
                Node::Internal {
                    keys: ck,
                    children: cc,
                },
                Node::Internal {
                    keys: rk,
                    children: rc,
                },
            ) => {
                ck.push(sep);
                cc.push(rc.remove(0));
                rk.remove(0)
            }
            _ => unreachable!("siblings share a level"),
        };
        self.set_sep(parent, slot, new_sep);
    }

    /// Merge child `sep_idx + 1` (`r`) into child `sep_idx` (`l`).
    fn merge(&mut self, parent: usize, sep_idx: usize, l: usize, r: usize) {
        let sep = match &mut self.nodes[parent] {
            Node::Internal { keys, children } => {
                children.remove(sep_idx + 1);
                keys.remove(sep_idx)
            }
            Node::Leaf { .. } => unreachable!(),
        };
        match self.two_mut(l, r) {
            (
                Node::Leaf {
                    keys: lk,
                    vals: lv,
                    next: ln,
                },
                Node::Leaf {
                    keys: rk,
                    vals: rv,
                    next: rn,
                },
            ) => {
                lk.append(rk);
                lv.append(rv);
                *ln = *rn;
            }
            (
                Node::Internal {
                    keys: lk,
                    children: lc,
                },
                Node::Internal {
                    keys: rk,
                    children: rc,
                },
            ) => {
                lk.push(sep);
                lk.append(rk);
                lc.append(rc);
            }
            _ => unreachable!("siblings share a level"),
        }
        self.release(r);
    }

    fn leftmost_leaf(&self) -> usize {
        let mut n = self.root;
        while let Node::Internal { children, .. } = &self.nodes[n] {
            n = children[0];
        }
        n
    }

    /// Entries with `lo <= key <= hi` in ascending key order, following the
    /// leaf chain.
    pub fn range(&self, lo: &K, hi: &K) -> Result<Vec<(&K, &V)>> {
        if lo > hi {
            return Err(Error::invalid(format!("range lower bound {lo:?} exceeds upper bound {hi:?}")));
        }
        let mut out = Vec::new();
        let (mut leaf, _) = self.find_leaf(lo);
        loop {
            let Node::Leaf { keys, vals, next } = &self.nodes[leaf] else { unreachable!() };
            let start = keys.partition_point(|k| k < lo);
            for (k, v) in keys[start..].iter().zip(&vals[start..]) {
                if k > hi {
                    return Ok(out);
                }
                out.push((k, v));
            }
            match next {
                Some(nx) => leaf = *nx,
                None => return Ok(out),
            }
        }
    }

    /// All entries in key order.
    pub fn iter(&self) -> impl Iterator<Item = (&K, &V)> {
        let mut leaf = Some(self.leftmost_leaf());
        let mut pos = 0;
        std::iter::from_fn(move || loop {
            let n = leaf?;
            let Node::Leaf { keys, vals, next } = &self.nodes[n] else { unreachable!() };
            if pos < keys.len() {
                pos += 1;
                return Some((&keys[pos - 1], &vals[pos - 1]));
            }
            leaf = *next;
            pos = 0;
        })
    }

    /// Verify every structural invariant; the error names the first violation.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let mut leaf_depth = None;
        let mut leaves = Vec::new();
        let count = self.check_node(self.root, 0, None, None, &mut leaf_depth, &mut leaves)?;
        if count != self.len {
            return Err(format!("tree holds {count} entries but len is {}", self.len));
        }
        // leaf chain must visit the leaves left to right and be sorted
        let mut chain = Vec::new();
        let mut cur = Some(self.leftmost_leaf());
        while let Some(n) = cur {
            chain.push(n);
            if chain.len() > self.nodes.len() {
                return Err("leaf chain has a cycle".into());
            }
            let Node::Leaf { next, .. } = &self.nodes[n] else {
                return Err(format!("leaf chain reaches internal node {n}"));
            };
            cur = *next;
        }
        if chain != leaves {
            return Err("leaf chain does not match in-order leaves".into());
        }
        let walked: Vec<&K> = self.iter().map(|(k, _)| k).collect();
        if walked.windows(2).any(|w| w[0] >= w[1]) {
            return Err("leaf walk is not strictly increasing".into());
        }
        Ok(())
    }

    fn check_node(
        &self,
        n: usize,
        depth: usize,
        lo: Option<&K>,
        hi: Option<&K>,
        leaf_depth: &mut Option<usize>,
        leaves: &mut Vec<usize>,
    ) -> std::result::Result<usize, String> {
        let node = &self.nodes[n];
        let keys = node.keys();
        if keys.len() > self.max_keys() {
            return Err(format!("node {n} has {} keys (max {})", keys.len(), self.max_keys()));
        }
        if n != self.root && keys.len() < self.min_keys() {
            return Err(format!("node {n} has {} keys (min {})", keys.len(), self.min_keys()));
        }
        if keys.windows(2).any(|w| w[0] >= w[1]) {
            return Err(format!("node {n} keys are not sorted"));
        }
        if let Some(lo) = lo {
            if keys.first().is_some_and(|k| k < lo) {
                return Err(format!("node {n} holds a key below its separator {lo:?}"));
            }
        }
        if let Some(hi) = hi {
            if keys.last().is_some_and(|k| k >= hi) {
                return Err(format!("node {n} holds a key at or above its separator {hi:?}"));
            }
        }
        match node {
            Node::Leaf { vals, .. } => {
                if vals.len() != keys.len() {
                    return Err(format!("leaf {n} key/value count mismatch"));
                }
                match leaf_depth {
                    None => *leaf_depth = Some(depth),
                    Some(d) if *d != depth => return Err(format!("leaf {n} at depth {depth}, expected {d}")),
                    _ => {}
                }
                leaves.push(n);
                Ok(keys.len())
            }
            Node::Internal { children, .. } => {
                if children.len() != keys.len() + 1 {
                    return Err(format!("internal node {n}: {} keys but {} children", keys.len(), children.len()));
                }
                if keys.is_empty() {
                    return Err(format!("internal node {n} has no keys"));
                }
                let mut total = 0;
                for (i, c) in children.iter().enumerate() {
                    let clo = if i == 0 { lo } else { Some(&keys[i - 1]) };
                    let chi = if i == keys.len() { hi } else { Some(&keys[i]) };
                    total += self.check_node(*c, depth + 1, clo, chi, leaf_depth, leaves)?;
                }
                Ok(total)
            }
        }
    }
}
