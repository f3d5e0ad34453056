//! Arena-backed binary regression tree used by the sum-of-trees sampler.
//!
//! Split rules are stored both as a cut index into the per-covariate cut grid
//! (what the sampler routes on) and as the real cut value (what prediction on
//! new rows uses). An observation goes left when `x <= cut`.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRule {
    pub var: usize,
    pub cut_index: u32,
    pub cut_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Leaf { value: f64 },
    Split { rule: SplitRule, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
struct Node {
    parent: Option<usize>,
    depth: u32,
    kind: Kind,
}

#[derive(Debug, Clone)]
pub struct RegressionTree {
    nodes: Vec<Node>,
    free: Vec<usize>,
}

pub const ROOT: usize = 0;

/// `(depth, split (var, cut index), leaf value bits)` of one node.
pub type CanonicalNode = (u32, Option<(usize, u32)>, Option<u64>);

impl RegressionTree {
    pub fn stump(value: f64) -> Self {
        Self {
            nodes: vec![Node {
                parent: None,
                depth: 0,
                kind: Kind::Leaf { value },
            }],
            free: Vec::new(),
        }
    }

    fn live(&self) -> impl Iterator<Item = usize> + '_ {
        // Walk from the root so freed slots are never reported.
        let mut stack = vec![ROOT];
        std::iter::from_fn(move || {
            let id = stack.pop()?;
            if let Kind::Split { left, right, .. } = self.nodes[id].kind {
                stack.push(right);
                stack.push(left);
            }
            Some(id)
        })
    }

    pub fn leaves(&self) -> Vec<usize> {
        self.live().filter(|&id| self.is_leaf(id)).collect()
    }

    pub fn num_leaves(&self) -> usize {
        self.live().filter(|&id| self.is_leaf(id)).count()
    }

    /// Internal nodes whose children are both leaves.
    pub fn prunable(&self) -> Vec<usize> {
        self.live()
            .filter(|&id| match self.nodes[id].kind {
                Kind::Split { left, right, .. } => self.is_leaf(left) && self.is_leaf(right),
                Kind::Leaf { .. } => false,
            })
            .collect()
    }

    pub fn num_prunable(&self) -> usize {
        self.prunable().len()
    }

    pub fn is_stump(&self) -> bool {
        self.is_leaf(ROOT)
    }

    #[inline]
    pub fn is_leaf(&self, id: usize) -> bool {
        matches!(self.nodes[id].kind, Kind::Leaf { .. })
    }

    pub fn depth(&self, id: usize) -> u32 {
        self.nodes[id].depth
    }

    pub fn parent(&self, id: usize) -> Option<usize> {
        self.nodes[id].parent
    }

    pub fn rule(&self, id: usize) -> Option<SplitRule> {
        match self.nodes[id].kind {
            Kind::Split { rule, .. } => Some(rule),
            Kind::Leaf { .. } => None,
        }
    }

    pub fn children(&self, id: usize) -> Option<(usize, usize)> {
        match self.nodes[id].kind {
            Kind::Split { left, right, .. } => Some((left, right)),
            Kind::Leaf { .. } => None,
        }
    }

    /// Leaf value; panics on internal nodes.
    #[inline]
    pub fn value(&self, id: usize) -> f64 {
        match self.nodes[id].kind {
            Kind::Leaf { value } => value,
            Kind::Split { .. } => panic!("node {id} is not a leaf"),
        }
    }

    pub fn set_value(&mut self, id: usize, v: f64) {
        match &mut self.nodes[id].kind {
            Kind::Leaf { value } => *value = v,
            Kind::Split { .. } => panic!("node {id} is not a leaf"),
        }
    }

    fn alloc(&mut self, node: Node) -> usize {
        if let Some(id) = self.free.pop() {
            self.nodes[id] = node;
            id
        } else {
            self.nodes.push(node);
            self.nodes.len() - 1
        }
    }

    /// Turns leaf `id` into a split with two leaves carrying its value.
    pub fn grow(&mut self, id: usize, rule: SplitRule) -> (usize, usize) {
        let value = self.value(id);
        let depth = self.nodes[id].depth + 1;
        let child = Node {
            parent: Some(id),
            depth,
            kind: Kind::Leaf { value },
        };
        let left = self.alloc(child.clone());
        let right = self.alloc(child);
        self.nodes[id].kind = Kind::Split { rule, left, right };
        (left, right)
    }

    /// Collapses a node whose children are both leaves into a leaf.
    pub fn prune(&mut self, id: usize, value: f64) {
        let (left, right) = self.children(id).expect("prune target is a split");
        assert!(self.is_leaf(left) && self.is_leaf(right), "children must be leaves");
        self.free.push(right);
        self.free.push(left);
        self.nodes[id].kind = Kind::Leaf { value };
    }

    pub fn set_rule(&mut self, id: usize, new_rule: SplitRule) {
        match &mut self.nodes[id].kind {
            Kind::Split { rule, .. } => *rule = new_rule,
            Kind::Leaf { .. } => panic!("node {id} is a leaf"),
        }
    }

    /// Leaf reached by a row, given a covariate lookup by column.
    #[inline]
    pub fn route_by<F: Fn(usize) -> f64>(&self, get: F) -> usize {
        let mut id = ROOT;
        while let Kind::Split { rule, left, right } = self.nodes[id].kind {
            id = if get(rule.var) <= rule.cut_value { left } else { right };
        }
        id
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.value(self.route_by(|j| x[j]))
    }

    /// Structure and leaf values in pre-order, independent of arena layout.
    pub fn canonical(&self) -> Vec<CanonicalNode> {
        self.live()
            .map(|id| {
                let n = &self.nodes[id];
                match n.kind {
                    Kind::Leaf { value } => (n.depth, None, Some(value.to_bits())),
                    Kind::Split { rule, .. } => (n.depth, Some((rule.var, rule.cut_index)), None),
                }
            })
            .collect()
    }
}

impl PartialEq for RegressionTree {
    fn eq(&self, other: &Self) -> bool {
        self.canonical() == other.canonical()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule(var: usize, cut: f64) -> SplitRule {
        SplitRule {
            var,
            cut_index: (cut * 10.0) as u32,
            cut_value: cut,
        }
    }

    #[test]
    fn grow_prune_round_trip() {
        let mut t = RegressionTree::stump(0.5);
        let (l, r) = t.grow(ROOT, rule(0, 0.3));
        t.set_value(l, -1.0);
        t.set_value(r, 2.0);
        let before = t.clone();
        let (ll, lr) = t.grow(l, rule(1, 0.7));
        assert_eq!(t.num_leaves(), 3);
        assert_eq!(t.depth(ll), 2);
        assert_eq!(t.parent(lr), Some(l));
        t.prune(l, -1.0);
        assert_eq!(t, before);
    }

    #[test]
    fn routing_and_prediction() {
        let mut t = RegressionTree::stump(0.0);
        let (l, r) = t.grow(ROOT, rule(0, 0.5));
        t.set_value(l, 1.0);
        t.set_value(r, 2.0);
        assert_eq!(t.predict(&[0.5, 9.0]), 1.0);
        assert_eq!(t.predict(&[0.51, 9.0]), 2.0);
        assert_eq!(t.prunable(), vec![ROOT]);
        assert_eq!(t.leaves(), vec![l, r]);
    }

    #[test]
    fn freed_slots_are_reused() {
        let mut t = RegressionTree::stump(0.0);
        t.grow(ROOT, rule(0, 0.5));
        t.prune(ROOT, 0.0);
        t.grow(ROOT, rule(1, 0.2));
        assert_eq!(t.nodes.len(), 3);
        assert!(!t.is_stump());
    }
}
