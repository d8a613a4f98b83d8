//! Weighted-Gini CART over raw non-protected feature values.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KClass {
    HighK,
    LowK,
}

/// Column type of the training matrix.
#[derive(Clone, Debug, PartialEq)]
pub enum Column {
    Numeric,
    /// Label indices `0..n`.
    Categorical(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Test {
    /// Left branch: `x <= threshold`.
    Le(f64),
    /// Left branch: `x == label`.
    Is(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        class: KClass,
        high: usize,
        low: usize,
    },
    Split {
        /// Column index into the training matrix.
        column: usize,
        test: Test,
        left: Box<Node>,
        right: Box<Node>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub root: Node,
}

#[derive(Clone, Copy, Debug)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Test {
    pub fn goes_left(self, value: f64) -> bool {
        match self {
            Test::Le(t) => value <= t,
            Test::Is(label) => value as usize == label && value >= 0.0,
        }
    }
}

impl DecisionTree {
    pub fn predict(&self, row: &[f64]) -> KClass {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf { class, .. } => return *class,
                Node::Split { column, test, left, right } => {
                    node = if test.goes_left(row[*column]) { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn d(n: &Node) -> usize {
            match n {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + d(left).max(d(right)),
            }
        }
        d(&self.root)
    }

    pub fn leaf_count(&self) -> usize {
        fn c(n: &Node) -> usize {
            match n {
                Node::Leaf { .. } => 1,
                Node::Split { left, right, .. } => c(left) + c(right),
            }
        }
        c(&self.root)
    }
}

struct Fit<'a> {
    rows: &'a [Vec<f64>],
    labels: &'a [KClass],
    columns: &'a [Column],
    params: TreeParams,
    w_high: f64,
    w_low: f64,
}

fn gini(high: f64, low: f64) -> f64 {
    let total = high + low;
    if total <= 0.0 {
        return 0.0;
    }
    let p = high / total;
    2.0 * p * (1.0 - p)
}

impl Fit<'_> {
    fn weights(&self, idx: &[usize]) -> (f64, f64, usize, usize) {
        let high = idx.iter().filter(|&&i| self.labels[i] == KClass::HighK).count();
        let low = idx.len() - high;
        (high as f64 * self.w_high, low as f64 * self.w_low, high, low)
    }

    fn leaf(&self, idx: &[usize]) -> Node {
        let (wh, wl, high, low) = self.weights(idx);
        Node::Leaf {
            class: if wh > wl { KClass::HighK } else { KClass::LowK },
            high,
            low,
        }
    }

    /// Best split as (gain, column, test); ties keep the earliest candidate.
    fn best_split(&self, idx: &[usize]) -> Option<(f64, usize, Test)> {
        let (wh, wl, _, _) = self.weights(idx);
        let total = wh + wl;
        let parent = gini(wh, wl);
        let min_leaf = self.params.min_leaf.max(1);
        let mut best: Option<(f64, usize, Test)> = None;
        let mut consider = |gain: f64, column: usize, test: Test| {
            if gain > 1e-12 && best.is_none_or(|(g, _, _)| gain > g + 1e-12) {
                best = Some((gain, column, test));
            }
        };
        for (c, kind) in self.columns.iter().enumerate() {
            match kind {
                Column::Numeric => {
                    let mut sorted: Vec<usize> = idx.to_vec();
                    sorted.sort_by(|&a, &b| self.rows[a][c].total_cmp(&self.rows[b][c]));
                    let (mut lh, mut ll) = (0.0, 0.0);
                    for pos in 0..sorted.len() - 1 {
                        let i = sorted[pos];
                        match self.labels[i] {
                            KClass::HighK => lh += self.w_high,
                            KClass::LowK => ll += self.w_low,
                        }
                        let v = self.rows[i][c];
                        let next = self.rows[sorted[pos + 1]][c];
                        if next <= v {
                            continue;
                        }
                        let n_left = pos + 1;
                        if n_left < min_leaf || sorted.len() - n_left < min_leaf {
                            continue;
                        }
                        let (rh, rl) = (wh - lh, wl - ll);
                        let child = ((lh + ll) * gini(lh, ll) + (rh + rl) * gini(rh, rl)) / total;
                        consider(parent - child, c, Test::Le((v + next) / 2.0));
                    }
                }
                Column::Categorical(n) => {
                    for label in 0..*n {
                        let (mut lh, mut ll, mut count) = (0.0, 0.0, 0usize);
                        for &i in idx {
                            if self.rows[i][c] as usize == label {
                                count += 1;
                                match self.labels[i] {
                                    KClass::HighK => lh += self.w_high,
                                    KClass::LowK => ll += self.w_low,
                                }
                            }
                        }
                        if count < min_leaf || idx.len() - count < min_leaf {
                            continue;
                        }
                        let (rh, rl) = (wh - lh, wl - ll);
                        let child = ((lh + ll) * gini(lh, ll) + (rh + rl) * gini(rh, rl)) / total;
                        consider(parent - child, c, Test::Is(label));
                    }
                }
            }
        }
        best
    }

    fn grow(&self, idx: Vec<usize>, depth: usize) -> Node {
        let (_, _, high, low) = self.weights(&idx);
        if depth >= self.params.max_depth || high == 0 || low == 0 || idx.len() < 2 * self.params.min_leaf.max(1) {
            return self.leaf(&idx);
        }
        let Some((_, column, test)) = self.best_split(&idx) else {
            return self.leaf(&idx);
        };
        let (left, right): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| test.goes_left(self.rows[i][column]));
        Node::Split {
            column,
            test,
            left: Box::new(self.grow(left, depth + 1)),
            right: Box::new(self.grow(right, depth + 1)),
        }
    }
}

/// Greedy top-down induction with class weights inverse to class frequency.
/// Both classes must be present.
pub fn build_decision_tree(rows: &[Vec<f64>], labels: &[KClass], columns: &[Column], params: TreeParams) -> DecisionTree {
    let n = labels.len() as f64;
    let high = labels.iter().filter(|&&l| l == KClass::HighK).count().max(1) as f64;
    let low = (labels.len() as f64 - high).max(1.0);
    let fit = Fit {
        rows,
        labels,
        columns,
        params,
        w_high: n / (2.0 * high),
        w_low: n / (2.0 * low),
    };
    DecisionTree {
        root: fit.grow((0..labels.len()).collect(), 0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_one_dimensional() {
        let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64 / 100.0]).collect();
        let labels: Vec<KClass> = rows
            .iter()
            .map(|r| if r[0] > 0.5 { KClass::HighK } else { KClass::LowK })
            .collect();
        let t = build_decision_tree(&rows, &labels, &[Column::Numeric], TreeParams { max_depth: 6, min_leaf: 5 });
        assert_eq!(t.depth(), 1);
        let Node::Split { test: Test::Le(th), .. } = t.root else { panic!() };
        assert!((th - 0.505).abs() < 0.01);
    }

    #[test]
    fn tree_beats_stump() {
        // high iff x in (0.3, 0.6] and c == 1
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..400 {
            let x = (i % 100) as f64 / 100.0;
            let c = (i / 100) % 3;
            rows.push(vec![x, c as f64]);
            labels.push(if x > 0.3 && x <= 0.6 && c == 1 { KClass::HighK } else { KClass::LowK });
        }
        let cols = [Column::Numeric, Column::Categorical(3)];
        let acc = |t: &DecisionTree| {
            rows.iter().zip(&labels).filter(|(r, l)| t.predict(r) == **l).count()
        };
        let stump = build_decision_tree(&rows, &labels, &cols, TreeParams { max_depth: 1, min_leaf: 1 });
        let deep = build_decision_tree(&rows, &labels, &cols, TreeParams { max_depth: 6, min_leaf: 1 });
        assert!(acc(&deep) >= acc(&stump));
        assert_eq!(acc(&deep), rows.len());
    }
}
