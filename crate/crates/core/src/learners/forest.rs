//! Regression forest: bootstrap-resampled CART trees with per-split feature
//! subsampling and variance-reduction splits at midpoints between sorted
//! distinct feature values.
//!
//! Each feature is sorted once per forest; a tree keeps one sorted row list
//! per feature and splits nodes by stable partition, so growing a level
//! costs O(rows · p) with no re-sorting. Bootstrap draws become integer row
//! weights.

use ndarray::{ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stochastics::SeededStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` means all p.
    pub mtry: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: 5,
            min_leaf: 5,
            mtry: None,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeNode {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict_row(&self, row: ArrayView1<'_, f64>) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    /// Number of splits on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], at: usize) -> usize {
            match nodes[at] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
}

impl Forest {
    pub fn fit(
        params: &ForestParams,
        x: ArrayView2<'_, f64>,
        y: ArrayView1<'_, f64>,
        stream: &mut SeededStream,
    ) -> Result<Forest> {
        if params.n_trees == 0 || params.min_leaf == 0 {
            return Err(Error::InvalidArgument(
                "forest needs n_trees >= 1 and min_leaf >= 1".into(),
            ));
        }
        let (n, p) = x.dim();
        let columns: Vec<Vec<f64>> = x.columns().into_iter().map(|c| c.to_vec()).collect();
        let order: Vec<Vec<u32>> = columns
            .iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..n as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
                idx
            })
            .collect();
        let mtry = params.mtry.unwrap_or(p).clamp(1, p.max(1));
        let seeds: Vec<u64> = (0..params.n_trees).map(|_| stream.next_u64()).collect();
        let data = TrainingData {
            columns: &columns,
            order: &order,
            y: y.as_slice().map(|s| s.to_vec()).unwrap_or_else(|| y.to_vec()),
            p,
            mtry,
        };
        let trees = seeds.par_iter().map(|&seed| data.grow(params, seed)).collect();
        Ok(Forest { trees })
    }

    pub fn predict_row(&self, row: ArrayView1<'_, f64>) -> f64 {
        self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn max_depth(&self) -> usize {
        self.trees.iter().map(Tree::depth).max().unwrap_or(0)
    }
}

struct TrainingData<'a> {
    columns: &'a [Vec<f64>],
    order: &'a [Vec<u32>],
    y: Vec<f64>,
    p: usize,
    mtry: usize,
}

struct Grower<'a> {
    data: &'a TrainingData<'a>,
    params: &'a ForestParams,
    stream: SeededStream,
    weight: Vec<u32>,
    /// weight·y per row
    wy: Vec<f64>,
    sorted: Vec<Vec<u32>>,
    scratch: Vec<u32>,
    goes_left: Vec<bool>,
    features: Vec<usize>,
    nodes: Vec<TreeNode>,
}

struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl TrainingData<'_> {
    fn grow(&self, params: &ForestParams, seed: u64) -> Tree {
        let n = self.y.len();
        let mut stream = SeededStream::new(seed);
        let mut weight = vec![0u32; n];
        if params.bootstrap {
            for _ in 0..n {
                weight[stream.index(n)] += 1;
            }
        } else {
            weight.fill(1);
        }
        let sorted: Vec<Vec<u32>> = self
            .order
            .iter()
            .map(|o| o.iter().copied().filter(|&i| weight[i as usize] > 0).collect())
            .collect();
        let m = weight.iter().filter(|&&w| w > 0).count();
        let mut g = Grower {
            data: self,
            params,
            stream,
            wy: (0..n).map(|i| weight[i] as f64 * self.y[i]).collect(),
            weight,
            sorted,
            scratch: vec![0; 2 * m],
            goes_left: vec![false; n],
            features: (0..self.p).collect(),
            nodes: Vec::new(),
        };
        if self.p == 0 {
            // No features: a single leaf at the weighted mean.
            let (w, s) = (0..n).fold((0.0, 0.0), |(w, s), i| {
                let wi = g.weight[i] as f64;
                (w + wi, s + wi * self.y[i])
            });
            return Tree {
                nodes: vec![TreeNode::Leaf { value: s / w }],
            };
        }
        g.build(0, m, 0);
        Tree { nodes: g.nodes }
    }
}

impl Grower<'_> {
    fn build(&mut self, start: usize, end: usize, depth: usize) -> usize {
        let data = self.data;
        let y = &data.y;
        let (mut w_total, mut s_total, mut ss_total) = (0.0, 0.0, 0.0);
        let mut count = 0u64;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &r in &self.sorted[0][start..end] {
            let r = r as usize;
            let w = self.weight[r] as f64;
            count += self.weight[r] as u64;
            w_total += w;
            s_total += w * y[r];
            ss_total += w * y[r] * y[r];
            lo = lo.min(y[r]);
            hi = hi.max(y[r]);
        }
        let idx = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            value: s_total / w_total,
        });
        let min_leaf = self.params.min_leaf as u64;
        if depth >= self.params.max_depth || count < 2 * min_leaf || lo == hi {
            return idx;
        }

        let p = data.p;
        for k in 0..data.mtry {
            let j = k + self.stream.index(p - k);
            self.features.swap(k, j);
        }
        let base = s_total * s_total / w_total;
        let spread = ss_total - base;
        let mut best: Option<Candidate> = None;
        for k in 0..data.mtry {
            let f = self.features[k];
            let col = &data.columns[f];
            let seg = &self.sorted[f][start..end];
            let (mut wl, mut sl) = (0u64, 0.0);
            let mut xv = col[seg[0] as usize];
            for pos in 0..seg.len() - 1 {
                let r = seg[pos] as usize;
                wl += self.weight[r] as u64;
                sl += self.wy[r];
                let xn = col[seg[pos + 1] as usize];
                if xn > xv && wl >= min_leaf {
                    let wr = count - wl;
                    if wr < min_leaf {
                        break;
                    }
                    let sr = s_total - sl;
                    let gain = sl * sl / wl as f64 + sr * sr / wr as f64 - base;
                    if best.as_ref().is_none_or(|b| gain > b.gain) {
                        let mut threshold = xv + (xn - xv) * 0.5;
                        if threshold >= xn {
                            threshold = xv;
                        }
                        best = Some(Candidate {
                            gain,
                            feature: f,
                            threshold,
                        });
                    }
                }
                xv = xn;
            }
        }
        let Some(split) = best.filter(|b| b.gain > 1e-12 * spread && spread > 0.0) else {
            return idx;
        };

        let col = &data.columns[split.feature];
        for &r in &self.sorted[0][start..end] {
            self.goes_left[r as usize] = col[r as usize] <= split.threshold;
        }
        if depth + 1 >= self.params.max_depth {
            // Both children are leaves; accumulate in the same order a child
            // node would so the values are bitwise identical.
            let mut acc = [(0.0, 0.0); 2];
            for &r in &self.sorted[0][start..end] {
                let r = r as usize;
                let side = usize::from(!self.goes_left[r]);
                let w = self.weight[r] as f64;
                acc[side].0 += w;
                acc[side].1 += w * y[r];
            }
            let left = self.nodes.len();
            self.nodes.push(TreeNode::Leaf {
                value: acc[0].1 / acc[0].0,
            });
            self.nodes.push(TreeNode::Leaf {
                value: acc[1].1 / acc[1].0,
            });
            self.nodes[idx] = TreeNode::Split {
                feature: split.feature,
                threshold: split.threshold,
                left,
                right: left + 1,
            };
            return idx;
        }
        let mut n_left = 0;
        let len = end - start;
        for f in 0..p {
            let seg = &mut self.sorted[f][start..end];
            let (left_buf, right_buf) = self.scratch.split_at_mut(len);
            let (mut l, mut r_pos) = (0, 0);
            for &r in seg.iter() {
                let go = self.goes_left[r as usize];
                left_buf[l] = r;
                right_buf[r_pos] = r;
                l += usize::from(go);
                r_pos += usize::from(!go);
            }
            seg[..l].copy_from_slice(&left_buf[..l]);
            seg[l..].copy_from_slice(&right_buf[..r_pos]);
            n_left = l;
        }
        let left = self.build(start, start + n_left, depth + 1);
        let right = self.build(start + n_left, end, depth + 1);
        self.nodes[idx] = TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        idx
    }
}
