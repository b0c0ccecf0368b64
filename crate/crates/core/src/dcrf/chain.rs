//! Linear-chain CRF over per-slice labels: construction, MAP decoding and
//! marginal inference.
//!
//! A labeling `l` scores `ψᵤ(0, l₀) + Σₜ [ψₚ(t−1, lₜ₋₁, lₜ) + ψᵤ(t, lₜ)]` and
//! has probability `exp(score − log Z)`. Slices may have different label
//! counts; `pairwise[t]` is `L_t × L_{t+1}`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DcrfError {
    #[error("inconsistent chain dimensions: {0}")]
    Shape(String),
    #[error("non-finite potential at {0}")]
    NonFinite(String),
    #[error("invalid chain parameters: {0}")]
    Params(String),
    #[error("labeling does not fit the chain: {0}")]
    Labels(String),
    #[error("empty window")]
    EmptyWindow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainModel {
    unary: Vec<Vec<f64>>,
    pairwise: Vec<Vec<Vec<f64>>>,
}

impl ChainModel {
    pub fn new(unary: Vec<Vec<f64>>, pairwise: Vec<Vec<Vec<f64>>>) -> Result<Self, DcrfError> {
        let t = unary.len();
        if pairwise.len() != t.saturating_sub(1) {
            return Err(DcrfError::Shape(format!("{} slices need {} pairwise blocks, got {}", t, t.saturating_sub(1), pairwise.len())));
        }
        for (i, row) in unary.iter().enumerate() {
            if row.is_empty() {
                return Err(DcrfError::Shape(format!("slice {i} has no labels")));
            }
            if let Some(k) = row.iter().position(|x| !x.is_finite()) {
                return Err(DcrfError::NonFinite(format!("unary[{i}][{k}]")));
            }
        }
        for (i, block) in pairwise.iter().enumerate() {
            if block.len() != unary[i].len() || block.iter().any(|r| r.len() != unary[i + 1].len()) {
                return Err(DcrfError::Shape(format!(
                    "pairwise[{i}] must be {}x{}",
                    unary[i].len(),
                    unary[i + 1].len()
                )));
            }
            for (j, r) in block.iter().enumerate() {
                if let Some(k) = r.iter().position(|x| !x.is_finite()) {
                    return Err(DcrfError::NonFinite(format!("pairwise[{i}][{j}][{k}]")));
                }
            }
        }
        Ok(Self { unary, pairwise })
    }

    /// Number of slices.
    pub fn len(&self) -> usize {
        self.unary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unary.is_empty()
    }

    pub fn labels_at(&self, t: usize) -> usize {
        self.unary[t].len()
    }

    pub fn unary(&self) -> &[Vec<f64>] {
        &self.unary
    }

    pub fn pairwise(&self) -> &[Vec<Vec<f64>>] {
        &self.pairwise
    }

    /// Adds `c` to every unary entry of slice `t`.
    pub fn shift_unary(&mut self, t: usize, c: f64) {
        self.unary[t].iter_mut().for_each(|x| *x += c);
    }

    fn check(&self, labels: &[usize]) -> Result<(), DcrfError> {
        if labels.len() != self.len() {
            return Err(DcrfError::Labels(format!("{} labels for {} slices", labels.len(), self.len())));
        }
        if let Some(t) = labels.iter().enumerate().position(|(t, &l)| l >= self.labels_at(t)) {
            return Err(DcrfError::Labels(format!("label {} out of range at slice {t}", labels[t])));
        }
        Ok(())
    }

    /// Raw log-potential of a labeling. Summed left to right, unary then pairwise.
    pub fn score(&self, labels: &[usize]) -> Result<f64, DcrfError> {
        self.check(labels)?;
        Ok(self.score_unchecked(labels))
    }

    fn score_unchecked(&self, labels: &[usize]) -> f64 {
        let Some(&first) = labels.first() else { return 0.0 };
        let mut s = self.unary[0][first];
        for t in 1..labels.len() {
            s += self.pairwise[t - 1][labels[t - 1]][labels[t]];
            s += self.unary[t][labels[t]];
        }
        s
    }
}

/// MAP labeling and its score. On ties the smaller label wins at the latest
/// slice where two optimal labelings differ.
pub fn viterbi(model: &ChainModel) -> (Vec<usize>, f64) {
    let t_len = model.len();
    if t_len == 0 {
        return (Vec::new(), 0.0);
    }
    let mut best: Vec<f64> = model.unary[0].clone();
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(t_len - 1);
    for t in 1..t_len {
        let block = &model.pairwise[t - 1];
        let mut next = Vec::with_capacity(model.labels_at(t));
        let mut ptr = Vec::with_capacity(model.labels_at(t));
        for k in 0..model.labels_at(t) {
            let mut arg = 0;
            let mut top = best[0] + block[0][k];
            for (j, prev) in best.iter().enumerate().skip(1) {
                let cand = prev + block[j][k];
                if cand > top {
                    top = cand;
                    arg = j;
                }
            }
            next.push(top + model.unary[t][k]);
            ptr.push(arg);
        }
        best = next;
        back.push(ptr);
    }
    let mut last = 0;
    for (k, v) in best.iter().enumerate() {
        if *v > best[last] {
            last = k;
        }
    }
    let score = best[last];
    let mut labels = vec![0; t_len];
    labels[t_len - 1] = last;
    for t in (1..t_len).rev() {
        labels[t - 1] = back[t - 1][labels[t]];
    }
    (labels, score)
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log partition function and per-slice label marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    pub log_z: f64,
    pub marginals: Vec<Vec<f64>>,
}

pub fn forward_backward(model: &ChainModel) -> Marginals {
    let t_len = model.len();
    if t_len == 0 {
        return Marginals { log_z: 0.0, marginals: Vec::new() };
    }
    let mut alpha: Vec<Vec<f64>> = Vec::with_capacity(t_len);
    alpha.push(model.unary[0].clone());
    for t in 1..t_len {
        let prev = &alpha[t - 1];
        let block = &model.pairwise[t - 1];
        let row = (0..model.labels_at(t))
            .map(|k| log_sum_exp(prev.iter().enumerate().map(|(j, a)| a + block[j][k])) + model.unary[t][k])
            .collect();
        alpha.push(row);
    }
    let mut beta: Vec<Vec<f64>> = vec![Vec::new(); t_len];
    beta[t_len - 1] = vec![0.0; model.labels_at(t_len - 1)];
    for t in (0..t_len - 1).rev() {
        let block = &model.pairwise[t];
        let next = &beta[t + 1];
        beta[t] = (0..model.labels_at(t))
            .map(|j| log_sum_exp((0..next.len()).map(|k| block[j][k] + model.unary[t + 1][k] + next[k])))
            .collect();
    }
    let log_z = log_sum_exp(alpha[t_len - 1].iter().copied());
    let marginals = alpha
        .iter()
        .zip(&beta)
        .map(|(a, b)| {
            let row: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x + y - log_z).exp()).collect();
            let total: f64 = row.iter().sum();
            row.into_iter().map(|p| (p / total).clamp(0.0, 1.0)).collect()
        })
        .collect();
    Marginals { log_z, marginals }
}

/// Normalized log-probability `score(labels) − log Z`; never positive.
pub fn dcrf_score(model: &ChainModel, labels: &[usize]) -> Result<f64, DcrfError> {
    let raw = model.score(labels)?;
    Ok((raw - forward_backward(model).log_z).min(0.0))
}

/// Weights of the chain features. The `lost` label carries `lost_penalty`
/// as its unary log-potential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcrfParams {
    /// τ: motion scale in pixels.
    pub tau: f64,
    /// η: weight of the slice-to-slice offset change.
    pub motion_weight: f64,
    /// βs: penalty when consecutive labels come from different identities.
    pub switch_penalty: f64,
    /// Weight of the offset from the motion prediction in the unary term.
    pub anchor_weight: f64,
    /// Weight of the NCP-weighted class-consistency term.
    pub class_weight: f64,
    pub lost_penalty: f64,
}

impl Default for DcrfParams {
    fn default() -> Self {
        Self { tau: 10.0, motion_weight: 1.0, switch_penalty: 1.0, anchor_weight: 1.0, class_weight: 1.0, lost_penalty: -2.0 }
    }
}

impl DcrfParams {
    /// Feature weights in the order (class consistency, anchor, motion smoothness, switch).
    pub fn feature_weights(&self) -> [f64; 4] {
        [self.class_weight, self.anchor_weight, self.motion_weight, self.switch_penalty]
    }

    fn validate(&self) -> Result<(), DcrfError> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(DcrfError::Params(format!("tau must be positive, got {}", self.tau)));
        }
        let w = self.feature_weights();
        if w.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
            return Err(DcrfError::Params("feature weights must be finite and non-negative".into()));
        }
        if !self.lost_penalty.is_finite() {
            return Err(DcrfError::Params("lost penalty must be finite".into()));
        }
        Ok(())
    }
}

/// Smallest class score used before taking the logarithm.
pub const SCORE_FLOOR: f64 = 1e-12;

/// A real detection that a track may take at one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    /// Track the detection was associated with, if any.
    pub identity: Option<u32>,
    /// Center offset from the motion prediction, in pixels.
    pub offset: [f64; 2],
    /// Score of the track's class in the detection's class vector.
    pub class_score: f64,
    pub unary_weight: f64,
}

/// Builds the chain for one track window. Slice `t` has labels
/// `0..n_t` for its candidates and `n_t` for "lost", whose offset is zero and
/// which has no identity.
pub fn build_chain(window: &[Vec<Candidate>], params: &DcrfParams) -> Result<ChainModel, DcrfError> {
    if window.is_empty() {
        return Err(DcrfError::EmptyWindow);
    }
    params.validate()?;
    let tau2 = params.tau * params.tau;
    let sq = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    let labels = |slice: &[Candidate]| -> Vec<([f64; 2], Option<u32>)> {
        slice.iter().map(|c| (c.offset, c.identity)).chain(std::iter::once(([0.0, 0.0], None))).collect()
    };

    let unary = window
        .iter()
        .map(|slice| {
            let mut row: Vec<f64> = slice
                .iter()
                .map(|c| {
                    params.class_weight * c.unary_weight * c.class_score.max(SCORE_FLOOR).ln()
                        - params.anchor_weight * sq(c.offset, [0.0, 0.0]) / tau2
                })
                .collect();
            row.push(params.lost_penalty);
            row
        })
        .collect();

    let pairwise = window
        .windows(2)
        .map(|pair| {
            let (from, to) = (labels(&pair[0]), labels(&pair[1]));
            from.iter()
                .map(|(oa, ia)| {
                    to.iter()
                        .map(|(ob, ib)| {
                            let switch = matches!((ia, ib), (Some(a), Some(b)) if a != b);
                            -params.motion_weight * sq(*oa, *ob) / tau2 - if switch { params.switch_penalty } else { 0.0 }
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    ChainModel::new(unary, pairwise)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(t: usize, l: usize, v: f64) -> ChainModel {
        ChainModel::new(vec![vec![v; l]; t], vec![vec![vec![v; l]; l]; t.saturating_sub(1)]).unwrap()
    }

    #[test]
    fn shape_and_finiteness_are_checked() {
        assert!(ChainModel::new(vec![vec![0.0]], vec![vec![vec![0.0]]]).is_err());
        assert!(ChainModel::new(vec![vec![0.0, 1.0], vec![0.0]], vec![vec![vec![0.0, 0.0]]]).is_err());
        assert!(ChainModel::new(vec![vec![f64::NAN]], vec![]).is_err());
        assert!(ChainModel::new(vec![vec![]], vec![]).is_err());
        let ragged = ChainModel::new(vec![vec![0.0, 1.0], vec![0.0]], vec![vec![vec![0.0], vec![0.0]]]).unwrap();
        assert_eq!(ragged.labels_at(1), 1);
    }

    #[test]
    fn single_slice_is_argmax() {
        let m = ChainModel::new(vec![vec![0.1, 0.7, 0.3]], vec![]).unwrap();
        assert_eq!(viterbi(&m), (vec![1], 0.7));
    }

    #[test]
    fn ties_resolve_to_zeros() {
        assert_eq!(viterbi(&uniform(4, 3, 0.0)).0, vec![0, 0, 0, 0]);
        assert_eq!(viterbi(&uniform(3, 2, -1.5)).0, vec![0, 0, 0]);
    }

    #[test]
    fn tie_break_prefers_small_label_at_latest_slice() {
        // Optimal sequences (1,0) and (0,1) both score 1; the later slice decides.
        let m = ChainModel::new(vec![vec![0.0, 1.0], vec![0.0, 1.0]], vec![vec![vec![-9.0, 0.0], vec![0.0, -9.0]]]).unwrap();
        assert_eq!(viterbi(&m), (vec![1, 0], 1.0));
    }

    #[test]
    fn symmetric_single_slice_partition() {
        let m = ChainModel::new(vec![vec![0.0, 0.0]], vec![]).unwrap();
        let fb = forward_backward(&m);
        assert!((fb.log_z - 2f64.ln()).abs() < 1e-15);
        assert_eq!(fb.marginals, vec![vec![0.5, 0.5]]);
    }

    #[test]
    fn decoupled_chain_marginals_are_softmax() {
        let unary = vec![vec![0.3, -1.0, 2.0], vec![1.0, 1.0, 0.0]];
        let m = ChainModel::new(unary.clone(), vec![vec![vec![0.0; 3]; 3]]).unwrap();
        let fb = forward_backward(&m);
        for (row, u) in fb.marginals.iter().zip(&unary) {
            let z: f64 = u.iter().map(|x| x.exp()).sum();
            for (p, x) in row.iter().zip(u) {
                assert!((p - x.exp() / z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normalized_score_cases() {
        let m = uniform(1, 4, 0.7);
        for l in 0..4 {
            assert!((dcrf_score(&m, &[l]).unwrap() + 4f64.ln()).abs() < 1e-12);
        }
        assert!(dcrf_score(&m, &[4]).is_err());
        assert!(dcrf_score(&m, &[0, 0]).is_err());
    }

    fn cand(offset: [f64; 2], weight: f64, score: f64, identity: Option<u32>) -> Candidate {
        Candidate { identity, offset, class_score: score, unary_weight: weight }
    }

    #[test]
    fn unary_scales_with_ncp_weight() {
        let m = build_chain(&[vec![cand([0.0; 2], 1.0, 0.9, None), cand([0.0; 2], 0.5, 0.9, None)]], &DcrfParams::default()).unwrap();
        let u = &m.unary()[0];
        assert_eq!(u.len(), 3);
        assert!((u[0] - 0.9f64.ln()).abs() < 1e-15);
        assert!((u[0] / u[1] - 2.0).abs() < 1e-12);
        assert_eq!(u[2], -2.0);
    }

    #[test]
    fn zero_motion_and_switch_weights_decouple() {
        let params = DcrfParams { motion_weight: 0.0, switch_penalty: 0.0, ..Default::default() };
        let window = vec![
            vec![cand([3.0, 4.0], 1.0, 1.0, Some(1)), cand([-8.0, 0.0], 1.0, 1.0, Some(2))],
            vec![cand([0.0, 1.0], 1.0, 1.0, Some(3))],
        ];
        let m = build_chain(&window, &params).unwrap();
        assert!(m.pairwise()[0].iter().flatten().all(|x| *x == 0.0));
    }

    #[test]
    fn same_offset_has_no_motion_cost() {
        let params = DcrfParams { motion_weight: 1.0, switch_penalty: 0.0, ..Default::default() };
        let window = vec![vec![cand([5.0, -2.0], 1.0, 1.0, None)], vec![cand([5.0, -2.0], 1.0, 1.0, None)]];
        let m = build_chain(&window, &params).unwrap();
        assert_eq!(m.pairwise()[0][0][0], 0.0);
        // lost -> candidate pays the full offset
        assert!((m.pairwise()[0][1][0] + 29.0 / 100.0).abs() < 1e-12);
    }

    #[test]
    fn switch_penalty_needs_two_identities() {
        let window = vec![
            vec![cand([0.0; 2], 1.0, 1.0, Some(1)), cand([0.0; 2], 1.0, 1.0, None)],
            vec![cand([0.0; 2], 1.0, 1.0, Some(2)), cand([0.0; 2], 1.0, 1.0, Some(1))],
        ];
        let m = build_chain(&window, &DcrfParams::default()).unwrap();
        let p = &m.pairwise()[0];
        assert_eq!(p[0][0], -1.0);
        assert_eq!(p[0][1], 0.0);
        assert_eq!(p[1][0], 0.0);
        assert_eq!(p[2][0], 0.0);
    }

    #[test]
    fn empty_slices_hold_only_lost() {
        let m = build_chain(&[vec![], vec![cand([0.0; 2], 1.0, 0.0, None)]], &DcrfParams::default()).unwrap();
        assert_eq!(m.labels_at(0), 1);
        // zero class score is floored, so the candidate potential stays finite
        assert!((m.unary()[1][0] - SCORE_FLOOR.ln()).abs() < 1e-9);
        assert_eq!(build_chain(&[], &DcrfParams::default()), Err(DcrfError::EmptyWindow));
        let bad = DcrfParams { tau: 0.0, ..Default::default() };
        assert!(build_chain(&[vec![]], &bad).is_err());
    }
}
