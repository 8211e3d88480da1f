//! The anticipation model: subgoal proposals scored by value-geometric
//! consistency.
//!
//! For a start/end pair `(s_i, s_j)` and candidate `z` the loss is
//!
//! ```text
//! detour      = max(0, V(s_i, s_j) - V(s_i, z) - V(z, s_j))
//! prog        = max(0, c_prog + V(s_i, z))
//! non_trivial = max(0, c_non_trivial + V(z, s_j))
//! total       = detour + lambda * (prog + non_trivial)
//! ```
//!
//! In a finite state space the model keeps one logit per
//! `(start, goal, candidate)` and trains the softmax-expected loss with its
//! exact gradient. Because per-candidate losses do not depend on the logits,
//! `dL/dlogit_z = p_z (loss_z - L)`.

use serde::{Deserialize, Serialize};

use crate::gmdp::StateId;
use crate::oracle::brute_force_anticipation_argmin;
use crate::scalar::{relu, Scalar};
use crate::value::ValueView;

/// Softmax temperature. Fixed.
pub const TEMPERATURE: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, bound(deserialize = "F: Scalar + Deserialize<'de>"))]
pub struct LossConfig<F> {
    pub lambda: F,
    pub c_prog: F,
    pub c_non_trivial: F,
}

impl<F: Scalar> Default for LossConfig<F> {
    fn default() -> Self {
        Self { lambda: F::one(), c_prog: F::one(), c_non_trivial: F::one() }
    }
}

impl<F: Scalar> LossConfig<F> {
    /// `c_prog + c_non_trivial`: the shortest start/goal separation at which
    /// all three loss terms can vanish together.
    pub fn margin(&self) -> F {
        self.c_prog + self.c_non_trivial
    }

    /// Whether a pair with value `v_pair = V(s, g)` admits a zero-loss
    /// subgoal, i.e. `-V(s, g) >= c_prog + c_non_trivial`.
    pub fn is_feasible(&self, v_pair: F) -> bool {
        -v_pair >= self.margin()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown<F> {
    pub detour: F,
    pub prog: F,
    pub non_trivial: F,
    pub total: F,
}

impl<F: Scalar> LossBreakdown<F> {
    fn scaled(self, w: F) -> Self {
        Self {
            detour: self.detour * w,
            prog: self.prog * w,
            non_trivial: self.non_trivial * w,
            total: self.total * w,
        }
    }

    fn add(&mut self, other: Self) {
        self.detour += other.detour;
        self.prog += other.prog;
        self.non_trivial += other.non_trivial;
        self.total += other.total;
    }
}

/// Regularized loss of proposing `cand` for the pair `(s_i, s_j)`.
#[inline]
pub fn loss_at<F: Scalar>(
    s_i: StateId,
    s_j: StateId,
    cand: StateId,
    values: &impl ValueView<F>,
    cfg: &LossConfig<F>,
) -> LossBreakdown<F> {
    let to_cand = values.value(s_i, cand);
    let from_cand = values.value(cand, s_j);
    let detour = relu(values.value(s_i, s_j) - to_cand - from_cand);
    let prog = relu(cfg.c_prog + to_cand);
    let non_trivial = relu(cfg.c_non_trivial + from_cand);
    LossBreakdown { detour, prog, non_trivial, total: detour + cfg.lambda * (prog + non_trivial) }
}

/// Only the detour term.
#[inline]
pub fn detour_at<F: Scalar>(s: StateId, g: StateId, cand: StateId, values: &impl ValueView<F>) -> F {
    relu(values.value(s, g) - values.value(s, cand) - values.value(cand, g))
}

/// How a gradient becomes a logit step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// `logits -= lr * grad`.
    #[default]
    Gradient,
    /// `logits -= lr * grad / max|grad|`: no logit of a pair moves more
    /// than `lr` per step, whatever the loss scale.
    MaxNormalized,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelMode {
    /// Softmax over candidates with learned logits.
    Learned,
    /// Exhaustive minimization of the loss under the supplied values.
    ExactArgmin,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnticipationModel<F> {
    n: usize,
    logits: Vec<F>,
    mode: ModelMode,
    cfg: LossConfig<F>,
}

impl<F: Scalar> AnticipationModel<F> {
    /// Learned model with all logits zero (uniform proposals).
    pub fn new(num_states: usize, cfg: LossConfig<F>) -> Self {
        Self { n: num_states, logits: vec![F::zero(); num_states.pow(3)], mode: ModelMode::Learned, cfg }
    }

    pub fn exact_argmin(num_states: usize, cfg: LossConfig<F>) -> Self {
        Self { mode: ModelMode::ExactArgmin, ..Self::new(num_states, cfg) }
    }

    pub fn from_logits(num_states: usize, logits: Vec<F>, cfg: LossConfig<F>) -> Self {
        assert_eq!(logits.len(), num_states.pow(3), "logit count must be |S|^3");
        Self { n: num_states, logits, mode: ModelMode::Learned, cfg }
    }

    pub fn num_states(&self) -> usize {
        self.n
    }

    pub fn mode(&self) -> ModelMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: ModelMode) {
        self.mode = mode;
    }

    pub fn loss_config(&self) -> &LossConfig<F> {
        &self.cfg
    }

    pub fn logits(&self) -> &[F] {
        &self.logits
    }

    /// Candidate logits for `(s, g)`.
    pub fn pair_logits(&self, s: StateId, g: StateId) -> &[F] {
        let base = (s.0 * self.n + g.0) * self.n;
        &self.logits[base..base + self.n]
    }

    pub fn pair_logits_mut(&mut self, s: StateId, g: StateId) -> &mut [F] {
        let base = (s.0 * self.n + g.0) * self.n;
        &mut self.logits[base..base + self.n]
    }

    /// Softmax over candidates for `(s, g)`.
    pub fn probabilities(&self, s: StateId, g: StateId) -> Vec<F> {
        softmax(self.pair_logits(s, g))
    }

    /// Deterministic proposal for `(s, g)`. `values` is consulted only in
    /// exact-argmin mode.
    pub fn propose(&self, s: StateId, g: StateId, values: &impl ValueView<F>) -> StateId {
        if s == g {
            return g;
        }
        match self.mode {
            ModelMode::Learned => {
                let row = self.pair_logits(s, g);
                let mut best = 0;
                for (z, &l) in row.iter().enumerate() {
                    if l > row[best] {
                        best = z;
                    }
                }
                StateId(best)
            }
            ModelMode::ExactArgmin => brute_force_anticipation_argmin(s, g, values, &self.cfg),
        }
    }

    /// Applies the model `depth` times, each time aiming at the previous
    /// proposal. Stops early at a fixed point.
    pub fn propose_recursive(&self, s: StateId, g: StateId, depth: usize, values: &impl ValueView<F>) -> StateId {
        assert!(depth >= 1, "recursion depth must be at least 1");
        let mut target = g;
        for _ in 0..depth {
            let next = self.propose(s, target, values);
            if next == target {
                break;
            }
            target = next;
        }
        target
    }

    /// Expected loss under the softmax for one pair, with its per-term
    /// breakdown.
    pub fn pair_expected_loss(&self, s_i: StateId, s_j: StateId, values: &impl ValueView<F>) -> LossBreakdown<F> {
        let p = self.probabilities(s_i, s_j);
        let mut acc = LossBreakdown::default();
        for (z, &pz) in p.iter().enumerate() {
            acc.add(loss_at(s_i, s_j, StateId(z), values, &self.cfg).scaled(pz));
        }
        acc
    }

    /// Expected loss and its exact gradient with respect to the pair's logits.
    pub fn pair_gradient(&self, s_i: StateId, s_j: StateId, values: &impl ValueView<F>) -> (F, Vec<F>) {
        let p = self.probabilities(s_i, s_j);
        let losses: Vec<F> =
            (0..self.n).map(|z| loss_at(s_i, s_j, StateId(z), values, &self.cfg).total).collect();
        let expected: F = p.iter().zip(&losses).map(|(&pz, &lz)| pz * lz).sum();
        let grad = p.iter().zip(&losses).map(|(&pz, &lz)| pz * (lz - expected)).collect();
        (expected, grad)
    }

    /// One gradient step on the summed expected loss of `pairs`, each pair
    /// moving only its own logits. Returns the mean breakdown before the step.
    pub fn update(&mut self, pairs: &[(StateId, StateId)], values: &impl ValueView<F>, lr: F) -> LossBreakdown<F> {
        self.update_with(pairs, values, lr, StepRule::Gradient)
    }

    /// [`update`](Self::update) with an explicit step rule.
    pub fn update_with(
        &mut self,
        pairs: &[(StateId, StateId)],
        values: &impl ValueView<F>,
        lr: F,
        rule: StepRule,
    ) -> LossBreakdown<F> {
        debug_assert_eq!(self.mode, ModelMode::Learned, "only learned models train");
        let mut mean = LossBreakdown::default();
        if pairs.is_empty() {
            return mean;
        }
        for &(s_i, s_j) in pairs {
            mean.add(self.pair_expected_loss(s_i, s_j, values));
            let (_, grad) = self.pair_gradient(s_i, s_j, values);
            let scale = match rule {
                StepRule::Gradient => lr,
                StepRule::MaxNormalized => {
                    let norm = grad.iter().fold(F::zero(), |m, g| m.max(g.abs()));
                    // A vanishing gradient means a point mass on a minimizer.
                    if norm > F::epsilon() {
                        lr / norm
                    } else {
                        F::zero()
                    }
                }
            };
            for (l, g) in self.pair_logits_mut(s_i, s_j).iter_mut().zip(grad) {
                *l -= scale * g;
            }
        }
        mean.scaled(F::one() / F::lit(pairs.len() as f64))
    }

    /// Mean expected loss over `pairs`.
    pub fn expected_loss(&self, pairs: &[(StateId, StateId)], values: &impl ValueView<F>) -> F {
        if pairs.is_empty() {
            return F::zero();
        }
        let sum: F = pairs.iter().map(|&(a, b)| self.pair_expected_loss(a, b, values).total).sum();
        sum / F::lit(pairs.len() as f64)
    }
}

/// Numerically stable softmax.
pub fn softmax<F: Scalar>(logits: &[F]) -> Vec<F> {
    let temperature = F::lit(TEMPERATURE);
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = logits.iter().map(|&l| ((l - max) / temperature).exp()).collect();
    let sum: F = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
