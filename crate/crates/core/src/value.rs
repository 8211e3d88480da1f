//! Goal-conditioned state values `V(s, g)`.

use rand::Rng;

use crate::gmdp::StateId;
use crate::scalar::Scalar;

/// Read access to a goal-conditioned value function.
///
/// Implementations must return exactly zero on the diagonal.
pub trait ValueView<F: Scalar> {
    fn num_states(&self) -> usize;

    fn value(&self, s: StateId, g: StateId) -> F;
}

impl<F: Scalar, V: ValueView<F> + ?Sized> ValueView<F> for &V {
    fn num_states(&self) -> usize {
        (**self).num_states()
    }

    fn value(&self, s: StateId, g: StateId) -> F {
        (**self).value(s, g)
    }
}

/// Dense `|S| x |S|` value matrix, row = state, column = goal.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueTable<F> {
    n: usize,
    v: Vec<F>,
}

impl<F: Scalar> ValueTable<F> {
    /// Builds the table from `f`; the diagonal is forced to zero.
    pub fn from_fn(n: usize, mut f: impl FnMut(StateId, StateId) -> F) -> Self {
        let mut v = Vec::with_capacity(n * n);
        for s in 0..n {
            for g in 0..n {
                v.push(if s == g { F::zero() } else { f(StateId(s), StateId(g)) });
            }
        }
        Self { n, v }
    }

    /// Snapshot of another view.
    pub fn from_view(view: &impl ValueView<F>) -> Self {
        Self::from_fn(view.num_states(), |s, g| view.value(s, g))
    }

    /// Adds independent uniform noise in `[-amplitude, amplitude]` to every
    /// off-diagonal entry.
    pub fn perturbed<R: Rng + ?Sized>(&self, amplitude: f64, rng: &mut R) -> Self {
        let mut out = self.clone();
        for s in 0..self.n {
            for g in 0..self.n {
                if s != g {
                    let noise = rng.gen_range(-amplitude..=amplitude);
                    out.v[s * self.n + g] += F::lit(noise);
                }
            }
        }
        out
    }

    pub fn set(&mut self, s: StateId, g: StateId, value: F) {
        assert_ne!(s, g, "diagonal values are fixed at zero");
        self.v[s.0 * self.n + g.0] = value;
    }
}

impl<F: Scalar> ValueView<F> for ValueTable<F> {
    fn num_states(&self) -> usize {
        self.n
    }

    #[inline]
    fn value(&self, s: StateId, g: StateId) -> F {
        self.v[s.0 * self.n + g.0]
    }
}
