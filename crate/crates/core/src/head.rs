use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hidden width of the default head.
pub const DEFAULT_HIDDEN_WIDTH: usize = 512;

/// Nonlinearity between the two affine layers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation value.
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - pre.tanh().powi(2),
            Activation::Identity => 1.0,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" | "none" | "linear" => Ok(Activation::Identity),
            _ => Err(Error::InvalidConfig(format!("unknown activation {s:?}"))),
        }
    }
}

/// Two fully connected layers: `in → hidden → 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionHead {
    pub(crate) w1: Array2<f64>,
    pub(crate) b1: Array1<f64>,
    pub(crate) w2: Array1<f64>,
    pub(crate) b2: f64,
    pub activation: Activation,
}

/// Gradients with the same layout as [`RegressionHead`].
#[derive(Clone, Debug, PartialEq)]
pub struct HeadGradient {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array1<f64>,
    pub b2: f64,
}

pub(crate) struct HeadTrace {
    pre: Array2<f64>,
    post: Array2<f64>,
}

impl RegressionHead {
    /// Uniform `±1/√fan_in` init for weights and biases of both layers.
    pub fn random<R: Rng + ?Sized>(
        input: usize,
        hidden: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let bound1 = 1.0 / (input as f64).sqrt();
        let bound2 = 1.0 / (hidden as f64).sqrt();
        let u1 = Uniform::new_inclusive(-bound1, bound1).expect("finite bound");
        let u2 = Uniform::new_inclusive(-bound2, bound2).expect("finite bound");
        let w1 = Array2::from_shape_simple_fn((hidden, input), || u1.sample(rng));
        let b1 = Array1::from_shape_simple_fn(hidden, || u1.sample(rng));
        let w2 = Array1::from_shape_simple_fn(hidden, || u2.sample(rng));
        let b2 = u2.sample(rng);
        RegressionHead {
            w1,
            b1,
            w2,
            b2,
            activation,
        }
    }

    pub fn zeros(input: usize, hidden: usize, activation: Activation) -> Self {
        RegressionHead {
            w1: Array2::zeros((hidden, input)),
            b1: Array1::zeros(hidden),
            w2: Array1::zeros(hidden),
            b2: 0.0,
            activation,
        }
    }

    /// `w1` is `hidden × input`, `w2` has length `hidden`.
    pub fn from_parts(
        w1: Array2<f64>,
        b1: Array1<f64>,
        w2: Array1<f64>,
        b2: f64,
        activation: Activation,
    ) -> Result<Self> {
        let hidden = w1.nrows();
        if b1.len() != hidden || w2.len() != hidden {
            return Err(Error::ShapeMismatch {
                expected: format!("hidden width {hidden}"),
                actual: format!("b1 {} / w2 {}", b1.len(), w2.len()),
            });
        }
        Ok(RegressionHead {
            w1,
            b1,
            w2,
            b2,
            activation,
        })
    }

    pub fn input_width(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden_width(&self) -> usize {
        self.w1.nrows()
    }

    pub fn w1(&self) -> &Array2<f64> {
        &self.w1
    }

    pub fn b1(&self) -> &Array1<f64> {
        &self.b1
    }

    pub fn w2(&self) -> &Array1<f64> {
        &self.w2
    }

    pub fn b2(&self) -> f64 {
        self.b2
    }

    pub fn parameter_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    /// Score for a single fused feature vector.
    pub fn predict(&self, fused: ArrayView1<'_, f64>) -> Result<f64> {
        let x = fused.insert_axis(Axis(0));
        Ok(self.forward_batch(x)?.0[0])
    }

    pub(crate) fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<(Array1<f64>, HeadTrace)> {
        if x.ncols() != self.input_width() {
            return Err(Error::ShapeMismatch {
                expected: format!("fused width {}", self.input_width()),
                actual: x.ncols().to_string(),
            });
        }
        let pre = x.dot(&self.w1.t()) + &self.b1;
        let act = self.activation;
        let post = pre.mapv(|v| act.apply(v));
        let scores = post.dot(&self.w2) + self.b2;
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFiniteScore);
        }
        Ok((scores, HeadTrace { pre, post }))
    }

    /// Returns parameter gradients and the gradient w.r.t. the inputs.
    pub(crate) fn backward(
        &self,
        trace: &HeadTrace,
        x: ArrayView2<'_, f64>,
        grad_scores: ArrayView1<'_, f64>,
    ) -> (HeadGradient, Array2<f64>) {
        let w2 = trace.post.t().dot(&grad_scores);
        let b2 = grad_scores.sum();
        let act = self.activation;
        let mut grad_pre = grad_scores.insert_axis(Axis(1)).dot(&self.w2.view().insert_axis(Axis(0)));
        grad_pre.zip_mut_with(&trace.pre, |g, &p| *g *= act.derivative(p));
        let w1 = grad_pre.t().dot(&x);
        let b1 = grad_pre.sum_axis(Axis(0));
        let grad_x = grad_pre.dot(&self.w1);
        (HeadGradient { w1, b1, w2, b2 }, grad_x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_head_scores_zero() {
        let head = RegressionHead::zeros(5, 3, Activation::Relu);
        let x = array![1.0, -2.0, 3.0, 4.0, 5.0];
        assert_eq!(head.predict(x.view()).unwrap(), 0.0);
    }

    #[test]
    fn matches_hand_computed_affine_algebra() {
        // layer1: [[1, 2], [-1, 0.5], [0, 1]] x + [0.1, 0.2, -3]
        // x = (2, -1): pre = (0.1, -2.3, -4), relu -> (0.1, 0, 0)
        // layer2: (3, 5, 7)·post + 0.25 = 0.55
        let head = RegressionHead::from_parts(
            array![[1.0, 2.0], [-1.0, 0.5], [0.0, 1.0]],
            array![0.1, 0.2, -3.0],
            array![3.0, 5.0, 7.0],
            0.25,
            Activation::Relu,
        )
        .unwrap();
        let s = head.predict(array![2.0, -1.0].view()).unwrap();
        assert!((s - 0.55).abs() < 1e-9, "{s}");

        let linear = RegressionHead {
            activation: Activation::Identity,
            ..head
        };
        // pre = (0.1, -2.3, -4): 0.3 - 11.5 - 28 + 0.25
        let s = linear.predict(array![2.0, -1.0].view()).unwrap();
        assert!((s - (0.3 - 11.5 - 28.0 + 0.25)).abs() < 1e-9, "{s}");
    }

    #[test]
    fn default_dimensions() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let head = RegressionHead::random(7 * 512, DEFAULT_HIDDEN_WIDTH, Activation::Relu, &mut rng);
        assert_eq!((head.input_width(), head.hidden_width()), (3584, 512));
        assert!(head.predict(Array1::zeros(3583).view()).is_err());
    }

    #[test]
    fn non_finite_input_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let head = RegressionHead::random(2, 4, Activation::Tanh, &mut rng);
        assert!(matches!(
            head.predict(array![f64::NAN, 0.0].view()),
            Err(Error::NonFiniteScore)
        ));
    }

    #[test]
    fn shape_checks_in_from_parts() {
        assert!(RegressionHead::from_parts(
            Array2::zeros((3, 2)),
            Array1::zeros(2),
            Array1::zeros(3),
            0.0,
            Activation::Relu
        )
        .is_err());
    }
}
