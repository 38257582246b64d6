use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Matérn smoothness parameter ν.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothness {
    Half,
    ThreeHalves,
    #[default]
    FiveHalves,
}

impl Smoothness {
    /// Correlation at scaled distance `r` (unit signal variance).
    #[inline]
    pub fn correlation(self, r: f64) -> f64 {
        match self {
            Smoothness::Half => (-r).exp(),
            Smoothness::ThreeHalves => {
                let s = 3f64.sqrt() * r;
                (1.0 + s) * (-s).exp()
            }
            Smoothness::FiveHalves => {
                let s = 5f64.sqrt() * r;
                (1.0 + s + s * s / 3.0) * (-s).exp()
            }
        }
    }

    /// `g(r)` with `d k / d log(l_d) = g(r) * (delta_d / l_d)^2` at unit signal variance.
    #[inline]
    pub(crate) fn log_scale_factor(self, r: f64) -> f64 {
        match self {
            Smoothness::Half => {
                if r > 0.0 {
                    (-r).exp() / r
                } else {
                    0.0
                }
            }
            Smoothness::ThreeHalves => 3.0 * (-(3f64.sqrt()) * r).exp(),
            Smoothness::FiveHalves => {
                let s = 5f64.sqrt() * r;
                5.0 / 3.0 * (1.0 + s) * (-s).exp()
            }
        }
    }
}

/// Matérn kernel with one length scale per input coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub smoothness: Smoothness,
    pub length_scales: Vec<f64>,
    pub signal_variance: f64,
}

impl KernelSpec {
    pub fn new(
        smoothness: Smoothness,
        length_scales: Vec<f64>,
        signal_variance: f64,
    ) -> Result<Self> {
        if length_scales.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(Error::InvalidArgument(
                "length scales must be positive".into(),
            ));
        }
        if !(signal_variance > 0.0) {
            return Err(Error::InvalidArgument(
                "signal variance must be positive".into(),
            ));
        }
        Ok(KernelSpec {
            smoothness,
            length_scales,
            signal_variance,
        })
    }

    pub fn isotropic(
        smoothness: Smoothness,
        dims: usize,
        length_scale: f64,
        signal_variance: f64,
    ) -> Result<Self> {
        Self::new(smoothness, vec![length_scale; dims], signal_variance)
    }

    #[inline]
    pub(crate) fn scaled_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .zip(&self.length_scales)
            .map(|((x, y), l)| {
                let d = (x - y) / l;
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, a: &[f64], b: &[f64]) -> f64 {
        self.signal_variance * self.smoothness.correlation(self.scaled_distance(a, b))
    }

    /// Kernel value `k(x1, x2)`.
    pub fn eval(&self, x1: &[f64], x2: &[f64]) -> Result<f64> {
        let d = self.length_scales.len();
        if x1.len() != d || x2.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: if x1.len() != d { x1.len() } else { x2.len() },
            });
        }
        Ok(self.eval_unchecked(x1, x2))
    }
}

/// Free-function form of [`KernelSpec::eval`].
pub fn matern_kernel(x1: &[f64], x2: &[f64], spec: &KernelSpec) -> Result<f64> {
    spec.eval(x1, x2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_inputs_give_signal_variance() {
        for s in [
            Smoothness::Half,
            Smoothness::ThreeHalves,
            Smoothness::FiveHalves,
        ] {
            let k = KernelSpec::isotropic(s, 2, 0.7, 1.0).unwrap();
            assert_eq!(matern_kernel(&[0.3, 0.1], &[0.3, 0.1], &k).unwrap(), 1.0);
        }
    }

    #[test]
    fn exponential_kernel_at_one_length_scale() {
        let ell = 0.37;
        let k = KernelSpec::isotropic(Smoothness::Half, 1, ell, 1.0).unwrap();
        let v = matern_kernel(&[0.0], &[ell], &k).unwrap();
        assert!((v - (-1f64).exp()).abs() < 1e-15);
        assert!((v - 0.3679).abs() < 1e-4);
    }

    #[test]
    fn matern_five_halves_at_unit_distance() {
        // (1 + sqrt5 + 5/3) exp(-sqrt5), 30-digit reference value
        let oracle = 0.523_994_108_831_820_3_f64;
        let k = KernelSpec::isotropic(Smoothness::FiveHalves, 1, 2.0, 1.0).unwrap();
        let v = matern_kernel(&[0.5], &[2.5], &k).unwrap();
        assert!((v - oracle).abs() < 1e-15, "{v}");
    }

    #[test]
    fn dimension_mismatch() {
        let k = KernelSpec::isotropic(Smoothness::FiveHalves, 2, 1.0, 1.0).unwrap();
        assert!(matches!(
            matern_kernel(&[0.0], &[0.0, 1.0], &k),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn log_scale_derivative_matches_finite_difference() {
        for s in [
            Smoothness::Half,
            Smoothness::ThreeHalves,
            Smoothness::FiveHalves,
        ] {
            let a = [0.2, 0.9];
            let b = [0.6, 0.4];
            let ls = [0.3, 0.8];
            let k = |l0: f64| {
                KernelSpec::new(s, vec![l0, ls[1]], 1.0)
                    .unwrap()
                    .eval(&a, &b)
                    .unwrap()
            };
            let h: f64 = 1e-6;
            let fd = (k(ls[0] * h.exp()) - k(ls[0] * (-h).exp())) / (2.0 * h);
            let spec = KernelSpec::new(s, ls.to_vec(), 1.0).unwrap();
            let r = spec.scaled_distance(&a, &b);
            let an = s.log_scale_factor(r) * ((a[0] - b[0]) / ls[0]).powi(2);
            assert!((fd - an).abs() < 1e-7, "{s:?}: {fd} vs {an}");
        }
    }

    proptest! {
        #[test]
        fn symmetric(a in proptest::collection::vec(0.0f64..1.0, 3), b in proptest::collection::vec(0.0f64..1.0, 3)) {
            let k = KernelSpec::new(Smoothness::FiveHalves, vec![0.2, 0.5, 1.3], 1.7).unwrap();
            prop_assert_eq!(k.eval(&a, &b).unwrap(), k.eval(&b, &a).unwrap());
        }
    }
}
