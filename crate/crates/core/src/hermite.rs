//! Orthonormal physicists' Hermite polynomials.
//!
//! `h_k(x) = H_k(x) / sqrt(2^k k! sqrt(pi))`, evaluated with the normalized
//! three-term recurrence
//!
//! ```text
//! h_0 = pi^(-1/4)
//! h_{k+1} = sqrt(2/(k+1)) x h_k - sqrt(k/(k+1)) h_{k-1}
//! ```
//!
//! which never forms `2^k k!` and so cannot overflow. Derivatives follow from
//! `H_k' = 2k H_{k-1}`: `h_k' = sqrt(2k) h_{k-1}`, `h_k'' = 2 sqrt(k(k-1)) h_{k-2}`.

use crate::error::{QipfError, Result};
use crate::scalar::Scalar;

/// Highest supported order; `2^k k!` leaves the `f64` range beyond this.
pub const MAX_HERMITE_ORDER: usize = 170;

/// `h_k(x)` with its first and second derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HermiteValue<T> {
    pub h: T,
    pub dh: T,
    pub d2h: T,
}

/// Normalized Hermite polynomial of order `k` at `x`.
pub fn hermite_normalized<T: Scalar>(k: usize, x: T) -> Result<HermiteValue<T>> {
    Ok(HermiteTable::new(k, x)?.get(k))
}

/// `h_0(x) .. h_K(x)` from one pass of the recurrence.
#[derive(Debug, Clone)]
pub struct HermiteTable<T> {
    values: Vec<T>,
}

impl<T: Scalar> HermiteTable<T> {
    pub fn new(max_order: usize, x: T) -> Result<Self> {
        if max_order > MAX_HERMITE_ORDER {
            return Err(QipfError::UnsupportedOrder {
                order: max_order,
                max: MAX_HERMITE_ORDER,
            });
        }
        if !x.is_finite() {
            return Err(QipfError::invalid(format!(
                "Hermite argument must be finite, got {x}"
            )));
        }
        let mut values = Vec::with_capacity(max_order + 1);
        values.push(T::PI().powf(T::of(-0.25)));
        if max_order >= 1 {
            values.push(T::of(2.0).sqrt() * x * values[0]);
        }
        for k in 1..max_order {
            let kf = T::of_usize(k);
            let next = (T::of(2.0) / (kf + T::one())).sqrt() * x * values[k]
                - (kf / (kf + T::one())).sqrt() * values[k - 1];
            values.push(next);
        }
        Ok(Self { values })
    }

    pub fn max_order(&self) -> usize {
        self.values.len() - 1
    }

    /// Value and derivatives of order `k`; panics if `k` exceeds the table.
    pub fn get(&self, k: usize) -> HermiteValue<T> {
        let h = self.values[k];
        let kf = T::of_usize(k);
        let dh = if k >= 1 {
            (T::of(2.0) * kf).sqrt() * self.values[k - 1]
        } else {
            T::zero()
        };
        let d2h = if k >= 2 {
            T::of(2.0) * (kf * (kf - T::one())).sqrt() * self.values[k - 2]
        } else {
            T::zero()
        };
        HermiteValue { h, dh, d2h }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn order_zero_is_constant() {
        for x in [-3.0, 0.0, 0.7, 10.0] {
            let v = hermite_normalized(0, x).unwrap();
            assert_relative_eq!(v.h, 0.751_125_544_464_942_5, max_relative = 1e-15);
            assert_eq!((v.dh, v.d2h), (0.0, 0.0));
        }
    }

    #[test]
    fn order_one_closed_form() {
        let v = hermite_normalized(1, 1.0).unwrap();
        let expected = 2f64.sqrt() * std::f64::consts::PI.powf(-0.25);
        assert_relative_eq!(v.h, expected, max_relative = 1e-15);
        assert_relative_eq!(v.h, 1.062_25, max_relative = 1e-5);
        assert_relative_eq!(v.dh, expected, max_relative = 1e-15);
        assert_eq!(v.d2h, 0.0);
    }

    #[test]
    fn rejects_orders_beyond_the_limit() {
        assert!(hermite_normalized(170, 0.5f64).is_ok());
        assert!(matches!(
            hermite_normalized(171, 0.5f64),
            Err(QipfError::UnsupportedOrder { order: 171, .. })
        ));
        assert!(hermite_normalized(2, f64::NAN).is_err());
    }

    #[test]
    fn high_orders_stay_finite_on_the_unit_interval() {
        let t = HermiteTable::new(170, 0.9f64).unwrap();
        for k in 0..=170 {
            let v = t.get(k);
            assert!(v.h.is_finite() && v.dh.is_finite() && v.d2h.is_finite());
        }
    }

    #[test]
    fn parity() {
        for k in 0..12 {
            let a = hermite_normalized(k, 0.37).unwrap().h;
            let b = hermite_normalized(k, -0.37).unwrap().h;
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            assert_relative_eq!(b, sign * a, max_relative = 1e-14);
        }
    }

    #[test]
    fn single_precision_matches_double() {
        for k in 0..8 {
            let a = hermite_normalized(k, 0.6f32).unwrap().h as f64;
            let b = hermite_normalized(k, 0.6f64).unwrap().h;
            assert!((a - b).abs() < 1e-5, "k={k}");
        }
    }
}
