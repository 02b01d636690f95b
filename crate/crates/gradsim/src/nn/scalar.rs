//! Scalar abstraction that lets the forward and backward passes run either on
//! plain `f64` or on dual numbers.
//!
//! Running the whole gradient computation on duals whose derivative part is
//! seeded with a direction `w` yields the Hessian-vector product `H·w` in the
//! derivative parts (forward-over-reverse differentiation).

use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Scalar:
    Copy
    + std::fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    const ZERO: Self;
    const ONE: Self;

    fn tanh(self) -> Self;
    fn relu(self) -> Self;
    /// Subgradient of relu evaluated at this pre-activation; 0 at the kink.
    fn relu_grad(self) -> Self;
    fn sigmoid(self) -> Self;
}

impl Scalar for f64 {
    const ZERO: f64 = 0.0;
    const ONE: f64 = 1.0;

    #[inline]
    fn tanh(self) -> f64 {
        f64::tanh(self)
    }

    #[inline]
    fn relu(self) -> f64 {
        if self > 0.0 {
            self
        } else {
            0.0
        }
    }

    #[inline]
    fn relu_grad(self) -> f64 {
        if self > 0.0 {
            1.0
        } else {
            0.0
        }
    }

    #[inline]
    fn sigmoid(self) -> f64 {
        1.0 / (1.0 + f64::exp(-self))
    }
}

/// First-order dual number: `v + d·ε` with `ε² = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub d: f64,
}

impl Dual {
    #[inline]
    pub fn new(v: f64, d: f64) -> Dual {
        Dual { v, d }
    }

    #[inline]
    pub fn constant(v: f64) -> Dual {
        Dual { v, d: 0.0 }
    }
}

impl Add for Dual {
    type Output = Dual;
    #[inline]
    fn add(self, rhs: Dual) -> Dual {
        Dual::new(self.v + rhs.v, self.d + rhs.d)
    }
}

impl Sub for Dual {
    type Output = Dual;
    #[inline]
    fn sub(self, rhs: Dual) -> Dual {
        Dual::new(self.v - rhs.v, self.d - rhs.d)
    }
}

impl Mul for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, rhs: Dual) -> Dual {
        Dual::new(self.v * rhs.v, self.v * rhs.d + self.d * rhs.v)
    }
}

impl Div for Dual {
    type Output = Dual;
    #[inline]
    fn div(self, rhs: Dual) -> Dual {
        let inv = 1.0 / rhs.v;
        Dual::new(self.v * inv, (self.d - self.v * rhs.d * inv) * inv)
    }
}

impl Neg for Dual {
    type Output = Dual;
    #[inline]
    fn neg(self) -> Dual {
        Dual::new(-self.v, -self.d)
    }
}

impl Scalar for Dual {
    const ZERO: Dual = Dual { v: 0.0, d: 0.0 };
    const ONE: Dual = Dual { v: 1.0, d: 0.0 };

    #[inline]
    fn tanh(self) -> Dual {
        let t = self.v.tanh();
        Dual::new(t, self.d * (1.0 - t * t))
    }

    #[inline]
    fn relu(self) -> Dual {
        if self.v > 0.0 {
            self
        } else {
            Dual::ZERO
        }
    }

    #[inline]
    fn relu_grad(self) -> Dual {
        // The step function is flat almost everywhere, so the derivative part
        // vanishes; at the kink we keep the 0 subgradient convention.
        if self.v > 0.0 {
            Dual::ONE
        } else {
            Dual::ZERO
        }
    }

    #[inline]
    fn sigmoid(self) -> Dual {
        let s = 1.0 / (1.0 + (-self.v).exp());
        Dual::new(s, self.d * s * (1.0 - s))
    }
}
