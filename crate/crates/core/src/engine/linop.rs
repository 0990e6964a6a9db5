use crate::tensor::Real;

/// Affine state update `h ← a·h + b`, the element of the first-order
/// recurrence scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinOp<T> {
    pub a: T,
    pub b: T,
}

impl<T: Real> LinOp<T> {
    pub fn new(a: T, b: T) -> Self {
        Self { a, b }
    }

    pub fn identity() -> Self {
        Self {
            a: T::one(),
            b: T::zero(),
        }
    }

    /// `self` applied first, then `second`.
    #[inline]
    pub fn then(self, second: Self) -> Self {
        Self {
            a: second.a * self.a,
            b: second.a * self.b + second.b,
        }
    }

    #[inline]
    pub fn apply(self, h: T) -> T {
        self.a * h + self.b
    }
}

/// Composition of `first` followed by `second`.
pub fn linop_compose<T: Real>(first: LinOp<T>, second: LinOp<T>) -> LinOp<T> {
    first.then(second)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_both_sides() {
        let e = LinOp::new(0.3f64, -1.25);
        assert_eq!(linop_compose(LinOp::identity(), e), e);
        assert_eq!(linop_compose(e, LinOp::identity()), e);
    }

    #[test]
    fn half_decay_pair() {
        // 0.5(0.5h + 1) + 1 = 0.25h + 1.5
        let e = LinOp::new(0.5f64, 1.0);
        assert_eq!(linop_compose(e, e), LinOp::new(0.25, 1.5));
    }

    #[test]
    fn reset_as_second() {
        let c = 4.5;
        let r = linop_compose(LinOp::new(2.0f64, -7.0), LinOp::new(0.0, c));
        assert_eq!(r, LinOp::new(0.0, c));
    }

    #[test]
    fn composition_matches_sequential_application() {
        let first = LinOp::new(0.7f64, 0.2);
        let second = LinOp::new(-1.5, 3.0);
        let h = 0.9;
        assert!((linop_compose(first, second).apply(h) - second.apply(first.apply(h))).abs() < 1e-15);
    }
}
