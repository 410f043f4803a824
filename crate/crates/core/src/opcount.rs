//! Floating-point operation counting.
//!
//! Scoring kernels are written once over [`Arith`]; instantiating them with
//! [`Counted`] tallies every add, subtract and multiply on the current thread.

use std::cell::Cell;
use std::ops::{Add, Mul, Sub};

thread_local! {
    static OPS: Cell<u64> = const { Cell::new(0) };
}

pub trait Arith: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> {
    fn zero() -> Self;
    fn lift(v: f64) -> Self;
    fn value(self) -> f64;
}

impl Arith for f64 {
    #[inline]
    fn zero() -> Self {
        0.0
    }
    #[inline]
    fn lift(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
}

/// An `f64` whose arithmetic bumps a thread-local counter.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Counted(pub f64);

fn bump() {
    OPS.with(|c| c.set(c.get() + 1));
}

impl Add for Counted {
    type Output = Counted;
    fn add(self, o: Counted) -> Counted {
        bump();
        Counted(self.0 + o.0)
    }
}

impl Sub for Counted {
    type Output = Counted;
    fn sub(self, o: Counted) -> Counted {
        bump();
        Counted(self.0 - o.0)
    }
}

impl Mul for Counted {
    type Output = Counted;
    fn mul(self, o: Counted) -> Counted {
        bump();
        Counted(self.0 * o.0)
    }
}

impl Arith for Counted {
    fn zero() -> Self {
        Counted(0.0)
    }
    fn lift(v: f64) -> Self {
        Counted(v)
    }
    fn value(self) -> f64 {
        self.0
    }
}

pub fn reset() {
    OPS.with(|c| c.set(0));
}

pub fn count() -> u64 {
    OPS.with(|c| c.get())
}

/// Runs `f` and returns its result with the number of counted ops it made.
pub fn measure<T>(f: impl FnOnce() -> T) -> (T, u64) {
    let before = count();
    let out = f();
    (out, count() - before)
}

/// Inner product over any [`Arith`].
pub fn dot<T: Arith>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}
