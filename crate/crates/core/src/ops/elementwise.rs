//! Broadcast elementwise binary ops, scalar ops, and simple unary ops.

use alloc::boxed::Box;
use alloc::vec;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::{broadcast_zip, Tensor};

/// Elementwise binary operation kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

fn apply<T: Scalar>(kind: BinKind, a: T, b: T) -> T {
    match kind {
        BinKind::Add => a + b,
        BinKind::Sub => a - b,
        BinKind::Mul => a * b,
        BinKind::Div => a / b,
        // Ties route to the first argument.
        BinKind::Min => {
            if b < a {
                b
            } else {
                a
            }
        }
        BinKind::Max => {
            if b > a {
                b
            } else {
                a
            }
        }
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn binary(self, rhs: Var<'t, T>, kind: BinKind) -> Result<Var<'t, T>> {
        if kind == BinKind::Div {
            let has_zero = self
                .tape
                .with_value(rhs.id, |b| b.data().iter().any(|&v| v == T::zero()));
            if has_zero {
                return Err(TensorError::DivisionByZero);
            }
        }
        let out = self.tape.with_values(&[self.id, rhs.id], |vals| {
            broadcast_zip(vals[0], vals[1], |a, b| apply(kind, a, b))
        })?;
        let a_shape = self.shape();
        let b_shape = rhs.shape();
        Ok(self.tape.push(
            out,
            vec![self.id, rhs.id],
            Box::new(move |gout, _out, pvals| {
                let (a, b) = (pvals[0], pvals[1]);
                let (da, db): (Tensor<T>, Tensor<T>) = match kind {
                    BinKind::Add => (gout.clone(), gout.clone()),
                    BinKind::Sub => (gout.clone(), gout.map(|v| -v)),
                    BinKind::Mul => (
                        broadcast_zip(gout, b, |g, bv| g * bv).expect("mul bwd"),
                        broadcast_zip(gout, a, |g, av| g * av).expect("mul bwd"),
                    ),
                    BinKind::Div => {
                        let da = broadcast_zip(gout, b, |g, bv| g / bv).expect("div bwd");
                        // d/db (a/b) = -a / b^2
                        let coef =
                            broadcast_zip(a, b, |av, bv| -av / (bv * bv)).expect("div bwd");
                        let db = broadcast_zip(gout, &coef, |g, c| g * c).expect("div bwd");
                        (da, db)
                    }
                    BinKind::Min | BinKind::Max => {
                        // Indicator of the winning argument; ties go to `a`.
                        let wins_a = broadcast_zip(a, b, |av, bv| {
                            let a_wins = match kind {
                                BinKind::Min => !(bv < av),
                                _ => !(bv > av),
                            };
                            if a_wins {
                                T::one()
                            } else {
                                T::zero()
                            }
                        })
                        .expect("minmax bwd");
                        let da = broadcast_zip(gout, &wins_a, |g, w| g * w).expect("minmax bwd");
                        let db = broadcast_zip(gout, &wins_a, |g, w| g * (T::one() - w))
                            .expect("minmax bwd");
                        (da, db)
                    }
                };
                vec![da.reduce_to_shape(&a_shape), db.reduce_to_shape(&b_shape)]
            }),
        ))
    }

    pub fn add(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(rhs, BinKind::Add)
    }
    pub fn sub(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(rhs, BinKind::Sub)
    }
    pub fn mul(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(rhs, BinKind::Mul)
    }
    pub fn div(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(rhs, BinKind::Div)
    }
    pub fn emin(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(rhs, BinKind::Min)
    }
    pub fn emax(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(rhs, BinKind::Max)
    }

    pub fn add_scalar(self, s: f64) -> Result<Var<'t, T>> {
        let sv = T::of_f64(s);
        let out = self.tape.with_value(self.id, |v| v.map(|x| x + sv));
        Ok(self.tape.push(
            out,
            vec![self.id],
            Box::new(move |gout, _, _| vec![gout.clone()]),
        ))
    }

    pub fn mul_scalar(self, s: f64) -> Result<Var<'t, T>> {
        let sv = T::of_f64(s);
        let out = self.tape.with_value(self.id, |v| v.map(|x| x * sv));
        Ok(self.tape.push(
            out,
            vec![self.id],
            Box::new(move |gout, _, _| vec![gout.map(|g| g * sv)]),
        ))
    }

    pub fn neg(self) -> Result<Var<'t, T>> {
        self.mul_scalar(-1.0)
    }

    pub fn relu(self) -> Result<Var<'t, T>> {
        let out = self
            .tape
            .with_value(self.id, |v| v.map(|x| if x > T::zero() { x } else { T::zero() }));
        Ok(self.tape.push(
            out,
            vec![self.id],
            Box::new(move |gout, _, pvals| {
                let mask = pvals[0].map(|x| if x > T::zero() { T::one() } else { T::zero() });
                vec![broadcast_zip(gout, &mask, |g, m| g * m).expect("relu bwd")]
            }),
        ))
    }

    pub fn sqrt_elem(self) -> Result<Var<'t, T>> {
        let out = self.tape.with_value(self.id, |v| v.map(|x| x.sqrt()));
        Ok(self.tape.push(
            out,
            vec![self.id],
            Box::new(move |gout, out, _| {
                let half = T::of_f64(0.5);
                vec![broadcast_zip(gout, out, |g, y| g * half / y).expect("sqrt bwd")]
            }),
        ))
    }

    pub fn square(self) -> Result<Var<'t, T>> {
        self.mul(self)
    }
}
