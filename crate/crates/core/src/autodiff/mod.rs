//! A small reverse-mode differentiation engine.
//!
//! Computation is recorded on a [`Tape`] as it runs. Every operation keeps
//! what its adjoint needs, and [`Tape::backward`] walks the tape once in
//! reverse. The engine is generic over [`Real`] so that the same model code
//! runs in `f32` for training and in `f64` for finite-difference checks
//! ([`grad_check`], [`grad_check_params`]).

mod checkpoint;
mod gradcheck;
pub(crate) mod kernels;
mod tape;
mod tensor;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};

pub use checkpoint::{load_checkpoint, save_checkpoint, sidecar_path};
pub use gradcheck::{grad_check, grad_check_params, relative_error, CoordinateSelection};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{ParamStore, Tensor};

/// Floating point types the tape can run on.
pub trait Real:
    Float
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Raw strided GEMM, `c = beta * c + a * b`.
    ///
    /// # Safety
    /// All strided accesses implied by the dimensions must be in bounds.
    #[allow(clippy::too_many_arguments)]
    #[doc(hidden)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("representable literal")
    }
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}
