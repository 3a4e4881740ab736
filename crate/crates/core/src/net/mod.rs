//! Minimal CPU neural-network stack for image-to-image regression.
//!
//! Everything is generic over [`Scalar`] so the same code runs in 32-bit
//! for training and in 64-bit for gradient verification. Convolutions are
//! lowered to GEMM through im2col.

mod adam;
mod layers;
mod model;
mod tensor;
mod train;
mod unet;

pub use adam::{adam_step, lr_at_epoch, AdamConfig, AdamState, TrainConfig};
pub use layers::{
    concat_channels, concat_channels_backward, conv2d, conv2d_backward, conv_transpose2d,
    conv_transpose2d_backward, mse_loss, relu, relu_backward, ConvGrads,
};
pub(crate) use model::mean_grid;
pub use model::{ensemble_predict, fit, predict, Model, MODEL_FORMAT, MODEL_VERSION};
pub use tensor::Tensor;
pub use train::{train, train_tensors, EpochRecord, TrainHistory};
pub use unet::{
    build_unet, loss_gradient, unet_forward, LayerInput, LayerKind, LayerSpec, NetworkParams,
    UNetConfig,
};

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of tensors and parameters.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + AddAssign + Sum + Default + Debug + Send + Sync + 'static
{
    /// `c = alpha * a * b + beta * c` on raw strided matrices.
    ///
    /// # Safety
    /// Pointers and strides must describe valid `m x k`, `k x n`, `m x n` views.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
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

    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite conversion")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
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
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
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
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// `C (m x n) = op(A) op(B) + beta C` on dense row-major buffers, where
/// `op(A)` is `m x k` and `op(B)` is `k x n`. A transposed operand is stored
/// as its untransposed row-major matrix.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    b: &[T],
    beta: T,
    c: &mut [T],
) {
    let lda = if trans_a { m } else { k };
    let ldb = if trans_b { k } else { n };
    gemm_ld(trans_a, trans_b, m, n, k, a, lda, b, ldb, beta, c, n);
}

/// [`gemm`] with explicit row strides of the stored matrices.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_ld<T: Scalar>(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    lda: usize,
    b: &[T],
    ldb: usize,
    beta: T,
    c: &mut [T],
    ldc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    let extent = |rows: usize, cols: usize, ld: usize| if rows == 0 { 0 } else { (rows - 1) * ld + cols };
    let (ar, ac) = if trans_a { (k, m) } else { (m, k) };
    let (br, bc) = if trans_b { (n, k) } else { (k, n) };
    assert!(
        ac <= lda && bc <= ldb && n <= ldc
            && a.len() >= extent(ar, ac, lda)
            && b.len() >= extent(br, bc, ldb)
            && c.len() >= extent(m, n, ldc),
        "gemm operand too small"
    );
    let (rsa, csa) = if trans_a { (1, lda as isize) } else { (lda as isize, 1) };
    let (rsb, csb) = if trans_b { (1, ldb as isize) } else { (ldb as isize, 1) };
    // SAFETY: the assert above bounds every index the strides can reach.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}
