//! 2-D cross-correlation with zero padding, forward and backward.
//!
//! The input width (sensing-coil axis) is small compared with the kernel
//! widths, so most taps of a `same`-padded kernel fall into padding. The
//! kernels here decompose the convolution by kernel column: for each column
//! offset only the overlapping input/output columns are gathered into a
//! `(in_channels * kernel_h) x (cols * height)` patch matrix and multiplied
//! by the matching weight slice with one GEMM. Padding columns are never
//! touched. The reduction order is fixed, so results are bitwise
//! reproducible.

use matrixmultiply::dgemm;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero-pad both axes so the output keeps the input height and width.
    Same,
    /// Zero-pad the height axis only; the kernel slides over the unpadded
    /// width, so a kernel as wide as the input yields width 1.
    ValidWidth,
}

/// Shape of one convolution. Weights are stored `[out][in][kh][kw]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub padding: Padding,
}

impl ConvGeometry {
    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn pads(&self) -> (usize, usize) {
        let ph = (self.kernel_h - 1) / 2;
        let pw = match self.padding {
            Padding::Same => (self.kernel_w - 1) / 2,
            Padding::ValidWidth => 0,
        };
        (ph, pw)
    }

    pub fn output_shape(&self, input: [usize; 4]) -> Result<[usize; 4]> {
        let [b, c, h, w] = input;
        if c != self.in_channels {
            return Err(Error::Shape(format!("convolution expects {} input channels, got {c}", self.in_channels)));
        }
        if self.kernel_h == 0 || self.kernel_w == 0 || self.kernel_h.is_multiple_of(2) {
            return Err(Error::Shape(format!("kernel height must be odd, got {}x{}", self.kernel_h, self.kernel_w)));
        }
        let out_w = match self.padding {
            Padding::Same if self.kernel_w.is_multiple_of(2) => {
                return Err(Error::Shape("same padding needs an odd kernel width".into()))
            }
            Padding::Same => w,
            Padding::ValidWidth if self.kernel_w > w => {
                return Err(Error::Shape(format!("kernel width {} exceeds input width {w}", self.kernel_w)))
            }
            Padding::ValidWidth => w - self.kernel_w + 1,
        };
        Ok([b, self.out_channels, h, out_w])
    }

    fn check_params(&self, weight: &[f64], bias: Option<&[f64]>) -> Result<()> {
        if weight.len() != self.weight_len() {
            return Err(Error::Shape(format!(
                "weight has {} values, geometry needs {}",
                weight.len(),
                self.weight_len()
            )));
        }
        if let Some(b) = bias {
            if b.len() != self.out_channels {
                return Err(Error::Shape(format!("bias has {} values, geometry needs {}", b.len(), self.out_channels)));
            }
        }
        Ok(())
    }
}

/// Overlap of output and input columns for one kernel column.
struct ColSpan {
    out_start: usize,
    in_start: usize,
    ncols: usize,
}

fn col_span(kw: usize, in_w: usize, out_w: usize, pw: usize) -> Option<ColSpan> {
    let lo = pw.saturating_sub(kw);
    let hi = (in_w + pw).saturating_sub(kw).min(out_w);
    (hi > lo).then(|| ColSpan { out_start: lo, in_start: lo + kw - pw, ncols: hi - lo })
}

/// Gather the patch matrix for one batch item and kernel column.
fn im2col(input: &Tensor, b: usize, span: &ColSpan, kh: usize, ph: usize, cols: &mut Vec<f64>) {
    let [_, ci, h, _] = input.shape();
    let n = span.ncols * h;
    cols.clear();
    cols.resize(ci * kh * n, 0.0);
    let data = input.data();
    for c in 0..ci {
        for k in 0..kh {
            let row = (c * kh + k) * n;
            let (dst0, src0, len) = row_overlap(k, ph, h);
            for jj in 0..span.ncols {
                let src = input.index(b, c, 0, span.in_start + jj);
                let dst = row + jj * h;
                cols[dst + dst0..dst + dst0 + len].copy_from_slice(&data[src + src0..src + src0 + len]);
            }
        }
    }
}

/// Scatter-add a patch-matrix gradient back into the input gradient.
fn col2im(grad_in: &mut Tensor, b: usize, span: &ColSpan, kh: usize, ph: usize, cols: &[f64]) {
    let [_, ci, h, _] = grad_in.shape();
    let n = span.ncols * h;
    for c in 0..ci {
        for k in 0..kh {
            let row = (c * kh + k) * n;
            let (dst0, src0, len) = row_overlap(k, ph, h);
            for jj in 0..span.ncols {
                let at = grad_in.index(b, c, 0, span.in_start + jj);
                let g = &mut grad_in.data_mut()[at + src0..at + src0 + len];
                let p = &cols[row + jj * h + dst0..row + jj * h + dst0 + len];
                for (gi, pi) in g.iter_mut().zip(p) {
                    *gi += pi;
                }
            }
        }
    }
}

/// For kernel row `k`, output row `o` reads input row `o + k - ph`. Returns
/// (first valid output row, first input row, count). Offsets are clamped
/// to `h` so an empty overlap still yields in-bounds slices.
fn row_overlap(k: usize, ph: usize, h: usize) -> (usize, usize, usize) {
    if k >= ph {
        let shift = (k - ph).min(h);
        (0, shift, h - shift)
    } else {
        let shift = (ph - k).min(h);
        (shift, 0, h - shift)
    }
}

/// `c = a * b + beta * c` on strided row/column views.
///
/// # Safety
/// Every index reached through the given dims and strides must be in bounds
/// of the corresponding slice.
#[allow(clippy::too_many_arguments)]
unsafe fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: *const f64,
    a_strides: (usize, usize),
    b: *const f64,
    b_strides: (usize, usize),
    beta: f64,
    c: *mut f64,
    c_strides: (usize, usize),
) {
    dgemm(
        m,
        k,
        n,
        1.0,
        a,
        a_strides.0 as isize,
        a_strides.1 as isize,
        b,
        b_strides.0 as isize,
        b_strides.1 as isize,
        beta,
        c,
        c_strides.0 as isize,
        c_strides.1 as isize,
    );
}

pub fn conv2d_forward(input: &Tensor, weight: &[f64], bias: &[f64], g: &ConvGeometry) -> Result<Tensor> {
    let out_shape = g.output_shape(input.shape())?;
    g.check_params(weight, Some(bias))?;
    let [batch, ci, h, in_w] = input.shape();
    let [_, co, _, out_w] = out_shape;
    let (kh, kw) = (g.kernel_h, g.kernel_w);
    let (ph, pw) = g.pads();

    let mut out = Tensor::zeros(out_shape);
    let plane = out_w * h;
    for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        chunk.fill(bias[i % co]);
    }

    let mut cols = Vec::new();
    let w_row = ci * kh * kw;
    for b in 0..batch {
        for k in 0..kw {
            let Some(span) = col_span(k, in_w, out_w, pw) else { continue };
            im2col(input, b, &span, kh, ph, &mut cols);
            let n = span.ncols * h;
            let c_off = b * co * plane + span.out_start * h;
            // A: weight[o][(c, r)][k], strides (w_row, kw) starting at column k
            // B: patch matrix, row-major with n columns
            // C: output channels of item b restricted to the overlapping columns
            debug_assert!(k + (co - 1) * w_row + (ci * kh - 1) * kw < weight.len());
            debug_assert!(c_off + (co - 1) * plane + n <= out.data().len());
            unsafe {
                gemm(
                    co,
                    ci * kh,
                    n,
                    weight.as_ptr().add(k),
                    (w_row, kw),
                    cols.as_ptr(),
                    (n, 1),
                    1.0,
                    out.data_mut().as_mut_ptr().add(c_off),
                    (plane, 1),
                );
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

pub fn conv2d_backward(grad_out: &Tensor, input: &Tensor, weight: &[f64], g: &ConvGeometry) -> Result<ConvGrads> {
    let out_shape = g.output_shape(input.shape())?;
    g.check_params(weight, None)?;
    if grad_out.shape() != out_shape {
        return Err(Error::Shape(format!(
            "output gradient has shape {:?}, forward produced {out_shape:?}",
            grad_out.shape()
        )));
    }
    let [batch, ci, h, in_w] = input.shape();
    let [_, co, _, out_w] = out_shape;
    let (kh, kw) = (g.kernel_h, g.kernel_w);
    let (ph, pw) = g.pads();
    let plane = out_w * h;
    let w_row = ci * kh * kw;

    let mut grad_bias = vec![0.0; co];
    for (i, chunk) in grad_out.data().chunks(plane).enumerate() {
        grad_bias[i % co] += chunk.iter().sum::<f64>();
    }

    let mut grad_w = vec![0.0; weight.len()];
    let mut grad_in = Tensor::zeros(input.shape());
    let mut cols = Vec::new();
    let mut dcols = Vec::new();
    for b in 0..batch {
        for k in 0..kw {
            let Some(span) = col_span(k, in_w, out_w, pw) else { continue };
            im2col(input, b, &span, kh, ph, &mut cols);
            let n = span.ncols * h;
            let g_off = b * co * plane + span.out_start * h;
            dcols.clear();
            dcols.resize(ci * kh * n, 0.0);
            unsafe {
                // dW[:, :, :, k] += dOut_sub * cols^T
                gemm(
                    co,
                    n,
                    ci * kh,
                    grad_out.data().as_ptr().add(g_off),
                    (plane, 1),
                    cols.as_ptr(),
                    (1, n),
                    1.0,
                    grad_w.as_mut_ptr().add(k),
                    (w_row, kw),
                );
                // dcols = W[:, :, :, k]^T * dOut_sub
                gemm(
                    ci * kh,
                    co,
                    n,
                    weight.as_ptr().add(k),
                    (kw, w_row),
                    grad_out.data().as_ptr().add(g_off),
                    (plane, 1),
                    0.0,
                    dcols.as_mut_ptr(),
                    (n, 1),
                );
            }
            col2im(&mut grad_in, b, &span, kh, ph, &dcols);
        }
    }
    Ok(ConvGrads { input: grad_in, weight: grad_w, bias: grad_bias })
}
