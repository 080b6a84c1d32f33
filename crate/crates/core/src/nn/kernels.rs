//! Dense kernels behind the autodiff ops. Layouts are NCHW; convolution
//! weights are `[C_out, C_in, k, k]`.

/// `c = a · b + beta · c` for row-major `a: m×k`, `b: k×n`, `c: m×n`, with
/// optional transposition of `a` or `b` (`a_t` means `a` is stored `k×m`).
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides describe exactly the row-major buffers checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn h_out(&self) -> usize {
        (self.h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn w_out(&self) -> usize {
        (self.w + 2 * self.pad - self.k) / self.stride + 1
    }

    /// Rows of the column matrix.
    pub fn patch(&self) -> usize {
        self.c_in * self.k * self.k
    }

    pub fn cols(&self) -> usize {
        self.h_out() * self.w_out()
    }
}

/// Unfolds one image `[C_in, H, W]` into `[C_in·k·k, H_out·W_out]`.
pub fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let (ho, wo) = (g.h_out(), g.w_out());
    let n = ho * wo;
    for ci in 0..g.c_in {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into `dx`.
pub fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let (ho, wo) = (g.h_out(), g.w_out());
    let n = ho * wo;
    for ci in 0..g.c_in {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            line[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Batched convolution forward. `x: [B, C_in, H, W]` → `[B, C_out, H_out, W_out]`.
pub fn conv2d_forward(x: &[f64], batch: usize, wt: &[f64], bias: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (p, n) = (g.patch(), g.cols());
    let in_sz = g.c_in * g.h * g.w;
    let out_sz = g.c_out * n;
    let mut out = vec![0.0; batch * out_sz];
    let mut cols = vec![0.0; p * n];
    for b in 0..batch {
        im2col(&x[b * in_sz..(b + 1) * in_sz], g, &mut cols);
        let o = &mut out[b * out_sz..(b + 1) * out_sz];
        for (co, row) in o.chunks_exact_mut(n).enumerate() {
            row.fill(bias[co]);
        }
        gemm(g.c_out, p, n, wt, false, &cols, false, 1.0, o);
    }
    out
}

/// Accumulates weight, bias and (optionally) input gradients.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    x: &[f64],
    batch: usize,
    wt: &[f64],
    g: &ConvGeom,
    dout: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    mut dx: Option<&mut [f64]>,
) {
    let (p, n) = (g.patch(), g.cols());
    let in_sz = g.c_in * g.h * g.w;
    let out_sz = g.c_out * n;
    let mut cols = vec![0.0; p * n];
    let mut dcols = vec![0.0; p * n];
    for b in 0..batch {
        let d = &dout[b * out_sz..(b + 1) * out_sz];
        for (co, row) in d.chunks_exact(n).enumerate() {
            db[co] += row.iter().sum::<f64>();
        }
        im2col(&x[b * in_sz..(b + 1) * in_sz], g, &mut cols);
        // dW += dOut · colsᵀ
        gemm(g.c_out, n, p, d, false, &cols, true, 1.0, dw);
        if let Some(dx) = dx.as_deref_mut() {
            // dcols = Wᵀ · dOut
            gemm(p, g.c_out, n, wt, true, d, false, 0.0, &mut dcols);
            col2im(&dcols, g, &mut dx[b * in_sz..(b + 1) * in_sz]);
        }
    }
}
