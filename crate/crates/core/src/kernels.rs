//! Raw numeric kernels over flat slices. Shapes are validated by callers.

/// Geometry of a single-image 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn in_len(&self) -> usize {
        self.c_in * self.h * self.w
    }

    pub fn out_len(&self) -> usize {
        self.c_out * self.oh * self.ow
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }
}

/// Unfolds one image into a `[c_in*kh*kw, oh*ow]` column matrix.
fn im2col(g: &ConvGeom, img: &[f64], cols: &mut [f64]) {
    let np = g.positions();
    for ci in 0..g.c_in {
        let plane = &img[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let r = (ci * g.kh + ky) * g.kw + kx;
                let row = &mut cols[r * np..(r + 1) * np];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let dst = &mut row[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
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

/// Folds a column matrix back onto an image, accumulating overlaps.
fn col2im_add(g: &ConvGeom, cols: &[f64], img: &mut [f64]) {
    let np = g.positions();
    for ci in 0..g.c_in {
        let plane = &mut img[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let r = (ci * g.kh + ky) * g.kw + kx;
                let row = &cols[r * np..(r + 1) * np];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += row[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `c[m×n] += a[m×k] · b[k×n]`
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    // row-major a (m×k) · b (k×n)
    gemm(m, k, n, a, (k, 1), b, (n, 1), c);
}

/// `c[m×k] += a[m×n] · b[k×n]ᵀ`
fn gemm_abt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    // bᵀ is n×k with element (x, p) at b[p*n + x]
    gemm(m, n, k, a, (n, 1), b, (1, n), c);
}

/// `c[k×n] += a[m×k]ᵀ · b[m×n]`
fn gemm_atb_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    // aᵀ is k×m with element (p, i) at a[i*k + p]
    gemm(k, m, n, a, (1, k), b, (n, 1), c);
}

/// `c[m×n] += lhs[m×k] · rhs[k×n]` for arbitrary (row, col) strides of the
/// operands; `c` is contiguous row-major.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, lhs: &[f64], ls: (usize, usize), rhs: &[f64], rs: (usize, usize), c: &mut [f64]) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    let last = |s: (usize, usize), r: usize, q: usize| (r - 1) * s.0 + (q - 1) * s.1;
    assert!(last(ls, m, k) < lhs.len() && last(rs, k, n) < rhs.len() && m * n <= c.len());
    // SAFETY: the bounds above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            lhs.as_ptr(),
            ls.0 as isize,
            ls.1 as isize,
            rhs.as_ptr(),
            rs.0 as isize,
            rs.1 as isize,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn conv_forward(
    g: &ConvGeom,
    batch: usize,
    input: &[f64],
    kernel: &[f64],
    bias: &[f64],
    out: &mut [f64],
) {
    let np = g.positions();
    let mut cols = vec![0.0; g.patch_len() * np];
    for n in 0..batch {
        im2col(g, &input[n * g.in_len()..(n + 1) * g.in_len()], &mut cols);
        let o = &mut out[n * g.out_len()..(n + 1) * g.out_len()];
        for (co, b) in bias.iter().enumerate() {
            o[co * np..(co + 1) * np].fill(*b);
        }
        gemm_acc(kernel, &cols, o, g.c_out, g.patch_len(), np);
    }
}

pub(crate) struct ConvGrads<'a> {
    pub input: Option<&'a mut [f64]>,
    pub kernel: Option<&'a mut [f64]>,
    pub bias: Option<&'a mut [f64]>,
}

pub(crate) fn conv_backward(
    g: &ConvGeom,
    batch: usize,
    input: &[f64],
    kernel: &[f64],
    dout: &[f64],
    grads: ConvGrads<'_>,
) {
    let np = g.positions();
    let pl = g.patch_len();
    let ConvGrads {
        input: mut d_input,
        kernel: mut d_kernel,
        bias: mut d_bias,
    } = grads;
    let mut cols = vec![0.0; pl * np];
    let mut dcols = vec![0.0; pl * np];
    for n in 0..batch {
        let dy = &dout[n * g.out_len()..(n + 1) * g.out_len()];
        if let Some(db) = d_bias.as_deref_mut() {
            for (co, acc) in db.iter_mut().enumerate() {
                *acc += dy[co * np..(co + 1) * np].iter().sum::<f64>();
            }
        }
        if let Some(dk) = d_kernel.as_deref_mut() {
            im2col(g, &input[n * g.in_len()..(n + 1) * g.in_len()], &mut cols);
            gemm_abt_acc(dy, &cols, dk, g.c_out, np, pl);
        }
        if let Some(dx) = d_input.as_deref_mut() {
            dcols.fill(0.0);
            gemm_atb_acc(kernel, dy, &mut dcols, g.c_out, pl, np);
            col2im_add(g, &dcols, &mut dx[n * g.in_len()..(n + 1) * g.in_len()]);
        }
    }
}
