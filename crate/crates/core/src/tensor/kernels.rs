//! Raw numeric kernels shared by the tensor and graph code.

use crate::error::{Error, Result};

/// `c = alpha * a·b + beta * c` for strided row/column-major operands.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k > 0 {
        assert!(a.len() > (m - 1) * rsa + (k - 1) * csa, "gemm: lhs too short");
        assert!(b.len() > (k - 1) * rsb + (n - 1) * csb, "gemm: rhs too short");
    }
    assert!(c.len() >= m * n, "gemm: output too short");
    // SAFETY: the asserts above bound every strided access inside the slices,
    // and `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// How a batched matmul lines up its operands.
#[derive(Debug, Clone)]
pub(crate) struct MatmulPlan {
    pub out_shape: Vec<usize>,
    batch: usize,
    n: usize,
    k: usize,
    m: usize,
    a_batched: bool,
    b_batched: bool,
}

impl MatmulPlan {
    pub fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        let mismatch = || Error::Shape {
            op: "matmul",
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        };
        if a.len() < 2 || b.len() < 2 {
            return Err(mismatch());
        }
        let (a_lead, a_mat) = a.split_at(a.len() - 2);
        let (b_lead, b_mat) = b.split_at(b.len() - 2);
        if a_mat[1] != b_mat[0] {
            return Err(mismatch());
        }
        let (lead, a_batched, b_batched) = if a_lead == b_lead {
            (a_lead, !a_lead.is_empty(), !b_lead.is_empty())
        } else if b_lead.is_empty() {
            (a_lead, true, false)
        } else if a_lead.is_empty() {
            (b_lead, false, true)
        } else {
            return Err(mismatch());
        };
        let mut out_shape = lead.to_vec();
        out_shape.extend([a_mat[0], b_mat[1]]);
        Ok(Self {
            out_shape,
            batch: lead.iter().product(),
            n: a_mat[0],
            k: a_mat[1],
            m: b_mat[1],
            a_batched,
            b_batched,
        })
    }

    pub fn out_len(&self) -> usize {
        self.batch * self.n * self.m
    }

    fn a_off(&self, i: usize) -> usize {
        if self.a_batched {
            i * self.n * self.k
        } else {
            0
        }
    }

    fn b_off(&self, i: usize) -> usize {
        if self.b_batched {
            i * self.k * self.m
        } else {
            0
        }
    }

    pub fn forward(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        let (n, k, m) = (self.n, self.k, self.m);
        if self.a_batched && !self.b_batched {
            // Shared right operand: one tall product.
            gemm(self.batch * n, k, m, a, (k, 1), b, (m, 1), 0.0, out);
            return;
        }
        for i in 0..self.batch {
            gemm(
                n,
                k,
                m,
                &a[self.a_off(i)..],
                (k, 1),
                &b[self.b_off(i)..],
                (m, 1),
                0.0,
                &mut out[i * n * m..(i + 1) * n * m],
            );
        }
    }

    /// Accumulates `dC·Bᵀ` into `da`.
    pub fn backward_lhs(&self, dout: &[f64], b: &[f64], da: &mut [f64]) {
        let (n, k, m) = (self.n, self.k, self.m);
        if self.a_batched && !self.b_batched {
            gemm(self.batch * n, m, k, dout, (m, 1), b, (1, m), 1.0, da);
            return;
        }
        for i in 0..self.batch {
            let off = self.a_off(i);
            gemm(
                n,
                m,
                k,
                &dout[i * n * m..],
                (m, 1),
                &b[self.b_off(i)..],
                (1, m),
                1.0,
                &mut da[off..off + n * k],
            );
        }
    }

    /// Accumulates `Aᵀ·dC` into `db`.
    pub fn backward_rhs(&self, dout: &[f64], a: &[f64], db: &mut [f64]) {
        let (n, k, m) = (self.n, self.k, self.m);
        if self.a_batched && !self.b_batched {
            let rows = self.batch * n;
            gemm(k, rows, m, a, (1, k), dout, (m, 1), 1.0, db);
            return;
        }
        for i in 0..self.batch {
            let off = self.b_off(i);
            gemm(
                k,
                n,
                m,
                &a[self.a_off(i)..],
                (1, k),
                &dout[i * n * m..],
                (m, 1),
                1.0,
                &mut db[off..off + k * m],
            );
        }
    }
}

pub(crate) fn permuted_shape(shape: &[usize], axes: &[usize]) -> Result<Vec<usize>> {
    let mut seen = vec![false; shape.len()];
    if axes.len() != shape.len() {
        return Err(Error::contract(format!(
            "permutation {axes:?} does not match rank of {shape:?}"
        )));
    }
    for &a in axes {
        if a >= shape.len() || seen[a] {
            return Err(Error::contract(format!("invalid permutation {axes:?}")));
        }
        seen[a] = true;
    }
    Ok(axes.iter().map(|&a| shape[a]).collect())
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Gathers `src` (with `shape`) into the axis order `axes`.
pub(crate) fn permute(src: &[f64], shape: &[usize], axes: &[usize]) -> Vec<f64> {
    let src_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let step: Vec<usize> = axes.iter().map(|&a| src_strides[a]).collect();
    let mut out = Vec::with_capacity(src.len());
    if src.is_empty() {
        return out;
    }
    let rank = out_shape.len();
    let inner = out_shape[rank - 1];
    let inner_step = step[rank - 1];
    let mut idx = vec![0usize; rank];
    let mut base = 0usize;
    loop {
        if inner_step == 1 {
            out.extend_from_slice(&src[base..base + inner]);
        } else {
            out.extend((0..inner).map(|j| src[base + j * inner_step]));
        }
        // Advance the outer multi-index.
        let mut axis = rank - 1;
        loop {
            if axis == 0 {
                return out;
            }
            axis -= 1;
            idx[axis] += 1;
            base += step[axis];
            if idx[axis] < out_shape[axis] {
                break;
            }
            base -= step[axis] * out_shape[axis];
            idx[axis] = 0;
        }
    }
}

pub(crate) fn inverse_permutation(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (k, &a) in axes.iter().enumerate() {
        inv[a] = k;
    }
    inv
}

/// Geometry of a batched 1-D cross-correlation.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub width: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_width: usize,
}

impl ConvGeom {
    pub fn new(x: &[usize], k: &[usize], stride: usize, padding: usize) -> Result<Self> {
        let mismatch = || Error::Shape {
            op: "conv1d",
            lhs: x.to_vec(),
            rhs: k.to_vec(),
        };
        let (batch, c_in, width) = match *x {
            [c, w] => (1, c, w),
            [b, c, w] => (b, c, w),
            _ => return Err(mismatch()),
        };
        let [c_out, kc_in, kernel] = *k else {
            return Err(mismatch());
        };
        if kc_in != c_in || stride == 0 || width + 2 * padding < kernel {
            return Err(mismatch());
        }
        Ok(Self {
            batch,
            c_in,
            width,
            c_out,
            kernel,
            stride,
            padding,
            out_width: (width + 2 * padding - kernel) / stride + 1,
        })
    }

    pub fn col_width(&self) -> usize {
        self.c_in * self.kernel
    }

    fn source(&self, w: usize, t: usize) -> Option<usize> {
        let pos = (w * self.stride + t) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < self.width).then_some(pos as usize)
    }

    /// Unfolds `x` to `[batch·out_width, c_in·kernel]`.
    pub fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let cw = self.col_width();
        let mut cols = vec![0.0; self.batch * self.out_width * cw];
        for b in 0..self.batch {
            for w in 0..self.out_width {
                let row = &mut cols[(b * self.out_width + w) * cw..][..cw];
                for c in 0..self.c_in {
                    let src = &x[(b * self.c_in + c) * self.width..][..self.width];
                    for t in 0..self.kernel {
                        if let Some(p) = self.source(w, t) {
                            row[c * self.kernel + t] = src[p];
                        }
                    }
                }
            }
        }
        cols
    }

    /// Scatters column gradients back onto the input layout.
    pub fn col2im_add(&self, dcols: &[f64], dx: &mut [f64]) {
        let cw = self.col_width();
        for b in 0..self.batch {
            for w in 0..self.out_width {
                let row = &dcols[(b * self.out_width + w) * cw..][..cw];
                for c in 0..self.c_in {
                    let dst = &mut dx[(b * self.c_in + c) * self.width..][..self.width];
                    for t in 0..self.kernel {
                        if let Some(p) = self.source(w, t) {
                            dst[p] += row[c * self.kernel + t];
                        }
                    }
                }
            }
        }
    }

    pub fn out_shape(&self, batched: bool) -> Vec<usize> {
        if batched {
            vec![self.batch, self.c_out, self.out_width]
        } else {
            vec![self.c_out, self.out_width]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_matches_index_arithmetic() {
        let shape = [2, 3, 4];
        let src: Vec<f64> = (0..24).map(f64::from).collect();
        let out = permute(&src, &shape, &[2, 0, 1]);
        // out[k][i][j] == src[i][j][k]
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    assert_eq!(out[(k * 2 + i) * 3 + j], src[(i * 3 + j) * 4 + k]);
                }
            }
        }
    }

    #[test]
    fn permute_then_inverse_is_identity() {
        let shape = [3, 1, 5, 2];
        let axes = [3, 1, 0, 2];
        let src: Vec<f64> = (0..30).map(|v| v as f64 * 0.5).collect();
        let fwd = permute(&src, &shape, &axes);
        let pshape = permuted_shape(&shape, &axes).unwrap();
        let back = permute(&fwd, &pshape, &inverse_permutation(&axes));
        assert_eq!(back, src);
    }

    #[test]
    fn bad_permutation_is_rejected() {
        assert!(permuted_shape(&[2, 3], &[0, 0]).is_err());
        assert!(permuted_shape(&[2, 3], &[0]).is_err());
    }
}
