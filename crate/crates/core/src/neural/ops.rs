//! Convolution primitives: im2col lowering and the three conv maps
//! (forward, data gradient, weight gradient).
//!
//! Everything is generic over [`Real`] so the same code path trains in f32
//! and gradient-checks in f64. All loops are deterministic and
//! single-threaded; matrix products go through `ndarray`'s GEMM.

use ndarray::{Array1, Array2, Array3, Array4, ArrayView3, ArrayView4, s};

use super::Real;

/// Convolution geometry: square kernel, uniform stride and padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    /// The k4/s2/p1 geometry that halves spatial size.
    pub const DOWN2: ConvGeom = ConvGeom { kernel: 4, stride: 2, pad: 1 };
    /// The k4/s1/p1 geometry that shrinks by one (patch heads).
    pub const SAME1: ConvGeom = ConvGeom { kernel: 4, stride: 1, pad: 1 };
    /// k3/s1/p1, exactly size preserving.
    pub const SAME3: ConvGeom = ConvGeom { kernel: 3, stride: 1, pad: 1 };

    /// Output side length for an input side of `n`.
    pub fn out_side(&self, n: usize) -> usize {
        (n + 2 * self.pad - self.kernel) / self.stride + 1
    }
}

/// Lowers an image into a (C*k*k, OH*OW) patch matrix.
pub fn im2col<F: Real>(x: ArrayView3<F>, g: ConvGeom) -> Array2<F> {
    let (c, h, w) = x.dim();
    let oh = g.out_side(h);
    let ow = g.out_side(w);
    let mut cols = Array2::zeros((c * g.kernel * g.kernel, oh * ow));
    for ci in 0..c {
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (ci * g.kernel + ky) * g.kernel + kx;
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        cols[[row, oy * ow + ox]] = x[[ci, iy as usize, ix as usize]];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters a patch matrix back into an image,
/// accumulating where patches overlap.
pub fn col2im<F: Real>(cols: &Array2<F>, shape: (usize, usize, usize), g: ConvGeom) -> Array3<F> {
    let (c, h, w) = shape;
    let oh = g.out_side(h);
    let ow = g.out_side(w);
    let mut x = Array3::zeros(shape);
    for ci in 0..c {
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (ci * g.kernel + ky) * g.kernel + kx;
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        x[[ci, iy as usize, ix as usize]] += cols[[row, oy * ow + ox]];
                    }
                }
            }
        }
    }
    x
}

/// Batched convolution forward: `x` is (N, C, H, W), `w` is (OC, C, k, k).
pub fn conv_fw<F: Real>(
    x: ArrayView4<F>,
    w: ArrayView4<F>,
    b: Option<&Array1<F>>,
    g: ConvGeom,
) -> Array4<F> {
    let (n, c, h, wd) = x.dim();
    let (oc, wc, _, _) = w.dim();
    assert_eq!(c, wc, "channel mismatch");
    let oh = g.out_side(h);
    let ow = g.out_side(wd);
    let w2d = w
        .into_shape_with_order((oc, wc * g.kernel * g.kernel))
        .expect("contiguous weights");
    let mut out = Array4::zeros((n, oc, oh, ow));
    for ni in 0..n {
        let cols = im2col(x.slice(s![ni, .., .., ..]), g);
        let y = w2d.dot(&cols); // (OC, OH*OW)
        let mut dst = out.slice_mut(s![ni, .., .., ..]);
        let y3 = y.into_shape_with_order((oc, oh, ow)).expect("gemm output");
        dst.assign(&y3);
        if let Some(b) = b {
            for ci in 0..oc {
                let mut ch = dst.slice_mut(s![ci, .., ..]);
                ch.mapv_inplace(|v| v + b[ci]);
            }
        }
    }
    out
}

/// Gradient of the convolution with respect to its input: maps an
/// output-space tensor back through the transposed weights. Also the
/// forward pass of transposed convolution.
pub fn conv_bw_data<F: Real>(
    dy: ArrayView4<F>,
    w: ArrayView4<F>,
    g: ConvGeom,
    in_shape: (usize, usize, usize),
) -> Array4<F> {
    let (n, oc, oh, ow) = dy.dim();
    let (woc, wc, _, _) = w.dim();
    assert_eq!(oc, woc, "channel mismatch");
    assert_eq!(g.out_side(in_shape.1), oh, "geometry mismatch");
    let w2d = w
        .into_shape_with_order((oc, wc * g.kernel * g.kernel))
        .expect("contiguous weights");
    let mut out = Array4::zeros((n, in_shape.0, in_shape.1, in_shape.2));
    for ni in 0..n {
        // to_shape copies when the caller hands a non-standard layout
        // (e.g. a slice of a channel-concatenated tensor).
        let dys = dy.slice(s![ni, .., .., ..]);
        let dy2d = dys.to_shape((oc, oh * ow)).expect("grad shape");
        let cols = w2d.t().dot(&dy2d); // (C*k*k, OH*OW)
        let dx = col2im(&cols, in_shape, g);
        out.slice_mut(s![ni, .., .., ..]).assign(&dx);
    }
    out
}

/// Gradient of the convolution with respect to its weights, summed over
/// the batch. Returns (dW, db).
pub fn conv_bw_w<F: Real>(
    dy: ArrayView4<F>,
    x: ArrayView4<F>,
    g: ConvGeom,
    kshape: (usize, usize),
) -> (Array4<F>, Array1<F>) {
    let (n, oc, oh, ow) = dy.dim();
    let (oc_k, c_k) = kshape;
    assert_eq!(oc, oc_k);
    let mut dw2d = Array2::<F>::zeros((oc, c_k * g.kernel * g.kernel));
    let mut db = Array1::<F>::zeros(oc);
    for ni in 0..n {
        let dys = dy.slice(s![ni, .., .., ..]);
        let dy2d = dys.to_shape((oc, oh * ow)).expect("grad shape");
        let cols = im2col(x.slice(s![ni, .., .., ..]), g);
        dw2d = dw2d + dy2d.dot(&cols.t());
        for ci in 0..oc {
            let mut acc = F::zero();
            for v in dy2d.row(ci) {
                acc += *v;
            }
            db[ci] += acc;
        }
    }
    let dw = dw2d
        .into_shape_with_order((oc, c_k, g.kernel, g.kernel))
        .expect("weight shape");
    (dw, db)
}
