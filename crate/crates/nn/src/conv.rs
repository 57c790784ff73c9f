//! 2-D convolution (stride 1, zero padding) and 2x2 max pooling over
//! NCHW batches. Convolution is im2col + matmul; the column buffers are
//! cached for the backward pass.

use ndarray::{Array2, ArrayD, Ix2, Ix4, IxDyn};

use crate::real::Real;
use crate::tensor::Tensor;
use crate::{NnError, Result};

/// Unrolls padded `[C,H,W]` input into `[C*kh*kw, oh*ow]` columns.
fn im2col<F: Real>(
    x: &ndarray::ArrayView3<'_, F>,
    kh: usize,
    kw: usize,
    pad: usize,
) -> Array2<F> {
    let (c, h, w) = x.dim();
    let oh = h + 2 * pad - kh + 1;
    let ow = w + 2 * pad - kw + 1;
    let mut cols = Array2::<F>::zeros((c * kh * kw, oh * ow));
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                for oi in 0..oh {
                    let ii = (oi + ki).wrapping_sub(pad);
                    if ii >= h {
                        continue;
                    }
                    for oj in 0..ow {
                        let jj = (oj + kj).wrapping_sub(pad);
                        if jj >= w {
                            continue;
                        }
                        cols[(row, oi * ow + oj)] = x[(ci, ii, jj)];
                    }
                }
            }
        }
    }
    cols
}

/// Scatters column gradients back onto the padded input layout.
fn col2im<F: Real>(
    cols: &Array2<F>,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
) -> ndarray::Array3<F> {
    let oh = h + 2 * pad - kh + 1;
    let ow = w + 2 * pad - kw + 1;
    let mut x = ndarray::Array3::<F>::zeros((c, h, w));
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                for oi in 0..oh {
                    let ii = (oi + ki).wrapping_sub(pad);
                    if ii >= h {
                        continue;
                    }
                    for oj in 0..ow {
                        let jj = (oj + kj).wrapping_sub(pad);
                        if jj >= w {
                            continue;
                        }
                        x[(ci, ii, jj)] = x[(ci, ii, jj)] + cols[(row, oi * ow + oj)];
                    }
                }
            }
        }
    }
    x
}

/// Convolution of `x: [N,C,H,W]` with `weight: [OC, C*kh*kw]` and
/// `bias: [OC]`; stride 1, zero padding `pad`. Output `[N,OC,OH,OW]`.
pub fn conv2d<F: Real>(
    x: &Tensor<F>,
    weight: &Tensor<F>,
    bias: &Tensor<F>,
    kh: usize,
    kw: usize,
    pad: usize,
) -> Result<Tensor<F>> {
    let xv = x.value();
    let x4 = xv
        .view()
        .into_dimensionality::<Ix4>()
        .map_err(|_| NnError::ShapeMismatch {
            op: "conv2d",
            details: format!("input must be NCHW, got {:?}", xv.shape()),
        })?;
    let (n, c, h, w) = x4.dim();
    let wv = weight.value();
    let w2 = wv
        .view()
        .into_dimensionality::<Ix2>()
        .map_err(|_| NnError::ShapeMismatch {
            op: "conv2d",
            details: format!("weight must be 2-D, got {:?}", wv.shape()),
        })?;
    let oc = w2.nrows();
    if w2.ncols() != c * kh * kw {
        return Err(NnError::ShapeMismatch {
            op: "conv2d",
            details: format!("weight cols {} != C*kh*kw {}", w2.ncols(), c * kh * kw),
        });
    }
    let bv = bias.value();
    if bv.shape() != [oc] {
        return Err(NnError::ShapeMismatch {
            op: "conv2d",
            details: format!("bias {:?} does not match {} output channels", bv.shape(), oc),
        });
    }
    if h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(NnError::ShapeMismatch {
            op: "conv2d",
            details: format!("kernel {kh}x{kw} larger than padded input {h}x{w}+{pad}"),
        });
    }
    let oh = h + 2 * pad - kh + 1;
    let ow = w + 2 * pad - kw + 1;

    let mut out = ndarray::Array4::<F>::zeros((n, oc, oh, ow));
    let mut col_cache: Vec<Array2<F>> = Vec::with_capacity(n);
    for ni in 0..n {
        let cols = im2col(&x4.index_axis(ndarray::Axis(0), ni), kh, kw, pad);
        let mut y = w2.dot(&cols); // [oc, oh*ow]
        for (mut row, &b) in y.rows_mut().into_iter().zip(bv.iter()) {
            row.mapv_inplace(|v| v + b);
        }
        out.index_axis_mut(ndarray::Axis(0), ni)
            .assign(&y.into_shape_with_order((oc, oh, ow)).unwrap());
        col_cache.push(cols);
    }

    let (px, pw, pb) = (x.clone(), weight.clone(), bias.clone());
    Ok(Tensor::from_op(
        out.into_dyn(),
        vec![x.clone(), weight.clone(), bias.clone()],
        Box::new(move |g| {
            let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
            let wv = pw.value();
            let w2 = wv.view().into_dimensionality::<Ix2>().unwrap();
            let mut dw = Array2::<F>::zeros(w2.raw_dim());
            let mut db = ndarray::Array1::<F>::zeros(oc);
            let mut dx = ndarray::Array4::<F>::zeros((n, c, h, w));
            for ni in 0..n {
                let gy = g4
                    .index_axis(ndarray::Axis(0), ni)
                    .to_owned()
                    .into_shape_with_order((oc, oh * ow))
                    .unwrap();
                let cols = &col_cache[ni];
                dw = dw + gy.dot(&cols.t());
                for (bi, row) in gy.rows().into_iter().enumerate() {
                    db[bi] = db[bi] + row.sum();
                }
                let dcols = w2.t().dot(&gy);
                dx.index_axis_mut(ndarray::Axis(0), ni)
                    .assign(&col2im(&dcols, c, h, w, kh, kw, pad));
            }
            px.accumulate(dx.into_dyn().view());
            pw.accumulate(dw.into_dyn().view());
            pb.accumulate(db.into_dyn().view());
        }),
        "conv2d",
    ))
}

/// 2x2 max pooling with stride 2 on `[N,C,H,W]`; odd trailing rows and
/// columns are dropped.
pub fn maxpool2<F: Real>(x: &Tensor<F>) -> Result<Tensor<F>> {
    let xv = x.value();
    let x4 = xv
        .view()
        .into_dimensionality::<Ix4>()
        .map_err(|_| NnError::ShapeMismatch {
            op: "maxpool2",
            details: format!("input must be NCHW, got {:?}", xv.shape()),
        })?;
    let (n, c, h, w) = x4.dim();
    let (oh, ow) = (h / 2, w / 2);
    if oh == 0 || ow == 0 {
        return Err(NnError::ShapeMismatch {
            op: "maxpool2",
            details: format!("spatial dims {h}x{w} too small to pool"),
        });
    }
    let mut out = ndarray::Array4::<F>::zeros((n, c, oh, ow));
    // argmax offsets (di, dj) within each 2x2 window, for the backward scatter
    let mut argmax = vec![0u8; n * c * oh * ow];
    let mut flat = 0usize;
    for ni in 0..n {
        for ci in 0..c {
            for oi in 0..oh {
                for oj in 0..ow {
                    let mut best = F::neg_infinity();
                    let mut best_off = 0u8;
                    for di in 0..2 {
                        for dj in 0..2 {
                            let v = x4[(ni, ci, 2 * oi + di, 2 * oj + dj)];
                            if v > best {
                                best = v;
                                best_off = (di * 2 + dj) as u8;
                            }
                        }
                    }
                    out[(ni, ci, oi, oj)] = best;
                    argmax[flat] = best_off;
                    flat += 1;
                }
            }
        }
    }
    let p = x.clone();
    Ok(Tensor::from_op(
        out.into_dyn(),
        vec![x.clone()],
        Box::new(move |g| {
            let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
            let mut dx = ndarray::Array4::<F>::zeros((n, c, h, w));
            let mut flat = 0usize;
            for ni in 0..n {
                for ci in 0..c {
                    for oi in 0..oh {
                        for oj in 0..ow {
                            let off = argmax[flat] as usize;
                            let (di, dj) = (off / 2, off % 2);
                            dx[(ni, ci, 2 * oi + di, 2 * oj + dj)] = g4[(ni, ci, oi, oj)];
                            flat += 1;
                        }
                    }
                }
            }
            p.accumulate(dx.into_dyn().view());
        }),
        "maxpool2",
    ))
}

/// Reference sliding-window convolution used by tests to validate the
/// im2col implementation. Same contract as [`conv2d`], forward only.
pub fn conv2d_reference<F: Real>(
    x: &ArrayD<F>,
    weight: &ArrayD<F>,
    bias: &ArrayD<F>,
    kh: usize,
    kw: usize,
    pad: usize,
) -> ArrayD<F> {
    let x4 = x.view().into_dimensionality::<Ix4>().unwrap();
    let w2 = weight.view().into_dimensionality::<Ix2>().unwrap();
    let (n, c, h, w) = x4.dim();
    let oc = w2.nrows();
    let oh = h + 2 * pad - kh + 1;
    let ow = w + 2 * pad - kw + 1;
    let mut out = ndarray::Array4::<F>::zeros((n, oc, oh, ow));
    for ni in 0..n {
        for co in 0..oc {
            for oi in 0..oh {
                for oj in 0..ow {
                    let mut acc = bias[IxDyn(&[co])];
                    for ci in 0..c {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let ii = (oi + ki).wrapping_sub(pad);
                                let jj = (oj + kj).wrapping_sub(pad);
                                if ii < h && jj < w {
                                    acc = acc
                                        + x4[(ni, ci, ii, jj)]
                                            * w2[(co, (ci * kh + ki) * kw + kj)];
                                }
                            }
                        }
                    }
                    out[(ni, co, oi, oj)] = acc;
                }
            }
        }
    }
    out.into_dyn()
}
