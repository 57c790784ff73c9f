//! Multi-head scaled dot-product self-attention over `[B,T,D]` token
//! batches, fused (projections included) into a single graph node with a
//! hand-derived backward pass. Items attend only within themselves.

use ndarray::{s, Array2, Array3, Array4, ArrayD, Ix3};

use crate::real::Real;
use crate::tensor::Tensor;
use crate::{NnError, Result};

/// Q/K/V/O projection parameters; all weights `[D,D]`, biases `[D]`.
#[derive(Clone)]
pub struct AttentionParams<F: Real> {
    pub wq: Tensor<F>,
    pub bq: Tensor<F>,
    pub wk: Tensor<F>,
    pub bk: Tensor<F>,
    pub wv: Tensor<F>,
    pub bv: Tensor<F>,
    pub wo: Tensor<F>,
    pub bo: Tensor<F>,
}

struct ForwardCache<F: Real> {
    x: Array3<F>,
    q: Array3<F>,
    k: Array3<F>,
    v: Array3<F>,
    attn: Array4<F>, // [B, heads, T, T]
    o: Array3<F>,    // pre-output-projection head concat
}

fn project<F: Real>(x: &Array2<F>, w: &Array2<F>, b: &ArrayD<F>) -> Array2<F> {
    let mut y = x.dot(w);
    for (mut row, _) in y.rows_mut().into_iter().zip(0..) {
        for (v, bv) in row.iter_mut().zip(b.iter()) {
            *v = *v + *bv;
        }
    }
    y
}

fn forward<F: Real>(
    x: &Array3<F>,
    p: &AttentionParams<F>,
    heads: usize,
) -> Result<ForwardCache<F>> {
    let (b, t, d) = x.dim();
    if d % heads != 0 {
        return Err(NnError::HeadDivisibility { dim: d, heads });
    }
    let dh = d / heads;
    let scale = F::from_f64(1.0 / (dh as f64).sqrt());
    let wq = p.wq.value().into_dimensionality::<ndarray::Ix2>().unwrap();
    let wk = p.wk.value().into_dimensionality::<ndarray::Ix2>().unwrap();
    let wv = p.wv.value().into_dimensionality::<ndarray::Ix2>().unwrap();
    let (bq, bk, bv) = (p.bq.value(), p.bk.value(), p.bv.value());

    let mut q = Array3::<F>::zeros((b, t, d));
    let mut k = Array3::<F>::zeros((b, t, d));
    let mut v = Array3::<F>::zeros((b, t, d));
    let mut attn = Array4::<F>::zeros((b, heads, t, t));
    let mut o = Array3::<F>::zeros((b, t, d));

    for bi in 0..b {
        let xb = x.index_axis(ndarray::Axis(0), bi).to_owned();
        let qb = project(&xb, &wq, &bq);
        let kb = project(&xb, &wk, &bk);
        let vb = project(&xb, &wv, &bv);
        for hi in 0..heads {
            let cols = s![.., hi * dh..(hi + 1) * dh];
            let qh = qb.slice(cols);
            let kh = kb.slice(cols);
            let vh = vb.slice(cols);
            let mut scores = qh.dot(&kh.t());
            scores.mapv_inplace(|s| s * scale);
            // softmax rows
            for mut row in scores.rows_mut() {
                let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
                row.mapv_inplace(|s| (s - max).exp());
                let sum = row.sum();
                row.mapv_inplace(|s| s / sum);
            }
            let oh = scores.dot(&vh);
            o.slice_mut(s![bi, .., hi * dh..(hi + 1) * dh]).assign(&oh);
            attn.slice_mut(s![bi, hi, .., ..]).assign(&scores);
        }
        q.index_axis_mut(ndarray::Axis(0), bi).assign(&qb);
        k.index_axis_mut(ndarray::Axis(0), bi).assign(&kb);
        v.index_axis_mut(ndarray::Axis(0), bi).assign(&vb);
    }
    Ok(ForwardCache {
        x: x.clone(),
        q,
        k,
        v,
        attn,
        o,
    })
}

/// Attention probabilities `[B, heads, T, T]` for inspection; rows sum to 1.
pub fn attention_weights<F: Real>(
    x: &Tensor<F>,
    params: &AttentionParams<F>,
    heads: usize,
) -> Result<Array4<F>> {
    let xv = x.value().into_dimensionality::<Ix3>().map_err(|_| NnError::ShapeMismatch {
        op: "attention",
        details: "input must be [B,T,D]".into(),
    })?;
    Ok(forward(&xv, params, heads)?.attn)
}

/// Self-attention with output projection: `[B,T,D] -> [B,T,D]`.
pub fn multi_head_attention<F: Real>(
    x: &Tensor<F>,
    params: &AttentionParams<F>,
    heads: usize,
) -> Result<Tensor<F>> {
    let xv = x.value().into_dimensionality::<Ix3>().map_err(|_| NnError::ShapeMismatch {
        op: "attention",
        details: format!("input must be [B,T,D], got {:?}", x.shape()),
    })?;
    let (b, t, d) = xv.dim();
    let for_shape = |w: &Tensor<F>, name: &'static str| -> Result<()> {
        if w.shape() != [d, d] {
            return Err(NnError::ShapeMismatch {
                op: "attention",
                details: format!("{name} must be [{d},{d}], got {:?}", w.shape()),
            });
        }
        Ok(())
    };
    for_shape(&params.wq, "wq")?;
    for_shape(&params.wk, "wk")?;
    for_shape(&params.wv, "wv")?;
    for_shape(&params.wo, "wo")?;
    let cache = forward(&xv, params, heads)?;
    let dh = d / heads;
    let scale = F::from_f64(1.0 / (dh as f64).sqrt());

    let wo = params.wo.value().into_dimensionality::<ndarray::Ix2>().unwrap();
    let bo = params.bo.value();
    let mut y = Array3::<F>::zeros((b, t, d));
    for bi in 0..b {
        let ob = cache.o.index_axis(ndarray::Axis(0), bi).to_owned();
        y.index_axis_mut(ndarray::Axis(0), bi)
            .assign(&project(&ob, &wo, &bo));
    }

    let px = x.clone();
    let (pwq, pbq) = (params.wq.clone(), params.bq.clone());
    let (pwk, pbk) = (params.wk.clone(), params.bk.clone());
    let (pwv, pbv) = (params.wv.clone(), params.bv.clone());
    let (pwo, pbo) = (params.wo.clone(), params.bo.clone());
    let parents = vec![
        x.clone(),
        params.wq.clone(),
        params.bq.clone(),
        params.wk.clone(),
        params.bk.clone(),
        params.wv.clone(),
        params.bv.clone(),
        params.wo.clone(),
        params.bo.clone(),
    ];

    Ok(Tensor::from_op(
        y.into_dyn(),
        parents,
        Box::new(move |g| {
            let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
            let wq = pwq.value().into_dimensionality::<ndarray::Ix2>().unwrap();
            let wk = pwk.value().into_dimensionality::<ndarray::Ix2>().unwrap();
            let wv = pwv.value().into_dimensionality::<ndarray::Ix2>().unwrap();
            let wo = pwo.value().into_dimensionality::<ndarray::Ix2>().unwrap();

            let mut dx = Array3::<F>::zeros((b, t, d));
            let mut dwq = Array2::<F>::zeros((d, d));
            let mut dwk = Array2::<F>::zeros((d, d));
            let mut dwv = Array2::<F>::zeros((d, d));
            let mut dwo = Array2::<F>::zeros((d, d));
            let mut dbq = ndarray::Array1::<F>::zeros(d);
            let mut dbk = ndarray::Array1::<F>::zeros(d);
            let mut dbv = ndarray::Array1::<F>::zeros(d);
            let mut dbo = ndarray::Array1::<F>::zeros(d);

            for bi in 0..b {
                let gy = g3.index_axis(ndarray::Axis(0), bi).to_owned();
                let ob = cache.o.index_axis(ndarray::Axis(0), bi);
                // output projection
                dwo = dwo + ob.t().dot(&gy);
                for row in gy.rows() {
                    for (acc, &v) in dbo.iter_mut().zip(row.iter()) {
                        *acc = *acc + v;
                    }
                }
                let do_ = gy.dot(&wo.t()); // [T, D]

                let qb = cache.q.index_axis(ndarray::Axis(0), bi);
                let kb = cache.k.index_axis(ndarray::Axis(0), bi);
                let vb = cache.v.index_axis(ndarray::Axis(0), bi);
                let mut dq = Array2::<F>::zeros((t, d));
                let mut dk = Array2::<F>::zeros((t, d));
                let mut dv = Array2::<F>::zeros((t, d));

                for hi in 0..heads {
                    let cols = s![.., hi * dh..(hi + 1) * dh];
                    let qh = qb.slice(cols);
                    let kh = kb.slice(cols);
                    let vh = vb.slice(cols);
                    let a = cache.attn.slice(s![bi, hi, .., ..]);
                    let doh = do_.slice(cols);

                    let da = doh.dot(&vh.t()); // [T,T]
                    let dvh = a.t().dot(&doh);
                    // softmax backward per row
                    let mut ds = Array2::<F>::zeros((t, t));
                    for ti in 0..t {
                        let arow = a.row(ti);
                        let darow = da.row(ti);
                        let dot = arow
                            .iter()
                            .zip(darow.iter())
                            .fold(F::zero(), |acc, (&av, &dv)| acc + av * dv);
                        for tj in 0..t {
                            ds[(ti, tj)] = arow[tj] * (darow[tj] - dot);
                        }
                    }
                    ds.mapv_inplace(|v| v * scale);
                    let dqh = ds.dot(&kh);
                    let dkh = ds.t().dot(&qh);
                    dq.slice_mut(cols).assign(&dqh);
                    dk.slice_mut(cols).assign(&dkh);
                    dv.slice_mut(cols).assign(&dvh);
                }

                let xb = cache.x.index_axis(ndarray::Axis(0), bi);
                dwq = dwq + xb.t().dot(&dq);
                dwk = dwk + xb.t().dot(&dk);
                dwv = dwv + xb.t().dot(&dv);
                for ti in 0..t {
                    for di in 0..d {
                        dbq[di] = dbq[di] + dq[(ti, di)];
                        dbk[di] = dbk[di] + dk[(ti, di)];
                        dbv[di] = dbv[di] + dv[(ti, di)];
                    }
                }
                let dxb = dq.dot(&wq.t()) + dk.dot(&wk.t()) + dv.dot(&wv.t());
                dx.index_axis_mut(ndarray::Axis(0), bi).assign(&dxb);
            }

            px.accumulate(dx.into_dyn().view());
            pwq.accumulate(dwq.into_dyn().view());
            pbq.accumulate(dbq.into_dyn().view());
            pwk.accumulate(dwk.into_dyn().view());
            pbk.accumulate(dbk.into_dyn().view());
            pwv.accumulate(dwv.into_dyn().view());
            pbv.accumulate(dbv.into_dyn().view());
            pwo.accumulate(dwo.into_dyn().view());
            pbo.accumulate(dbo.into_dyn().view());
        }),
        "attention",
    ))
}
