//! Differentiable operations on [`Tensor`].
//!
//! Forward passes produce owned, standard-layout arrays; backward closures
//! re-borrow parent values lazily (parameter values do not change between a
//! forward pass and its backward pass) and capture output values only where
//! the derivative needs them (sigmoid, tanh, softmax).
//!
//! Shape errors are programmer errors and panic; fallible validation belongs
//! to the layers above.

use ndarray::linalg::general_mat_mul;
use ndarray::{concatenate, Array1, Array2, Array3, ArrayD, Axis, CowArray, Ix2, Ix3, IxDyn, Slice, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::scalar::Scalar;

fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let n = a.len().max(b.len());
    let dim = |s: &[usize], i: usize| {
        if i + s.len() < n {
            1
        } else {
            s[i + s.len() - n]
        }
    };
    (0..n)
        .map(|i| match (dim(a, i), dim(b, i)) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => panic!("cannot broadcast {a:?} with {b:?}"),
        })
        .collect()
}

/// Reduces a gradient of broadcast shape back to `target` by summing the
/// expanded axes.
fn unbroadcast<F: Scalar>(g: &ArrayD<F>, target: &[usize]) -> ArrayD<F> {
    let mut out = g.clone();
    while out.ndim() > target.len() {
        out = out.sum_axis(Axis(0));
    }
    for (i, &t) in target.iter().enumerate() {
        if t == 1 && out.shape()[i] != 1 {
            out = out.sum_axis(Axis(i)).insert_axis(Axis(i));
        }
    }
    out
}

/// Reinterprets as 2-d, copying only when the layout forbids a view.
fn view2<F: Scalar>(a: &ArrayD<F>, m: usize, k: usize) -> CowArray<'_, F, Ix2> {
    match a.view().into_shape_with_order((m, k)) {
        Ok(v) => CowArray::from(v),
        Err(_) => {
            CowArray::from(Array2::from_shape_vec((m, k), a.iter().copied().collect()).unwrap())
        }
    }
}

fn view3<F: Scalar>(a: &ArrayD<F>, b: usize, m: usize, k: usize) -> CowArray<'_, F, Ix3> {
    match a.view().into_shape_with_order((b, m, k)) {
        Ok(v) => CowArray::from(v),
        Err(_) => CowArray::from(
            Array3::from_shape_vec((b, m, k), a.iter().copied().collect()).unwrap(),
        ),
    }
}

fn reshaped<F: Scalar>(a: &ArrayD<F>, shape: &[usize]) -> ArrayD<F> {
    match a.view().into_shape_with_order(IxDyn(shape)) {
        Ok(v) => v.to_owned(),
        Err(_) => ArrayD::from_shape_vec(IxDyn(shape), a.iter().copied().collect()).unwrap(),
    }
}

fn assert_numel(from: &[usize], to: &[usize]) {
    let a: usize = from.iter().product();
    let b: usize = to.iter().product();
    assert_eq!(a, b, "reshape {from:?} -> {to:?} changes element count");
}

/// Leading dimensions and the final `tail` dimensions of a shape.
fn split_tail(shape: &[usize], tail: usize) -> (usize, Vec<usize>) {
    assert!(shape.len() >= tail, "tensor of shape {shape:?} needs {tail} trailing axes");
    let lead: usize = shape[..shape.len() - tail].iter().product();
    (lead, shape[shape.len() - tail..].to_vec())
}

impl<F: Scalar> Tensor<F> {
    pub fn add(&self, rhs: &Tensor<F>) -> Tensor<F> {
        let value = {
            let a = self.value();
            let b = rhs.value();
            let sh = broadcast_shape(a.shape(), b.shape());
            let av = a.broadcast(IxDyn(&sh)).unwrap();
            let bv = b.broadcast(IxDyn(&sh)).unwrap();
            &av + &bv
        };
        let (ta, tb) = (self.clone(), rhs.clone());
        let (sa, sb) = (self.shape(), rhs.shape());
        Tensor::from_op(
            value,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| {
                if ta.requires_grad() {
                    ta.accumulate(&unbroadcast(g, &sa));
                }
                if tb.requires_grad() {
                    tb.accumulate(&unbroadcast(g, &sb));
                }
            }),
        )
    }

    pub fn sub(&self, rhs: &Tensor<F>) -> Tensor<F> {
        let value = {
            let a = self.value();
            let b = rhs.value();
            let sh = broadcast_shape(a.shape(), b.shape());
            let av = a.broadcast(IxDyn(&sh)).unwrap();
            let bv = b.broadcast(IxDyn(&sh)).unwrap();
            &av - &bv
        };
        let (ta, tb) = (self.clone(), rhs.clone());
        let (sa, sb) = (self.shape(), rhs.shape());
        Tensor::from_op(
            value,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| {
                if ta.requires_grad() {
                    ta.accumulate(&unbroadcast(g, &sa));
                }
                if tb.requires_grad() {
                    let db = unbroadcast(g, &sb).mapv_into(|x| -x);
                    tb.accumulate(&db);
                }
            }),
        )
    }

    pub fn mul(&self, rhs: &Tensor<F>) -> Tensor<F> {
        let sh = broadcast_shape(&self.shape(), &rhs.shape());
        let value = {
            let a = self.value();
            let b = rhs.value();
            let av = a.broadcast(IxDyn(&sh)).unwrap();
            let bv = b.broadcast(IxDyn(&sh)).unwrap();
            &av * &bv
        };
        let (ta, tb) = (self.clone(), rhs.clone());
        let (sa, sb) = (self.shape(), rhs.shape());
        Tensor::from_op(
            value,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| {
                if ta.requires_grad() {
                    let da = {
                        let b = tb.value();
                        let bv = b.broadcast(IxDyn(&sh)).unwrap();
                        g * &bv
                    };
                    ta.accumulate(&unbroadcast(&da, &sa));
                }
                if tb.requires_grad() {
                    let db = {
                        let a = ta.value();
                        let av = a.broadcast(IxDyn(&sh)).unwrap();
                        g * &av
                    };
                    tb.accumulate(&unbroadcast(&db, &sb));
                }
            }),
        )
    }

    pub fn div(&self, rhs: &Tensor<F>) -> Tensor<F> {
        let sh = broadcast_shape(&self.shape(), &rhs.shape());
        let value = {
            let a = self.value();
            let b = rhs.value();
            let av = a.broadcast(IxDyn(&sh)).unwrap();
            let bv = b.broadcast(IxDyn(&sh)).unwrap();
            &av / &bv
        };
        let (ta, tb) = (self.clone(), rhs.clone());
        let (sa, sb) = (self.shape(), rhs.shape());
        Tensor::from_op(
            value,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| {
                if ta.requires_grad() {
                    let da = {
                        let b = tb.value();
                        let bv = b.broadcast(IxDyn(&sh)).unwrap();
                        g / &bv
                    };
                    ta.accumulate(&unbroadcast(&da, &sa));
                }
                if tb.requires_grad() {
                    let db = {
                        let a = ta.value();
                        let b = tb.value();
                        let av = a.broadcast(IxDyn(&sh)).unwrap();
                        let bv = b.broadcast(IxDyn(&sh)).unwrap();
                        let mut d = &(g * &av) / &(&bv * &bv);
                        d.mapv_inplace(|x| -x);
                        d
                    };
                    tb.accumulate(&unbroadcast(&db, &sb));
                }
            }),
        )
    }

    pub fn neg(&self) -> Tensor<F> {
        self.scale(-1.0)
    }

    pub fn scale(&self, c: f64) -> Tensor<F> {
        let c = F::of_f64(c);
        let value = self.value().mapv(|x| x * c);
        let ta = self.clone();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g| ta.accumulate(&g.mapv(|x| x * c))),
        )
    }

    pub fn add_scalar(&self, c: f64) -> Tensor<F> {
        let c = F::of_f64(c);
        let value = self.value().mapv(|x| x + c);
        let ta = self.clone();
        Tensor::from_op(value, vec![self.clone()], Box::new(move |g| ta.accumulate(g)))
    }

    /// Contracts the last axis with a 2-d weight: `[.., k] x [k, n] -> [.., n]`.
    pub fn matmul(&self, rhs: &Tensor<F>) -> Tensor<F> {
        let sa = self.shape();
        let sb = rhs.shape();
        assert_eq!(sb.len(), 2, "matmul rhs must be 2-d, got {sb:?}");
        let (m, tail) = split_tail(&sa, 1);
        let (k, n) = (sb[0], sb[1]);
        assert_eq!(tail[0], k, "matmul inner dims: {sa:?} x {sb:?}");
        let mut out_shape = sa.clone();
        *out_shape.last_mut().unwrap() = n;
        let value = {
            let x = self.value();
            let w = rhs.value();
            let y = view2(&x, m, k).dot(&view2(&w, k, n));
            reshaped(&y.into_dyn(), &out_shape)
        };
        let (ta, tb) = (self.clone(), rhs.clone());
        Tensor::from_op(
            value,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| {
                let g2 = view2(g, m, n);
                if ta.requires_grad() {
                    let dx = {
                        let w = tb.value();
                        let w2 = view2(&w, k, n);
                        g2.dot(&w2.t())
                    };
                    ta.accumulate(&reshaped(&dx.into_dyn(), &sa));
                }
                if tb.requires_grad() {
                    let dw = {
                        let x = ta.value();
                        let x2 = view2(&x, m, k);
                        x2.t().dot(&g2)
                    };
                    tb.accumulate(&dw.into_dyn());
                }
            }),
        )
    }

    /// Batched matmul: `[.., m, k] x [.., k, n] -> [.., m, n]`.
    pub fn bmm(&self, rhs: &Tensor<F>) -> Tensor<F> {
        let sa = self.shape();
        let sb = rhs.shape();
        let (ba, ta_) = split_tail(&sa, 2);
        let (bb, tb_) = split_tail(&sb, 2);
        assert_eq!(ba, bb, "bmm batch dims: {sa:?} x {sb:?}");
        assert_eq!(ta_[1], tb_[0], "bmm inner dims: {sa:?} x {sb:?}");
        let (m, k, n) = (ta_[0], ta_[1], tb_[1]);
        let mut out_shape = sa.clone();
        let len = out_shape.len();
        out_shape[len - 1] = n;
        let value = {
            let a = self.value();
            let b = rhs.value();
            let a3 = view3(&a, ba, m, k);
            let b3 = view3(&b, ba, k, n);
            let mut out = Array3::<F>::zeros((ba, m, n));
            for i in 0..ba {
                general_mat_mul(
                    F::one(),
                    &a3.index_axis(Axis(0), i),
                    &b3.index_axis(Axis(0), i),
                    F::zero(),
                    &mut out.index_axis_mut(Axis(0), i),
                );
            }
            reshaped(&out.into_dyn(), &out_shape)
        };
        let (ta, tb) = (self.clone(), rhs.clone());
        Tensor::from_op(
            value,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| {
                let g3 = view3(g, ba, m, n);
                if ta.requires_grad() {
                    let da = {
                        let b = tb.value();
                        let b3 = view3(&b, ba, k, n);
                        let mut da = Array3::<F>::zeros((ba, m, k));
                        for i in 0..ba {
                            general_mat_mul(
                                F::one(),
                                &g3.index_axis(Axis(0), i),
                                &b3.index_axis(Axis(0), i).t(),
                                F::zero(),
                                &mut da.index_axis_mut(Axis(0), i),
                            );
                        }
                        da
                    };
                    ta.accumulate(&reshaped(&da.into_dyn(), &sa));
                }
                if tb.requires_grad() {
                    let db = {
                        let a = ta.value();
                        let a3 = view3(&a, ba, m, k);
                        let mut db = Array3::<F>::zeros((ba, k, n));
                        for i in 0..ba {
                            general_mat_mul(
                                F::one(),
                                &a3.index_axis(Axis(0), i).t(),
                                &g3.index_axis(Axis(0), i),
                                F::zero(),
                                &mut db.index_axis_mut(Axis(0), i),
                            );
                        }
                        db
                    };
                    tb.accumulate(&reshaped(&db.into_dyn(), &sb));
                }
            }),
        )
    }

    /// Batched matmul with a transposed right operand:
    /// `[.., m, k] x [.., n, k] -> [.., m, n]`. Saves the explicit transpose
    /// in attention score computation.
    pub fn bmm_nt(&self, rhs: &Tensor<F>) -> Tensor<F> {
        let sa = self.shape();
        let sb = rhs.shape();
        let (ba, ta_) = split_tail(&sa, 2);
        let (bb, tb_) = split_tail(&sb, 2);
        assert_eq!(ba, bb, "bmm_nt batch dims: {sa:?} x {sb:?}");
        assert_eq!(ta_[1], tb_[1], "bmm_nt inner dims: {sa:?} x {sb:?}");
        let (m, k, n) = (ta_[0], ta_[1], tb_[0]);
        let mut out_shape = sa.clone();
        let len = out_shape.len();
        out_shape[len - 2] = m;
        out_shape[len - 1] = n;
        let value = {
            let a = self.value();
            let b = rhs.value();
            let a3 = view3(&a, ba, m, k);
            let b3 = view3(&b, ba, n, k);
            let mut out = Array3::<F>::zeros((ba, m, n));
            for i in 0..ba {
                general_mat_mul(
                    F::one(),
                    &a3.index_axis(Axis(0), i),
                    &b3.index_axis(Axis(0), i).t(),
                    F::zero(),
                    &mut out.index_axis_mut(Axis(0), i),
                );
            }
            reshaped(&out.into_dyn(), &out_shape)
        };
        let (ta, tb) = (self.clone(), rhs.clone());
        Tensor::from_op(
            value,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| {
                let g3 = view3(g, ba, m, n);
                if ta.requires_grad() {
                    let da = {
                        let b = tb.value();
                        let b3 = view3(&b, ba, n, k);
                        let mut da = Array3::<F>::zeros((ba, m, k));
                        for i in 0..ba {
                            general_mat_mul(
                                F::one(),
                                &g3.index_axis(Axis(0), i),
                                &b3.index_axis(Axis(0), i),
                                F::zero(),
                                &mut da.index_axis_mut(Axis(0), i),
                            );
                        }
                        da
                    };
                    ta.accumulate(&reshaped(&da.into_dyn(), &sa));
                }
                if tb.requires_grad() {
                    let db = {
                        let a = ta.value();
                        let a3 = view3(&a, ba, m, k);
                        let mut db = Array3::<F>::zeros((ba, n, k));
                        for i in 0..ba {
                            general_mat_mul(
                                F::one(),
                                &g3.index_axis(Axis(0), i).t(),
                                &a3.index_axis(Axis(0), i),
                                F::zero(),
                                &mut db.index_axis_mut(Axis(0), i),
                            );
                        }
                        db
                    };
                    tb.accumulate(&reshaped(&db.into_dyn(), &sb));
                }
            }),
        )
    }

    /// Left-multiplies the two trailing-axes matrix by a constant:
    /// `mat [r, n] x self [.., n, d] -> [.., r, d]`. The matrix gets no
    /// gradient; used for fixed graph propagation.
    pub fn left_mul_const(&self, mat: &Array2<F>) -> Tensor<F> {
        let sa = self.shape();
        let (b, tail) = split_tail(&sa, 2);
        let (n, d) = (tail[0], tail[1]);
        assert_eq!(mat.ncols(), n, "left_mul_const dims: {:?} x {sa:?}", mat.shape());
        let r = mat.nrows();
        let mut out_shape = sa.clone();
        let len = out_shape.len();
        out_shape[len - 2] = r;
        let value = {
            let x = self.value();
            let x3 = view3(&x, b, n, d);
            let mut out = Array3::<F>::zeros((b, r, d));
            for i in 0..b {
                general_mat_mul(
                    F::one(),
                    &mat.view(),
                    &x3.index_axis(Axis(0), i),
                    F::zero(),
                    &mut out.index_axis_mut(Axis(0), i),
                );
            }
            reshaped(&out.into_dyn(), &out_shape)
        };
        let ta = self.clone();
        let mat_t = mat.t().to_owned();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g| {
                let g3 = view3(g, b, r, d);
                let mut dx = Array3::<F>::zeros((b, n, d));
                for i in 0..b {
                    general_mat_mul(
                        F::one(),
                        &mat_t.view(),
                        &g3.index_axis(Axis(0), i),
                        F::zero(),
                        &mut dx.index_axis_mut(Axis(0), i),
                    );
                }
                ta.accumulate(&reshaped(&dx.into_dyn(), &sa));
            }),
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor<F> {
        let sa = self.shape();
        assert_numel(&sa, shape);
        let value = reshaped(&self.value(), shape);
        let ta = self.clone();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g| ta.accumulate(&reshaped(g, &sa))),
        )
    }

    pub fn permute(&self, axes: &[usize]) -> Tensor<F> {
        let sa = self.shape();
        assert_eq!(axes.len(), sa.len(), "permute axes {axes:?} for shape {sa:?}");
        let value = self
            .value()
            .view()
            .permuted_axes(axes)
            .as_standard_layout()
            .to_owned();
        let mut inverse = vec![0usize; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        let ta = self.clone();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g| {
                let dg = g
                    .view()
                    .permuted_axes(inverse.as_slice())
                    .as_standard_layout()
                    .to_owned();
                ta.accumulate(&dg);
            }),
        )
    }

    pub fn relu(&self) -> Tensor<F> {
        let value = self.value().mapv(|x| x.max(F::zero()));
        let ta = self.clone();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g| {
                let dx = {
                    let x = ta.value();
                    Zip::from(g)
                        .and(&*x)
                        .map_collect(|&g, &x| if x > F::zero() { g } else { F::zero() })
                };
                ta.accumulate(&dx);
            }),
        )
    }

    pub fn sigmoid(&self) -> Tensor<F> {
        let value = self.value().mapv(|x| F::one() / (F::one() + (-x).exp()));
        let y = value.clone();
        let ta = self.clone();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g| {
                let dx = Zip::from(g).and(&y).map_collect(|&g, &y| g * y * (F::one() - y));
                ta.accumulate(&dx);
            }),
        )
    }

    pub fn tanh(&self) -> Tensor<F> {
        let value = self.value().mapv(|x| x.tanh());
        let y = value.clone();
        let ta = self.clone();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g| {
                let dx = Zip::from(g).and(&y).map_collect(|&g, &y| g * (F::one() - y * y));
                ta.accumulate(&dx);
            }),
        )
    }

    /// Elementwise power with a constant exponent.
    pub fn powf_const(&self, p: f64) -> Tensor<F> {
        let p = F::of_f64(p);
        let value = self.value().mapv(|x| x.powf(p));
        let ta = self.clone();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g| {
                let dx = {
                    let x = ta.value();
                    Zip::from(g)
                        .and(&*x)
                        .map_collect(|&g, &x| g * p * x.powf(p - F::one()))
                };
                ta.accumulate(&dx);
            }),
        )
    }

    /// `ln(max(x, floor))`; zero gradient where the clamp is active. Keeps
    /// log-based losses finite on probabilities that underflow to zero.
    pub fn ln_clamped(&self, floor: f64) -> Tensor<F> {
        let floor = F::of_f64(floor);
        let value = self.value().mapv(|x| x.max(floor).ln());
        let ta = self.clone();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g| {
                let dx = {
                    let x = ta.value();
                    Zip::from(g)
                        .and(&*x)
                        .map_collect(|&g, &x| if x > floor { g / x } else { F::zero() })
                };
                ta.accumulate(&dx);
            }),
        )
    }

    /// Softmax over the last axis, numerically stabilized by the row max.
    pub fn softmax_last(&self) -> Tensor<F> {
        let last = Axis(self.shape().len() - 1);
        let mut value = self.array();
        for mut lane in value.lanes_mut(last) {
            let mx = lane.fold(F::neg_infinity(), |m, &v| m.max(v));
            lane.mapv_inplace(|v| (v - mx).exp());
            let s = lane.sum();
            lane.mapv_inplace(|v| v / s);
        }
        let y = value.clone();
        let ta = self.clone();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = g.clone();
                for (mut dl, yl) in dx.lanes_mut(last).into_iter().zip(y.lanes(last)) {
                    let dot = dl
                        .iter()
                        .zip(yl.iter())
                        .map(|(&a, &b)| a * b)
                        .fold(F::zero(), |s, v| s + v);
                    Zip::from(&mut dl).and(&yl).for_each(|d, &y| *d = y * (*d - dot));
                }
                ta.accumulate(&dx);
            }),
        )
    }

    /// Layer normalization over the last axis with learnable gain and bias.
    pub fn layer_norm(&self, gamma: &Tensor<F>, beta: &Tensor<F>, eps: f64) -> Tensor<F> {
        let sa = self.shape();
        let d = *sa.last().expect("layer_norm needs at least 1 axis");
        assert_eq!(gamma.shape(), vec![d], "layer_norm gain shape");
        assert_eq!(beta.shape(), vec![d], "layer_norm bias shape");
        let last = Axis(sa.len() - 1);
        let eps = F::of_f64(eps);

        let mut xhat = self.array();
        let mut inv_std = Vec::with_capacity(xhat.len() / d);
        for mut lane in xhat.lanes_mut(last) {
            let mean = lane.sum() / F::of_usize(d);
            let var = lane
                .iter()
                .map(|&v| (v - mean) * (v - mean))
                .fold(F::zero(), |s, v| s + v)
                / F::of_usize(d);
            let inv = F::one() / (var + eps).sqrt();
            inv_std.push(inv);
            lane.mapv_inplace(|v| (v - mean) * inv);
        }
        let value = {
            let gv = gamma.value();
            let bv = beta.value();
            let g1 = gv.view().into_dimensionality::<ndarray::Ix1>().unwrap();
            let b1 = bv.view().into_dimensionality::<ndarray::Ix1>().unwrap();
            let mut out = xhat.clone();
            for mut lane in out.lanes_mut(last) {
                Zip::from(&mut lane)
                    .and(&g1)
                    .and(&b1)
                    .for_each(|o, &g, &b| *o = *o * g + b);
            }
            out
        };
        let (tx, tg, tb) = (self.clone(), gamma.clone(), beta.clone());
        Tensor::from_op(
            value,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g| {
                let mut dgamma = Array1::<F>::zeros(d);
                let mut dbeta = Array1::<F>::zeros(d);
                let mut dx = g.clone();
                let gv = tg.value();
                let gv1 = gv.view().into_dimensionality::<ndarray::Ix1>().unwrap();
                for ((mut gl, xl), &inv) in dx
                    .lanes_mut(last)
                    .into_iter()
                    .zip(xhat.lanes(last))
                    .zip(inv_std.iter())
                {
                    let mut m1 = F::zero();
                    let mut m2 = F::zero();
                    for i in 0..d {
                        dgamma[i] += gl[i] * xl[i];
                        dbeta[i] += gl[i];
                        let dxhat = gl[i] * gv1[i];
                        m1 += dxhat;
                        m2 += dxhat * xl[i];
                    }
                    m1 = m1 / F::of_usize(d);
                    m2 = m2 / F::of_usize(d);
                    for i in 0..d {
                        let dxhat = gl[i] * gv1[i];
                        gl[i] = inv * (dxhat - m1 - xl[i] * m2);
                    }
                }
                drop(gv);
                tx.accumulate(&dx);
                if tg.requires_grad() {
                    tg.accumulate(&dgamma.into_dyn());
                }
                if tb.requires_grad() {
                    tb.accumulate(&dbeta.into_dyn());
                }
            }),
        )
    }

    pub fn sum_all(&self) -> Tensor<F> {
        let sa = self.shape();
        let value = ArrayD::from_elem(IxDyn(&[]), self.value().sum());
        let ta = self.clone();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g| {
                let gs = *g.iter().next().unwrap();
                ta.accumulate(&ArrayD::from_elem(IxDyn(&sa), gs));
            }),
        )
    }

    pub fn mean_all(&self) -> Tensor<F> {
        let n = self.numel();
        self.sum_all().scale(1.0 / n as f64)
    }

    /// Sum over one axis, keeping it with size one.
    pub fn sum_axis_keep(&self, axis: usize) -> Tensor<F> {
        let sa = self.shape();
        let value = self
            .value()
            .sum_axis(Axis(axis))
            .insert_axis(Axis(axis));
        let ta = self.clone();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g| {
                let dg = g.broadcast(IxDyn(&sa)).unwrap().to_owned();
                ta.accumulate(&dg);
            }),
        )
    }

    pub fn concat(axis: usize, parts: &[Tensor<F>]) -> Tensor<F> {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let value = {
            let borrowed: Vec<_> = parts.iter().map(|p| p.value()).collect();
            let views: Vec<_> = borrowed.iter().map(|b| b.view()).collect();
            concatenate(Axis(axis), &views).expect("concat shape mismatch")
        };
        let owned: Vec<Tensor<F>> = parts.to_vec();
        let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        Tensor::from_op(
            value,
            owned.clone(),
            Box::new(move |g| {
                let mut off = 0;
                for (t, &len) in owned.iter().zip(lens.iter()) {
                    if t.requires_grad() {
                        let piece = g
                            .slice_axis(Axis(axis), Slice::from(off..off + len))
                            .to_owned();
                        t.accumulate(&piece);
                    }
                    off += len;
                }
            }),
        )
    }

    /// Extracts sliding windows from the last axis:
    /// `[.., len] -> [.., count, size]` with `count = (len - size) / stride + 1`.
    /// Trailing steps that do not fill a window are dropped.
    pub fn unfold_last(&self, size: usize, stride: usize) -> Tensor<F> {
        let sa = self.shape();
        let (rows, tail) = split_tail(&sa, 1);
        let len = tail[0];
        assert!(size <= len, "window size {size} exceeds axis length {len}");
        assert!(stride > 0, "stride must be positive");
        let count = (len - size) / stride + 1;
        let mut out_shape = sa[..sa.len() - 1].to_vec();
        out_shape.extend([count, size]);
        let value = {
            let x = self.value();
            let x2 = view2(&x, rows, len);
            let mut out = Array3::<F>::zeros((rows, count, size));
            for r in 0..rows {
                for c in 0..count {
                    let start = c * stride;
                    out.slice_mut(ndarray::s![r, c, ..])
                        .assign(&x2.slice(ndarray::s![r, start..start + size]));
                }
            }
            reshaped(&out.into_dyn(), &out_shape)
        };
        let ta = self.clone();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g| {
                let g3 = view3(g, rows, count, size);
                let mut dx = Array2::<F>::zeros((rows, len));
                for r in 0..rows {
                    for c in 0..count {
                        let start = c * stride;
                        let mut target = dx.slice_mut(ndarray::s![r, start..start + size]);
                        target += &g3.slice(ndarray::s![r, c, ..]);
                    }
                }
                ta.accumulate(&reshaped(&dx.into_dyn(), &sa));
            }),
        )
    }

    /// Inverted dropout: zeroes with probability `p` and rescales survivors
    /// by `1/(1-p)`. Identity when `p == 0`.
    pub fn dropout(&self, p: f64, rng: &mut ChaCha8Rng) -> Tensor<F> {
        if p <= 0.0 {
            return self.clone();
        }
        assert!(p < 1.0, "dropout probability must be below 1, got {p}");
        let keep = F::of_f64(1.0 / (1.0 - p));
        let mask = self
            .value()
            .mapv(|_| if rng.random::<f64>() >= p { keep } else { F::zero() });
        let value = &*self.value() * &mask;
        let ta = self.clone();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g| ta.accumulate(&(g * &mask))),
        )
    }

    /// Squared Euclidean distances from row vectors to center vectors:
    /// `self [.., n_rows, d] x centers [n_centers, d] -> [.., n_rows, n_centers]`.
    pub fn pairwise_sqdist(&self, centers: &Tensor<F>) -> Tensor<F> {
        let sa = self.shape();
        let sc = centers.shape();
        assert_eq!(sc.len(), 2, "centers must be 2-d, got {sc:?}");
        let (b, tail) = split_tail(&sa, 2);
        let (rows, d) = (tail[0], tail[1]);
        assert_eq!(sc[1], d, "pairwise_sqdist dims: {sa:?} x {sc:?}");
        let k = sc[0];
        let mut out_shape = sa.clone();
        let len = out_shape.len();
        out_shape[len - 1] = k;
        let value = {
            let h = self.value();
            let c = centers.value();
            let h3 = view3(&h, b, rows, d);
            let c2 = view2(&c, k, d);
            let mut out = Array3::<F>::zeros((b, rows, k));
            for bi in 0..b {
                for i in 0..rows {
                    for j in 0..k {
                        let mut s = F::zero();
                        for t in 0..d {
                            let diff = h3[[bi, i, t]] - c2[[j, t]];
                            s += diff * diff;
                        }
                        out[[bi, i, j]] = s;
                    }
                }
            }
            reshaped(&out.into_dyn(), &out_shape)
        };
        let (th, tc) = (self.clone(), centers.clone());
        Tensor::from_op(
            value,
            vec![self.clone(), centers.clone()],
            Box::new(move |g| {
                let g3 = view3(g, b, rows, k);
                let h = th.value();
                let c = tc.value();
                let h3 = view3(&h, b, rows, d);
                let c2 = view2(&c, k, d);
                let two = F::of_f64(2.0);
                let mut dh = Array3::<F>::zeros((b, rows, d));
                let mut dc = Array2::<F>::zeros((k, d));
                for bi in 0..b {
                    for i in 0..rows {
                        for j in 0..k {
                            let gij = g3[[bi, i, j]];
                            if gij == F::zero() {
                                continue;
                            }
                            for t in 0..d {
                                let diff = h3[[bi, i, t]] - c2[[j, t]];
                                dh[[bi, i, t]] += two * gij * diff;
                                dc[[j, t]] -= two * gij * diff;
                            }
                        }
                    }
                }
                drop(h);
                drop(c);
                if th.requires_grad() {
                    th.accumulate(&reshaped(&dh.into_dyn(), &sa));
                }
                if tc.requires_grad() {
                    tc.accumulate(&dc.into_dyn());
                }
            }),
        )
    }
}
