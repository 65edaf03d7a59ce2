//! Primitive differentiable ops.
//!
//! Every backward closure is written in terms of these same ops, so running
//! backward with recording enabled yields a differentiable graph (needed for
//! second-order gradients). Nonlinear vjps recompute cheap elementwise
//! functions from their saved inputs instead of capturing the op output;
//! capturing the output inside its own vjp closure would create an `Rc`
//! cycle and leak the graph.

use super::{Scalar, Tensor};

fn assert_same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, op: &str) {
    assert_eq!(
        a.shape(),
        b.shape(),
        "{op}: shape mismatch {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
}

fn assert_4d<T: Scalar>(t: &Tensor<T>, op: &str) -> (usize, usize, usize, usize) {
    assert_eq!(
        t.shape().len(),
        4,
        "{op}: expected a 4-d [N,C,H,W] tensor, got shape {:?}",
        t.shape()
    );
    let s = t.shape();
    (s[0], s[1], s[2], s[3])
}

impl<T: Scalar> Tensor<T> {
    // ----- elementwise binary -----

    pub fn add(&self, other: &Tensor<T>) -> Tensor<T> {
        assert_same_shape(self, other, "add");
        let data = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(&a, &b)| a + b)
            .collect();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            move |g, wanted| {
                vec![
                    wanted[0].then(|| g.clone()),
                    wanted[1].then(|| g.clone()),
                ]
            },
        )
    }

    pub fn sub(&self, other: &Tensor<T>) -> Tensor<T> {
        assert_same_shape(self, other, "sub");
        let data = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(&a, &b)| a - b)
            .collect();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            move |g, wanted| {
                vec![
                    wanted[0].then(|| g.clone()),
                    wanted[1].then(|| g.neg()),
                ]
            },
        )
    }

    pub fn mul(&self, other: &Tensor<T>) -> Tensor<T> {
        assert_same_shape(self, other, "mul");
        let data = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(&a, &b)| a * b)
            .collect();
        let a = self.clone();
        let b = other.clone();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            move |g, wanted| {
                vec![
                    wanted[0].then(|| g.mul(&b)),
                    wanted[1].then(|| g.mul(&a)),
                ]
            },
        )
    }

    pub fn div(&self, other: &Tensor<T>) -> Tensor<T> {
        assert_same_shape(self, other, "div");
        let data = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(&a, &b)| a / b)
            .collect();
        let a = self.clone();
        let b = other.clone();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            move |g, wanted| {
                vec![
                    wanted[0].then(|| g.div(&b)),
                    wanted[1].then(|| g.mul(&a).div(&b.mul(&b)).neg()),
                ]
            },
        )
    }

    // ----- elementwise unary -----

    pub fn neg(&self) -> Tensor<T> {
        let data = self.data().iter().map(|&a| -a).collect();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            move |g, wanted| vec![wanted[0].then(|| g.neg())],
        )
    }

    pub fn scale(&self, c: T) -> Tensor<T> {
        let data = self.data().iter().map(|&a| a * c).collect();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            move |g, wanted| vec![wanted[0].then(|| g.scale(c))],
        )
    }

    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        let data = self.data().iter().map(|&a| a + c).collect();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            move |g, wanted| vec![wanted[0].then(|| g.clone())],
        )
    }

    pub fn square(&self) -> Tensor<T> {
        let data = self.data().iter().map(|&a| a * a).collect();
        let a = self.clone();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            move |g, wanted| vec![wanted[0].then(|| g.mul(&a).scale(T::from_f64(2.0)))],
        )
    }

    pub fn sqrt(&self) -> Tensor<T> {
        let data = self.data().iter().map(|&a| a.sqrt()).collect();
        let a = self.clone();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            move |g, wanted| {
                vec![wanted[0].then(|| g.scale(T::from_f64(0.5)).div(&a.sqrt()))]
            },
        )
    }

    pub fn exp(&self) -> Tensor<T> {
        let data = self.data().iter().map(|&a| a.exp()).collect();
        let a = self.clone();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            move |g, wanted| vec![wanted[0].then(|| g.mul(&a.exp()))],
        )
    }

    pub fn ln(&self) -> Tensor<T> {
        let data = self.data().iter().map(|&a| a.ln()).collect();
        let a = self.clone();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            move |g, wanted| vec![wanted[0].then(|| g.div(&a))],
        )
    }

    pub fn tanh(&self) -> Tensor<T> {
        let data = self.data().iter().map(|&a| a.tanh()).collect();
        let a = self.clone();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            move |g, wanted| {
                vec![wanted[0].then(|| {
                    let y = a.tanh();
                    g.mul(&y.mul(&y).neg().add_scalar(T::one()))
                })]
            },
        )
    }

    /// `x` for `x >= 0`, `slope * x` otherwise. The subgradient at 0 uses
    /// the positive branch (slope 1).
    pub fn leaky_relu(&self, negative_slope: f64) -> Tensor<T> {
        assert!(negative_slope >= 0.0, "leaky_relu: negative slope {negative_slope} < 0");
        let slope = T::from_f64(negative_slope);
        let data = self
            .data()
            .iter()
            .map(|&a| if a >= T::zero() { a } else { a * slope })
            .collect();
        // Piecewise-constant derivative mask: second derivative is 0 a.e.,
        // so a constant capture is exact for double backward.
        let mask: Vec<T> = self
            .data()
            .iter()
            .map(|&a| if a >= T::zero() { T::one() } else { slope })
            .collect();
        let shape = self.shape().to_vec();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            move |g, wanted| {
                vec![wanted[0].then(|| g.mul(&Tensor::from_vec(mask.clone(), &shape)))]
            },
        )
    }

    // ----- reductions and broadcast -----

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum_all(&self) -> Tensor<T> {
        let total = self.data().iter().copied().sum();
        let in_shape = self.shape().to_vec();
        Tensor::from_op(
            vec![total],
            vec![1],
            vec![self.clone()],
            move |g, wanted| {
                vec![wanted[0].then(|| {
                    let ones_rank = vec![1; in_shape.len()];
                    g.reshape(&ones_rank).broadcast_to(&in_shape)
                })]
            },
        )
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let n = self.len();
        assert!(n > 0, "mean_all of an empty tensor");
        self.sum_all().scale(T::from_f64(1.0 / n as f64))
    }

    /// Sum over `axes`, keeping the reduced dims as size 1.
    pub fn sum_axes(&self, axes: &[usize]) -> Tensor<T> {
        let in_shape = self.shape().to_vec();
        let rank = in_shape.len();
        for &ax in axes {
            assert!(ax < rank, "sum_axes: axis {ax} out of range for rank {rank}");
        }
        let mut out_shape = in_shape.clone();
        for &ax in axes {
            out_shape[ax] = 1;
        }
        let out_len: usize = out_shape.iter().product();
        let mut out = vec![T::zero(); out_len];
        let out_strides = contiguous_strides(&out_shape);
        let reduced: Vec<bool> = (0..rank).map(|d| axes.contains(&d)).collect();
        let data = self.data();
        let mut idx = vec![0usize; rank];
        for &v in data.iter() {
            let mut off = 0;
            for d in 0..rank {
                if !reduced[d] {
                    off += idx[d] * out_strides[d];
                }
            }
            out[off] = out[off] + v;
            advance_index(&mut idx, &in_shape);
        }
        Tensor::from_op(
            out,
            out_shape,
            vec![self.clone()],
            move |g, wanted| vec![wanted[0].then(|| g.broadcast_to(&in_shape))],
        )
    }

    pub fn mean_axes(&self, axes: &[usize]) -> Tensor<T> {
        let reduced: usize = axes.iter().map(|&a| self.shape()[a]).product();
        assert!(reduced > 0, "mean_axes over empty extent");
        self.sum_axes(axes).scale(T::from_f64(1.0 / reduced as f64))
    }

    /// Expand size-1 dims up to `target` (same rank required).
    pub fn broadcast_to(&self, target: &[usize]) -> Tensor<T> {
        let in_shape = self.shape().to_vec();
        assert_eq!(
            in_shape.len(),
            target.len(),
            "broadcast_to: rank mismatch {:?} -> {:?}",
            in_shape,
            target
        );
        let mut expanded_axes = Vec::new();
        for (d, (&i, &t)) in in_shape.iter().zip(target).enumerate() {
            if i != t {
                assert_eq!(
                    i, 1,
                    "broadcast_to: dim {d} is {i}, cannot expand to {t} (shape {in_shape:?} -> {target:?})"
                );
                expanded_axes.push(d);
            }
        }
        let rank = in_shape.len();
        let in_strides = contiguous_strides(&in_shape);
        let out_len: usize = target.iter().product();
        let mut out = vec![T::zero(); out_len];
        let data = self.data();
        let mut idx = vec![0usize; rank];
        for o in out.iter_mut() {
            let mut off = 0;
            for d in 0..rank {
                if in_shape[d] != 1 {
                    off += idx[d] * in_strides[d];
                }
            }
            *o = data[off];
            advance_index(&mut idx, target);
        }
        Tensor::from_op(
            out,
            target.to_vec(),
            vec![self.clone()],
            move |g, wanted| vec![wanted[0].then(|| g.sum_axes(&expanded_axes))],
        )
    }

    // ----- shape -----

    pub fn reshape(&self, shape: &[usize]) -> Tensor<T> {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.len(),
            "reshape: {:?} -> {:?} changes element count",
            self.shape(),
            shape
        );
        let in_shape = self.shape().to_vec();
        Tensor::from_op(
            self.to_vec(),
            shape.to_vec(),
            vec![self.clone()],
            move |g, wanted| vec![wanted[0].then(|| g.reshape(&in_shape))],
        )
    }

    /// Reorder dims: `out.shape[d] = in.shape[perm[d]]`.
    pub fn permute(&self, perm: &[usize]) -> Tensor<T> {
        let in_shape = self.shape().to_vec();
        let rank = in_shape.len();
        assert_eq!(perm.len(), rank, "permute: perm {perm:?} vs rank {rank}");
        let mut seen = vec![false; rank];
        for &p in perm {
            assert!(p < rank && !seen[p], "permute: invalid permutation {perm:?}");
            seen[p] = true;
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
        let in_strides = contiguous_strides(&in_shape);
        let mut out = vec![T::zero(); self.len()];
        let data = self.data();
        let mut idx = vec![0usize; rank];
        for o in out.iter_mut() {
            let mut off = 0;
            for d in 0..rank {
                off += idx[d] * in_strides[perm[d]];
            }
            *o = data[off];
            advance_index(&mut idx, &out_shape);
        }
        let mut inverse = vec![0usize; rank];
        for (d, &p) in perm.iter().enumerate() {
            inverse[p] = d;
        }
        Tensor::from_op(
            out,
            out_shape,
            vec![self.clone()],
            move |g, wanted| vec![wanted[0].then(|| g.permute(&inverse))],
        )
    }

    // ----- spatial ops on [N,C,H,W] -----

    /// Zero padding of the two spatial dims: (top, bottom, left, right).
    pub fn pad2d(&self, pad: (usize, usize, usize, usize)) -> Tensor<T> {
        let (n, c, h, w) = assert_4d(self, "pad2d");
        let (top, bottom, left, right) = pad;
        let oh = h + top + bottom;
        let ow = w + left + right;
        let mut out = vec![T::zero(); n * c * oh * ow];
        let data = self.data();
        for nc in 0..n * c {
            let src = &data[nc * h * w..(nc + 1) * h * w];
            let dst = &mut out[nc * oh * ow..(nc + 1) * oh * ow];
            for y in 0..h {
                let drow = (y + top) * ow + left;
                dst[drow..drow + w].copy_from_slice(&src[y * w..(y + 1) * w]);
            }
        }
        Tensor::from_op(
            out,
            vec![n, c, oh, ow],
            vec![self.clone()],
            move |g, wanted| vec![wanted[0].then(|| g.crop2d(pad))],
        )
    }

    /// Remove (top, bottom, left, right) rows/columns from the spatial dims.
    pub fn crop2d(&self, crop: (usize, usize, usize, usize)) -> Tensor<T> {
        let (n, c, h, w) = assert_4d(self, "crop2d");
        let (top, bottom, left, right) = crop;
        assert!(
            top + bottom < h + 1 && left + right < w + 1,
            "crop2d: crop {crop:?} larger than spatial extent {h}x{w}"
        );
        let oh = h - top - bottom;
        let ow = w - left - right;
        let mut out = vec![T::zero(); n * c * oh * ow];
        let data = self.data();
        for nc in 0..n * c {
            let src = &data[nc * h * w..(nc + 1) * h * w];
            let dst = &mut out[nc * oh * ow..(nc + 1) * oh * ow];
            for y in 0..oh {
                let srow = (y + top) * w + left;
                dst[y * ow..(y + 1) * ow].copy_from_slice(&src[srow..srow + ow]);
            }
        }
        Tensor::from_op(
            out,
            vec![n, c, oh, ow],
            vec![self.clone()],
            move |g, wanted| vec![wanted[0].then(|| g.pad2d(crop))],
        )
    }

    /// Insert `step - 1` zeros between spatial elements:
    /// `H -> (H - 1) * step + 1`.
    pub fn dilate2d(&self, step: usize) -> Tensor<T> {
        assert!(step >= 1, "dilate2d: step must be >= 1");
        if step == 1 {
            return self.reshape(&self.shape().to_vec());
        }
        let (n, c, h, w) = assert_4d(self, "dilate2d");
        let oh = (h - 1) * step + 1;
        let ow = (w - 1) * step + 1;
        let mut out = vec![T::zero(); n * c * oh * ow];
        let data = self.data();
        for nc in 0..n * c {
            let src = &data[nc * h * w..(nc + 1) * h * w];
            let dst = &mut out[nc * oh * ow..(nc + 1) * oh * ow];
            for y in 0..h {
                for x in 0..w {
                    dst[y * step * ow + x * step] = src[y * w + x];
                }
            }
        }
        Tensor::from_op(
            out,
            vec![n, c, oh, ow],
            vec![self.clone()],
            move |g, wanted| vec![wanted[0].then(|| g.undilate2d(step))],
        )
    }

    /// Keep every `step`-th spatial element (adjoint of [`Tensor::dilate2d`]).
    pub fn undilate2d(&self, step: usize) -> Tensor<T> {
        assert!(step >= 1, "undilate2d: step must be >= 1");
        if step == 1 {
            return self.reshape(&self.shape().to_vec());
        }
        let (n, c, h, w) = assert_4d(self, "undilate2d");
        assert!(
            (h - 1) % step == 0 && (w - 1) % step == 0,
            "undilate2d: extent {h}x{w} not of the form (k*{step})+1"
        );
        let oh = (h - 1) / step + 1;
        let ow = (w - 1) / step + 1;
        let mut out = vec![T::zero(); n * c * oh * ow];
        let data = self.data();
        for nc in 0..n * c {
            let src = &data[nc * h * w..(nc + 1) * h * w];
            let dst = &mut out[nc * oh * ow..(nc + 1) * oh * ow];
            for y in 0..oh {
                for x in 0..ow {
                    dst[y * ow + x] = src[y * step * w + x * step];
                }
            }
        }
        Tensor::from_op(
            out,
            vec![n, c, oh, ow],
            vec![self.clone()],
            move |g, wanted| vec![wanted[0].then(|| g.dilate2d(step))],
        )
    }

    /// Replicate each pixel `factor x factor`.
    pub fn upsample_nearest(&self, factor: usize) -> Tensor<T> {
        assert!(factor >= 1, "upsample_nearest: factor must be >= 1");
        if factor == 1 {
            return self.reshape(&self.shape().to_vec());
        }
        let (n, c, h, w) = assert_4d(self, "upsample_nearest");
        let oh = h * factor;
        let ow = w * factor;
        let mut out = vec![T::zero(); n * c * oh * ow];
        let data = self.data();
        for nc in 0..n * c {
            let src = &data[nc * h * w..(nc + 1) * h * w];
            let dst = &mut out[nc * oh * ow..(nc + 1) * oh * ow];
            for oy in 0..oh {
                let sy = oy / factor;
                for ox in 0..ow {
                    dst[oy * ow + ox] = src[sy * w + ox / factor];
                }
            }
        }
        Tensor::from_op(
            out,
            vec![n, c, oh, ow],
            vec![self.clone()],
            move |g, wanted| vec![wanted[0].then(|| g.sum_pool2d(factor))],
        )
    }

    /// Sum over non-overlapping `factor x factor` blocks (adjoint of
    /// [`Tensor::upsample_nearest`]).
    pub fn sum_pool2d(&self, factor: usize) -> Tensor<T> {
        assert!(factor >= 1, "sum_pool2d: factor must be >= 1");
        if factor == 1 {
            return self.reshape(&self.shape().to_vec());
        }
        let (n, c, h, w) = assert_4d(self, "sum_pool2d");
        assert!(
            h % factor == 0 && w % factor == 0,
            "sum_pool2d: spatial extent {h}x{w} not divisible by {factor}"
        );
        let oh = h / factor;
        let ow = w / factor;
        let mut out = vec![T::zero(); n * c * oh * ow];
        let data = self.data();
        for nc in 0..n * c {
            let src = &data[nc * h * w..(nc + 1) * h * w];
            let dst = &mut out[nc * oh * ow..(nc + 1) * oh * ow];
            for y in 0..h {
                let dy = y / factor;
                for x in 0..w {
                    let d = dy * ow + x / factor;
                    dst[d] = dst[d] + src[y * w + x];
                }
            }
        }
        Tensor::from_op(
            out,
            vec![n, c, oh, ow],
            vec![self.clone()],
            move |g, wanted| vec![wanted[0].then(|| g.upsample_nearest(factor))],
        )
    }

    /// Non-overlapping 2x2 mean pooling. Spatial extents must be even.
    pub fn avg_pool2(&self) -> Tensor<T> {
        self.sum_pool2d(2).scale(T::from_f64(0.25))
    }

    /// Concatenate along the channel dim.
    pub fn concat_ch(parts: &[&Tensor<T>]) -> Tensor<T> {
        assert!(!parts.is_empty(), "concat_ch of zero tensors");
        let (n, _, h, w) = assert_4d(parts[0], "concat_ch");
        let mut c_total = 0;
        for p in parts {
            let (pn, pc, ph, pw) = assert_4d(p, "concat_ch");
            assert!(
                pn == n && ph == h && pw == w,
                "concat_ch: incompatible shapes {:?} vs {:?}",
                parts[0].shape(),
                p.shape()
            );
            c_total += pc;
        }
        let hw = h * w;
        let mut out = vec![T::zero(); n * c_total * hw];
        let mut c_off = 0;
        for p in parts {
            let pc = p.shape()[1];
            let data = p.data();
            for ni in 0..n {
                let src = &data[ni * pc * hw..(ni + 1) * pc * hw];
                let dst_start = ni * c_total * hw + c_off * hw;
                out[dst_start..dst_start + pc * hw].copy_from_slice(src);
            }
            c_off += pc;
        }
        let channel_counts: Vec<usize> = parts.iter().map(|p| p.shape()[1]).collect();
        Tensor::from_op(
            out,
            vec![n, c_total, h, w],
            parts.iter().map(|&p| p.clone()).collect(),
            move |g, wanted| {
                let mut start = 0;
                channel_counts
                    .iter()
                    .enumerate()
                    .map(|(i, &cc)| {
                        let s = start;
                        start += cc;
                        wanted[i].then(|| g.slice_ch(s, s + cc))
                    })
                    .collect()
            },
        )
    }

    /// Channels `[start, end)`.
    pub fn slice_ch(&self, start: usize, end: usize) -> Tensor<T> {
        let (n, c, h, w) = assert_4d(self, "slice_ch");
        assert!(
            start < end && end <= c,
            "slice_ch: range {start}..{end} out of {c} channels"
        );
        let cc = end - start;
        let hw = h * w;
        let mut out = vec![T::zero(); n * cc * hw];
        let data = self.data();
        for ni in 0..n {
            let src_start = ni * c * hw + start * hw;
            out[ni * cc * hw..(ni + 1) * cc * hw]
                .copy_from_slice(&data[src_start..src_start + cc * hw]);
        }
        Tensor::from_op(
            out,
            vec![n, cc, h, w],
            vec![self.clone()],
            move |g, wanted| vec![wanted[0].then(|| g.embed_ch(start, c))],
        )
    }

    /// Place these channels at offset `start` inside `total` zero channels
    /// (adjoint of [`Tensor::slice_ch`]).
    pub fn embed_ch(&self, start: usize, total: usize) -> Tensor<T> {
        let (n, c, h, w) = assert_4d(self, "embed_ch");
        assert!(
            start + c <= total,
            "embed_ch: {c} channels at offset {start} exceed {total}"
        );
        let hw = h * w;
        let mut out = vec![T::zero(); n * total * hw];
        let data = self.data();
        for ni in 0..n {
            let dst_start = ni * total * hw + start * hw;
            out[dst_start..dst_start + c * hw].copy_from_slice(&data[ni * c * hw..(ni + 1) * c * hw]);
        }
        let end = start + c;
        Tensor::from_op(
            out,
            vec![n, total, h, w],
            vec![self.clone()],
            move |g, wanted| vec![wanted[0].then(|| g.slice_ch(start, end))],
        )
    }

    /// Swap the first two dims and rotate the spatial dims by 180 degrees:
    /// `[F,C,kh,kw] -> [C,F,kh,kw]` with reversed kernels. Self-inverse.
    pub fn kernel_flip(&self) -> Tensor<T> {
        let (f, c, kh, kw) = assert_4d(self, "kernel_flip");
        let mut out = vec![T::zero(); self.len()];
        let data = self.data();
        for fi in 0..f {
            for ci in 0..c {
                for a in 0..kh {
                    for b in 0..kw {
                        out[((ci * f + fi) * kh + (kh - 1 - a)) * kw + (kw - 1 - b)] =
                            data[((fi * c + ci) * kh + a) * kw + b];
                    }
                }
            }
        }
        Tensor::from_op(
            out,
            vec![c, f, kh, kw],
            vec![self.clone()],
            move |g, wanted| vec![wanted[0].then(|| g.kernel_flip())],
        )
    }

    // ----- class-index ops -----

    /// Pick, per pixel, the channel named by `classes`:
    /// `[N,K,H,W] x [N*H*W] -> [N,1,H,W]`.
    pub fn gather_class(&self, classes: &[usize]) -> Tensor<T> {
        let (n, k, h, w) = assert_4d(self, "gather_class");
        let hw = h * w;
        assert_eq!(
            classes.len(),
            n * hw,
            "gather_class: {} class entries for {}x{}x{} pixels",
            classes.len(),
            n,
            h,
            w
        );
        for (i, &cl) in classes.iter().enumerate() {
            assert!(cl < k, "gather_class: class {cl} at pixel {i} out of range {k}");
        }
        let mut out = vec![T::zero(); n * hw];
        let data = self.data();
        for ni in 0..n {
            for p in 0..hw {
                let cl = classes[ni * hw + p];
                out[ni * hw + p] = data[(ni * k + cl) * hw + p];
            }
        }
        let classes_owned = classes.to_vec();
        Tensor::from_op(
            out,
            vec![n, 1, h, w],
            vec![self.clone()],
            move |g, wanted| vec![wanted[0].then(|| g.scatter_class(&classes_owned, k))],
        )
    }

    /// Spread `[N,1,H,W]` values into the channels named by `classes`
    /// (adjoint of [`Tensor::gather_class`]).
    pub fn scatter_class(&self, classes: &[usize], k: usize) -> Tensor<T> {
        let (n, c, h, w) = assert_4d(self, "scatter_class");
        assert_eq!(c, 1, "scatter_class: expected a single channel, got {c}");
        let hw = h * w;
        assert_eq!(classes.len(), n * hw, "scatter_class: class map size mismatch");
        let mut out = vec![T::zero(); n * k * hw];
        let data = self.data();
        for ni in 0..n {
            for p in 0..hw {
                let cl = classes[ni * hw + p];
                assert!(cl < k, "scatter_class: class {cl} out of range {k}");
                out[(ni * k + cl) * hw + p] = data[ni * hw + p];
            }
        }
        let classes_owned = classes.to_vec();
        Tensor::from_op(
            out,
            vec![n, k, h, w],
            vec![self.clone()],
            move |g, wanted| vec![wanted[0].then(|| g.gather_class(&classes_owned))],
        )
    }
}

/// Row-major strides for a contiguous buffer of `shape`.
pub(crate) fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    strides
}

/// Odometer increment of a multi-index.
fn advance_index(idx: &mut [usize], shape: &[usize]) {
    for d in (0..shape.len()).rev() {
        idx[d] += 1;
        if idx[d] < shape[d] {
            return;
        }
        idx[d] = 0;
    }
}

#[cfg(test)]
mod tests {
    use crate::tensor::{backward, grad_wrt, Tensor};

    fn t4(data: Vec<f64>, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_vec(data, shape)
    }

    #[test]
    fn elementwise_arithmetic() {
        let a = t4(vec![1.0, 2.0], &[2]);
        let b = t4(vec![3.0, 5.0], &[2]);
        assert_eq!(a.add(&b).to_vec(), vec![4.0, 7.0]);
        assert_eq!(a.sub(&b).to_vec(), vec![-2.0, -3.0]);
        assert_eq!(a.mul(&b).to_vec(), vec![3.0, 10.0]);
        assert_eq!(b.div(&a).to_vec(), vec![3.0, 2.5]);
    }

    #[test]
    #[should_panic(expected = "add: shape mismatch")]
    fn binary_shape_mismatch_panics() {
        let a = t4(vec![1.0, 2.0], &[2]);
        let b = t4(vec![1.0, 2.0, 3.0], &[3]);
        let _ = a.add(&b);
    }

    #[test]
    fn leaky_relu_examples() {
        let x = t4(vec![-1.0, 2.0, 0.0], &[3]);
        let y = x.leaky_relu(0.01);
        assert_eq!(y.to_vec(), vec![-0.01, 2.0, 0.0]);
    }

    #[test]
    fn sum_axes_and_broadcast_round_trip() {
        let x = t4((1..=24).map(f64::from).collect(), &[2, 3, 2, 2]);
        let s = x.sum_axes(&[2, 3]);
        assert_eq!(s.shape(), &[2, 3, 1, 1]);
        assert_eq!(s.to_vec()[0], 1.0 + 2.0 + 3.0 + 4.0);
        let b = s.broadcast_to(&[2, 3, 2, 2]);
        assert_eq!(b.shape(), &[2, 3, 2, 2]);
        assert_eq!(b.to_vec()[0], 10.0);
        assert_eq!(b.to_vec()[3], 10.0);
    }

    #[test]
    fn permute_transposes() {
        let x = t4(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]);
        let y = x.permute(&[1, 0]);
        assert_eq!(y.shape(), &[3, 2]);
        assert_eq!(y.to_vec(), vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn pad_and_crop_are_inverse() {
        let x = t4((1..=4).map(f64::from).collect(), &[1, 1, 2, 2]);
        let p = x.pad2d((1, 2, 3, 0));
        assert_eq!(p.shape(), &[1, 1, 5, 5]);
        assert_eq!(p.data()[1 * 5 + 3], 1.0);
        let c = p.crop2d((1, 2, 3, 0));
        assert_eq!(c.to_vec(), x.to_vec());
    }

    #[test]
    fn upsample_replicates_and_gradient_sums() {
        let x: Tensor<f64> = Tensor::param(vec![5.0], &[1, 1, 1, 1]);
        let y = x.upsample_nearest(2);
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.to_vec(), vec![5.0; 4]);
        backward(&y.sum_all()).unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0]);
    }

    #[test]
    fn upsample_factor_one_is_identity() {
        let x = t4(vec![1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2]);
        assert_eq!(x.upsample_nearest(1).to_vec(), x.to_vec());
    }

    #[test]
    fn avg_pool_block_mean() {
        let x = t4(vec![1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2]);
        let y = x.avg_pool2();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.item(), 2.5);
    }

    #[test]
    fn avg_pool_constant_stays_constant() {
        let x = Tensor::full(&[2, 3, 4, 4], 7.0f64);
        let y = x.avg_pool2();
        assert!(y.to_vec().iter().all(|&v| (v - 7.0).abs() < 1e-12));
    }

    #[test]
    fn avg_pool_preserves_quarter_sum() {
        let x = t4((0..64).map(|i| (i as f64 * 0.37).sin()).collect(), &[1, 1, 8, 8]);
        let lhs = x.avg_pool2().sum_all().item();
        let rhs = x.sum_all().item() / 4.0;
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    #[should_panic(expected = "not divisible")]
    fn avg_pool_rejects_odd_extent() {
        let x = Tensor::<f64>::zeros(&[1, 1, 3, 4]);
        let _ = x.avg_pool2();
    }

    #[test]
    fn dilate_undilate_round_trip() {
        let x = t4((1..=9).map(f64::from).collect(), &[1, 1, 3, 3]);
        let d = x.dilate2d(2);
        assert_eq!(d.shape(), &[1, 1, 5, 5]);
        assert_eq!(d.data()[0], 1.0);
        assert_eq!(d.data()[2], 2.0);
        assert_eq!(d.data()[1], 0.0);
        assert_eq!(d.undilate2d(2).to_vec(), x.to_vec());
    }

    #[test]
    fn concat_slice_round_trip() {
        let a = t4(vec![1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2]);
        let b = t4(vec![5.0, 6.0, 7.0, 8.0], &[1, 1, 2, 2]);
        let cat = Tensor::concat_ch(&[&a, &b]);
        assert_eq!(cat.shape(), &[1, 2, 2, 2]);
        assert_eq!(cat.slice_ch(0, 1).to_vec(), a.to_vec());
        assert_eq!(cat.slice_ch(1, 2).to_vec(), b.to_vec());
    }

    #[test]
    fn kernel_flip_is_self_inverse() {
        let k = t4((1..=24).map(f64::from).collect(), &[2, 3, 2, 2]);
        let f = k.kernel_flip();
        assert_eq!(f.shape(), &[3, 2, 2, 2]);
        assert_eq!(f.kernel_flip().to_vec(), k.to_vec());
        // [f=0,c=0,0,0] lands at [c=0,f=0,1,1].
        assert_eq!(f.data()[3], 1.0);
    }

    #[test]
    fn gather_scatter_adjoint() {
        let logits = t4((0..12).map(f64::from).collect(), &[1, 3, 2, 2]);
        let classes = vec![0usize, 1, 2, 0];
        let picked = logits.gather_class(&classes);
        assert_eq!(picked.shape(), &[1, 1, 2, 2]);
        assert_eq!(picked.to_vec(), vec![0.0, 5.0, 10.0, 3.0]);
        let spread = picked.scatter_class(&classes, 3);
        assert_eq!(spread.shape(), &[1, 3, 2, 2]);
        assert_eq!(spread.gather_class(&classes).to_vec(), picked.to_vec());
    }

    #[test]
    fn second_order_through_square_sqrt() {
        // f = sum(sqrt(x)^2 * x) = sum(x^2); f' = 2x, f'' = 2.
        let x: Tensor<f64> = Tensor::param(vec![4.0], &[1]);
        let f = x.sqrt().square().mul(&x).sum_all();
        let g = grad_wrt(&f, &[&x], true).unwrap().remove(0);
        assert!((g.item() - 8.0).abs() < 1e-10);
        backward(&g.sum_all()).unwrap();
        assert!((x.grad().unwrap()[0] - 2.0).abs() < 1e-10);
    }
}
