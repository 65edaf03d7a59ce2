//! 2-d convolution (cross-correlation) via im2col and a gemm.
//!
//! Both backward passes are themselves convolutions over dilated or padded
//! tensors, so second-order gradients come for free:
//! `d_input = crop_p(conv(pad(dilate_s(dy), k-1), flip(w)))` and
//! `d_kernel = conv(pad(x, p) as channels, dilate_s(dy) as kernels)`.

use ndarray::{Array2, ArrayView2};

use super::{Scalar, Tensor};

/// Cross-correlate `input` `[N,C,H,W]` with `kernel` `[F,C,kh,kw]` at the
/// given stride after zero-padding `pad` on every spatial side. The padded
/// extent minus the kernel must be divisible by the stride so the geometry
/// is exact in both directions.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let ishape = input.shape().to_vec();
    let kshape = kernel.shape().to_vec();
    assert_eq!(ishape.len(), 4, "conv2d: input must be [N,C,H,W], got {ishape:?}");
    assert_eq!(kshape.len(), 4, "conv2d: kernel must be [F,C,kh,kw], got {kshape:?}");
    let (n, c, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3]);
    let (f, kc, kh, kw) = (kshape[0], kshape[1], kshape[2], kshape[3]);
    assert_eq!(c, kc, "conv2d: input has {c} channels, kernel expects {kc}");
    assert!(stride >= 1, "conv2d: stride must be >= 1");
    let hp = h + 2 * pad;
    let wp = w + 2 * pad;
    assert!(
        hp >= kh && wp >= kw,
        "conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}"
    );
    assert!(
        (hp - kh) % stride == 0 && (wp - kw) % stride == 0,
        "conv2d: padded extent {hp}x{wp} minus kernel {kh}x{kw} not divisible by stride {stride}"
    );
    let oh = (hp - kh) / stride + 1;
    let ow = (wp - kw) / stride + 1;
    if let Some(b) = bias {
        assert_eq!(b.shape(), &[f], "conv2d: bias shape {:?}, expected [{f}]", b.shape());
    }

    let idata = input.data();
    let kdata = kernel.data();
    let wmat = ArrayView2::from_shape((f, c * kh * kw), &kdata[..]).unwrap();

    let mut out = vec![T::zero(); n * f * oh * ow];
    let mut padded = vec![T::zero(); c * hp * wp];
    let mut col = Array2::<T>::zeros((c * kh * kw, oh * ow));

    for ni in 0..n {
        if pad == 0 {
            padded.copy_from_slice(&idata[ni * c * h * w..(ni + 1) * c * h * w]);
        } else {
            padded.iter_mut().for_each(|v| *v = T::zero());
            for ci in 0..c {
                let src = &idata[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
                let dst = &mut padded[ci * hp * wp..(ci + 1) * hp * wp];
                for y in 0..h {
                    let drow = (y + pad) * wp + pad;
                    dst[drow..drow + w].copy_from_slice(&src[y * w..(y + 1) * w]);
                }
            }
        }
        {
            let colbuf = col.as_slice_mut().unwrap();
            for ci in 0..c {
                let plane = &padded[ci * hp * wp..(ci + 1) * hp * wp];
                for a in 0..kh {
                    for b in 0..kw {
                        let row = ((ci * kh + a) * kw + b) * oh * ow;
                        for oy in 0..oh {
                            let srow = (oy * stride + a) * wp + b;
                            let dst = &mut colbuf[row + oy * ow..row + (oy + 1) * ow];
                            if stride == 1 {
                                dst.copy_from_slice(&plane[srow..srow + ow]);
                            } else {
                                for (ox, d) in dst.iter_mut().enumerate() {
                                    *d = plane[srow + ox * stride];
                                }
                            }
                        }
                    }
                }
            }
        }
        let prod = wmat.dot(&col);
        let dst = &mut out[ni * f * oh * ow..(ni + 1) * f * oh * ow];
        dst.copy_from_slice(prod.as_slice().unwrap());
        if let Some(b) = bias {
            let bdata = b.data();
            for fi in 0..f {
                let bv = bdata[fi];
                for v in &mut dst[fi * oh * ow..(fi + 1) * oh * ow] {
                    *v = *v + bv;
                }
            }
        }
    }
    drop(idata);
    drop(kdata);

    let x = input.clone();
    let k = kernel.clone();
    let mut parents = vec![input.clone(), kernel.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    Tensor::from_op(out, vec![n, f, oh, ow], parents, move |g, wanted| {
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(wanted.len());
        let gd = if stride == 1 { g.clone() } else { g.dilate2d(stride) };
        if wanted[0] {
            let full = conv2d(
                &gd.pad2d((kh - 1, kh - 1, kw - 1, kw - 1)),
                &k.kernel_flip(),
                None,
                1,
                0,
            );
            grads.push(Some(if pad == 0 {
                full
            } else {
                full.crop2d((pad, pad, pad, pad))
            }));
        } else {
            grads.push(None);
        }
        if wanted[1] {
            let xp = if pad == 0 { x.clone() } else { x.pad2d((pad, pad, pad, pad)) };
            let dw = conv2d(
                &xp.permute(&[1, 0, 2, 3]),
                &gd.permute(&[1, 0, 2, 3]),
                None,
                1,
                0,
            )
            .permute(&[1, 0, 2, 3]);
            grads.push(Some(dw));
        } else {
            grads.push(None);
        }
        if wanted.len() == 3 {
            grads.push(wanted[2].then(|| g.sum_axes(&[0, 2, 3]).reshape(&[f])));
        }
        grads
    })
}
