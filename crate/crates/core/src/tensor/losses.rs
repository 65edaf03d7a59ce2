//! Segmentation losses.

use super::{Scalar, Tensor};

/// Softmax over the channel dim of `[N,K,H,W]` logits, numerically
/// stabilized by subtracting the per-pixel max (a constant shift that leaves
/// both value and gradient unchanged).
pub fn softmax_channels<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let shape = logits.shape().to_vec();
    assert_eq!(shape.len(), 4, "softmax_channels: expected [N,K,H,W], got {shape:?}");
    let shifted = logits.sub(&pixel_max_constant(logits).broadcast_to(&shape));
    let e = shifted.exp();
    let denom = e.sum_axes(&[1]).broadcast_to(&shape);
    e.div(&denom)
}

/// Mean over all pixels of `-log softmax(logits)[target]`, in the
/// log-sum-exp form that never takes the log of an underflowed probability.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, target_class: &[usize]) -> Tensor<T> {
    let shape = logits.shape().to_vec();
    assert_eq!(shape.len(), 4, "softmax_cross_entropy: expected [N,K,H,W], got {shape:?}");
    let (n, h, w) = (shape[0], shape[2], shape[3]);
    assert_eq!(
        target_class.len(),
        n * h * w,
        "softmax_cross_entropy: {} targets for {} pixels",
        target_class.len(),
        n * h * w
    );
    let shifted = logits.sub(&pixel_max_constant(logits).broadcast_to(&shape));
    let lse = shifted.exp().sum_axes(&[1]).ln();
    let picked = shifted.gather_class(target_class);
    lse.sub(&picked).mean_all()
}

/// `1 - mean_over_foreground_classes` of the smoothed overlap ratio
/// `(2 Σ p t + smooth) / (Σ p + Σ t + smooth)`, with the sums pooled over
/// batch and space per class. Channel 0 is background and excluded.
pub fn soft_dice_loss<T: Scalar>(
    probabilities: &Tensor<T>,
    target_one_hot: &Tensor<T>,
    smooth: f64,
) -> Tensor<T> {
    let shape = probabilities.shape().to_vec();
    assert_eq!(shape.len(), 4, "soft_dice_loss: expected [N,K,H,W], got {shape:?}");
    assert_eq!(
        target_one_hot.shape(),
        &shape[..],
        "soft_dice_loss: target shape {:?} vs probabilities {:?}",
        target_one_hot.shape(),
        shape
    );
    let k = shape[1];
    assert!(k >= 2, "soft_dice_loss: need at least one foreground class, got K={k}");
    assert!(smooth > 0.0, "soft_dice_loss: smooth must be positive");
    let s = T::from_f64(smooth);
    let p = probabilities.slice_ch(1, k);
    let t = target_one_hot.slice_ch(1, k);
    let inter = p.mul(&t).sum_axes(&[0, 2, 3]);
    let denom = p.sum_axes(&[0, 2, 3]).add(&t.sum_axes(&[0, 2, 3]));
    let dice = inter.scale(T::from_f64(2.0)).add_scalar(s).div(&denom.add_scalar(s));
    dice.mean_all().neg().add_scalar(T::one())
}

/// One-hot encode a class map into `[N,K,H,W]`.
pub fn one_hot<T: Scalar>(classes: &[usize], n: usize, k: usize, h: usize, w: usize) -> Tensor<T> {
    assert_eq!(classes.len(), n * h * w, "one_hot: class map size mismatch");
    let hw = h * w;
    let mut data = vec![T::zero(); n * k * hw];
    for (i, &c) in classes.iter().enumerate() {
        assert!(c < k, "one_hot: class {c} out of range {k}");
        let (ni, p) = (i / hw, i % hw);
        data[(ni * k + c) * hw + p] = T::one();
    }
    Tensor::from_vec(data, &[n, k, h, w])
}

/// Per-pixel channel max as a constant (non-differentiated) `[N,1,H,W]`.
fn pixel_max_constant<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let shape = logits.shape();
    let (n, k, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let hw = h * w;
    let data = logits.data();
    let mut out = vec![T::neg_infinity(); n * hw];
    for ni in 0..n {
        for ci in 0..k {
            let plane = &data[(ni * k + ci) * hw..(ni * k + ci + 1) * hw];
            let dst = &mut out[ni * hw..(ni + 1) * hw];
            for (d, &v) in dst.iter_mut().zip(plane) {
                if v > *d {
                    *d = v;
                }
            }
        }
    }
    Tensor::from_vec(out, &[n, 1, h, w])
}
