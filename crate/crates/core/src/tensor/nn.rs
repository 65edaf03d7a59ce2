//! Normalization layers built from primitive ops.

use super::{Scalar, Tensor};

/// Per-(sample, channel) spatial standardization with learnable affine:
/// `gain * (x - mean) / sqrt(var + eps) + shift`, `gain`/`shift` of shape
/// `[C]`.
pub fn instance_norm<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    shift: &Tensor<T>,
    eps: f64,
) -> Tensor<T> {
    let shape = x.shape().to_vec();
    assert_eq!(shape.len(), 4, "instance_norm: expected [N,C,H,W], got {shape:?}");
    let c = shape[1];
    assert!(shape[2] * shape[3] >= 1, "instance_norm: empty spatial extent");
    assert!(eps > 0.0, "instance_norm: eps must be positive");
    assert_eq!(gain.shape(), &[c], "instance_norm: gain shape {:?}", gain.shape());
    assert_eq!(shift.shape(), &[c], "instance_norm: shift shape {:?}", shift.shape());
    let mean = x.mean_axes(&[2, 3]).broadcast_to(&shape);
    let centered = x.sub(&mean);
    let var = centered.square().mean_axes(&[2, 3]);
    let denom = var.add_scalar(T::from_f64(eps)).sqrt().broadcast_to(&shape);
    let normed = centered.div(&denom);
    let g = gain.reshape(&[1, c, 1, 1]).broadcast_to(&shape);
    let s = shift.reshape(&[1, c, 1, 1]).broadcast_to(&shape);
    normed.mul(&g).add(&s)
}

/// Per-pixel feature normalization: divide each pixel's channel vector by
/// `sqrt(mean_c(x^2) + eps)`.
pub fn pixel_norm<T: Scalar>(x: &Tensor<T>, eps: f64) -> Tensor<T> {
    let shape = x.shape().to_vec();
    assert_eq!(shape.len(), 4, "pixel_norm: expected [N,C,H,W], got {shape:?}");
    let denom = x
        .square()
        .mean_axes(&[1])
        .add_scalar(T::from_f64(eps))
        .sqrt()
        .broadcast_to(&shape);
    x.div(&denom)
}

/// Append one channel holding the across-batch standard deviation averaged
/// over all positions and channels: `[N,C,H,W] -> [N,C+1,H,W]`.
pub fn minibatch_stddev<T: Scalar>(x: &Tensor<T>, eps: f64) -> Tensor<T> {
    let shape = x.shape().to_vec();
    assert_eq!(shape.len(), 4, "minibatch_stddev: expected [N,C,H,W], got {shape:?}");
    let (n, h, w) = (shape[0], shape[2], shape[3]);
    let mean = x.mean_axes(&[0]).broadcast_to(&shape);
    let var = x.sub(&mean).square().mean_axes(&[0]);
    let std = var.add_scalar(T::from_f64(eps)).sqrt().mean_all();
    let feat = std.reshape(&[1, 1, 1, 1]).broadcast_to(&[n, 1, h, w]);
    Tensor::concat_ch(&[x, &feat])
}
