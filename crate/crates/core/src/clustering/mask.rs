use ndarray::{Array2, ArrayView2};

use crate::scalar::Scalar;

/// Large negative logit standing in for minus infinity; `exp` of it
/// underflows to exactly zero after the softmax max-shift, so forbidden
/// positions contribute exactly nothing.
pub const MASKED_LOGIT: f64 = -1e9;

/// Equivalence-relation matrix of a labeling: `mask[i, j] = 1` iff the two
/// channels share a cluster. Symmetric with unit diagonal.
pub fn build_mask(labels: &[usize]) -> Array2<u8> {
    let n = labels.len();
    Array2::from_shape_fn((n, n), |(i, j)| u8::from(labels[i] == labels[j]))
}

/// `1` for channels that have at least one co-clustered partner, `0` for
/// singletons. Singletons bypass the channel-attention sub-block.
pub fn mask_vector(mask: &ArrayView2<'_, u8>) -> Vec<u8> {
    (0..mask.nrows())
        .map(|i| {
            let partnered = (0..mask.ncols()).any(|j| j != i && mask[[i, j]] != 0);
            u8::from(partnered)
        })
        .collect()
}

pub fn is_identity_mask(mask: &ArrayView2<'_, u8>) -> bool {
    mask.indexed_iter()
        .all(|((i, j), &v)| v == u8::from(i == j))
}

/// Additive pre-softmax form: 0 where attention is permitted, a large
/// negative number where it is not.
pub fn additive_mask<F: Scalar>(mask: &ArrayView2<'_, u8>) -> Array2<F> {
    mask.mapv(|v| {
        if v != 0 {
            F::zero()
        } else {
            F::of_f64(MASKED_LOGIT)
        }
    })
}
