use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

const PROB_FLOOR: f64 = 1e-12;

/// Mean negative log-likelihood of `labels` under the row-wise class
/// probabilities `probs`, and its gradient with respect to the pre-softmax
/// logits, `(probs − onehot) / B`.
pub fn cross_entropy<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let (b, c) = match *probs.shape() {
        [b, c] => (b, c),
        _ => return Err(Error::dim("cross_entropy", format!("expected B×C probabilities, got {:?}", probs.shape()))),
    };
    if labels.len() != b {
        return Err(Error::dim(
            "cross_entropy",
            format!("{} labels for {} rows", labels.len(), b),
        ));
    }
    if let Some((row, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= c) {
        return Err(Error::Data {
            row,
            msg: format!("label {l} outside [0, {c})"),
        });
    }
    if b == 0 {
        return Ok((0.0, probs.clone()));
    }
    let mut loss = 0.0;
    for (row, &l) in labels.iter().enumerate() {
        loss -= probs.data()[row * c + l].as_f64().max(PROB_FLOOR).ln();
    }
    let inv_b = T::of(1.0 / b as f64);
    let mut grad = probs.clone();
    for (row, &l) in labels.iter().enumerate() {
        let g = grad.outer_mut(row);
        g[l] = g[l] - T::one();
        g.iter_mut().for_each(|v| *v = *v * inv_b);
    }
    Ok((loss / b as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_seven_classes() {
        let p = Tensor::full([3, 7], 1.0f64 / 7.0);
        let (loss, _) = cross_entropy(&p, &[0, 3, 6]).unwrap();
        assert!((loss - 7f64.ln()).abs() < 1e-12);
        assert!((loss - 1.945910).abs() < 1e-6);
    }

    #[test]
    fn perfect_prediction() {
        let p = Tensor::from_rows(&[&[0.0f64, 1.0, 0.0], &[1.0, 0.0, 0.0]]);
        let (loss, g) = cross_entropy(&p, &[1, 0]).unwrap();
        assert!(loss <= 1e-11);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_rows_by_hand() {
        let p = Tensor::from_rows(&[&[0.9f64, 0.1], &[0.2, 0.8]]);
        let (loss, g) = cross_entropy(&p, &[0, 1]).unwrap();
        let want = -(0.9f64.ln() + 0.8f64.ln()) / 2.0;
        assert!((loss - want).abs() < 1e-15);
        let expect = [(0.9 - 1.0) / 2.0, 0.1 / 2.0, 0.2 / 2.0, (0.8 - 1.0) / 2.0];
        for (a, b) in g.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn label_out_of_range_names_row() {
        let p = Tensor::full([2, 3], 1.0f32 / 3.0);
        match cross_entropy(&p, &[0, 3]) {
            Err(Error::Data { row, .. }) => assert_eq!(row, 1),
            other => panic!("{other:?}"),
        }
    }
}
