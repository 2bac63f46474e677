//! Case-control matching.

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// All positives followed by `ratio · |positives|` negatives drawn uniformly
/// without replacement (in draw order).
pub fn match_negatives<T: Clone>(positives: &[T], negatives: &[T], ratio: usize, rng: &mut Rng) -> Result<Vec<T>> {
    let need = ratio * positives.len();
    if negatives.len() < need {
        return Err(Error::contract(format!(
            "matching {} positives at 1:{ratio} needs {need} negatives, only {} available",
            positives.len(),
            negatives.len()
        )));
    }
    let mut out = positives.to_vec();
    out.extend(sample(rng, negatives.len(), need).into_iter().map(|i| negatives[i].clone()));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use std::collections::HashSet;

    #[test]
    fn sizes_and_distinctness() {
        let pos: Vec<u32> = (0..5923).collect();
        let neg: Vec<u32> = (10_000..40_000).collect();
        let out = match_negatives(&pos, &neg, 3, &mut seeded(1)).unwrap();
        assert_eq!(out.len() - pos.len(), 17_769);
        let picked: HashSet<_> = out[pos.len()..].iter().collect();
        assert_eq!(picked.len(), 17_769);
    }

    #[test]
    fn ratio_zero_and_determinism() {
        let pos = [1, 2];
        let neg = [3, 4, 5, 6, 7];
        assert_eq!(match_negatives(&pos, &neg, 0, &mut seeded(1)).unwrap(), vec![1, 2]);
        let a = match_negatives(&pos, &neg, 2, &mut seeded(9)).unwrap();
        let b = match_negatives(&pos, &neg, 2, &mut seeded(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_negatives() {
        assert!(matches!(
            match_negatives(&[1, 2], &[3, 4, 5], 2, &mut seeded(1)),
            Err(Error::Contract(_))
        ));
    }
}
