//! Full-ranking evaluation on a hand-made score matrix.

use diffrec::data::InteractionMatrix;
use diffrec::eval::{evaluate, MaskingPolicy, DEFAULT_KS};
use diffrec::nn::DenseMatrix;

fn main() -> diffrec::Result<()> {
    // three users over six items
    let history = InteractionMatrix::from_pairs(3, 6, &[(0, 0), (1, 1), (1, 2)])?;
    let test = InteractionMatrix::from_pairs(3, 6, &[(0, 3), (0, 5), (1, 0), (2, 4)])?;
    let scores = DenseMatrix::from_rows(&[
        vec![0.9, 0.1, 0.2, 0.8, 0.3, 0.4],
        vec![0.5, 0.9, 0.9, 0.1, 0.2, 0.3],
        vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
    ])?;
    let report = evaluate(&scores, &history, &test, &[1, 3], MaskingPolicy::Train)?;
    print!("{}", report.to_key_values());
    print!("{}", report.to_csv());
    println!("user 2 has no history, so it is excluded ({} user)", report.excluded_empty_history);
    println!("default cutoffs: {DEFAULT_KS:?}");
    Ok(())
}
