//! Pairwise identity accuracy on a hand-made set, then BLEU@4 of captions
//! with person IDs, plain and maximised over ID relabelings.

use fitb::metrics::{evaluate_ids, pairwise_accuracy, permutation_max_score, set_bleu, tokenize_caption, Aggregation};

fn main() -> fitb::Result<()> {
    let gt = vec![1, 2, 1, 3];
    let pred = vec![5, 5, 5, 9];
    let t = pairwise_accuracy(&gt, &pred)?;
    println!("same {}/{}  diff {}/{}", t.same_correct, t.same_total, t.diff_correct, t.diff_total);
    let r = evaluate_ids(&[gt], &[pred.iter().map(|&p| p - 4).collect()], Aggregation::Macro)?;
    println!("Same {:.1}  Diff {:.1}  Class {:.1}  Inst {:.1}", r.same_acc, r.diff_acc, r.class_acc, r.inst_acc);

    let pred = vec![tokenize_caption("[P1] is approached by [P2], who hugs [P1].")];
    let reference = vec![tokenize_caption("[P1] approaches [P2], and hugs [P2].")];
    println!("tokens {:?}", pred[0]);
    println!("plain BLEU@4        {:.4}", set_bleu(&pred, &reference));
    let best = permutation_max_score(&pred, &reference);
    println!("permutation BLEU@4  {:.4}  mapping {:?}", best.score, best.mapping);
    Ok(())
}
