//! Corpus BLEU with multiple references, including the classic clipped
//! unigram example.

use arnmt::eval::{corpus_bleu, corpus_bleu_lines, sentence_stats};

fn main() -> arnmt::Result<()> {
    let cand = ["the"; 7];
    let reference = ["the", "cat", "is", "on", "the", "mat"];
    let stats = sentence_stats(&cand, &[reference])?;
    println!("clipped unigram precision {}/{}", stats.matches[0], stats.totals[0]);

    let hyps = ["the cat sat on the mat", "a dog barked loudly at night"];
    let refs = vec![
        vec!["the cat sat on the mat", "the dog barked loudly at night"],
        vec!["a cat sat on a mat", "a dog was barking at night"],
    ];
    let score = corpus_bleu_lines(&hyps, &refs)?;
    println!(
        "BLEU = {:.2} (p = {:.3?}, BP = {:.3}, ratio = {:.3})",
        score.percent(),
        score.precisions,
        score.brevity_penalty,
        score.ratio
    );
    let identical = corpus_bleu(&sentence_stats(&reference, &[reference])?)?;
    println!("identical hypothesis: {:.2}", identical.percent());
    Ok(())
}
