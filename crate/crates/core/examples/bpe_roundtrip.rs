//! Learns BPE merges on the toy English corpus, segments a sentence and
//! decodes it back.

use arnmt::subword::{apply_bpe_line, decode_bpe_line, learn_bpe, Vocabulary, DEFAULT_VOCAB_CAP};

fn main() -> arnmt::Result<()> {
    let text = include_str!("../data/toy/un.en");
    let lines: Vec<&str> = text.lines().collect();
    let table = learn_bpe(&lines, 60, DEFAULT_VOCAB_CAP)?;
    println!("first merges:");
    for (l, r) in table.merges().iter().take(8) {
        println!("  {l} {r}");
    }
    let pieces: Vec<String> = lines.iter().map(|l| apply_bpe_line(l, &table)).collect();
    let vocab = Vocabulary::build(&pieces, DEFAULT_VOCAB_CAP)?;
    println!("{} merges, {} vocabulary entries", table.len(), vocab.len());

    let sentence = "the teachers wrote their letters to the mountain .";
    let encoded = apply_bpe_line(sentence, &table);
    println!("{sentence}\n-> {encoded}\n-> {}", decode_bpe_line(&encoded)?);
    let ids = vocab.encode(&encoded.split_whitespace().collect::<Vec<_>>());
    println!("ids {ids:?}");
    Ok(())
}
