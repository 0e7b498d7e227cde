//! Normalizes and segments Arabic lines with the shipped rule table and
//! clitic lexicon, then joins the clitics back.
//!
//! ```text
//! cargo run --example normalize_segment [file]
//! ```

use arnmt::textprep::{desegment, normalize, segment, split_punctuation, AffixLexicon, ArabicPreprocessor};

fn main() -> arnmt::Result<()> {
    let lines: Vec<String> = match std::env::args().nth(1) {
        Some(path) => std::fs::read_to_string(&path)
            .map_err(|e| arnmt::Error::Input(format!("{path}: {e}")))?
            .lines()
            .map(str::to_string)
            .collect(),
        None => vec![
            "والكتاب على الطاولة.".to_string(),
            "وَكَتَبـــوا رسالتهم إلى الأمير".to_string(),
            "فذهب إلى مدرستها".to_string(),
        ],
    };
    let lexicon = AffixLexicon::default();
    let pre = ArabicPreprocessor::default();
    for line in &lines {
        let normalized = split_punctuation(&normalize(line)).join(" ");
        let segmented = segment(&normalized, &lexicon);
        println!("input      {line}");
        println!("normalized {normalized}");
        println!("segmented  {}", segmented.to_line());
        println!("rejoined   {}", desegment(&segmented)?);
        println!("pipeline   {}", pre.process(line).join(" "));
        println!();
    }
    Ok(())
}
