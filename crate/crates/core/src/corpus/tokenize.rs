/// Lowercases, splits on whitespace and detaches leading/trailing
/// punctuation as one token per character. Interior punctuation stays
/// attached, so `aka.ms/fix` and `don't` survive as single tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let word = word.to_lowercase();
        let chars: Vec<char> = word.chars().collect();
        let start = chars
            .iter()
            .position(|c| !is_punct(*c))
            .unwrap_or(chars.len());
        let end = chars
            .iter()
            .rposition(|c| !is_punct(*c))
            .map_or(start, |e| e + 1);
        for c in &chars[..start] {
            out.push(c.to_string());
        }
        if start < end {
            out.push(chars[start..end].iter().collect());
        }
        for c in &chars[end.max(start)..] {
            out.push(c.to_string());
        }
    }
    out
}

pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    tokens
        .iter()
        .map(AsRef::as_ref)
        .collect::<Vec<_>>()
        .join(" ")
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn detaches_punctuation() {
        assert_eq!(tokenize("Hello, world"), vec!["hello", ",", "world"]);
        assert_eq!(
            tokenize("May I have the product key?"),
            vec!["may", "i", "have", "the", "product", "key", "?"]
        );
    }

    #[test]
    fn empty_input() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("   \t ").is_empty());
    }

    #[test]
    fn interior_punctuation_is_kept() {
        assert_eq!(
            tokenize("visit aka.ms/fix-42."),
            vec!["visit", "aka.ms/fix-42", "."]
        );
        assert_eq!(tokenize("...!"), vec![".", ".", ".", "!"]);
        assert_eq!(tokenize("(0x80070005)"), vec!["(", "0x80070005", ")"]);
    }

    #[test]
    fn idempotent_on_its_output() {
        let toks = tokenize("Error (0x1F) at aka.ms/x, don't panic!!");
        assert_eq!(tokenize(&detokenize(&toks)), toks);
    }

    fn squash(s: &str) -> String {
        s.to_lowercase()
            .chars()
            .filter(|c| !c.is_whitespace())
            .collect()
    }

    proptest! {
        #[test]
        fn round_trip_differs_only_in_case_and_spacing(t in "[ a-zA-Z0-9.,?!'/:-]{0,40}") {
            let back = detokenize(&tokenize(&t));
            prop_assert_eq!(squash(&back), squash(&t));
        }
    }
}
