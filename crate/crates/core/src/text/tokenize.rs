/// Lowercases and splits on whitespace and punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cases() {
        assert_eq!(tokenize("iPhone 8 plus cases"), ["iphone", "8", "plus", "cases"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("kate spade yoga mat"), ["kate", "spade", "yoga", "mat"]);
        assert_eq!(tokenize("  Core i7-8700K, 6 cores!"), ["core", "i7", "8700k", "6", "cores"]);
    }
}
