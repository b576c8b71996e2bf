const OPEN: &str = "\\boxed{";

/// Contents of the last `\boxed{...}` in `text`, honouring nested braces.
///
/// Returns `None` when there is no tag or when the last tag is not closed.
pub fn parse_boxed(text: &str) -> Option<&str> {
    let start = text.rfind(OPEN)? + OPEN.len();
    let mut depth = 1usize;
    for (i, c) in text[start..].char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + i]);
                }
            }
            _ => {}
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(parse_boxed("the answer is \\boxed{42}"), Some("42"));
        assert_eq!(parse_boxed("\\boxed{1+2} then \\boxed{3}"), Some("3"));
        assert_eq!(parse_boxed("\\boxed{unclosed"), None);
        assert_eq!(parse_boxed("no tag here"), None);
        assert_eq!(parse_boxed("\\boxed{\\frac{1}{2}}"), Some("\\frac{1}{2}"));
        assert_eq!(parse_boxed("\\boxed{}"), Some(""));
        assert_eq!(parse_boxed("\\boxed{1} \\boxed{2"), None);
    }

    /// Scan every `\boxed{` start and keep the last one that closes.
    fn brute_force_last(text: &str) -> Option<String> {
        let bytes = text.as_bytes();
        let mut last_start = None;
        for i in 0..bytes.len() {
            if text[i..].starts_with(OPEN) {
                last_start = Some(i + OPEN.len());
            }
        }
        let s = last_start?;
        let mut depth = 0i32;
        let mut out = String::new();
        for c in text[s..].chars() {
            if c == '}' && depth == 0 {
                return Some(out);
            }
            if c == '{' {
                depth += 1;
            }
            if c == '}' {
                depth -= 1;
            }
            out.push(c);
        }
        None
    }

    #[test]
    fn agrees_with_brute_force_scan() {
        let cases = [
            "\\boxed{1+2} then \\boxed{3}",
            "x \\boxed{a{b}c} y",
            "\\boxed{1}\\boxed{2}\\boxed{{3}}",
            "}}\\boxed{",
            "\\boxed{ ( 2 + 3 ) * 4 }",
        ];
        for c in cases {
            assert_eq!(parse_boxed(c).map(String::from), brute_force_last(c), "{c}");
        }
    }
}
