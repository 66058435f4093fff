//! Total C/C++-style lexer for student code, including code that does not compile.

pub const STR_TOKEN: &str = "<STR>";
pub const CHR_TOKEN: &str = "<CHR>";
pub const NUM_TOKEN: &str = "<NUM>";

const PUNCT3: [&str; 4] = [">>=", "<<=", "...", "->*"];
const PUNCT2: [&str; 22] = [
    "::", "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "+=", "-=", "*=", "/=",
    "%=", "&=", "|=", "^=", "##", ".*",
];

/// Splits `code` into identifiers/keywords, operators and punctuation.
/// Literals collapse to `<NUM>`, `<STR>` and `<CHR>`; comments are dropped.
pub fn tokenize(code: &str) -> Vec<String> {
    let chars: Vec<char> = code.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let n = chars.len();
    while i < n {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < n && chars[i] != '\n' {
                i += 1;
            }
        } else if c == '/' && chars.get(i + 1) == Some(&'*') {
            i += 2;
            while i < n && !(chars[i] == '*' && chars.get(i + 1) == Some(&'/')) {
                i += 1;
            }
            i = (i + 2).min(n);
        } else if c == '"' || c == '\'' {
            i = skip_quoted(&chars, i + 1, c);
            out.push(if c == '"' { STR_TOKEN } else { CHR_TOKEN }.to_string());
        } else if c.is_ascii_digit()
            || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()))
        {
            i += 1;
            while i < n {
                let d = chars[i];
                let exp_sign =
                    (d == '+' || d == '-') && matches!(chars[i - 1], 'e' | 'E' | 'p' | 'P');
                if d.is_ascii_alphanumeric() || d == '.' || d == '_' || d == '\'' || exp_sign {
                    i += 1;
                } else {
                    break;
                }
            }
            out.push(NUM_TOKEN.to_string());
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < n && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(chars[start..i].iter().collect());
        } else {
            let rest: String = chars[i..(i + 3).min(n)].iter().collect();
            let len = if PUNCT3.iter().any(|p| rest.starts_with(p)) {
                3
            } else if PUNCT2.iter().any(|p| rest.starts_with(p)) {
                2
            } else {
                1
            };
            out.push(chars[i..i + len].iter().collect());
            i += len;
        }
    }
    out
}

/// Lossy variant for raw bytes; invalid UTF-8 becomes replacement characters.
pub fn tokenize_bytes(code: &[u8]) -> Vec<String> {
    tokenize(&String::from_utf8_lossy(code))
}

/// Index just past the closing quote, or the end of line for an unterminated literal.
fn skip_quoted(chars: &[char], mut i: usize, quote: char) -> usize {
    while i < chars.len() {
        match chars[i] {
            '\\' => i += 2,
            '\n' => return i,
            c if c == quote => return i + 1,
            _ => i += 1,
        }
    }
    chars.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn simple_program() {
        assert_eq!(
            toks("int main(){return 0;}"),
            ["int", "main", "(", ")", "{", "return", NUM_TOKEN, ";", "}"]
        );
    }

    #[test]
    fn empty_input() {
        assert!(toks("").is_empty());
    }

    #[test]
    fn unterminated_string_is_total() {
        let t = toks("int x = \"unterminated");
        assert_eq!(t.last().map(String::as_str), Some(STR_TOKEN));
        assert_eq!(t, ["int", "x", "=", STR_TOKEN]);
    }

    #[test]
    fn literals_comments_and_operators() {
        let t = toks("a += 1.5e-3; // note\n/* block */ b = 'x' << \"s\\\"q\"; c->d >>= 0x1F;");
        assert_eq!(
            t,
            [
                "a", "+=", NUM_TOKEN, ";", "b", "=", CHR_TOKEN, "<<", STR_TOKEN, ";", "c", "->",
                "d", ">>=", NUM_TOKEN, ";"
            ]
        );
    }

    #[test]
    fn preprocessor_and_unterminated_comment() {
        assert_eq!(
            toks("#include <iostream>"),
            ["#", "include", "<", "iostream", ">"]
        );
        assert_eq!(toks("x /* never closed"), ["x"]);
    }

    #[test]
    fn invalid_bytes_do_not_fail() {
        let t = tokenize_bytes(&[b'a', 0xff, b'b', b' ', b'"']);
        assert_eq!(t.last().map(String::as_str), Some(STR_TOKEN));
    }

    proptest! {
        #[test]
        fn total_and_deterministic(s in any::<String>()) {
            let a = tokenize(&s);
            prop_assert_eq!(&a, &tokenize(&s));
            prop_assert!(a.iter().all(|t| !t.is_empty() && !t.chars().any(char::is_whitespace)));
        }
    }
}
