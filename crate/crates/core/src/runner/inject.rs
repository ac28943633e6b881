//! Top-of-file snippet injection.

/// Comment text marking a runner-flags comment (`// Flags: --expose-gc`).
const FLAGS_MARKER: &str = "Flags:";

fn is_directive(line: &str) -> bool {
    let t = line.trim();
    let t = t.split_once("//").map_or(t, |(code, _)| code).trim_end();
    let t = t.strip_suffix(';').unwrap_or(t).trim_end();
    let bytes = t.as_bytes();
    if bytes.len() < 2 {
        return false;
    }
    let quote = bytes[0];
    (quote == b'\'' || quote == b'"') && bytes[bytes.len() - 1] == quote && !t[1..t.len() - 1].contains(quote as char)
}

/// Inserts `snippet` at the top of a test source.
///
/// The snippet goes after the shebang line, after the directive prologue
/// (so `'use strict'` keeps applying to the whole file) and after any
/// leading comment carrying runner flags. Everything from the insertion
/// point on is the original source, byte for byte.
pub fn inject(source: &str, snippet: &str) -> String {
    let mut insert_at = 0;
    let mut pos = 0;
    let mut in_block = false;
    let mut block_has_flags = false;
    let mut first = true;

    while pos < source.len() {
        let end = source[pos..].find('\n').map_or(source.len(), |i| pos + i + 1);
        let line = &source[pos..end];
        let trimmed = line.trim();

        if in_block {
            block_has_flags |= line.contains(FLAGS_MARKER);
            if trimmed.contains("*/") {
                in_block = false;
                if block_has_flags {
                    insert_at = end;
                }
            }
        } else if first && line.starts_with("#!") {
            insert_at = end;
        } else if trimmed.is_empty() {
        } else if trimmed.starts_with("//") {
            if trimmed.contains(FLAGS_MARKER) {
                insert_at = end;
            }
        } else if let Some(body) = trimmed.strip_prefix("/*") {
            block_has_flags = trimmed.contains(FLAGS_MARKER);
            if body.contains("*/") {
                if block_has_flags {
                    insert_at = end;
                }
            } else {
                in_block = true;
            }
        } else if is_directive(line) {
            insert_at = end;
        } else {
            break;
        }
        first = false;
        pos = end;
    }

    let mut out = String::with_capacity(source.len() + snippet.len() + 2);
    out.push_str(&source[..insert_at]);
    if insert_at > 0 && !source[..insert_at].ends_with('\n') {
        out.push('\n');
    }
    out.push_str(snippet);
    if !snippet.is_empty() && !snippet.ends_with('\n') {
        out.push('\n');
    }
    out.push_str(&source[insert_at..]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn plain_prepend() {
        assert_eq!(inject("a();\n", "S;\n"), "S;\na();\n");
    }

    #[test]
    fn after_use_strict() {
        assert_eq!(inject("\"use strict\";\nx();\n", "S;\n"), "\"use strict\";\nS;\nx();\n");
        assert_eq!(inject("'use strict'\n\nx();\n", "S;"), "'use strict'\nS;\n\nx();\n");
    }

    #[test]
    fn shebang_stays_first() {
        let out = inject("#!/usr/bin/env x\nrun();\n", "S;\n");
        assert_eq!(out, "#!/usr/bin/env x\nS;\nrun();\n");
        assert_eq!(out.lines().nth(1), Some("S;"));
    }

    #[test]
    fn flags_comment_and_prologue_in_either_order() {
        let a = "// Flags: --expose-internals\n'use strict';\nconst x = 1;\n";
        assert_eq!(inject(a, "S;\n"), "// Flags: --expose-internals\n'use strict';\nS;\nconst x = 1;\n");
        let b = "'use strict';\n// Flags: --expose-gc\nconst x = 1;\n";
        assert_eq!(inject(b, "S;\n"), "'use strict';\n// Flags: --expose-gc\nS;\nconst x = 1;\n");
    }

    #[test]
    fn plain_header_comment_without_directive_keeps_offset_zero() {
        assert_eq!(inject("// Copyright\nfoo();\n", "S;\n"), "S;\n// Copyright\nfoo();\n");
    }

    #[test]
    fn block_comment_with_flags() {
        let src = "/*\n * Flags: --no-warnings\n */\nfoo();\n";
        assert_eq!(inject(src, "S;\n"), "/*\n * Flags: --no-warnings\n */\nS;\nfoo();\n");
    }

    #[test]
    fn unterminated_last_line() {
        assert_eq!(inject("'use strict'", "S;\n"), "'use strict'\nS;\n");
    }

    #[test]
    fn string_expression_is_not_directive_when_not_alone() {
        assert!(!is_directive("'a' + b;"));
        assert!(is_directive("\"use strict\"; // note"));
    }

    proptest! {
        #[test]
        fn suffix_is_preserved(src in "(#!x\n)?('use strict';\n)?[a-z();\n ]{0,40}", snippet in "[A-Z;]{1,8}\n") {
            let out = inject(&src, &snippet);
            let at = out.find(&snippet).unwrap();
            let before = &out[..at];
            let after = &out[at + snippet.len()..];
            prop_assert!(src.ends_with(after));
            prop_assert_eq!(before.len() + after.len(), src.len());
        }
    }
}
