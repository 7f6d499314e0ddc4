//! Token-level structural analysis of Python sources.
//!
//! This is not a full parser. It tokenizes (strings, comments, indentation, bracket
//! continuation), checks block structure, and classifies keywords and operators by
//! context. That is enough to count the constructs the archive uses as descriptors.

use super::{StructuralCounts, SyntaxAnalyzer, SyntaxError};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Name(String),
    Number,
    Str,
    Op(&'static str),
    Newline,
    Indent,
    Dedent,
}

const OPERATORS: [&str; 47] = [
    "**=", "//=", ">>=", "<<=", "...", "->", ":=", "**", "//", "<<", ">>", "<=", ">=", "==", "!=",
    "+=", "-=", "*=", "/=", "%=", "@=", "&=", "|=", "^=", "+", "-", "*", "/", "%", "@", "<", ">",
    "=", "&", "|", "^", "~", "(", ")", "[", "]", "{", "}", ",", ":", ".", ";",
];

const KEYWORDS: [&str; 35] = [
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class",
    "continue", "def", "del", "elif", "else", "except", "finally", "for", "from", "global", "if",
    "import", "in", "is", "lambda", "nonlocal", "not", "or", "pass", "raise", "return", "try",
    "while", "with", "yield",
];

const MATH_OPS: [&str; 16] = [
    "+", "-", "*", "/", "//", "%", "**", "@", "+=", "-=", "*=", "/=", "//=", "%=", "**=", "@=",
];

const COMPARE_OPS: [&str; 6] = ["<", ">", "==", "!=", "<=", ">="];

fn is_keyword(s: &str) -> bool {
    KEYWORDS.contains(&s)
}

fn tokenize(src: &str) -> Result<Vec<Tok>, SyntaxError> {
    let chars: Vec<char> = src.chars().collect();
    let mut toks = Vec::new();
    let mut indents = vec![0usize];
    let mut depth = 0usize;
    let mut i = 0;
    let mut at_line_start = true;
    let mut line = 1usize;
    let err = |line: usize, msg: &str| SyntaxError {
        line,
        message: msg.to_string(),
    };

    while i < chars.len() {
        if at_line_start && depth == 0 {
            let mut col = 0usize;
            while i < chars.len() && (chars[i] == ' ' || chars[i] == '\t' || chars[i] == '\x0c') {
                col = if chars[i] == '\t' { (col / 8 + 1) * 8 } else { col + 1 };
                i += 1;
            }
            if i >= chars.len() {
                break;
            }
            // Blank and comment-only lines do not affect indentation.
            if chars[i] == '\n' || chars[i] == '\r' || chars[i] == '#' {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
                if i < chars.len() {
                    i += 1;
                    line += 1;
                }
                continue;
            }
            let cur = *indents.last().expect("indent stack never empty");
            if col > cur {
                indents.push(col);
                toks.push(Tok::Indent);
            } else {
                while col < *indents.last().expect("indent stack never empty") {
                    indents.pop();
                    toks.push(Tok::Dedent);
                }
                if col != *indents.last().expect("indent stack never empty") {
                    return Err(err(line, "unindent does not match any outer indentation level"));
                }
            }
            at_line_start = false;
        }

        let c = chars[i];
        match c {
            '\n' => {
                line += 1;
                i += 1;
                if depth == 0 {
                    if !matches!(toks.last(), Some(Tok::Newline) | None) {
                        toks.push(Tok::Newline);
                    }
                    at_line_start = true;
                }
            }
            ' ' | '\t' | '\r' | '\x0c' => i += 1,
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '\\' => {
                if i + 1 < chars.len() && chars[i + 1] == '\n' {
                    i += 2;
                    line += 1;
                } else if i + 2 < chars.len() && chars[i + 1] == '\r' && chars[i + 2] == '\n' {
                    i += 3;
                    line += 1;
                } else {
                    return Err(err(line, "unexpected character after line continuation"));
                }
            }
            '\'' | '"' => {
                i = scan_string(&chars, i, &mut line)?;
                toks.push(Tok::Str);
            }
            c if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) => {
                i += 1;
                while i < chars.len() {
                    let d = chars[i];
                    if d.is_ascii_alphanumeric() || d == '_' || d == '.' {
                        i += 1;
                    } else if (d == '+' || d == '-') && matches!(chars[i - 1], 'e' | 'E') {
                        i += 1;
                    } else {
                        break;
                    }
                }
                toks.push(Tok::Number);
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                // String prefixes such as r"", b'', f"", rb"".
                if i < chars.len()
                    && (chars[i] == '\'' || chars[i] == '"')
                    && word.len() <= 2
                    && word.chars().all(|p| "rRbBfFuU".contains(p))
                {
                    i = scan_string(&chars, i, &mut line)?;
                    toks.push(Tok::Str);
                } else {
                    toks.push(Tok::Name(word));
                }
            }
            _ => {
                let rest: String = chars[i..chars.len().min(i + 3)].iter().collect();
                let Some(op) = OPERATORS.iter().find(|op| rest.starts_with(**op)) else {
                    return Err(err(line, &format!("invalid character {c:?}")));
                };
                match *op {
                    "(" | "[" | "{" => depth += 1,
                    ")" | "]" | "}" => {
                        if depth == 0 {
                            return Err(err(line, &format!("unmatched '{op}'")));
                        }
                        depth -= 1;
                    }
                    _ => {}
                }
                i += op.chars().count();
                toks.push(Tok::Op(op));
            }
        }
    }
    if depth != 0 {
        return Err(err(line, "unclosed bracket at end of input"));
    }
    if !matches!(toks.last(), Some(Tok::Newline) | None) {
        toks.push(Tok::Newline);
    }
    for _ in 1..indents.len() {
        toks.push(Tok::Dedent);
    }
    Ok(toks)
}

fn scan_string(chars: &[char], start: usize, line: &mut usize) -> Result<usize, SyntaxError> {
    let q = chars[start];
    let triple = chars.get(start + 1) == Some(&q) && chars.get(start + 2) == Some(&q);
    let mut i = start + if triple { 3 } else { 1 };
    let start_line = *line;
    while i < chars.len() {
        let c = chars[i];
        if c == '\\' {
            if chars.get(i + 1) == Some(&'\n') {
                *line += 1;
            }
            i += 2;
            continue;
        }
        if c == '\n' {
            if !triple {
                break;
            }
            *line += 1;
        }
        if c == q {
            if !triple {
                return Ok(i + 1);
            }
            if chars.get(i + 1) == Some(&q) && chars.get(i + 2) == Some(&q) {
                return Ok(i + 3);
            }
        }
        i += 1;
    }
    Err(SyntaxError {
        line: start_line,
        message: "unterminated string literal".into(),
    })
}

#[derive(Debug, Clone, Copy)]
struct Group {
    opener: &'static str,
    has_for: bool,
    /// Inside a `def ...(` parameter list.
    params: bool,
}

/// Structural analyzer for Python candidates.
///
/// Sources without any `def` are rejected: a candidate program must at least define
/// the function it is asked to implement.
#[derive(Debug, Clone, Copy, Default)]
pub struct PythonAnalyzer;

impl SyntaxAnalyzer for PythonAnalyzer {
    fn analyze(&self, source: &str) -> Result<StructuralCounts, SyntaxError> {
        let toks = tokenize(source)?;
        let mut counts = StructuralCounts::default();
        let mut groups: Vec<Group> = Vec::new();
        // Stack of open indented blocks; true for loop bodies.
        let mut blocks: Vec<bool> = Vec::new();
        let mut pending_block: Option<bool> = None;
        let mut stmt_start = true;
        let mut stmt_first: Option<String> = None;
        // Waiting for the `in` that closes a `for` target, per bracket depth.
        let mut for_targets: Vec<usize> = Vec::new();
        let mut saw_def = false;
        let mut line = 1usize;
        let mut prev: Option<&Tok> = None;

        for (idx, tok) in toks.iter().enumerate() {
            let depth = groups.len();
            match tok {
                Tok::Newline => {
                    line += 1;
                    let header = stmt_first.as_deref().is_some_and(is_compound_head);
                    let ends_colon = matches!(prev, Some(Tok::Op(":")));
                    if header && !ends_colon {
                        // A simple statement after the colon (`if x: y`) is fine.
                    }
                    if ends_colon {
                        if !header {
                            return Err(SyntaxError {
                                line,
                                message: "unexpected ':' at end of statement".into(),
                            });
                        }
                        if !matches!(toks.get(idx + 1), Some(Tok::Indent)) {
                            return Err(SyntaxError {
                                line,
                                message: "expected an indented block".into(),
                            });
                        }
                        pending_block = Some(matches!(stmt_first.as_deref(), Some("for" | "while")));
                    }
                    stmt_start = true;
                    stmt_first = None;
                    for_targets.clear();
                    prev = Some(tok);
                    continue;
                }
                Tok::Indent => {
                    match pending_block.take() {
                        Some(is_loop) => blocks.push(is_loop),
                        None => {
                            return Err(SyntaxError {
                                line,
                                message: "unexpected indent".into(),
                            })
                        }
                    }
                    prev = Some(tok);
                    continue;
                }
                Tok::Dedent => {
                    blocks.pop();
                    prev = Some(tok);
                    continue;
                }
                _ => {}
            }

            let first_of_stmt = stmt_start;
            stmt_start = false;
            if first_of_stmt {
                if let Tok::Name(w) = tok {
                    stmt_first = Some(w.clone());
                } else {
                    stmt_first = Some(String::new());
                }
            }
            // `async for` / `async def` behave like their plain forms.
            let at_head = first_of_stmt
                || matches!(prev, Some(Tok::Name(p)) if p == "async")
                || matches!(prev, Some(Tok::Op(";")))
                || (matches!(prev, Some(Tok::Op(":"))) && depth == 0 && !matches!(stmt_first.as_deref(), Some("lambda")));

            match tok {
                Tok::Name(w) => match w.as_str() {
                    "def" => {
                        saw_def = true;
                    }
                    "for" if depth == 0 && at_head => {
                        counts.loop_count += 1;
                        let nesting = blocks.iter().filter(|b| **b).count() as u64 + 1;
                        counts.max_loop_nesting = counts.max_loop_nesting.max(nesting);
                        if stmt_first.as_deref() == Some("async") {
                            stmt_first = Some("for".into());
                        }
                        for_targets.push(depth);
                    }
                    "for" => {
                        if let Some(g) = groups.last_mut() {
                            if !g.has_for {
                                g.has_for = true;
                                counts.comprehension_count += 1;
                            }
                        }
                        for_targets.push(depth);
                    }
                    "while" if at_head => {
                        counts.loop_count += 1;
                        let nesting = blocks.iter().filter(|b| **b).count() as u64 + 1;
                        counts.max_loop_nesting = counts.max_loop_nesting.max(nesting);
                    }
                    "if" | "elif" if at_head && depth == 0 => counts.branch_count += 1,
                    "if" => {
                        // A filter inside a comprehension is part of the comprehension;
                        // anything else is a conditional expression.
                        let in_comprehension = groups.last().is_some_and(|g| g.has_for);
                        if !in_comprehension {
                            counts.branch_count += 1;
                        }
                    }
                    "and" | "or" => counts.bool_op_count += 1,
                    "in" => {
                        if for_targets.last() == Some(&depth) {
                            for_targets.pop();
                        } else if !matches!(prev, Some(Tok::Name(p)) if p == "not") {
                            counts.comparison_count += 1;
                        }
                    }
                    "not" => {
                        if matches!(toks.get(idx + 1), Some(Tok::Name(n)) if n == "in") {
                            counts.comparison_count += 1;
                        }
                    }
                    "is" => counts.comparison_count += 1,
                    _ => {}
                },
                Tok::Op(op) => {
                    let op = *op;
                    match op {
                        "(" | "[" | "{" => {
                            let after_value = match prev {
                                Some(Tok::Name(p)) => !is_keyword(p),
                                Some(Tok::Op(")")) | Some(Tok::Op("]")) | Some(Tok::Str) => true,
                                _ => false,
                            };
                            let is_def_params = op == "("
                                && idx >= 2
                                && matches!(&toks[idx - 2], Tok::Name(d) if d == "def" || d == "class");
                            if after_value && !is_def_params {
                                if op == "(" {
                                    counts.call_count += 1;
                                } else if op == "[" {
                                    counts.subscript_count += 1;
                                }
                            }
                            groups.push(Group {
                                opener: op,
                                has_for: false,
                                params: is_def_params || matches!(prev, Some(Tok::Name(p)) if p == "lambda"),
                            });
                        }
                        ")" | "]" | "}" => {
                            let open = groups.pop().map(|g| g.opener);
                            let expected = match op {
                                ")" => "(",
                                "]" => "[",
                                _ => "{",
                            };
                            if open != Some(expected) {
                                return Err(SyntaxError {
                                    line,
                                    message: format!("mismatched '{op}'"),
                                });
                            }
                            for_targets.retain(|&d| d <= groups.len());
                        }
                        "@" if first_of_stmt => {}
                        "*" | "**" => {
                            let unpacking = matches!(
                                prev,
                                None | Some(Tok::Op("(" | "[" | "{" | "," | "=" | ":" | ";"))
                                    | Some(Tok::Newline | Tok::Indent | Tok::Dedent)
                            ) || matches!(prev, Some(Tok::Name(p)) if p == "lambda" || p == "return" || p == "yield" || p == "in")
                                || groups.last().is_some_and(|g| g.params);
                            if !unpacking {
                                counts.math_op_count += 1;
                            }
                        }
                        o if MATH_OPS.contains(&o) => counts.math_op_count += 1,
                        o if COMPARE_OPS.contains(&o) => counts.comparison_count += 1,
                        _ => {}
                    }
                }
                _ => {}
            }
            prev = Some(tok);
        }

        if !saw_def {
            return Err(SyntaxError {
                line: 1,
                message: "no function definition found".into(),
            });
        }
        counts.cyclomatic_complexity =
            1 + counts.branch_count + counts.loop_count + counts.bool_op_count;
        Ok(counts)
    }
}

fn is_compound_head(w: &str) -> bool {
    matches!(
        w,
        "def" | "class" | "if" | "elif" | "else" | "for" | "while" | "try" | "except" | "finally"
            | "with" | "async" | "match" | "case"
    ) || w.starts_with('@')
}
