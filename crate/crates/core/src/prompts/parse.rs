use std::fmt;

/// A model response that did not match the expected grammar. Keeps the raw text so it
/// can be fed back to the next prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseFailure {
    pub reason: String,
    /// SEARCH/REPLACE block that failed, when applicable.
    pub block_index: Option<usize>,
    pub raw: String,
}

impl ParseFailure {
    fn new(reason: impl Into<String>, raw: &str) -> Self {
        ParseFailure {
            reason: reason.into(),
            block_index: None,
            raw: raw.to_string(),
        }
    }
}

impl fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.block_index {
            Some(i) => write!(f, "block {i}: {}", self.reason),
            None => f.write_str(&self.reason),
        }
    }
}

impl std::error::Error for ParseFailure {}

/// Body of the last complete fenced block. The language tag is optional.
pub fn parse_code_block(response: &str) -> Result<String, ParseFailure> {
    let mut last: Option<Vec<&str>> = None;
    let mut open: Option<Vec<&str>> = None;
    for line in response.split('\n') {
        let line_nocr = line.strip_suffix('\r').unwrap_or(line);
        match open.as_mut() {
            None if line_nocr.trim_start().starts_with("```") => open = Some(Vec::new()),
            None => {}
            Some(_) if line_nocr.trim() == "```" => last = open.take(),
            Some(body) => body.push(line),
        }
    }
    last.map(|body| body.join("\n"))
        .ok_or_else(|| ParseFailure::new("no fenced code block in response", response))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiffBlock {
    pub search: String,
    pub replace: String,
}

const SEARCH: &str = "<<<<<<< SEARCH";
const DIVIDER: &str = "=======";
const REPLACE: &str = ">>>>>>> REPLACE";

/// All SEARCH/REPLACE blocks in order of appearance.
pub fn parse_diff_blocks(response: &str) -> Result<Vec<DiffBlock>, ParseFailure> {
    enum State {
        Outside,
        Search(Vec<String>),
        Replace(Vec<String>, Vec<String>),
    }
    let mut blocks = Vec::new();
    let mut state = State::Outside;
    for line in response.split('\n') {
        let marker = line.trim_end();
        state = match state {
            State::Outside if marker == SEARCH => State::Search(Vec::new()),
            State::Outside => State::Outside,
            State::Search(s) if marker == DIVIDER => State::Replace(s, Vec::new()),
            State::Search(mut s) => {
                s.push(line.to_string());
                State::Search(s)
            }
            State::Replace(s, r) if marker == REPLACE => {
                let block = DiffBlock {
                    search: s.join("\n"),
                    replace: r.join("\n"),
                };
                if block.search.is_empty() {
                    let mut f = ParseFailure::new("empty SEARCH section", response);
                    f.block_index = Some(blocks.len());
                    return Err(f);
                }
                blocks.push(block);
                State::Outside
            }
            State::Replace(s, mut r) => {
                r.push(line.to_string());
                State::Replace(s, r)
            }
        };
    }
    if !matches!(state, State::Outside) {
        let mut f = ParseFailure::new("unterminated SEARCH/REPLACE block", response);
        f.block_index = Some(blocks.len());
        return Err(f);
    }
    if blocks.is_empty() {
        return Err(ParseFailure::new("no SEARCH/REPLACE blocks in response", response));
    }
    Ok(blocks)
}

/// Apply every block to `parent` in order, each replacing the first exact occurrence of
/// its search text in the running result.
pub fn parse_diff_and_apply(parent: &str, response: &str) -> Result<String, ParseFailure> {
    let blocks = parse_diff_blocks(response)?;
    let mut text = parent.to_string();
    for (i, b) in blocks.iter().enumerate() {
        match text.find(&b.search) {
            Some(at) => text.replace_range(at..at + b.search.len(), &b.replace),
            None => {
                let mut f = ParseFailure::new("SEARCH text not found in the parent", response);
                f.block_index = Some(i);
                return Err(f);
            }
        }
    }
    Ok(text)
}

const OPEN_TAG: &str = "<prompt>";
const CLOSE_TAG: &str = "</prompt>";

/// Text between the first `<prompt>` and the last `</prompt>`, minus one newline at
/// each end.
pub fn parse_prompt_tags(response: &str) -> Result<String, ParseFailure> {
    let start = response
        .find(OPEN_TAG)
        .ok_or_else(|| ParseFailure::new("missing <prompt> tag", response))?
        + OPEN_TAG.len();
    let end = response
        .rfind(CLOSE_TAG)
        .filter(|&e| e >= start)
        .ok_or_else(|| ParseFailure::new("missing </prompt> tag after <prompt>", response))?;
    let mut body = &response[start..end];
    body = body
        .strip_prefix("\r\n")
        .or_else(|| body.strip_prefix('\n'))
        .unwrap_or(body);
    body = body
        .strip_suffix("\r\n")
        .or_else(|| body.strip_suffix('\n'))
        .unwrap_or(body);
    Ok(body.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn code_block_cases() {
        assert_eq!(parse_code_block("```python\nx = 1\n```").unwrap(), "x = 1");
        let two = "Here:\n```\na\n```\nthen\n```py\nb\nc\n```\ntrailing";
        assert_eq!(parse_code_block(two).unwrap(), "b\nc");
        assert!(parse_code_block("no fences").is_err());
        // An unclosed trailing fence does not displace the last complete block.
        assert_eq!(parse_code_block("```\nok\n```\n```\ncut off").unwrap(), "ok");
    }

    #[test]
    fn diff_cases() {
        let parent = "a\nb\nc\n";
        let ident = "<<<<<<< SEARCH\nb\n=======\nb\n>>>>>>> REPLACE";
        assert_eq!(parse_diff_and_apply(parent, ident).unwrap(), parent);
        let miss = "<<<<<<< SEARCH\nzzz\n=======\nq\n>>>>>>> REPLACE";
        let f = parse_diff_and_apply(parent, miss).unwrap_err();
        assert_eq!(f.block_index, Some(0));
        assert!(parse_diff_and_apply(parent, "nothing").is_err());
        assert!(parse_diff_and_apply(parent, "<<<<<<< SEARCH\nb\n=======\n").is_err());
        let dup = "<<<<<<< SEARCH\nx\n=======\ny\n>>>>>>> REPLACE";
        assert_eq!(parse_diff_and_apply("x x\nx", dup).unwrap(), "y x\nx");
    }

    #[test]
    fn prompt_tag_cases() {
        assert_eq!(parse_prompt_tags("<prompt>\ndo X\n</prompt>").unwrap(), "do X");
        assert_eq!(parse_prompt_tags("Sure!\n<prompt>do X</prompt>").unwrap(), "do X");
        assert!(parse_prompt_tags("<prompt>\ndo X").is_err());
        assert!(parse_prompt_tags("</prompt> <prompt>").is_err());
        assert_eq!(
            parse_prompt_tags("<prompt>\n\nuse <prompt> and </prompt> literally\n\n</prompt>").unwrap(),
            "\nuse <prompt> and </prompt> literally\n"
        );
    }
}
