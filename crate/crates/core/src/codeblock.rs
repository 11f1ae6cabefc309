//! Fenced code block extraction from markdown replies.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodeBlockError {
    #[error("missing code block {tag}")]
    Missing { tag: String },
    #[error("unterminated code block {tag} opened at line {line}")]
    Unterminated { tag: String, line: usize },
}

/// Contents of the first fenced block whose info string equals `tag`, fence
/// lines excluded. Backtick and tilde fences are recognized; a closing fence
/// must use the same character and be at least as long as the opener.
pub fn extract_code_block(text: &str, tag: &str) -> Result<String, CodeBlockError> {
    let lines: Vec<&str> = text.lines().collect();
    let mut i = 0;
    while i < lines.len() {
        let Some((fence_char, fence_len, info)) = opening_fence(lines[i]) else {
            i += 1;
            continue;
        };
        let open_line = i;
        let mut j = i + 1;
        while j < lines.len() && !is_closing_fence(lines[j], fence_char, fence_len) {
            j += 1;
        }
        if info == tag {
            if j >= lines.len() {
                return Err(CodeBlockError::Unterminated {
                    tag: tag.to_string(),
                    line: open_line + 1,
                });
            }
            return Ok(lines[open_line + 1..j].join("\n"));
        }
        i = j + 1;
    }
    Err(CodeBlockError::Missing { tag: tag.to_string() })
}

fn opening_fence(line: &str) -> Option<(char, usize, &str)> {
    let indent = line.len() - line.trim_start_matches(' ').len();
    if indent > 3 {
        return None;
    }
    let rest = &line[indent..];
    let ch = rest.chars().next().filter(|c| *c == '`' || *c == '~')?;
    let len = rest.chars().take_while(|c| *c == ch).count();
    if len < 3 {
        return None;
    }
    let info = rest[len..].trim();
    if ch == '`' && info.contains('`') {
        return None;
    }
    Some((ch, len, info))
}

fn is_closing_fence(line: &str, ch: char, min_len: usize) -> bool {
    let t = line.trim();
    let indent = line.len() - line.trim_start_matches(' ').len();
    indent <= 3 && t.chars().count() >= min_len && t.chars().all(|c| c == ch)
}
