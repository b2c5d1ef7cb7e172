//! Layout of the generated sections substituted into `{{abstracts}}`, and the
//! matching readers used by the mock agent.

use crate::keywords::KeywordSet;

pub const QUERY_LINE: &str = "Research interest: ";
pub const CURRENT_QUERY_LINE: &str = "Current query: ";
pub const KEYWORDS_LINE: &str = "Search keywords: ";
pub const CURRENT_KEYWORDS_LINE: &str = "Current keywords: ";

pub fn keywords(set: &KeywordSet) -> String {
    set.iter().collect::<Vec<_>>().join(", ")
}

/// One paper as the review and proposal prompts present it.
pub fn paper_block(arxiv_id: &str, title: &str, abstract_text: &str) -> String {
    format!("[paper {arxiv_id}]\ntitle: {title}\nabstract: {abstract_text}\n")
}

/// One numbered excerpt as the synthesis prompt presents it.
pub fn chunk_line(marker: usize, arxiv_id: &str, text: &str) -> String {
    format!("[{marker}] ({arxiv_id}) {text}\n")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaperBlock {
    pub arxiv_id: String,
    pub title: String,
    pub abstract_text: String,
}

pub fn read_paper_blocks(prompt: &str) -> Vec<PaperBlock> {
    let mut out: Vec<PaperBlock> = Vec::new();
    for line in prompt.lines() {
        if let Some(id) = line.strip_prefix("[paper ").and_then(|r| r.strip_suffix(']')) {
            out.push(PaperBlock {
                arxiv_id: id.to_owned(),
                title: String::new(),
                abstract_text: String::new(),
            });
        } else if let Some(last) = out.last_mut() {
            if let Some(t) = line.strip_prefix("title: ") {
                last.title = t.to_owned();
            } else if let Some(a) = line.strip_prefix("abstract: ") {
                last.abstract_text = a.to_owned();
            }
        }
    }
    out
}

/// `(marker, arxiv_id, text)` for every chunk line.
pub fn read_chunk_lines(prompt: &str) -> Vec<(usize, String, String)> {
    prompt
        .lines()
        .filter_map(|line| {
            let rest = line.strip_prefix('[')?;
            let (n, rest) = rest.split_once("] (")?;
            let (id, text) = rest.split_once(") ")?;
            Some((n.parse().ok()?, id.to_owned(), text.to_owned()))
        })
        .collect()
}

pub fn read_line_value<'a>(prompt: &'a str, prefix: &str) -> Option<&'a str> {
    prompt.lines().find_map(|l| l.strip_prefix(prefix)).map(str::trim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_and_chunks_read_back() {
        let text = format!(
            "intro\n{}{}",
            paper_block("2501.00001", "A title", "Some abstract."),
            paper_block("2501.00002", "B", "Other.")
        );
        let blocks = read_paper_blocks(&text);
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0].abstract_text, "Some abstract.");
        let chunks = format!("{}{}", chunk_line(1, "x.1", "alpha beta"), chunk_line(12, "y", "g"));
        assert_eq!(
            read_chunk_lines(&chunks),
            vec![(1, "x.1".into(), "alpha beta".into()), (12, "y".into(), "g".into())]
        );
    }
}
