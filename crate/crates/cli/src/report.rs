//! Markdown rendering of a synthesis report with its references.

use std::fmt::Write;

use litscope_core::{NodeKind, NodePayload, PipelineId, SessionError, SessionState};

/// The report of pipeline `pid` followed by one reference per citation
/// marker: the paper, its abstract page and the cited excerpt.
pub fn render_markdown(state: &SessionState, pid: &PipelineId) -> Result<String, SessionError> {
    let run = state.pipeline(pid)?;
    let Some(NodePayload::Report(report)) = &run.node(NodeKind::Synthesis).output else {
        return Err(SessionError::InvalidPayload(format!("{pid} has no report yet")));
    };
    let Some(NodePayload::ReviewResult(review)) = &run.node(NodeKind::Review).output else {
        return Err(SessionError::InvalidPayload(format!("{pid} has no review")));
    };
    let mut out = String::new();
    let _ = writeln!(out, "# {}\n", run.query_text);
    if let Some(NodePayload::KeywordSet(k)) = &run.node(NodeKind::QueryExpansion).output {
        let _ = writeln!(out, "_Keywords: {}_\n", k.iter().collect::<Vec<_>>().join(", "));
    }
    let _ = writeln!(out, "{}\n", report.body.trim_end());
    if !report.citations.is_empty() {
        let _ = writeln!(out, "## References\n");
    }
    for c in &report.citations {
        let Some(chunk) = review.chunks.iter().find(|x| x.chunk_id == c.chunk_id) else {
            continue;
        };
        let paper = state.paper(&chunk.arxiv_id)?;
        let _ = writeln!(
            out,
            "[{}] {} ({}), <{}>\n    > {}\n",
            c.marker,
            paper.title,
            paper.year(),
            paper.abs_url,
            chunk.text
        );
    }
    Ok(out)
}
