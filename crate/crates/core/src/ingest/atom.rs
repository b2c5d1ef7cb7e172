use std::collections::BTreeSet;

use chrono::{DateTime, Utc};
use quick_xml::escape::resolve_predefined_entity;
use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use super::{abs_url, IngestError, PaperRecord};

#[derive(Default)]
struct EntryDraft {
    id: Option<String>,
    title: Option<String>,
    summary: Option<String>,
    published: Option<String>,
    updated: Option<String>,
    authors: Vec<String>,
    primary_category: Option<String>,
    abs_link: Option<String>,
}

/// Which entry field the current text belongs to.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Field {
    Id,
    Title,
    Summary,
    Published,
    Updated,
    AuthorName,
}

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn parse_err(msg: impl Into<String>) -> IngestError {
    IngestError::FeedParse(msg.into())
}

/// `http://arxiv.org/abs/2401.01234v3` becomes `2401.01234`; old-style ids
/// keep their archive prefix (`hep-th/9901001`).
pub(crate) fn canonical_id(raw: &str) -> String {
    let raw = raw.trim();
    let id = match raw.find("/abs/") {
        Some(i) => &raw[i + 5..],
        None => raw,
    };
    let bytes = id.as_bytes();
    let mut cut = bytes.len();
    while cut > 0 && bytes[cut - 1].is_ascii_digit() {
        cut -= 1;
    }
    if cut < bytes.len() && cut > 0 && bytes[cut - 1] == b'v' {
        id[..cut - 1].to_owned()
    } else {
        id.to_owned()
    }
}

fn parse_date(field: &str, raw: Option<String>) -> Result<DateTime<Utc>, IngestError> {
    let raw = raw.ok_or_else(|| parse_err(format!("entry without <{field}>")))?;
    DateTime::parse_from_rfc3339(raw.trim())
        .map(|d| d.with_timezone(&Utc))
        .map_err(|e| parse_err(format!("bad <{field}> {raw:?}: {e}")))
}

fn attr(e: &BytesStart<'_>, name: &[u8]) -> Result<Option<String>, IngestError> {
    for a in e.attributes() {
        let a = a.map_err(|e| parse_err(e.to_string()))?;
        if a.key.local_name().as_ref() == name {
            return Ok(Some(
                a.unescape_value().map_err(|e| parse_err(e.to_string()))?.into_owned(),
            ));
        }
    }
    Ok(None)
}

impl EntryDraft {
    fn on_element(&mut self, e: &BytesStart<'_>) -> Result<(), IngestError> {
        match e.local_name().as_ref() {
            b"link" => {
                let rel = attr(e, b"rel")?;
                let ty = attr(e, b"type")?;
                let title = attr(e, b"title")?;
                let is_abs = title.as_deref() == Some("abs")
                    || (rel.as_deref().unwrap_or("alternate") == "alternate"
                        && ty.as_deref() == Some("text/html"));
                if is_abs && self.abs_link.is_none() {
                    self.abs_link = attr(e, b"href")?;
                }
            }
            b"primary_category" => self.primary_category = attr(e, b"term")?,
            _ => {}
        }
        Ok(())
    }

    fn push_text(&mut self, field: Field, text: &str) {
        let slot = match field {
            Field::Id => &mut self.id,
            Field::Title => &mut self.title,
            Field::Summary => &mut self.summary,
            Field::Published => &mut self.published,
            Field::Updated => &mut self.updated,
            Field::AuthorName => {
                if let Some(last) = self.authors.last_mut() {
                    last.push_str(text);
                }
                return;
            }
        };
        slot.get_or_insert_with(String::new).push_str(text);
    }

    fn finish(self) -> Result<PaperRecord, IngestError> {
        let raw_id = self.id.ok_or_else(|| parse_err("entry without <id>"))?;
        if raw_id.contains("/api/errors") {
            return Err(parse_err(format!(
                "arXiv API error: {}",
                collapse_ws(self.summary.as_deref().unwrap_or("unknown"))
            )));
        }
        let arxiv_id = canonical_id(&raw_id);
        if arxiv_id.is_empty() {
            return Err(parse_err("entry with empty <id>"));
        }
        let title = collapse_ws(&self.title.ok_or_else(|| parse_err(format!("{arxiv_id}: no <title>")))?);
        let abstract_text =
            collapse_ws(&self.summary.ok_or_else(|| parse_err(format!("{arxiv_id}: no <summary>")))?);
        if abstract_text.is_empty() {
            return Err(parse_err(format!("{arxiv_id}: empty <summary>")));
        }
        if title.is_empty() {
            return Err(parse_err(format!("{arxiv_id}: empty <title>")));
        }
        let published = parse_date("published", self.published)?;
        let updated = parse_date("updated", self.updated)?;
        if let Some(link) = &self.abs_link {
            if canonical_id(link) != arxiv_id {
                tracing::debug!(%link, %arxiv_id, "abs link disagrees with id; deriving url from id");
            }
        }
        Ok(PaperRecord {
            abs_url: abs_url(&arxiv_id),
            arxiv_id,
            title,
            abstract_text,
            authors: self.authors.iter().map(|a| collapse_ws(a)).filter(|a| !a.is_empty()).collect(),
            published,
            updated,
            primary_category: self.primary_category.unwrap_or_default(),
            iteration_tags: BTreeSet::new(),
        })
    }
}

/// Parses an arXiv Atom response. Entries are returned in feed order.
pub fn parse_atom(feed: &[u8]) -> Result<Vec<PaperRecord>, IngestError> {
    let mut reader = Reader::from_reader(feed);
    reader.config_mut().check_end_names = true;
    let mut buf = Vec::new();
    let mut stack: Vec<Vec<u8>> = Vec::new();
    let mut saw_feed = false;
    let mut entry: Option<EntryDraft> = None;
    let mut out = Vec::new();

    let field_of = |stack: &[Vec<u8>]| -> Option<Field> {
        // stack = [feed, entry, ..]
        let rel: Vec<&[u8]> = stack.iter().skip(2).map(Vec::as_slice).collect();
        match rel.as_slice() {
            [b"id"] => Some(Field::Id),
            [b"title"] => Some(Field::Title),
            [b"summary"] => Some(Field::Summary),
            [b"published"] => Some(Field::Published),
            [b"updated"] => Some(Field::Updated),
            [b"author", b"name"] => Some(Field::AuthorName),
            _ => None,
        }
    };

    loop {
        let ev = reader
            .read_event_into(&mut buf)
            .map_err(|e| parse_err(format!("at byte {}: {e}", reader.buffer_position())))?;
        match ev {
            Event::Start(e) => {
                let name = e.local_name().as_ref().to_vec();
                if stack.is_empty() {
                    if name != b"feed" {
                        return Err(parse_err("root element is not <feed>"));
                    }
                    saw_feed = true;
                } else if stack.len() == 1 && name == b"entry" {
                    entry = Some(EntryDraft::default());
                } else if let Some(d) = entry.as_mut() {
                    if stack.len() == 2 && name == b"author" {
                        d.authors.push(String::new());
                    }
                    d.on_element(&e)?;
                }
                stack.push(name);
            }
            Event::Empty(e) => {
                if stack.is_empty() {
                    return Err(parse_err("root element is not <feed>"));
                }
                if let Some(d) = entry.as_mut() {
                    d.on_element(&e)?;
                }
            }
            Event::End(_) => {
                let name = stack.pop().ok_or_else(|| parse_err("unbalanced end tag"))?;
                if stack.len() == 1 && name == b"entry" {
                    if let Some(d) = entry.take() {
                        out.push(d.finish()?);
                    }
                }
            }
            Event::Text(t) => {
                if let (Some(d), Some(f)) = (entry.as_mut(), field_of(&stack)) {
                    let text = t.decode().map_err(|e| parse_err(e.to_string()))?;
                    d.push_text(f, &text);
                }
            }
            Event::CData(t) => {
                if let (Some(d), Some(f)) = (entry.as_mut(), field_of(&stack)) {
                    let text = t.decode().map_err(|e| parse_err(e.to_string()))?;
                    d.push_text(f, &text);
                }
            }
            Event::GeneralRef(r) => {
                if let (Some(d), Some(f)) = (entry.as_mut(), field_of(&stack)) {
                    let resolved = match r.resolve_char_ref().map_err(|e| parse_err(e.to_string()))? {
                        Some(c) => c.to_string(),
                        None => {
                            let name = r.decode().map_err(|e| parse_err(e.to_string()))?;
                            resolve_predefined_entity(&name)
                                .ok_or_else(|| parse_err(format!("unknown entity &{name};")))?
                                .to_owned()
                        }
                    };
                    d.push_text(f, &resolved);
                }
            }
            Event::Eof => break,
            _ => {}
        }
        buf.clear();
    }
    if !stack.is_empty() {
        return Err(parse_err("unexpected end of document (truncated feed?)"));
    }
    if !saw_feed {
        return Err(parse_err("document has no <feed> element"));
    }
    Ok(out)
}
