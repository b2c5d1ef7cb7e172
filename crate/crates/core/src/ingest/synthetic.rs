//! An offline stand-in for the arXiv endpoint.
//!
//! [`SyntheticArxiv`] answers any search over a fixed pool of fictional papers,
//! ranking them by how many query terms they contain, and renders the result
//! as a real Atom document so the parse path is exercised end to end.

use quick_xml::escape::escape;
use regex::Regex;
use url::Url;

use super::client::{search_query_of, Transport, TransportResponse};
use super::IngestError;
use crate::gateway::seed_of;

pub struct PoolPaper {
    pub id: &'static str,
    pub version: u32,
    pub title: &'static str,
    pub summary: &'static str,
    pub authors: &'static [&'static str],
    pub published: &'static str,
    pub category: &'static str,
}

macro_rules! paper {
    ($id:expr, $v:expr, $date:expr, $cat:expr, $title:expr, [$($a:expr),*], $summary:expr) => {
        PoolPaper { id: $id, version: $v, title: $title, summary: $summary, authors: &[$($a),*], published: $date, category: $cat }
    };
}

pub const SYNTHETIC_POOL: &[PoolPaper] = &[
    paper!("2501.00101", 2, "2025-01-03T09:00:00Z", "cs.HC",
        "Visual Analytics for Interpretability of Deep Models", ["Mara Ortiz", "Kenji Sato"],
        "We survey visualization techniques that support interpretability of deep learning models. Our taxonomy covers feature attribution, concept probing and model comparison views. We find that most AI explanation tools are evaluated with experts only."),
    paper!("2501.00102", 1, "2025-01-05T12:30:00Z", "cs.CV",
        "Saliency Maps Under Scrutiny", ["Lena Vogel", "Omar Haddad"],
        "Saliency maps remain the most common explanation for vision models despite known faithfulness problems. We benchmark twelve attribution methods on controlled perturbations. Visualization of disagreement between methods helps users calibrate trust in AI predictions."),
    paper!("2501.00103", 1, "2025-01-08T08:15:00Z", "cs.HC",
        "Interface Design Patterns for Explainable AI", ["Priya Natarajan", "Tom Becker", "Ana Ruiz"],
        "Interface design choices strongly influence how people use explainable AI systems. We distil eighteen interface design patterns from a review of deployed tools. A visualization gallery illustrates each pattern with concrete examples."),
    paper!("2501.00104", 3, "2025-01-10T16:45:00Z", "cs.LG",
        "A Benchmark for Evaluating Explanation Visualizations", ["Hugo Lambert", "Sara Kim"],
        "Evaluation benchmarks for explanation methods rarely include the visualization layer. We release a benchmark of forty tasks that measure whether users can predict model behaviour from a visualization. Results show large gaps between algorithmic and human-centred metrics for AI explanations."),
    paper!("2501.00105", 1, "2025-01-12T11:00:00Z", "cs.HC",
        "Interactive Steering of Generative Image Editing", ["Wei Zhang", "Clara Duarte"],
        "Generative editing tools give users little control over intermediate steps. We present an interactive steering interface that exposes the diffusion trajectory as editable checkpoints. A study with designers shows steering reduces failed edits by a third."),
    paper!("2501.00106", 2, "2025-01-15T14:20:00Z", "cs.HC",
        "Visual Analytics for Bias Detection in Language Models", ["Fatima Noor", "Jonas Berg"],
        "Bias detection in large language models requires inspecting many prompts and completions. Our visual analytics system clusters completions and highlights demographic disparities. Case studies show analysts find biases that aggregate metrics miss."),
    paper!("2501.00107", 1, "2025-01-18T10:10:00Z", "cs.HC",
        "Communicating Uncertainty in AI-Assisted Decisions", ["Iris Chen", "Marco Bellini"],
        "People overtrust confident AI predictions when uncertainty is hidden. We compare four uncertainty visualization designs in a crowdsourced experiment. Quantile dot plots gave the best calibrated reliance on the model."),
    paper!("2501.00108", 1, "2025-01-20T09:40:00Z", "cs.LG",
        "Faithful Embedding Projection for Document Collections", ["Noah Fischer", "Aiko Tanaka"],
        "Embedding projection methods such as UMAP and t-SNE distort global structure. We propose a neighbourhood-preserving projection with explicit distortion glyphs. On document collections the method improves trustworthiness over baselines."),
    paper!("2501.00109", 2, "2025-01-22T13:05:00Z", "cs.DL",
        "Provenance Tracking for LLM Literature Assistants", ["Grace Okafor", "Luis Mendes"],
        "Literature assistants built on language models often cite sources that do not support their claims. We add provenance tracking that links every generated sentence to an exact excerpt. Users verified claims twice as fast with provenance links."),
    paper!("2501.00110", 1, "2025-01-25T15:30:00Z", "cs.IR",
        "Query Refinement with Human Feedback for Scholarly Search", ["Dmitri Volkov", "Hannah Weiss"],
        "Novice researchers struggle to translate vague interests into effective search queries. We study query refinement loops where users edit keywords suggested by a language model. Refined queries retrieved more relevant papers in fewer iterations."),
    paper!("2501.00111", 1, "2025-01-28T08:00:00Z", "cs.HC",
        "Human-AI Collaboration in Research Workflows", ["Elena Popescu", "Samuel Adeyemi"],
        "AI agents can automate parts of research workflows but often act as black boxes. We interview twenty researchers about checkpoints where they want to intervene. Participants preferred transparent pipelines with editable intermediate results."),
    paper!("2501.00112", 1, "2025-02-01T12:00:00Z", "cs.GR",
        "Graph Layout Algorithms for Large Knowledge Graphs", ["Pavel Novak", "Julia Santos"],
        "Force-directed graph layout does not scale to knowledge graphs with millions of edges. We combine multilevel coarsening with GPU stress majorization. The resulting layouts preserve community structure at interactive rates."),
    paper!("2501.00113", 2, "2025-02-03T17:25:00Z", "cs.HC",
        "Evaluating Saliency Map Interfaces with End Users", ["Rosa Lindqvist", "Arjun Mehta"],
        "Saliency map interfaces are rarely evaluated with end users. We run a controlled study comparing overlay, side-by-side and contour presentations. Contour presentations improved error detection in AI image classifiers."),
    paper!("2501.00114", 1, "2025-02-06T10:50:00Z", "cs.HC",
        "Steering Language Model Agents through Visual Workflows", ["Yuki Mori", "Ben Carter"],
        "Agentic language model pipelines hide their intermediate reasoning. We visualize agent workflows as node-link diagrams with approval checkpoints. Interactive steering at checkpoints reduced hallucinated outputs in a research assistant task."),
    paper!("2501.00115", 1, "2025-02-09T09:35:00Z", "cs.CL",
        "Keyword Expansion for Exploratory Literature Search", ["Ines Moreau", "Kwame Boateng"],
        "Keyword expansion helps exploratory literature search when users lack domain vocabulary. We compare thesaurus, embedding and language model expansion strategies. Language model expansion found more relevant papers but introduced overly broad terms."),
    paper!("2501.00116", 1, "2025-02-12T14:15:00Z", "cs.CY",
        "Trust Calibration in AI Research Tools", ["Olivia Grant", "Mateo Silva"],
        "Trust in AI research tools is often miscalibrated. We measure how visible evidence and citation links change reliance on generated summaries. Showing source excerpts reduced acceptance of unsupported claims."),
];

/// Matches any feed request against [`SYNTHETIC_POOL`].
#[derive(Default)]
pub struct SyntheticArxiv;

impl SyntheticArxiv {
    pub fn new() -> Self {
        Self
    }

    pub fn search(&self, search_query: &str, start: usize, max_results: usize) -> Vec<&'static PoolPaper> {
        let terms = query_terms(search_query);
        let mut scored: Vec<(usize, u64, &PoolPaper)> = SYNTHETIC_POOL
            .iter()
            .filter_map(|p| {
                let hay = format!("{} {}", p.title, p.summary).to_lowercase();
                let hits = terms.iter().filter(|t| hay.contains(t.as_str())).count();
                (hits > 0).then(|| (hits, seed_of(&[search_query, p.id]), p))
            })
            .collect();
        scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        scored.into_iter().skip(start).take(max_results).map(|(_, _, p)| p).collect()
    }
}

fn query_terms(search_query: &str) -> Vec<String> {
    let quoted = Regex::new(r#""([^"]+)""#).unwrap();
    let terms: Vec<String> = quoted
        .captures_iter(search_query)
        .map(|c| c[1].to_lowercase())
        .collect();
    if terms.is_empty() {
        search_query
            .split_whitespace()
            .map(|t| t.trim_start_matches("all:").to_lowercase())
            .filter(|t| !t.is_empty() && t != "and")
            .collect()
    } else {
        terms
    }
}

pub fn render_feed(search_query: &str, papers: &[&PoolPaper]) -> String {
    let mut xml = String::from(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<feed xmlns=\"http://www.w3.org/2005/Atom\" xmlns:opensearch=\"http://a9.com/-/spec/opensearch/1.1/\" xmlns:arxiv=\"http://arxiv.org/schemas/atom\">\n",
    );
    xml.push_str(&format!("  <title type=\"html\">ArXiv Query: {}</title>\n", escape(search_query)));
    xml.push_str(&format!("  <opensearch:totalResults>{}</opensearch:totalResults>\n", papers.len()));
    for p in papers {
        let updated = p.published.replacen(":00Z", ":30Z", 1);
        xml.push_str("  <entry>\n");
        xml.push_str(&format!("    <id>http://arxiv.org/abs/{}v{}</id>\n", p.id, p.version));
        xml.push_str(&format!("    <updated>{updated}</updated>\n"));
        xml.push_str(&format!("    <published>{}</published>\n", p.published));
        xml.push_str(&format!("    <title>{}</title>\n", escape(p.title)));
        xml.push_str(&format!("    <summary>  {}\n</summary>\n", escape(p.summary)));
        for a in p.authors {
            xml.push_str(&format!("    <author>\n      <name>{}</name>\n    </author>\n", escape(*a)));
        }
        xml.push_str(&format!(
            "    <link href=\"http://arxiv.org/abs/{}v{}\" rel=\"alternate\" type=\"text/html\"/>\n",
            p.id, p.version
        ));
        xml.push_str(&format!(
            "    <link title=\"pdf\" href=\"http://arxiv.org/pdf/{}v{}\" rel=\"related\" type=\"application/pdf\"/>\n",
            p.id, p.version
        ));
        xml.push_str(&format!(
            "    <arxiv:primary_category xmlns:arxiv=\"http://arxiv.org/schemas/atom\" term=\"{}\" scheme=\"http://arxiv.org/schemas/atom\"/>\n",
            p.category
        ));
        xml.push_str("  </entry>\n");
    }
    xml.push_str("</feed>\n");
    xml
}

impl Transport for SyntheticArxiv {
    fn get(&self, url: &Url) -> Result<TransportResponse, IngestError> {
        let param = |name: &str, default: usize| {
            url.query_pairs()
                .find(|(k, _)| k == name)
                .and_then(|(_, v)| v.parse().ok())
                .unwrap_or(default)
        };
        let Some(q) = search_query_of(url) else {
            return Ok(TransportResponse {
                status: 400,
                body: b"missing search_query".to_vec(),
            });
        };
        let papers = self.search(&q, param("start", 0), param("max_results", 10));
        Ok(TransportResponse {
            status: 200,
            body: render_feed(&q, &papers).into_bytes(),
        })
    }
}
