//! Backend for `search_papers` / `get_paper`. The bundled corpus keeps the
//! Idea agent usable offline; a live client can implement the same trait.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaperMeta {
    pub id: String,
    pub title: String,
    pub year: u32,
    #[serde(rename = "abstract")]
    pub summary: String,
}

pub trait PaperSearch: Send + Sync {
    fn search(&self, query: &str, limit: usize) -> Vec<PaperMeta>;
    fn get(&self, id: &str) -> Option<PaperMeta>;
}

#[derive(Debug, Clone)]
pub struct OfflineCorpus {
    papers: Vec<PaperMeta>,
}

fn words(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|w| w.len() > 1)
        .map(str::to_lowercase)
        .collect()
}

impl OfflineCorpus {
    pub fn bundled() -> Self {
        let papers = serde_json::from_str(include_str!("../../assets/papers.json")).expect("bundled corpus parses");
        OfflineCorpus { papers }
    }

    pub fn new(papers: Vec<PaperMeta>) -> Self {
        OfflineCorpus { papers }
    }
}

impl PaperSearch for OfflineCorpus {
    /// Papers ranked by how many query words occur in title or abstract;
    /// title hits count double. Ties keep corpus order.
    fn search(&self, query: &str, limit: usize) -> Vec<PaperMeta> {
        let q = words(query);
        let mut scored: Vec<(usize, &PaperMeta)> = self
            .papers
            .iter()
            .map(|p| {
                let title = words(&p.title);
                let body = words(&p.summary);
                let s = q
                    .iter()
                    .map(|w| 2 * title.contains(w) as usize + body.contains(w) as usize)
                    .sum();
                (s, p)
            })
            .filter(|(s, _)| *s > 0)
            .collect();
        scored.sort_by(|a, b| b.0.cmp(&a.0));
        scored.into_iter().take(limit).map(|(_, p)| p.clone()).collect()
    }

    fn get(&self, id: &str) -> Option<PaperMeta> {
        self.papers.iter().find(|p| p.id == id.trim()).cloned()
    }
}
