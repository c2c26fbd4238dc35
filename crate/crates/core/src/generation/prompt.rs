use std::fs;
use std::path::Path;

use crate::knowledge::MultiSourceKnowledge;

/// Number of `<Video i>` blocks the card prompt holds.
pub const MAX_VIDEO_BLOCKS: usize = 3;

/// Prompt templates with `{{Name}}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub card: String,
    pub knowledge_section: String,
    pub video_block: String,
    pub rewrite: String,
    pub judge_card: String,
    pub judge_rewrite: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            card: include_str!("../../templates/card.txt").to_owned(),
            knowledge_section: include_str!("../../templates/knowledge_section.txt").to_owned(),
            video_block: include_str!("../../templates/video_block.txt").to_owned(),
            rewrite: include_str!("../../templates/rewrite.txt").to_owned(),
            judge_card: include_str!("../../templates/judge_card.txt").to_owned(),
            judge_rewrite: include_str!("../../templates/judge_rewrite.txt").to_owned(),
        }
    }
}

impl PromptTemplates {
    /// Loads `<name>.txt` files from `dir`; files that are absent keep the
    /// built-in template.
    pub fn from_dir(dir: impl AsRef<Path>) -> std::io::Result<Self> {
        let dir = dir.as_ref();
        let mut t = Self::default();
        for (name, slot) in [
            ("card", &mut t.card),
            ("knowledge_section", &mut t.knowledge_section),
            ("video_block", &mut t.video_block),
            ("rewrite", &mut t.rewrite),
            ("judge_card", &mut t.judge_card),
            ("judge_rewrite", &mut t.judge_rewrite),
        ] {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                *slot = fs::read_to_string(path)?;
            }
        }
        Ok(t)
    }
}

/// Single-pass `{{Name}}` substitution. Values are inserted verbatim and
/// never rescanned; unknown placeholders are left as they are.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) => {
                let name = &after[..end];
                match vars.iter().find(|(k, _)| *k == name) {
                    Some((_, v)) => out.push_str(v),
                    None => {
                        out.push_str("{{");
                        out.push_str(name);
                        out.push_str("}}");
                    }
                }
                rest = &after[end + 2..];
            }
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

fn trim_block(s: &str) -> &str {
    s.trim_end_matches('\n')
}

impl PromptTemplates {
    /// Video blocks and general information, exactly as embedded in the card prompt.
    pub fn render_knowledge_section(&self, m: &MultiSourceKnowledge) -> String {
        let videos = m
            .inner
            .iter()
            .take(MAX_VIDEO_BLOCKS)
            .enumerate()
            .map(|(i, v)| {
                let index = (i + 1).to_string();
                let frames = v.vision.join("; ");
                fill(
                    trim_block(&self.video_block),
                    &[
                        ("Index", &index),
                        ("Title", &v.title),
                        ("OCR", &v.ocr),
                        ("Author", &v.author),
                        ("BGM", &v.bgm),
                        ("Frames", &frames),
                    ],
                )
            })
            .collect::<Vec<_>>()
            .join("\n");
        let general = m
            .external
            .iter()
            .map(|d| format!("{}: {}", d.title, d.body))
            .collect::<Vec<_>>()
            .join("\n");
        fill(
            trim_block(&self.knowledge_section),
            &[("Videos", &videos), ("General", &general)],
        )
    }

    /// Card prompt plus the keyframe refs of the rendered blocks, in order.
    pub fn render_card_prompt(&self, x: &str, m: &MultiSourceKnowledge, budget_chars: usize) -> (String, Vec<String>) {
        let knowledge = self.render_knowledge_section(m);
        let budget = budget_chars.to_string();
        let prompt = fill(
            &self.card,
            &[("Query", x), ("Knowledge", &knowledge), ("Budget", &budget)],
        );
        let images = m
            .inner
            .iter()
            .take(MAX_VIDEO_BLOCKS)
            .flat_map(|v| v.vision.iter().cloned())
            .collect();
        (prompt, images)
    }

    /// Rewrite prompt; `card` is the requirements analysis, empty when absent.
    pub fn render_rewrite_prompt(&self, x: &str, card: Option<&str>) -> String {
        fill(&self.rewrite, &[("Query", x), ("Card", card.unwrap_or(""))])
    }

    pub fn render_judge_prompt(&self, task: super::Task, x: &str, output: &str) -> String {
        let template = match task {
            super::Task::Card => &self.judge_card,
            super::Task::Rewrite => &self.judge_rewrite,
        };
        fill(template, &[("Query", x), ("Output", output)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::{ExternalDoc, VideoKnowledge};

    fn video(i: usize) -> VideoKnowledge {
        VideoKnowledge {
            video_id: format!("v{i}"),
            vision: vec![format!("kf{i}a"), format!("kf{i}b")],
            title: format!("title {i}"),
            caption: String::new(),
            ocr: format!("ocr {i}"),
            author: format!("author {i}"),
            bgm: String::new(),
            source_query: "q".into(),
        }
    }

    fn knowledge(n: usize, ext: usize) -> MultiSourceKnowledge {
        MultiSourceKnowledge {
            origin_query: "q".into(),
            inner: (1..=n).map(video).collect(),
            external: (0..ext)
                .map(|i| ExternalDoc {
                    doc_id: format!("d{i}"),
                    title: format!("Doc {i}"),
                    body: "body".into(),
                })
                .collect(),
            warnings: vec![],
        }
    }

    #[test]
    fn fill_is_single_pass() {
        assert_eq!(fill("a {{X}} b {{Y}}", &[("X", "{{Y}}"), ("Y", "2")]), "a {{Y}} b 2");
        assert_eq!(fill("{{Unknown}} {{", &[]), "{{Unknown}} {{");
    }

    #[test]
    fn one_video_one_block() {
        let t = PromptTemplates::default();
        let (p, images) = t.render_card_prompt("my query", &knowledge(1, 0), 200);
        assert_eq!(p.matches("<Video 1>").count(), 1);
        assert!(!p.contains("<Video 2>"));
        assert!(p.contains("my query"));
        assert!(p.contains("within 200 characters"));
        assert_eq!(images, ["kf1a", "kf1b"]);
    }

    #[test]
    fn five_videos_three_blocks() {
        let t = PromptTemplates::default();
        let (p, images) = t.render_card_prompt("q", &knowledge(5, 0), 200);
        for i in 1..=3 {
            assert!(p.contains(&format!("<Video {i}>")));
        }
        assert!(!p.contains("<Video 4>"));
        assert!(p.find("title 1").unwrap() < p.find("title 3").unwrap());
        assert_eq!(images.len(), 6);
    }

    #[test]
    fn external_only() {
        let t = PromptTemplates::default();
        let section = t.render_knowledge_section(&knowledge(0, 2));
        assert!(!section.contains("<Video"));
        assert!(section.contains("Doc 0: body\nDoc 1: body"));
        let (p, _) = t.render_card_prompt("q", &knowledge(0, 2), 200);
        assert!(p.contains(&section));
    }

    #[test]
    fn rewrite_prompt_slots() {
        let t = PromptTemplates::default();
        let p = t.render_rewrite_prompt("a", Some("b"));
        assert!(p.contains("Original Search Query: a\n"));
        assert!(p.contains("Requirements Analysis: b\n"));
        let long = "x".repeat(200);
        assert!(t.render_rewrite_prompt("a", Some(&long)).contains(&long));
        assert_eq!(p, t.render_rewrite_prompt("a", Some("b")));
        assert!(t
            .render_rewrite_prompt("a", None)
            .ends_with("Requirements Analysis: \n"));
    }

    #[test]
    fn templates_from_dir_override() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("rewrite.txt"), "Q={{Query}} C={{Card}}").unwrap();
        let t = PromptTemplates::from_dir(dir.path()).unwrap();
        assert_eq!(t.render_rewrite_prompt("x", Some("y")), "Q=x C=y");
        assert_eq!(t.card, PromptTemplates::default().card);
    }
}
