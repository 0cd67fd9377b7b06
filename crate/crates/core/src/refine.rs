//! Rationale refinement through an external language-model client.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::cues::Cue;
use crate::inference::{GuidanceMode, Rationale};

pub const PROMPT_VERSION: &str = "v1";
pub const PROMPT_V1: &str = include_str!("../resources/refine_prompt_v1.txt");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementRequest {
    pub video: String,
    pub vip_id: u32,
    /// Retained cue clauses; empty in unguided mode.
    pub clauses: Vec<String>,
    pub instruction: String,
    pub prompt_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementResponse {
    pub text: String,
}

pub trait RefinementClient: Send + Sync {
    fn refine(&self, request: &RefinementRequest) -> Result<RefinementResponse, String>;
}

/// Deterministic offline client. Guided requests get each clause rewritten
/// through a fixed lexicon after a fixed prefix; unguided requests get a
/// fixed scene-level sentence.
#[derive(Debug, Clone)]
pub struct MockClient {
    pub prefix: String,
}

impl Default for MockClient {
    fn default() -> Self {
        Self { prefix: "In this clip,".into() }
    }
}

/// Lexicon used by [`MockClient`]; every paraphrase keeps its cue keyword.
pub fn paraphrase(cue: Cue) -> &'static str {
    match cue {
        Cue::Centrality => "keeps a central position in the shot",
        Cue::Area => "takes up a dominant part of the view",
        Cue::Clarity => "is shown in clear focus",
        Cue::Lip => "carries most of the speech",
        Cue::Action => "makes the most visible actions and gestures",
    }
}

/// Keyword each clause and its paraphrase share.
pub fn keyword(cue: Cue) -> &'static str {
    match cue {
        Cue::Centrality => "central",
        Cue::Area => "dominant",
        Cue::Clarity => "focus",
        Cue::Lip => "speech",
        Cue::Action => "actions",
    }
}

fn cue_of_clause(clause: &str) -> Option<Cue> {
    Cue::ALL.into_iter().find(|c| crate::inference::clause(*c) == clause)
}

impl RefinementClient for MockClient {
    fn refine(&self, request: &RefinementRequest) -> Result<RefinementResponse, String> {
        let closing = "the others attend to them throughout the scene";
        if request.clauses.is_empty() {
            return Ok(RefinementResponse { text: format!("{} the person is the one {closing}.", self.prefix) });
        }
        let parts: Vec<String> = request
            .clauses
            .iter()
            .map(|c| cue_of_clause(c).map_or_else(|| c.clone(), |cue| paraphrase(cue).to_string()))
            .collect();
        let refs: Vec<&str> = parts.iter().map(String::as_str).collect();
        Ok(RefinementResponse {
            text: format!("{} the person {}, and {closing}.", self.prefix, crate::inference::join_clauses(&refs)),
        })
    }
}

/// JSON-over-HTTP client: POSTs the request and expects `{"text": ...}`.
#[derive(Debug, Clone)]
pub struct HttpClient {
    pub endpoint: String,
    pub timeout: Duration,
}

impl RefinementClient for HttpClient {
    fn refine(&self, request: &RefinementRequest) -> Result<RefinementResponse, String> {
        let agent: ureq::Agent = ureq::Agent::config_builder().timeout_global(Some(self.timeout)).build().into();
        let mut resp = agent.post(&self.endpoint).send_json(request).map_err(|e| e.to_string())?;
        resp.body_mut().read_json::<RefinementResponse>().map_err(|e| e.to_string())
    }
}

/// Builds the request for a mode; `None` for baseline, which never calls a
/// client.
pub fn build_request(video: &str, vip_id: u32, rationale: &Rationale, mode: GuidanceMode) -> Option<RefinementRequest> {
    let clauses: Vec<String> = match mode {
        GuidanceMode::Baseline => return None,
        GuidanceMode::Unguided => vec![],
        GuidanceMode::Guided => rationale.retained_cues.iter().map(|r| r.clause.clone()).collect(),
    };
    let mut instruction = PROMPT_V1.trim_end().to_string();
    if !clauses.is_empty() {
        instruction.push_str("\nObserved cues for this person: ");
        instruction.push_str(&clauses.join("; "));
        instruction.push('.');
    }
    Some(RefinementRequest {
        video: video.to_string(),
        vip_id,
        clauses,
        instruction,
        prompt_version: PROMPT_VERSION.into(),
    })
}

/// Fills `refined_text` according to `mode`. Baseline returns the template
/// unchanged; a failing client falls back to the template and records a
/// warning.
pub fn refine_rationale(
    client: &dyn RefinementClient,
    video: &str,
    vip_id: u32,
    mut rationale: Rationale,
    mode: GuidanceMode,
) -> Rationale {
    rationale.guidance_mode = mode;
    rationale.refinement_warning = None;
    match build_request(video, vip_id, &rationale, mode) {
        None => rationale.refined_text = Some(rationale.template_text.clone()),
        Some(req) => match client.refine(&req) {
            Ok(r) => rationale.refined_text = Some(r.text),
            Err(e) => {
                log::warn!("refinement failed for {video}: {e}");
                rationale.refined_text = Some(rationale.template_text.clone());
                rationale.refinement_warning = Some(e);
            }
        },
    }
    rationale
}
