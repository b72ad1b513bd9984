use std::time::Instant;

use sha2::{Digest, Sha256};

use super::{Completion, MockPolicy, Outcome, PromptRequest, Provider, ProviderError, ScriptedOutput};
use crate::prompting::{PromptTemplate, Stance};

/// SHA-256 hex digest of a rendered prompt; keys scripted mock outputs.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// What the mock says for each kind of answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerTokens {
    pub affirm: String,
    pub negate: String,
    pub explainer: String,
}

impl AnswerTokens {
    pub fn from_template(template: &PromptTemplate) -> Self {
        let explainer = match template.language.as_str() {
            "ja" => "状況や文脈によります。",
            "es" => "Depende de la situación y del contexto.",
            "fr" => "Cela dépend de la situation et du contexte.",
            _ => "It depends on the situation and the context.",
        };
        Self {
            affirm: template.affirm_token.clone(),
            negate: template.negate_token.clone(),
            explainer: explainer.to_string(),
        }
    }

    fn token(&self, stance: Stance) -> &str {
        match stance {
            Stance::Affirm => &self.affirm,
            Stance::Negate => &self.negate,
        }
    }
}

/// Offline provider. Outputs depend only on the policy, the seed and the
/// request labels, never on call order.
#[derive(Debug, Clone)]
pub struct MockProvider {
    policy: MockPolicy,
    tokens: AnswerTokens,
    seed: u64,
}

fn draw(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 8 bytes"))
}

impl MockProvider {
    pub fn new(policy: MockPolicy, tokens: AnswerTokens, seed: u64) -> Self {
        Self {
            policy,
            tokens,
            seed,
        }
    }

    /// The fixed per-question answer used by the stubborn and sycophant policies.
    pub fn table_stance(&self, question_id: u32) -> Stance {
        let v = draw(&[b"table", &self.seed.to_le_bytes(), &question_id.to_le_bytes()]);
        if v & 1 == 0 {
            Stance::Affirm
        } else {
            Stance::Negate
        }
    }

    fn unit(&self, request: &PromptRequest) -> f64 {
        let v = draw(&[
            b"explainer",
            &self.seed.to_le_bytes(),
            &request.question_id.to_le_bytes(),
            &request.round.to_le_bytes(),
            request.phase.to_string().as_bytes(),
            request.language.as_bytes(),
        ]);
        (v >> 11) as f64 / (1u64 << 53) as f64
    }

    fn answer(&self, request: &PromptRequest) -> Result<String, ProviderError> {
        let t = &self.tokens;
        Ok(match &self.policy {
            MockPolicy::AlwaysAffirm => t.affirm.clone(),
            MockPolicy::AlwaysNegate => t.negate.clone(),
            MockPolicy::Stubborn => t.token(self.table_stance(request.question_id)).to_string(),
            MockPolicy::Sycophant => {
                let stance = request
                    .stance
                    .unwrap_or_else(|| self.table_stance(request.question_id));
                t.token(stance).to_string()
            }
            MockPolicy::ExplainerRate { p } => {
                if self.unit(request) < *p {
                    t.explainer.clone()
                } else {
                    t.token(self.table_stance(request.question_id)).to_string()
                }
            }
            MockPolicy::Scripted { outputs } => {
                let key = prompt_hash(&request.prompt);
                match outputs.get(&key) {
                    Some(ScriptedOutput::Fixed(s)) => s.clone(),
                    Some(ScriptedOutput::PerRound(v)) if !v.is_empty() => {
                        v[(request.round.saturating_sub(1) as usize) % v.len()].clone()
                    }
                    _ => {
                        return Err(ProviderError::Config(format!(
                            "scripted mock has no output for question {} (prompt hash {key})",
                            request.question_id
                        )))
                    }
                }
            }
        })
    }
}

impl Provider for MockProvider {
    fn complete(&self, request: &PromptRequest) -> Result<Completion, ProviderError> {
        let start = Instant::now();
        let text = self.answer(request)?;
        Ok(Completion {
            text,
            latency_ms: start.elapsed().as_millis() as u64,
            attempts: 1,
            outcome: Outcome::Ok,
        })
    }

    fn preflight(&self, requests: &[PromptRequest]) -> Result<(), ProviderError> {
        if let MockPolicy::Scripted { .. } = self.policy {
            for r in requests {
                self.answer(r)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompting::Phase;
    use std::collections::BTreeMap;

    fn tokens() -> AnswerTokens {
        AnswerTokens::from_template(&PromptTemplate::default_for("en", Phase::Initial).unwrap())
    }

    fn req(q: u32, round: u32, stance: Option<Stance>) -> PromptRequest {
        PromptRequest {
            question_id: q,
            round,
            phase: if stance.is_some() { Phase::Opposing } else { Phase::Initial },
            language: "en".into(),
            prompt: format!("prompt {q}"),
            stance,
        }
    }

    #[test]
    fn always_affirm_returns_token() {
        let m = MockProvider::new(MockPolicy::AlwaysAffirm, tokens(), 1);
        assert_eq!(m.complete(&req(3, 1, None)).unwrap().text, "Yes.");
    }

    #[test]
    fn sycophant_echoes_injected_opinion() {
        let m = MockProvider::new(MockPolicy::Sycophant, tokens(), 1);
        assert_eq!(m.complete(&req(3, 1, Some(Stance::Negate))).unwrap().text, "No.");
        assert_eq!(m.complete(&req(3, 1, Some(Stance::Affirm))).unwrap().text, "Yes.");
    }

    #[test]
    fn stubborn_ignores_opinion() {
        let m = MockProvider::new(MockPolicy::Stubborn, tokens(), 9);
        for q in 1..50 {
            let a = m.complete(&req(q, 1, None)).unwrap().text;
            let b = m.complete(&req(q, 7, Some(Stance::Affirm))).unwrap().text;
            let c = m.complete(&req(q, 3, Some(Stance::Negate))).unwrap().text;
            assert_eq!((&a, &a), (&b, &c));
        }
    }

    #[test]
    fn table_depends_on_seed() {
        let a = MockProvider::new(MockPolicy::Stubborn, tokens(), 1);
        let b = MockProvider::new(MockPolicy::Stubborn, tokens(), 2);
        assert!((1..100).any(|q| a.table_stance(q) != b.table_stance(q)));
        assert!((1..100).any(|q| a.table_stance(q) == Stance::Affirm));
        assert!((1..100).any(|q| a.table_stance(q) == Stance::Negate));
    }

    #[test]
    fn explainer_rate_extremes() {
        let all = MockProvider::new(MockPolicy::ExplainerRate { p: 1.0 }, tokens(), 1);
        let none = MockProvider::new(MockPolicy::ExplainerRate { p: 0.0 }, tokens(), 1);
        for q in 1..20 {
            assert!(all.complete(&req(q, 2, None)).unwrap().text.starts_with("It depends"));
            assert!(!none.complete(&req(q, 2, None)).unwrap().text.starts_with("It depends"));
        }
    }

    #[test]
    fn scripted_lookup_and_preflight() {
        let r = req(1, 2, None);
        let outputs = BTreeMap::from([(
            prompt_hash(&r.prompt),
            ScriptedOutput::PerRound(vec!["Yes.".into(), "No.".into()]),
        )]);
        let m = MockProvider::new(MockPolicy::Scripted { outputs }, tokens(), 0);
        assert_eq!(m.complete(&r).unwrap().text, "No.");
        assert!(m.preflight(&[r.clone()]).is_ok());
        assert!(matches!(m.preflight(&[r, req(2, 1, None)]), Err(ProviderError::Config(_))));
    }
}
