//! Authorization and selection policies.

use serde::{Deserialize, Serialize};

use crate::persist::Keyed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Effect {
    Allow,
    Deny,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorizationRule {
    /// Glob over principal ids (`*` matches any run of characters).
    pub principal: String,
    /// Glob over action names.
    pub action: String,
    /// Optional glob over the consumer the principal acts for.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consumer: Option<String>,
    pub effect: Effect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consumer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service_type: Option<String>,
    /// When present, only these providers are considered.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allow: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub deny: Vec<String>,
    /// Raises the acceptance threshold to at least this utility.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_acceptance: Option<f64>,
}

impl SelectionRule {
    pub fn applies_to(&self, consumer_id: &str, service_type: &str) -> bool {
        self.consumer.as_deref().is_none_or(|p| glob_match(p, consumer_id))
            && self.service_type.as_deref().is_none_or(|t| t == service_type)
    }

    pub fn permits(&self, provider_id: &str) -> bool {
        let allowed = self.allow.as_ref().is_none_or(|list| list.iter().any(|p| glob_match(p, provider_id)));
        allowed && !self.deny.iter().any(|p| glob_match(p, provider_id))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "rule")]
pub enum PolicyRule {
    Authorization(AuthorizationRule),
    Selection(SelectionRule),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub id: String,
    #[serde(flatten)]
    pub rule: PolicyRule,
}

impl Keyed for Policy {
    fn key(&self) -> String {
        self.id.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "decision", content = "reason")]
pub enum Decision {
    Allow,
    Deny(DenyReason),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenyReason {
    /// No rule matched.
    Default,
    /// Denied by the named policy.
    Policy(String),
}

/// First matching authorization rule wins; no match denies. `policies` must
/// already be ordered by id.
pub fn authorize(policies: &[Policy], principal: &str, action: &str, consumer: &str) -> Decision {
    for policy in policies {
        let PolicyRule::Authorization(rule) = &policy.rule else { continue };
        let matches = glob_match(&rule.principal, principal)
            && glob_match(&rule.action, action)
            && rule.consumer.as_deref().is_none_or(|c| glob_match(c, consumer));
        if matches {
            return match rule.effect {
                Effect::Allow => Decision::Allow,
                Effect::Deny => Decision::Deny(DenyReason::Policy(policy.id.clone())),
            };
        }
    }
    Decision::Deny(DenyReason::Default)
}

pub fn glob_match(pattern: &str, text: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let t: Vec<char> = text.chars().collect();
    let (mut pi, mut ti) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while ti < t.len() {
        if pi < p.len() && p[pi] == '*' {
            star = Some((pi, ti));
            pi += 1;
        } else if pi < p.len() && p[pi] == t[ti] {
            pi += 1;
            ti += 1;
        } else if let Some((sp, st)) = star {
            pi = sp + 1;
            ti = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|&c| c == '*')
}
