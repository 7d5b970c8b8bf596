//! Resolution of provider negotiation endpoint addresses.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::RwLock;

use crate::sla::{NegotiationMessage, Responder, ResponderError};

pub trait ResponderDirectory: Send + Sync {
    fn resolve(&self, endpoint: &str) -> Option<Arc<dyn Responder>>;
}

/// In-process responders looked up by exact address, with optional
/// `http://` fallback that posts negotiation messages as JSON.
#[derive(Default)]
pub struct Endpoints {
    local: RwLock<BTreeMap<String, Arc<dyn Responder>>>,
    http: bool,
}

impl Endpoints {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_http() -> Self {
        Self { http: true, ..Self::default() }
    }

    pub fn bind(&self, endpoint: impl Into<String>, responder: Arc<dyn Responder>) {
        self.local.write().insert(endpoint.into(), responder);
    }
}

impl ResponderDirectory for Endpoints {
    fn resolve(&self, endpoint: &str) -> Option<Arc<dyn Responder>> {
        if let Some(r) = self.local.read().get(endpoint) {
            return Some(r.clone());
        }
        if self.http && (endpoint.starts_with("http://") || endpoint.starts_with("https://")) {
            return Some(Arc::new(HttpResponder::new(endpoint)));
        }
        None
    }
}

/// Remote negotiation endpoint reached over HTTP.
pub struct HttpResponder {
    url: String,
    agent: ureq::Agent,
}

impl HttpResponder {
    pub fn new(url: &str) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(Duration::from_secs(10))).build().into();
        Self { url: url.to_string(), agent }
    }
}

impl Responder for HttpResponder {
    fn respond(&self, message: &NegotiationMessage) -> Result<NegotiationMessage, ResponderError> {
        let mut resp =
            self.agent.post(&self.url).send_json(message).map_err(|e| ResponderError(format!("{}: {e}", self.url)))?;
        resp.body_mut().read_json::<NegotiationMessage>().map_err(|e| ResponderError(format!("{}: {e}", self.url)))
    }
}
