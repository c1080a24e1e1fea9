use std::sync::{Arc, Mutex};

use super::{AnswerBackend, AnswerBackendKind, AnswerContext, BackendAnswer, SimError};
use crate::bridge::{build_request, Bridge, BridgeOptions, TransportSpec};
use crate::promptcodec::{encode_multi, encode_single, SpecialMarkers};

/// Answers through a protocol backend. The connection and handshake happen
/// on the first `ready` call.
#[derive(Debug)]
pub struct ExternalBackend {
    name: String,
    spec: TransportSpec,
    options: BridgeOptions,
    markers: SpecialMarkers,
    bridge: Mutex<Option<Arc<Bridge>>>,
}

impl ExternalBackend {
    pub fn new(name: impl Into<String>, spec: TransportSpec, options: BridgeOptions) -> Self {
        Self { name: name.into(), spec, options, markers: SpecialMarkers::default(), bridge: Mutex::new(None) }
    }

    /// Markers used when the backend asks for the marked-sequence rendering.
    pub fn with_markers(mut self, markers: SpecialMarkers) -> Self {
        self.markers = markers;
        self
    }

    /// Wraps an already connected bridge.
    pub fn from_bridge(name: impl Into<String>, bridge: Bridge) -> Self {
        let options = bridge.options();
        let spec = TransportSpec::Tcp { address: bridge.label().to_string() };
        Self {
            name: name.into(),
            spec,
            options,
            markers: SpecialMarkers::default(),
            bridge: Mutex::new(Some(Arc::new(bridge))),
        }
    }

    pub fn bridge(&self) -> Option<Arc<Bridge>> {
        self.bridge.lock().expect("bridge lock").clone()
    }

    fn connected(&self) -> Result<Arc<Bridge>, SimError> {
        let mut slot = self.bridge.lock().expect("bridge lock");
        if let Some(b) = slot.as_ref() {
            return Ok(Arc::clone(b));
        }
        let bridge = Bridge::connect(&self.spec, self.options)
            .map_err(|e| SimError::Handshake { backend: self.name.clone(), message: e.to_string() })?;
        let bridge = Arc::new(bridge);
        *slot = Some(Arc::clone(&bridge));
        Ok(bridge)
    }
}

impl AnswerBackend for ExternalBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> AnswerBackendKind {
        AnswerBackendKind::External
    }

    fn supports_concurrent(&self) -> bool {
        self.bridge().is_some_and(|b| b.descriptor().capabilities.concurrent)
    }

    fn ready(&self) -> Result<(), SimError> {
        self.connected().map(|_| ())
    }

    fn answer(&self, ctx: &AnswerContext<'_>) -> Result<BackendAnswer, SimError> {
        let bridge = self.connected()?;
        let fail = |message: String| SimError::Backend { backend: self.name.clone(), message };
        let marked = if bridge.descriptor().capabilities.marked_sequence {
            let seq = if ctx.history.pairs().is_empty() {
                encode_single(ctx.need, ctx.question, None, &self.markers)
            } else {
                encode_multi(ctx.need, ctx.history, ctx.question, None, &self.markers)
            };
            Some(seq.map_err(|e| fail(e.to_string()))?.text)
        } else {
            None
        };
        let req = build_request(bridge.next_id(), ctx.need, ctx.history, ctx.question, ctx.params, marked);
        let resp = bridge.request(&req).map_err(|e| fail(e.to_string()))?;
        resp.into_result()
            .map(BackendAnswer::new)
            .map_err(|e| fail(format!("{}: {}", e.code, e.message)))
    }
}
