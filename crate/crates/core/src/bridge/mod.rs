//! Wire protocol to an out-of-process inference service, a client for it,
//! a reference server and a conformance suite.

pub mod client;
pub mod conformance;
pub mod protocol;
pub mod server;

pub use client::{BridgeClient, ClientConfig, RemoteDetector, RemoteExtractor, RemoteInpainter, ENDPOINT_ENV};
pub use conformance::{CheckResult, ConformanceReport};
pub use protocol::{BridgeOp, BridgeRequest, BridgeResponse, Capabilities, Payload, PROTOCOL_VERSION};
pub use server::{Fault, MockBridgeServer, ServerOptions};
