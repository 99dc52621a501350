//! Run the reference bridge server, check it, and inpaint through it.
//!
//! Pass an address (e.g. `127.0.0.1:7878`) to check an external server
//! instead.

use fadm::bridge::{conformance, BridgeClient, ClientConfig, MockBridgeServer, RemoteInpainter, ServerOptions};
use fadm::crop::prepare_crop;
use fadm::detection::{detect, DetectorConfig, OracleDetector};
use fadm::generative::{batch_inpaint, DiffusionParams, InpaintRequest};
use fadm::synth::{SceneSpec, SyntheticDataset};

fn main() -> fadm::Result<()> {
    if let Some(endpoint) = std::env::args().nth(1) {
        let report = conformance::run(&endpoint);
        print!("{report}");
        std::process::exit(if report.all_passed() { 0 } else { 1 });
    }

    let server = MockBridgeServer::spawn("127.0.0.1:0", ServerOptions::default())?;
    println!("mock bridge on {}", server.endpoint());
    print!("{}", conformance::run(&server.endpoint()));

    let client = BridgeClient::connect(server.endpoint(), ClientConfig::default())?;
    println!("capabilities: {:?}", client.capabilities());

    let data = SyntheticDataset::generate(&SceneSpec::default(), 1, 1);
    let (id, image) = &data.images[0];
    let detector = OracleDetector::new(data.annotations.clone());
    let requests = detect(id, image, &DetectorConfig::default(), &detector)?
        .iter()
        .map(|det| {
            let crop = prepare_crop(image, det, 32, 0.2, 2)?;
            let params = DiffusionParams {
                resolution: 32,
                seed: det.instance_index as u64,
                ..Default::default()
            };
            InpaintRequest::new(crop, params)
        })
        .collect::<fadm::Result<Vec<_>>>()?;
    let results = batch_inpaint(&requests, &RemoteInpainter::new(client), 2)
        .map_err(|e| fadm::Error::Batch { failed: e.failed_indices() })?;
    println!("{} crops inpainted over the wire", results.len());
    Ok(())
}
