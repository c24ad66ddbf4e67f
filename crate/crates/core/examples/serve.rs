// SPDX-License-Identifier: MIT OR Apache-2.0

//! Serves the intervention fixture over HTTP.
//!
//! ```text
//! cargo run --example serve -- 8080
//! curl -s localhost:8080/concepts
//! curl -s localhost:8080/classify -H 'content-type: application/json' \
//!     -d '{"text": "galaxy theory galaxy report",
//!          "interventions": [{"concept_id": "galaxy", "factor": 0}]}'
//! ```

use std::net::{Ipv4Addr, SocketAddr};

use concept_layers::fixtures::InterventionFixture;
use concept_layers::service::{serve, ServiceModel, ServiceState};

#[tokio::main]
async fn main() -> concept_layers::error::Result<()> {
    let port = std::env::args()
        .nth(1)
        .and_then(|p| p.parse().ok())
        .unwrap_or(8080);
    let f = InterventionFixture::new(0)?;
    let model = ServiceModel::new(f.model, f.head)?
        .with_class_names(vec!["other".into(), "science".into()])?;
    let addr = SocketAddr::from((Ipv4Addr::LOCALHOST, port));
    println!("listening on http://{addr}");
    serve(ServiceState::loaded(model), addr, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
}
