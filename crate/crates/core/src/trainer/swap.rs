use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::client::{ClientError, RolloutClient};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapReport {
    pub old_backends: Vec<String>,
    pub new_backends: Vec<String>,
    /// How long the pool was empty.
    pub empty_window: Duration,
}

/// Flushes every backend, waits out `empty_window` (weights reloading),
/// then registers the new endpoints.
pub async fn checkpoint_swap(
    client: &RolloutClient,
    new_backends: &[String],
    empty_window: Duration,
) -> Result<SwapReport, ClientError> {
    let old_backends = client.status().await?.backends.into_iter().map(|b| b.address).collect();
    client.clear_llm_server().await?;
    let cleared = Instant::now();
    tokio::time::sleep(empty_window).await;
    let mut empty = cleared.elapsed();
    for (i, b) in new_backends.iter().enumerate() {
        client.add_llm_server(b).await?;
        if i == 0 {
            empty = cleared.elapsed();
        }
    }
    Ok(SwapReport { old_backends, new_backends: new_backends.to_vec(), empty_window: empty })
}
