//! A synthetic scorer behind the NDJSON wire protocol, for exercising the
//! remote client without a model server.

use std::io::{BufReader, Write};
use std::net::TcpListener;
use std::sync::Arc;

use glauber::scorers::wire;
use glauber::TokenId;

use crate::config::ExperimentConfig;
use crate::scorer_spec::{ScorerSource, ScorerSpec};
use crate::UsageError;

/// Serves on stdin/stdout, or on every connection to `listen`. The mask id
/// is the first id past the vocabulary.
pub fn serve_synthetic(config: &ExperimentConfig, listen: Option<&str>) -> anyhow::Result<()> {
    if matches!(config.scorer, ScorerSpec::Remote { .. }) {
        return Err(UsageError::new("scorer.kind: serve-synthetic needs a local scorer").into());
    }
    let n = config.grid.n[0];
    let scorer = ScorerSource::new(config.scorer.clone()).for_len(n)?;
    let mask_id = scorer.vocab_size() as TokenId;
    let Some(addr) = listen else {
        let stdin = std::io::stdin();
        return Ok(wire::serve(
            scorer.as_ref(),
            mask_id,
            stdin.lock(),
            std::io::stdout().lock(),
        )?);
    };
    let listener = TcpListener::bind(addr)
        .map_err(|e| glauber::Error::Transport(format!("bind {addr}: {e}")))?;
    let mut stdout = std::io::stdout();
    writeln!(stdout, "listening on {}", listener.local_addr()?)?;
    stdout.flush()?;
    for stream in listener.incoming() {
        let stream = stream?;
        let scorer = Arc::clone(&scorer);
        std::thread::spawn(move || {
            let reader = match stream.try_clone() {
                Ok(s) => BufReader::new(s),
                Err(_) => return,
            };
            // a client hanging up mid-request is not the server's failure
            let _ = wire::serve(scorer.as_ref(), mask_id, reader, stream);
        });
    }
    Ok(())
}
