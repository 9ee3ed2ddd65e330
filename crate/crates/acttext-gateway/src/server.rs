//! Runtime plumbing shared by the gateway and the stub: run an axum app on
//! a dedicated thread with its own runtime, hand back the bound address,
//! and stop cleanly on shutdown.

use std::net::SocketAddr;

use thiserror::Error;
use tokio::sync::oneshot;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("bind {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid gateway config: {0}")]
    InvalidConfig(String),
    #[error("backend health check failed: {0}")]
    BackendUnreachable(String),
}

/// A server running on its own thread until dropped or shut down.
pub struct RunningServer {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl RunningServer {
    /// Bind `bind_addr` and serve `app` on a dedicated runtime thread.
    pub fn spawn(bind_addr: &str, app: axum::Router) -> Result<Self, ServerError> {
        let listener = std::net::TcpListener::bind(bind_addr).map_err(|source| ServerError::Bind {
            addr: bind_addr.to_string(),
            source,
        })?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let (shutdown_tx, shutdown_rx) = oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            let runtime = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .expect("tokio runtime construction");
            runtime.block_on(async move {
                let listener =
                    tokio::net::TcpListener::from_std(listener).expect("listener registration");
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = shutdown_rx.await;
                    })
                    .await
                    .expect("server loop");
            });
        });
        Ok(Self {
            addr,
            shutdown: Some(shutdown_tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Signal shutdown and wait for the server thread to finish.
    pub fn shutdown(mut self) {
        self.stop();
    }

    /// Block until the server exits on its own (it normally never does).
    /// The shutdown sender stays alive for the duration, since dropping it
    /// would itself complete the shutdown future.
    pub fn wait(mut self) {
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
        self.shutdown = None;
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        self.stop();
    }
}
