use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use tokio::net::TcpListener;

use crate::hub::Hub;
use crate::protocol::message_schema;
use crate::ServiceError;

/// `/ws` carries the protocol; `/schema` serves the message descriptor.
pub fn router(hub: Arc<Hub>) -> Router {
    Router::new().route("/ws", get(upgrade)).route("/schema", get(|| async { Json(message_schema()) })).with_state(hub)
}

async fn upgrade(ws: WebSocketUpgrade, State(hub): State<Arc<Hub>>) -> Response {
    ws.on_upgrade(move |socket| run_socket(hub, socket)).into_response()
}

async fn run_socket(hub: Arc<Hub>, socket: WebSocket) {
    let (mut sink, mut stream) = socket.split();
    let (mut conn, mut rx) = hub.connect();
    let writer = tokio::spawn(async move {
        while let Some(envelope) = rx.recv().await {
            let text = serde_json::to_string(&envelope).expect("server messages always serialise");
            if sink.send(Message::Text(text.into())).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });
    while let Some(Ok(frame)) = stream.next().await {
        match frame {
            Message::Text(text) => conn.handle_text(text.as_str()),
            Message::Binary(_) => conn.handle_text("binary frame"),
            Message::Close(_) => break,
            Message::Ping(_) | Message::Pong(_) => {}
        }
    }
    tracing::debug!(role = ?conn.role(), "connection closed");
    // Dropping the connection detaches it from its session, which closes
    // the outgoing channel and ends the writer.
    drop(conn);
    let _ = writer.await;
}

/// Serves until `shutdown` resolves. Returns once the listener is closed.
pub async fn serve_on(
    hub: Arc<Hub>,
    listener: TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    let addr = listener.local_addr().map_err(ServiceError::Bind)?;
    tracing::info!(%addr, plan = %hub.plan().name, "listening");
    axum::serve(listener, router(hub)).with_graceful_shutdown(shutdown).await.map_err(ServiceError::Bind)
}

/// Binds `addr` and serves until `shutdown` resolves.
pub async fn serve(
    hub: Arc<Hub>,
    addr: SocketAddr,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    let listener = TcpListener::bind(addr).await.map_err(ServiceError::Bind)?;
    serve_on(hub, listener, shutdown).await
}

/// Binds an ephemeral port and serves in the background.
pub async fn spawn(hub: Arc<Hub>) -> Result<(SocketAddr, tokio::task::JoinHandle<()>), ServiceError> {
    let listener = TcpListener::bind(("127.0.0.1", 0)).await.map_err(ServiceError::Bind)?;
    let addr = listener.local_addr().map_err(ServiceError::Bind)?;
    let handle = tokio::spawn(async move {
        if let Err(e) = serve_on(hub, listener, std::future::pending()).await {
            tracing::error!(error = %e, "server stopped");
        }
    });
    Ok((addr, handle))
}
