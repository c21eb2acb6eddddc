#![allow(dead_code)]

use std::net::SocketAddr;
use std::time::{Duration, Instant};

use futures::StreamExt;
use helideck::sim::{default_waypoints, NoiseModel, ScenarioConfig, Waypoint};
use helideck::wire::StreamMessage;
use helideck_cli::config::{AppConfig, AppContext};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

pub type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_helideck")
}

/// The standard approach played `speedup` times faster at `frame_rate`.
pub fn fast_context(noise: NoiseModel, frame_rate: f64, speedup: f64) -> AppContext {
    let waypoints: Vec<Waypoint> =
        default_waypoints().into_iter().map(|w| Waypoint { t: w.t / speedup, ..w }).collect();
    let config = AppConfig {
        scenario: ScenarioConfig { noise, frame_rate, waypoints, ..ScenarioConfig::default() },
        ..AppConfig::default()
    };
    AppContext::load(&config).unwrap()
}

pub async fn connect(addr: SocketAddr, query: &str) -> Ws {
    let (ws, _) = connect_async(format!("ws://{addr}/stream{query}")).await.expect("websocket connects");
    ws
}

/// Next stream message, skipping non-text frames.
pub async fn next_message(ws: &mut Ws, wait: Duration) -> Option<StreamMessage> {
    let deadline = Instant::now() + wait;
    loop {
        let left = deadline.checked_duration_since(Instant::now())?;
        match tokio::time::timeout(left, ws.next()).await {
            Ok(Some(Ok(Message::Text(t)))) => {
                return Some(StreamMessage::parse(t.as_str()).expect("valid stream message"))
            }
            Ok(Some(Ok(_))) => continue,
            _ => return None,
        }
    }
}

/// Counts messages arriving within `window`.
pub async fn count_for(ws: &mut Ws, window: Duration) -> usize {
    let deadline = Instant::now() + window;
    let mut n = 0;
    while let Some(left) = deadline.checked_duration_since(Instant::now()) {
        match tokio::time::timeout(left, ws.next()).await {
            Ok(Some(Ok(Message::Text(_)))) => n += 1,
            Ok(Some(Ok(_))) => {}
            _ => break,
        }
    }
    n
}

/// Minimal HTTP/1.1 request; returns status and body.
pub async fn http(addr: SocketAddr, method: &str, path: &str, body: &str) -> (u16, String) {
    let mut s = TcpStream::connect(addr).await.unwrap();
    let req = format!(
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    s.write_all(req.as_bytes()).await.unwrap();
    let mut raw = Vec::new();
    s.read_to_end(&mut raw).await.unwrap();
    let text = String::from_utf8(raw).unwrap();
    let status = text.split_whitespace().nth(1).and_then(|c| c.parse().ok()).unwrap_or(0);
    let body = text.split_once("\r\n\r\n").map(|(_, b)| b.to_string()).unwrap_or_default();
    (status, body)
}

pub async fn health(addr: SocketAddr) -> serde_json::Value {
    let (status, body) = http(addr, "GET", "/health", "").await;
    assert_eq!(status, 200, "{body}");
    serde_json::from_str(&body).unwrap()
}

pub fn localhost() -> SocketAddr {
    "127.0.0.1:0".parse().unwrap()
}
