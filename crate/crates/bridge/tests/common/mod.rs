#![allow(dead_code)]

use std::path::Path;
use std::time::{Duration, Instant};

use futures_util::{SinkExt, StreamExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

use blendnav_bridge::wire::{ClientCommand, ClientMessage, ServerMessage};
use blendnav_bridge::{Bridge, BridgeConfig};
use blendnav_core::metrics::ControlMode;
use blendnav_core::sim::SimConfig;
use blendnav_core::world::{load_scenario_file, Scenario};

pub fn doorway() -> Scenario {
    load_scenario_file(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/doorway.json"))
        .unwrap()
}

pub async fn start(sim: SimConfig, tweak: impl FnOnce(&mut BridgeConfig)) -> Bridge {
    let mut cfg = BridgeConfig::new(doorway(), sim);
    tweak(&mut cfg);
    Bridge::start(cfg, "127.0.0.1:0").await.unwrap()
}

pub struct Client {
    ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
    seq: u64,
}

impl Client {
    pub async fn connect(bridge: &Bridge) -> Self {
        let url = format!("ws://{}/ws", bridge.local_addr());
        let (ws, _) = tokio_tungstenite::connect_async(url).await.unwrap();
        Self { ws, seq: 0 }
    }

    /// Connects with a tiny socket receive buffer, so the connection backs
    /// up as soon as the client stops reading.
    pub async fn connect_small_buffer(bridge: &Bridge) -> Self {
        let socket = tokio::net::TcpSocket::new_v4().unwrap();
        socket.set_recv_buffer_size(4096).unwrap();
        let stream = socket.connect(bridge.local_addr()).await.unwrap();
        let url = format!("ws://{}/ws", bridge.local_addr());
        let (ws, _) = tokio_tungstenite::client_async(url, MaybeTlsStream::Plain(stream))
            .await
            .unwrap();
        Self { ws, seq: 0 }
    }

    /// Next server message, or `None` once the server closes the connection.
    pub async fn next(&mut self) -> Option<ServerMessage> {
        loop {
            let msg = tokio::time::timeout(Duration::from_secs(5), self.ws.next())
                .await
                .expect("server went quiet")?;
            match msg.ok()? {
                Message::Text(t) => return Some(serde_json::from_str(t.as_str()).unwrap()),
                Message::Close(_) => return None,
                _ => {}
            }
        }
    }

    pub async fn collect_for(&mut self, d: Duration) -> Vec<(Instant, ServerMessage)> {
        let end = Instant::now() + d;
        let mut out = Vec::new();
        while Instant::now() < end {
            match tokio::time::timeout_at(end.into(), self.next()).await {
                Ok(Some(m)) => out.push((Instant::now(), m)),
                Ok(None) | Err(_) => break,
            }
        }
        out
    }

    pub async fn send_raw(&mut self, text: &str) {
        self.ws.send(Message::Text(text.into())).await.unwrap();
    }

    pub async fn send_cmd_seq(
        &mut self,
        seq: u64,
        vx_norm: f64,
        omega_norm: f64,
        mode_request: Option<ControlMode>,
    ) {
        let msg = ClientMessage::Cmd(ClientCommand {
            seq,
            stamp: 0.0,
            vx_norm,
            omega_norm,
            mode_request,
        });
        self.send_raw(&serde_json::to_string(&msg).unwrap()).await;
    }

    /// Sends with the next sequence number.
    pub async fn send_cmd(&mut self, vx_norm: f64, omega_norm: f64) -> u64 {
        self.seq += 1;
        self.send_cmd_seq(self.seq, vx_norm, omega_norm, None).await;
        self.seq
    }

    pub async fn close(mut self) {
        let _ = self.ws.close(None).await;
    }
}
