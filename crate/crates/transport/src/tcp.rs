//! Length-prefixed framing over TCP: a big-endian u32 length, then the package bytes.

use std::io::ErrorKind;
use std::net::SocketAddr;

use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::{TcpListener, TcpStream};

use crate::link::{LinkConfig, TransportError, TransportLink};

pub const DEFAULT_MAX_FRAME: usize = 4 * 1024 * 1024;

#[derive(Debug)]
pub(crate) struct TcpEnd {
    reader: OwnedReadHalf,
    writer: OwnedWriteHalf,
    max_frame: usize,
}

impl TcpEnd {
    fn new(stream: TcpStream, max_frame: usize) -> Self {
        let _ = stream.set_nodelay(true);
        let (reader, writer) = stream.into_split();
        TcpEnd {
            reader,
            writer,
            max_frame,
        }
    }

    pub(crate) async fn send(&mut self, bytes: &[u8]) -> Result<(), TransportError> {
        if bytes.len() > self.max_frame {
            return Err(TransportError::FrameTooLarge {
                len: bytes.len(),
                max: self.max_frame,
            });
        }
        let mut frame = Vec::with_capacity(4 + bytes.len());
        frame.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
        frame.extend_from_slice(bytes);
        self.writer.write_all(&frame).await.map_err(closed_or_io)
    }

    pub(crate) async fn recv(&mut self) -> Result<Vec<u8>, TransportError> {
        let mut len = [0u8; 4];
        self.reader.read_exact(&mut len).await.map_err(closed_or_io)?;
        let len = u32::from_be_bytes(len) as usize;
        if len > self.max_frame {
            return Err(TransportError::FrameTooLarge {
                len,
                max: self.max_frame,
            });
        }
        let mut buf = vec![0u8; len];
        self.reader.read_exact(&mut buf).await.map_err(closed_or_io)?;
        Ok(buf)
    }

    pub(crate) async fn shutdown(&mut self) {
        let _ = self.writer.shutdown().await;
    }
}

fn closed_or_io(e: std::io::Error) -> TransportError {
    match e.kind() {
        ErrorKind::UnexpectedEof
        | ErrorKind::ConnectionReset
        | ErrorKind::BrokenPipe
        | ErrorKind::ConnectionAborted => TransportError::closed("peer closed"),
        _ => TransportError::Io(e),
    }
}

/// Listening side of TCP links.
#[derive(Debug)]
pub struct TcpAcceptor {
    listener: TcpListener,
    config: LinkConfig,
    max_frame: usize,
}

impl TcpAcceptor {
    pub async fn bind(addr: SocketAddr, config: LinkConfig) -> Result<Self, TransportError> {
        let listener = TcpListener::bind(addr).await.map_err(|e| match e.kind() {
            ErrorKind::AddrInUse => TransportError::AddressInUse(addr),
            _ => TransportError::Io(e),
        })?;
        Ok(TcpAcceptor {
            listener,
            config,
            max_frame: DEFAULT_MAX_FRAME,
        })
    }

    pub fn with_max_frame(mut self, max_frame: usize) -> Self {
        self.max_frame = max_frame;
        self
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    pub async fn accept(&self) -> Result<TransportLink, TransportError> {
        let (stream, _) = self.listener.accept().await?;
        Ok(TransportLink::from_tcp(
            TcpEnd::new(stream, self.max_frame),
            self.config,
        ))
    }
}

pub async fn dial(addr: SocketAddr, config: LinkConfig) -> Result<TransportLink, TransportError> {
    dial_with_max(addr, config, DEFAULT_MAX_FRAME).await
}

pub async fn dial_with_max(
    addr: SocketAddr,
    config: LinkConfig,
    max_frame: usize,
) -> Result<TransportLink, TransportError> {
    let stream = TcpStream::connect(addr).await.map_err(|e| match e.kind() {
        ErrorKind::ConnectionRefused => TransportError::ConnectionRefused(addr),
        _ => TransportError::Io(e),
    })?;
    Ok(TransportLink::from_tcp(TcpEnd::new(stream, max_frame), config))
}

/// A connected loopback pair: (dialing end, accepting end).
pub async fn loopback_pair(config: LinkConfig) -> Result<(TransportLink, TransportLink), TransportError> {
    let acceptor = TcpAcceptor::bind(SocketAddr::from(([127, 0, 0, 1], 0)), config).await?;
    let addr = acceptor.local_addr();
    let (dialed, accepted) = tokio::join!(dial(addr, config), acceptor.accept());
    Ok((dialed?, accepted?))
}

#[cfg(test)]
mod tests {
    use std::time::Duration;

    use super::*;

    fn cfg() -> LinkConfig {
        LinkConfig::with_deadline(Some(Duration::from_secs(5)))
    }

    #[tokio::test]
    async fn loopback_roundtrip_is_byte_identical() {
        let (mut a, mut b) = loopback_pair(cfg()).await.unwrap();
        let pkg: Vec<u8> = (0..=255u8).cycle().take(70_000).collect();
        a.send(&pkg).await.unwrap();
        assert_eq!(b.recv().await.unwrap(), pkg);
        b.send(b"").await.unwrap();
        assert_eq!(a.recv().await.unwrap(), b"");
    }

    #[tokio::test]
    async fn oversized_frames_are_refused() {
        let acceptor = TcpAcceptor::bind(SocketAddr::from(([127, 0, 0, 1], 0)), cfg())
            .await
            .unwrap()
            .with_max_frame(16);
        let addr = acceptor.local_addr();
        let (a, b) = tokio::join!(dial(addr, cfg()), acceptor.accept());
        let (mut a, mut b) = (a.unwrap(), b.unwrap());
        a.send(&[1u8; 17]).await.unwrap();
        assert!(matches!(
            b.recv().await,
            Err(TransportError::FrameTooLarge { len: 17, max: 16 })
        ));
        assert!(matches!(
            b.send(&[0u8; 17]).await,
            Err(TransportError::TransportClosed(_))
        ));
    }

    #[tokio::test]
    async fn disconnect_mid_frame_closes() {
        let acceptor = TcpAcceptor::bind(SocketAddr::from(([127, 0, 0, 1], 0)), cfg())
            .await
            .unwrap();
        let addr = acceptor.local_addr();
        let (raw, link) = tokio::join!(TcpStream::connect(addr), acceptor.accept());
        let mut raw = raw.unwrap();
        let mut link = link.unwrap();
        raw.write_all(&100u32.to_be_bytes()).await.unwrap();
        raw.write_all(b"partial").await.unwrap();
        drop(raw);
        assert!(matches!(link.recv().await, Err(TransportError::TransportClosed(r)) if r == "peer closed"));
    }

    #[tokio::test]
    async fn refused_and_in_use() {
        let acceptor = TcpAcceptor::bind(SocketAddr::from(([127, 0, 0, 1], 0)), cfg())
            .await
            .unwrap();
        let addr = acceptor.local_addr();
        assert!(matches!(
            TcpAcceptor::bind(addr, cfg()).await,
            Err(TransportError::AddressInUse(a)) if a == addr
        ));
        drop(acceptor);
        assert!(matches!(dial(addr, cfg()).await, Err(TransportError::ConnectionRefused(a)) if a == addr));
    }
}
