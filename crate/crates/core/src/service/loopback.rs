use std::net::{SocketAddr, UdpSocket};
use std::time::{Duration, Instant};

use rand::Rng;

use super::osc;
use crate::engine::{Percentiles, QuerySpec};
use crate::error::{Error, Result};

/// Time `calls` feed-then-query round trips against an OSC server, from
/// sending the feed to receiving the query reply.
pub fn osc_round_trips<R: Rng + ?Sized>(server: SocketAddr, calls: usize, rng: &mut R) -> Result<Percentiles> {
    let sock = UdpSocket::bind((server.ip(), 0))?;
    sock.set_read_timeout(Some(Duration::from_secs(2)))?;
    let query = osc::encode_query(&QuerySpec::default());
    let mut buf = vec![0u8; rosc::decoder::MTU];
    let mut ms = Vec::with_capacity(calls);
    for _ in 0..calls {
        let feed = osc::encode_feed(rng.gen_range(1..=128), rng.gen_range(0..128), Some(rng.gen_range(0.0..0.5)), rng.gen_range(0.0..127.0));
        let t = Instant::now();
        sock.send_to(&feed, server)?;
        sock.send_to(&query, server)?;
        let n = sock.recv(&mut buf)?;
        ms.push(t.elapsed().as_secs_f64() * 1e3);
        osc::decode_query_reply(&buf[..n]).map_err(Error::Format)?;
    }
    Ok(Percentiles::of(&ms))
}
