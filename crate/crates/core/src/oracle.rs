//! Chosen-plaintext encryption oracles.
//!
//! [`LocalOracle`] encrypts in-process. [`serve`] exposes one over TCP and
//! [`RemoteOracle`] talks to it. The wire protocol is newline-delimited JSON:
//!
//! ```text
//! -> {"op":"HELLO"}
//! <- {"M":256,"N":256,"mode":"frozen"}
//! -> {"op":"ENCRYPT","stage":"T2","data":"<base64 of interleaved RGB bytes>"}
//! <- {"data":"<base64>"}            or  {"error":"..."}
//! -> {"op":"STATS"}
//! <- {"total_queries":17,"per_stage":{"T2":17},"bytes_received":..,"bytes_sent":..}
//! -> {"op":"SHUTDOWN"}
//! <- {"ok":true}
//! ```

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::cipher::{encrypt_image_with, SumsMode};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::keystream::{generate_keystream, KeyMaterial, Keystream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleMode {
    /// One keystream, derived from the configured sums, for every query.
    Frozen,
    /// Sums are recomputed from each submitted image.
    Faithful,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub mode: OracleMode,
    pub key: KeyMaterial,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryLog {
    pub total_queries: u64,
    pub per_stage: BTreeMap<String, u64>,
    pub bytes_received: u64,
    pub bytes_sent: u64,
}

impl QueryLog {
    fn record(&mut self, stage: &str) {
        self.total_queries += 1;
        *self.per_stage.entry(stage.to_string()).or_default() += 1;
    }

    pub fn stage(&self, stage: &str) -> u64 {
        self.per_stage.get(stage).copied().unwrap_or(0)
    }
}

/// Anything that encrypts chosen RGB images under a fixed secret.
pub trait EncryptionOracle {
    /// `(height, width)` of accepted images.
    fn dims(&self) -> (usize, usize);

    /// Encrypts `img`, attributing the query to `stage`.
    fn query(&mut self, img: &Image, stage: &str) -> Result<Image>;

    fn log(&self) -> Result<QueryLog>;
}

pub struct LocalOracle {
    config: OracleConfig,
    frozen: Option<Keystream>,
    log: QueryLog,
}

impl LocalOracle {
    pub fn new(config: OracleConfig) -> Result<Self> {
        if config.height * config.width < 2 {
            return Err(Error::InvalidParameter("oracle image needs at least two pixels".into()));
        }
        let frozen = match config.mode {
            OracleMode::Frozen => Some(generate_keystream(
                &config.key,
                config.height * config.width,
            )?),
            OracleMode::Faithful => None,
        };
        Ok(Self {
            config,
            frozen,
            log: QueryLog::default(),
        })
    }

    pub fn config(&self) -> &OracleConfig {
        &self.config
    }

    /// The keystream a frozen oracle applies. `None` in faithful mode.
    pub fn keystream(&self) -> Option<&Keystream> {
        self.frozen.as_ref()
    }

    fn check(&self, img: &Image) -> Result<()> {
        if img.height != self.config.height || img.width != self.config.width || img.channels != 3
        {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}x3", self.config.height, self.config.width),
                got: img.shape(),
            });
        }
        Ok(())
    }
}

impl EncryptionOracle for LocalOracle {
    fn dims(&self) -> (usize, usize) {
        (self.config.height, self.config.width)
    }

    fn query(&mut self, img: &Image, stage: &str) -> Result<Image> {
        self.check(img)?;
        let out = match &self.frozen {
            Some(ks) => encrypt_image_with(img, ks)?,
            None => crate::cipher::encrypt_rgb(img, self.config.key.b, SumsMode::Faithful)?,
        };
        self.log.record(stage);
        Ok(out)
    }

    fn log(&self) -> Result<QueryLog> {
        Ok(self.log.clone())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Request {
    op: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    data: Option<String>,
}

fn error_reply(msg: impl std::fmt::Display) -> serde_json::Value {
    serde_json::json!({ "error": msg.to_string() })
}

fn handle(oracle: &mut LocalOracle, line: &str, shutdown: &mut bool) -> serde_json::Value {
    let req: Request = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => return error_reply(format!("malformed request: {e}")),
    };
    match req.op.as_str() {
        "HELLO" => serde_json::json!({
            "M": oracle.config.height,
            "N": oracle.config.width,
            "mode": oracle.config.mode,
        }),
        "ENCRYPT" => {
            let Some(data) = req.data else {
                return error_reply("ENCRYPT needs data");
            };
            let bytes = match B64.decode(data.as_bytes()) {
                Ok(b) => b,
                Err(e) => return error_reply(format!("bad base64: {e}")),
            };
            oracle.log.bytes_received += bytes.len() as u64;
            let (h, w) = oracle.dims();
            if bytes.len() != h * w * 3 {
                return error_reply(Error::DimensionMismatch {
                    expected: format!("{} bytes", h * w * 3),
                    got: format!("{} bytes", bytes.len()),
                });
            }
            let stage = req.stage.unwrap_or_else(|| "unlabelled".into());
            let result = Image::new(h, w, 3, bytes).and_then(|img| oracle.query(&img, &stage));
            match result {
                Ok(out) => {
                    oracle.log.bytes_sent += out.pixels.len() as u64;
                    serde_json::json!({ "data": B64.encode(&out.pixels) })
                }
                Err(e) => error_reply(e),
            }
        }
        "STATS" => serde_json::to_value(&oracle.log).unwrap_or_else(error_reply),
        "SHUTDOWN" => {
            *shutdown = true;
            serde_json::json!({ "ok": true })
        }
        other => error_reply(format!("unknown op {other:?}")),
    }
}

/// Serves `oracle` on an already bound listener, one connection and one
/// request at a time, until a client sends `SHUTDOWN`.
pub fn serve_listener(listener: TcpListener, mut oracle: LocalOracle) -> Result<QueryLog> {
    for stream in listener.incoming() {
        let stream = stream?;
        let mut writer = stream.try_clone()?;
        let reader = BufReader::new(stream);
        let mut shutdown = false;
        for line in reader.lines() {
            let line = match line {
                Ok(l) => l,
                Err(_) => break,
            };
            if line.trim().is_empty() {
                continue;
            }
            let reply = handle(&mut oracle, &line, &mut shutdown);
            let mut text = reply.to_string();
            text.push('\n');
            if writer.write_all(text.as_bytes()).is_err() {
                break;
            }
            if shutdown {
                return Ok(oracle.log);
            }
        }
    }
    Ok(oracle.log)
}

/// Binds `endpoint` (`host:port`) and serves a new oracle built from `cfg`.
pub fn serve(endpoint: &str, cfg: OracleConfig) -> Result<QueryLog> {
    let listener = TcpListener::bind(endpoint)
        .map_err(|e| Error::Oracle(format!("cannot bind {endpoint}: {e}")))?;
    serve_listener(listener, LocalOracle::new(cfg)?)
}

pub struct RemoteOracle {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    height: usize,
    width: usize,
    mode: OracleMode,
}

impl RemoteOracle {
    pub fn connect<A: ToSocketAddrs + std::fmt::Debug>(endpoint: A) -> Result<Self> {
        let stream = TcpStream::connect(&endpoint)
            .map_err(|e| Error::Oracle(format!("cannot connect to {endpoint:?}: {e}")))?;
        let writer = stream.try_clone()?;
        let mut remote = Self {
            reader: BufReader::new(stream),
            writer,
            height: 0,
            width: 0,
            mode: OracleMode::Frozen,
        };
        let hello = remote.call(&Request {
            op: "HELLO".into(),
            stage: None,
            data: None,
        })?;
        let field = |k: &str| {
            hello[k]
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| Error::Protocol(format!("HELLO reply lacks {k}")))
        };
        remote.height = field("M")?;
        remote.width = field("N")?;
        remote.mode = serde_json::from_value(hello["mode"].clone())
            .map_err(|e| Error::Protocol(format!("HELLO reply has bad mode: {e}")))?;
        Ok(remote)
    }

    pub fn mode(&self) -> OracleMode {
        self.mode
    }

    fn call(&mut self, req: &Request) -> Result<serde_json::Value> {
        let mut text = serde_json::to_string(req)?;
        text.push('\n');
        self.writer.write_all(text.as_bytes())?;
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            return Err(Error::Protocol("server closed the connection".into()));
        }
        let reply: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| Error::Protocol(format!("malformed reply: {e}")))?;
        if let Some(err) = reply.get("error") {
            return Err(Error::Oracle(err.as_str().unwrap_or("unknown").to_string()));
        }
        Ok(reply)
    }

    /// Asks the server to stop after replying.
    pub fn shutdown(mut self) -> Result<()> {
        self.call(&Request {
            op: "SHUTDOWN".into(),
            stage: None,
            data: None,
        })?;
        Ok(())
    }
}

impl EncryptionOracle for RemoteOracle {
    fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn query(&mut self, img: &Image, stage: &str) -> Result<Image> {
        let reply = self.call(&Request {
            op: "ENCRYPT".into(),
            stage: Some(stage.to_string()),
            data: Some(B64.encode(&img.pixels)),
        })?;
        let data = reply["data"]
            .as_str()
            .ok_or_else(|| Error::Protocol("ENCRYPT reply lacks data".into()))?;
        let bytes = B64
            .decode(data.as_bytes())
            .map_err(|e| Error::Protocol(format!("bad base64 in reply: {e}")))?;
        Image::new(img.height, img.width, img.channels, bytes)
    }

    fn log(&self) -> Result<QueryLog> {
        // `log` takes &self; STATS needs a round trip on a separate handle.
        let mut writer = self.writer.try_clone()?;
        writer.write_all(b"{\"op\":\"STATS\"}\n")?;
        let mut reader = BufReader::new(self.writer.try_clone()?);
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let reply: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| Error::Protocol(format!("malformed STATS reply: {e}")))?;
        Ok(serde_json::from_value(reply)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keystream::ChannelSums;

    fn cfg(mode: OracleMode) -> OracleConfig {
        OracleConfig {
            mode,
            key: KeyMaterial::new(1.93, ChannelSums::new(100, 200, 300)).unwrap(),
            height: 4,
            width: 4,
        }
    }

    #[test]
    fn frozen_mode_ignores_image_sums() {
        let mut o = LocalOracle::new(cfg(OracleMode::Frozen)).unwrap();
        let zero = Image::filled(4, 4, 3, 0).unwrap();
        let one = Image::filled(4, 4, 3, 1).unwrap();
        let cz = o.query(&zero, "a").unwrap();
        let co = o.query(&one, "b").unwrap();
        let ks = o.keystream().unwrap().clone();
        assert_eq!(cz, encrypt_image_with(&zero, &ks).unwrap());
        assert_eq!(co, encrypt_image_with(&one, &ks).unwrap());
        let log = o.log().unwrap();
        assert_eq!(log.total_queries, 2);
        assert_eq!(log.stage("a"), 1);
    }

    #[test]
    fn faithful_mode_rederives_keystream() {
        let mut o = LocalOracle::new(cfg(OracleMode::Faithful)).unwrap();
        let one = Image::filled(4, 4, 3, 1).unwrap();
        let c = o.query(&one, "x").unwrap();
        let frozen = generate_keystream(&cfg(OracleMode::Faithful).key, 16).unwrap();
        assert_ne!(c, encrypt_image_with(&one, &frozen).unwrap());
        let own = generate_keystream(
            &KeyMaterial::new(1.93, one.channel_sums()).unwrap(),
            16,
        )
        .unwrap();
        assert_eq!(c, encrypt_image_with(&one, &own).unwrap());
    }

    #[test]
    fn wrong_dimensions_rejected() {
        let mut o = LocalOracle::new(cfg(OracleMode::Frozen)).unwrap();
        let img = Image::filled(2, 8, 3, 0).unwrap();
        assert!(matches!(o.query(&img, "x"), Err(Error::DimensionMismatch { .. })));
        assert_eq!(o.log().unwrap().total_queries, 0);
    }

    #[test]
    fn handle_rejects_garbage() {
        let mut o = LocalOracle::new(cfg(OracleMode::Frozen)).unwrap();
        let mut stop = false;
        assert!(handle(&mut o, "not json", &mut stop).get("error").is_some());
        assert!(handle(&mut o, r#"{"op":"NOPE"}"#, &mut stop).get("error").is_some());
        let short = format!(r#"{{"op":"ENCRYPT","data":"{}"}}"#, B64.encode([0u8; 5]));
        assert!(handle(&mut o, &short, &mut stop).get("error").is_some());
        let hello = handle(&mut o, r#"{"op":"HELLO"}"#, &mut stop);
        assert_eq!(hello["M"], 4);
        assert_eq!(hello["mode"], "frozen");
        assert!(!stop);
    }
}
