//! Blocking HTTP client for the service API. Bodies are returned verbatim
//! so callers can echo them byte for byte.

use std::io::{BufRead, BufReader, Read};

use reqwest::blocking::{Client as Http, RequestBuilder, Response};
use serde_json::Value;

use crate::api::ApiError;

#[derive(Debug)]
pub enum ClientError {
    Api(ApiError),
    Transport(String),
}

impl ClientError {
    pub fn code(&self) -> &str {
        match self {
            ClientError::Api(e) => &e.code,
            ClientError::Transport(_) => "CONNECTION_ERROR",
        }
    }
}

impl std::fmt::Display for ClientError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ClientError::Api(e) => write!(f, "{}: {}", e.code, e.message),
            ClientError::Transport(m) => write!(f, "CONNECTION_ERROR: {m}"),
        }
    }
}

pub type ClientResult<T> = Result<T, ClientError>;

pub struct Client {
    base: String,
    token: Option<String>,
    http: Http,
}

fn transport(e: impl std::fmt::Display) -> ClientError {
    ClientError::Transport(e.to_string())
}

impl Client {
    pub fn new(base: &str, token: Option<String>) -> Self {
        Client {
            base: base.trim_end_matches('/').to_string(),
            token,
            http: Http::builder().timeout(None).build().expect("http client"),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    fn auth(&self, rb: RequestBuilder) -> RequestBuilder {
        match &self.token {
            Some(t) => rb.bearer_auth(t),
            None => rb,
        }
    }

    fn finish(resp: Response) -> ClientResult<String> {
        let status = resp.status();
        let body = resp.text().map_err(transport)?;
        if status.is_success() {
            return Ok(body);
        }
        let mut err: ApiError = serde_json::from_str(&body).unwrap_or_else(|_| ApiError {
            status: status.as_u16(),
            code: format!("HTTP_{}", status.as_u16()),
            message: body.clone(),
            detail: None,
        });
        err.status = status.as_u16();
        Err(ClientError::Api(err))
    }

    pub fn get(&self, path: &str, query: &[(&str, String)]) -> ClientResult<String> {
        let rb = self.auth(self.http.get(self.url(path)).query(query));
        Self::finish(rb.send().map_err(transport)?)
    }

    pub fn post(&self, path: &str, body: &Value) -> ClientResult<String> {
        let rb = self.auth(self.http.post(self.url(path)).json(body));
        Self::finish(rb.send().map_err(transport)?)
    }

    pub fn delete(&self, path: &str) -> ClientResult<String> {
        let rb = self.auth(self.http.delete(self.url(path)));
        Self::finish(rb.send().map_err(transport)?)
    }

    /// Opens `GET /api/events` and returns a reader over its SSE frames.
    pub fn events(&self, query: &[(&str, String)]) -> ClientResult<EventStream> {
        let rb = self.auth(self.http.get(self.url("/api/events")).query(query));
        let resp = rb.send().map_err(transport)?;
        if !resp.status().is_success() {
            return Err(Self::finish(resp).err().unwrap_or_else(|| transport("unexpected success")));
        }
        Ok(EventStream {
            reader: BufReader::new(Box::new(resp)),
        })
    }
}

/// Parses `event: <name>\ndata: <json>\n\n` frames; comments are skipped.
pub struct EventStream {
    reader: BufReader<Box<dyn Read + Send>>,
}

impl EventStream {
    pub fn from_reader(r: impl Read + Send + 'static) -> Self {
        EventStream {
            reader: BufReader::new(Box::new(r)),
        }
    }

    /// Next frame as `(event name, data)`, or `None` at end of stream.
    pub fn next_frame(&mut self) -> ClientResult<Option<(String, String)>> {
        let mut name = String::new();
        let mut data: Vec<String> = Vec::new();
        let mut line = String::new();
        loop {
            line.clear();
            if self.reader.read_line(&mut line).map_err(transport)? == 0 {
                return Ok(None);
            }
            let l = line.trim_end_matches(['\n', '\r']);
            if l.is_empty() {
                if !data.is_empty() {
                    return Ok(Some((std::mem::take(&mut name), data.join("\n"))));
                }
                continue;
            }
            if l.starts_with(':') {
                continue;
            }
            let (field, value) = l.split_once(':').unwrap_or((l, ""));
            let value = value.strip_prefix(' ').unwrap_or(value);
            match field {
                "event" => name = value.to_string(),
                "data" => data.push(value.to_string()),
                _ => {}
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames() {
        let text = ": ping\n\nevent: job\ndata: {\"seq\":1}\n\nevent: job\ndata: {\"seq\":2}\n\n";
        let mut s = EventStream::from_reader(std::io::Cursor::new(text.as_bytes().to_vec()));
        assert_eq!(s.next_frame().unwrap(), Some(("job".into(), "{\"seq\":1}".into())));
        assert_eq!(s.next_frame().unwrap(), Some(("job".into(), "{\"seq\":2}".into())));
        assert_eq!(s.next_frame().unwrap(), None);
    }
}
