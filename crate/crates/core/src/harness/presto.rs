use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use ureq::Agent;

use super::{Driver, HarnessError, Outcome};

/// Connection settings for a Presto (or Trino, with `header_prefix = "X-Trino"`)
/// coordinator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrestoConfig {
    /// Coordinator base URL, e.g. `http://localhost:8080`.
    pub url: String,
    #[serde(default = "default_user")]
    pub user: String,
    #[serde(default)]
    pub catalog: Option<String>,
    #[serde(default)]
    pub schema: Option<String>,
    #[serde(default = "default_prefix")]
    pub header_prefix: String,
}

fn default_user() -> String {
    "querygen".into()
}

fn default_prefix() -> String {
    "X-Presto".into()
}

/// Client for the HTTP statement protocol: POST the query, then follow
/// `nextUri` until it disappears, counting `data` rows on the way.
pub struct PrestoDriver {
    engine_id: String,
    config: PrestoConfig,
    agent: Agent,
}

impl PrestoDriver {
    pub fn new(engine_id: &str, config: PrestoConfig) -> Self {
        let agent: Agent = Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        PrestoDriver {
            engine_id: engine_id.to_string(),
            config,
            agent,
        }
    }

    fn endpoint(&self, path: &str) -> String {
        format!("{}{path}", self.config.url.trim_end_matches('/'))
    }

    fn submit(&self, sql: &str, timeout: Duration) -> Result<Value, String> {
        let prefix = &self.config.header_prefix;
        let mut request = self
            .agent
            .post(self.endpoint("/v1/statement"))
            .config()
            .timeout_global(Some(timeout))
            .build()
            .header(format!("{prefix}-User"), &self.config.user);
        if let Some(catalog) = &self.config.catalog {
            request = request.header(format!("{prefix}-Catalog"), catalog);
        }
        if let Some(schema) = &self.config.schema {
            request = request.header(format!("{prefix}-Schema"), schema);
        }
        let mut response = request.send(sql).map_err(|e| e.to_string())?;
        if !response.status().is_success() {
            return Err(format!("HTTP {}", response.status()));
        }
        response.body_mut().read_json().map_err(|e| e.to_string())
    }

    fn fetch(&self, uri: &str, remaining: Duration) -> Result<Value, String> {
        let mut response = self
            .agent
            .get(uri)
            .config()
            .timeout_global(Some(remaining))
            .build()
            .call()
            .map_err(|e| e.to_string())?;
        if !response.status().is_success() {
            return Err(format!("HTTP {}", response.status()));
        }
        response.body_mut().read_json().map_err(|e| e.to_string())
    }

    fn cancel(&self, uri: &str) {
        // best effort; the query is abandoned either way
        let _ = self.agent.delete(uri).call();
    }
}

fn page_error(page: &Value) -> Option<String> {
    let error = page.get("error")?;
    Some(
        error
            .get("message")
            .and_then(Value::as_str)
            .map(str::to_string)
            .unwrap_or_else(|| error.to_string()),
    )
}

fn page_rows(page: &Value) -> u64 {
    page.get("data")
        .and_then(Value::as_array)
        .map_or(0, |d| d.len() as u64)
}

impl Driver for PrestoDriver {
    fn engine_id(&self) -> &str {
        &self.engine_id
    }

    fn check(&mut self) -> Result<(), HarnessError> {
        let unreachable = |message: String| HarnessError::Connection {
            engine: self.engine_id.clone(),
            message,
        };
        let response = self
            .agent
            .get(self.endpoint("/v1/info"))
            .config()
            .timeout_global(Some(Duration::from_secs(10)))
            .build()
            .call()
            .map_err(|e| unreachable(e.to_string()))?;
        if response.status().is_success() {
            Ok(())
        } else {
            Err(unreachable(format!("HTTP {}", response.status())))
        }
    }

    fn run(&mut self, sql: &str, timeout: Duration) -> Outcome {
        let deadline = Instant::now() + timeout;
        let mut page = match self.submit(sql, timeout) {
            Ok(page) => page,
            Err(_) if Instant::now() >= deadline => return Outcome::TimedOut,
            Err(e) => return Outcome::Failed(e),
        };
        let mut rows = 0;
        loop {
            if let Some(message) = page_error(&page) {
                return Outcome::Failed(message);
            }
            rows += page_rows(&page);
            let Some(next) = page
                .get("nextUri")
                .and_then(Value::as_str)
                .map(str::to_string)
            else {
                return Outcome::Rows(rows);
            };
            let now = Instant::now();
            if now >= deadline {
                self.cancel(&next);
                return Outcome::TimedOut;
            }
            page = match self.fetch(&next, deadline - now) {
                Ok(page) => page,
                Err(_) if Instant::now() >= deadline => {
                    self.cancel(&next);
                    return Outcome::TimedOut;
                }
                Err(e) => return Outcome::Failed(e),
            };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serves one JSON body per request, then stops. `pages` receives the
    /// server's base URL so bodies can point back at it.
    fn serve(pages: impl FnOnce(&str) -> Vec<String>) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let bodies = pages(&base);
        std::thread::spawn(move || {
            for body in bodies {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut length = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        length = v.trim().parse().unwrap();
                    }
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut payload = vec![0; length];
                reader.read_exact(&mut payload).unwrap();
                write!(
                    stream,
                    "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        base
    }

    fn driver(url: String) -> PrestoDriver {
        PrestoDriver::new(
            "presto",
            PrestoConfig {
                url,
                user: "t".into(),
                catalog: Some("tpch".into()),
                schema: Some("tiny".into()),
                header_prefix: default_prefix(),
            },
        )
    }

    #[test]
    fn follows_next_uri_and_counts_rows() {
        let url = serve(|base| {
            vec![
                format!(r#"{{"id":"q","nextUri":"{base}/v1/statement/q/1","data":[[1],[2]]}}"#),
                r#"{"id":"q","data":[[3]]}"#.to_string(),
            ]
        });
        let mut d = driver(url);
        assert_eq!(d.run("SELECT 1", Duration::from_secs(5)), Outcome::Rows(3));
    }

    #[test]
    fn error_page_is_a_failure() {
        let url = serve(|_| {
            vec![
                r#"{"id":"q","error":{"message":"line 1:8: Column 'x' cannot be resolved"}}"#
                    .to_string(),
            ]
        });
        let mut d = driver(url);
        match d.run("SELECT x", Duration::from_secs(5)) {
            Outcome::Failed(m) => assert!(m.contains("cannot be resolved")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unreachable_engine() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        drop(listener);
        let mut d = driver(url);
        assert!(matches!(d.check(), Err(HarnessError::Connection { .. })));
    }
}
