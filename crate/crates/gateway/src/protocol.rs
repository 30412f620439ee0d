//! The line protocol. One request per line, one `OK`/`ERR` reply per
//! request, plus asynchronous `EVT` lines for monitored PVs:
//!
//! ```text
//! GET <pv>            ->  OK <pv> <value>
//! PUT <pv> <value>    ->  OK
//! MON <pv>            ->  OK          (then EVT <pv> <value> on change)
//! anything else       ->  ERR <code> <message>
//! ```
//!
//! Error codes: `unknown-pv`, `read-only`, `parse`, `bus-error`.

pub const MAX_LINE_BYTES: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub enum Request {
    Get(String),
    Put(String, f64),
    Mon(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolError {
    pub code: &'static str,
    pub message: String,
}

impl ProtocolError {
    pub fn parse(message: impl Into<String>) -> Self {
        Self { code: "parse", message: message.into() }
    }

    pub fn unknown_pv(pv: &str) -> Self {
        Self { code: "unknown-pv", message: format!("no such PV {pv}") }
    }

    pub fn read_only(pv: &str) -> Self {
        Self { code: "read-only", message: format!("{pv} is not writable") }
    }

    pub fn bus_error(pv: &str) -> Self {
        Self { code: "bus-error", message: format!("bus error accessing {pv}") }
    }

    pub fn reply(&self) -> String {
        format!("ERR {} {}", self.code, self.message)
    }
}

pub fn parse_line(line: &str) -> Result<Request, ProtocolError> {
    if line.len() > MAX_LINE_BYTES {
        return Err(ProtocolError::parse("line exceeds 256 bytes"));
    }
    let mut parts = line.split_ascii_whitespace();
    let verb = parts.next().ok_or_else(|| ProtocolError::parse("empty line"))?;
    match verb {
        "GET" | "MON" => {
            let pv = parts.next().ok_or_else(|| ProtocolError::parse("missing PV name"))?;
            if parts.next().is_some() {
                return Err(ProtocolError::parse("trailing tokens"));
            }
            Ok(if verb == "GET" { Request::Get(pv.to_string()) } else { Request::Mon(pv.to_string()) })
        }
        "PUT" => {
            let pv = parts.next().ok_or_else(|| ProtocolError::parse("missing PV name"))?;
            let value = parts.next().ok_or_else(|| ProtocolError::parse("missing value"))?;
            if parts.next().is_some() {
                return Err(ProtocolError::parse("trailing tokens"));
            }
            let value: f64 = value
                .parse()
                .map_err(|_| ProtocolError::parse(format!("bad value {value}")))?;
            Ok(Request::Put(pv.to_string(), value))
        }
        other => Err(ProtocolError::parse(format!("unknown verb {other}"))),
    }
}

/// Engineering values print via the shortest round-trip form, so whole
/// numbers come out without a decimal point.
pub fn format_value(v: f64) -> String {
    format!("{v}")
}
