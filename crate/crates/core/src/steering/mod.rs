//! Backtest sessions over HTTP/JSON with a server-sent event stream, so the
//! pool can be changed while a run is in progress.

mod http;
mod session;

pub use http::{router, serve, ApiError, PoolUpdate, StepRequest};
pub use session::{
    CreateSession, EventKind, MetricsView, Mode, Session, SessionEvent, SessionManager, SessionSnapshot,
    SessionSummary, Status,
};

/// Serializes finite floats as JSON numbers and the rest as `"inf"`, `"-inf"` or `"NaN"`.
pub mod json_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t
                .parse()
                .map_err(|_| serde::de::Error::custom(format!("not a number: {t}"))),
        }
    }
}
