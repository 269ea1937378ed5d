//! Ordered steering-command distribution from the head node to every rank,
//! applied at a step all ranks agree on.

mod bus;
mod command;
mod inbox;
mod script;
mod viz;

pub use bus::{connect_to_bus, BusConfig, RankState, SteerBus, DEFAULT_ACK_TIMEOUT, DEFAULT_DELAY_STEPS};
pub use command::{
    encode_command, encode_watermark, Ack, CommandKind, SteeringCommand, ACK_LEN, ACK_MAGIC,
    COMMAND_FIXED_LEN, COMMAND_MAGIC, DEPARTURE_SEQ, STEERABLE_PARAMS, WATERMARK_LEN, WATERMARK_MAGIC,
};
pub use inbox::Inbox;
pub use script::{ScriptEntry, SteeringScript};
pub use viz::{VizParam, VIZ_MAGIC};

use thiserror::Error;

use crate::net::NetError;

#[derive(Debug, Error)]
pub enum SteerError {
    #[error("command rejected: {0}")]
    Rejected(String),
    #[error("steering configuration: {0}")]
    Config(String),
    #[error("steering connection closed: {0}")]
    Closed(String),
    #[error("steering timed out: {0}")]
    Timeout(String),
    #[error("steering script line {line}: {reason}")]
    Script { line: usize, reason: String },
    #[error(transparent)]
    Net(#[from] NetError),
}

impl From<std::io::Error> for SteerError {
    fn from(e: std::io::Error) -> Self {
        SteerError::Net(NetError::Io(e))
    }
}
